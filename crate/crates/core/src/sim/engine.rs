//! Fixed-step closed loop: sense, broadcast, gate, solve, control, actuate.

use std::f64::consts::FRAC_PI_2;

use thiserror::Error;

use super::plant::{bicycle_step, Pose};
use super::scenario::{ScenarioConfig, ScenarioError};
use super::trace::{LinkSample, Trace, TraceRow, VehicleSample};
use crate::control::{stanley_heading_control, Actuation, SpeedController};
use crate::geo::{
    enu_from_geodetic, geodetic_from_enu, wrap_to_pi, wrap_to_two_pi, GeoError, GeoPoint,
};
use crate::model::{ConvoyConfig, StateError, StateStore, StoreSnapshot, VehicleId, VehicleState};
use crate::net::{
    encode_bsm, CodecError, FrameReceiver, LossModel, NetError, RxStats, Transport,
    VirtualEndpoint, VirtualNetwork,
};
use crate::policy::{
    self, GateDecision, PolicyError, RxGate, SpacingPolicy, TargetCommand, TxGate,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration: {0}")]
    Config(#[from] ScenarioError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("transport: {0}")]
    Net(#[from] NetError),
}

/// Per-vehicle decision logic: spacing policy plus both controllers, with the
/// command held across ticks where no predecessor is usable.
#[derive(Debug)]
pub struct VehicleController {
    config: ConvoyConfig,
    spacing: Box<dyn SpacingPolicy>,
    speed: SpeedController,
    held: Option<HeldTarget>,
    origin: Option<GeoPoint>,
}

#[derive(Debug, Clone, Copy)]
struct HeldTarget {
    speed: f64,
    heading: f64,
    goal: GeoPoint,
}

impl VehicleController {
    pub fn new(config: ConvoyConfig, spacing: Box<dyn SpacingPolicy>) -> Self {
        let speed = SpeedController::new(config.speed_gains);
        Self {
            config,
            spacing,
            speed,
            held: None,
            origin: None,
        }
    }

    pub fn config(&self) -> &ConvoyConfig {
        &self.config
    }

    /// ENU anchor: the first leader position this vehicle saw. Until one
    /// arrives the ego's current position stands in.
    fn frame_origin(&mut self, snapshot: &StoreSnapshot, ego: &VehicleState) -> GeoPoint {
        if let Some(o) = self.origin {
            return o;
        }
        match snapshot.buffer(VehicleId::LEADER).first() {
            Some(first) if !self.config.ego.is_leader() => {
                self.origin = Some(first.position);
                first.position
            }
            _ => ego.position,
        }
    }

    /// Leader: track the scheduled speed, wheel straight.
    pub fn lead(&mut self, ego: &VehicleState, target_speed: f64, dt: f64) -> Actuation {
        Actuation {
            applied_speed: self.speed.update(target_speed, ego, dt),
            steering_angle: 0.0,
        }
    }

    /// Follower: solve the spacing objective over the snapshot and turn the
    /// target into speed and steering commands.
    pub fn follow(
        &mut self,
        snapshot: &StoreSnapshot,
        ego: &VehicleState,
        dt: f64,
    ) -> Result<Actuation, SimError> {
        let origin = self.frame_origin(snapshot, ego);
        let cmd: TargetCommand = self.spacing.solve(snapshot, &self.config, &origin, dt);
        if cmd.valid {
            self.held = Some(HeldTarget {
                speed: cmd.target_speed,
                heading: cmd.target_heading,
                goal: geodetic_from_enu(&origin, &cmd.goal)?,
            });
        }
        let Some(held) = self.held else {
            // never had a usable predecessor: stay put
            return Ok(Actuation {
                applied_speed: self.speed.update(0.0, ego, dt),
                steering_angle: 0.0,
            });
        };
        let ego_enu = enu_from_geodetic(&origin, &ego.position)?;
        let goal = enu_from_geodetic(&origin, &held.goal)?;
        // goal behind the vehicle: stop and hold the current heading
        let behind = wrap_to_pi(held.heading - ego.heading).abs() > FRAC_PI_2;
        let (target_speed, target_heading) = if behind {
            (0.0, ego.heading)
        } else {
            (held.speed, held.heading)
        };
        Ok(Actuation {
            applied_speed: self.speed.update(target_speed, ego, dt),
            steering_angle: stanley_heading_control(
                target_heading,
                &goal,
                &ego_enu,
                ego,
                &self.config.steering_gains,
            ),
        })
    }
}

/// Delivery accounting for one vehicle over a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkReport {
    pub id: VehicleId,
    pub sent: u64,
    pub stats: RxStats,
}

#[derive(Debug, Clone)]
pub struct SimRun {
    pub trace: Trace,
    pub links: Vec<LinkReport>,
}

struct Agent {
    id: VehicleId,
    pose: Pose,
    acceleration: f64,
    sequence: u32,
    store: StateStore,
    receiver: FrameReceiver,
    endpoint: VirtualEndpoint,
    controller: VehicleController,
    rx_gate: Box<dyn RxGate>,
    tx_gate: Box<dyn TxGate>,
    sent: u64,
}

impl Agent {
    fn state(&self, world: &GeoPoint, timestamp_us: u64) -> Result<VehicleState, SimError> {
        Ok(VehicleState {
            vehicle_id: self.id,
            timestamp_us,
            position: geodetic_from_enu(world, &self.pose.position)?,
            speed: self.pose.speed,
            heading: wrap_to_two_pi(self.pose.heading),
            acceleration: self.acceleration,
            sequence: self.sequence,
        })
    }
}

/// Runs the scenario on the virtual clock and in-process channel.
pub fn run_scenario(config: &ScenarioConfig) -> Result<Trace, SimError> {
    Ok(run_scenario_detailed(config)?.trace)
}

/// As [`run_scenario`], also returning per-vehicle delivery counters.
///
/// Each tick: every vehicle records its own state; on broadcast ticks every
/// vehicle whose transmit gate opens sends, and all frames are delivered (or
/// lost) before any vehicle acts; then every vehicle snapshots its store,
/// computes its commands and steps its plant.
pub fn run_scenario_detailed(config: &ScenarioConfig) -> Result<SimRun, SimError> {
    config.validate()?;
    let n = config.convoy.vehicle_count;
    let dt = config.control_period_s;
    let dt_us = (dt * 1e6).round() as u64;
    let world = config.origin.geo();
    let network = VirtualNetwork::new(n);

    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let id = VehicleId(i as u8);
        let convoy = config.convoy_config(id);
        let (position, heading, speed) = config.initial_pose_for(id);
        let pose = Pose {
            position,
            heading: wrap_to_two_pi(heading),
            speed,
        };
        let first = VehicleState {
            vehicle_id: id,
            timestamp_us: config.start_time_us,
            position: geodetic_from_enu(&world, &pose.position)?,
            speed: pose.speed,
            heading: pose.heading,
            acceleration: 0.0,
            sequence: 0,
        };
        let loss = LossModel::for_receiver(config.per_for(id), config.seed, id).map_err(|e| {
            ScenarioError::Invalid {
                line: None,
                field: "loss.per".into(),
                reason: e.to_string(),
            }
        })?;
        agents.push(Agent {
            id,
            pose,
            acceleration: 0.0,
            sequence: 0,
            store: StateStore::new(first, convoy.buffer_depth, convoy.staleness_horizon_us())?,
            receiver: FrameReceiver::new(id, loss),
            endpoint: network.endpoint(id),
            controller: VehicleController::new(
                convoy,
                policy::spacing_policy_by_name(&config.policy.spacing)?,
            ),
            rx_gate: policy::rx_gate_by_name(&config.policy.rx_gate)?,
            tx_gate: policy::tx_gate_by_name(&config.policy.tx_gate)?,
            sent: 0,
        });
    }

    let ids: Vec<VehicleId> = agents.iter().map(|a| a.id).collect();
    let mut trace = Trace::new(ids);
    let ticks = config.ticks();
    trace.rows.reserve(ticks);
    let every = config.broadcast_every();

    for k in 0..ticks {
        let time = k as f64 * dt;
        let now_us = config.start_time_us + k as u64 * dt_us;

        for a in agents.iter_mut() {
            if k > 0 {
                a.sequence = a.sequence.wrapping_add(1);
                let own = a.state(&world, now_us)?;
                a.store.record_own(own);
            }
        }

        if k % every == 0 {
            for a in agents.iter_mut() {
                let snap = a.store.snapshot(now_us);
                if a.tx_gate.should_broadcast(&snap) == GateDecision::Open {
                    let frame = encode_bsm(a.store.own_state())?;
                    a.endpoint.send(&frame)?;
                    a.sent += 1;
                }
            }
            for a in agents.iter_mut() {
                for datagram in a.endpoint.poll()? {
                    a.receiver
                        .deliver(&datagram, &mut a.store, a.rx_gate.as_ref());
                }
            }
        }

        let mut commands = Vec::with_capacity(n);
        for a in agents.iter_mut() {
            let ego = *a.store.own_state();
            let cmd = if a.id.is_leader() {
                a.controller.lead(&ego, config.leader_speed_at(time), dt)
            } else {
                let snap = a.store.snapshot(now_us);
                a.controller.follow(&snap, &ego, dt)?
            };
            commands.push(cmd);
        }

        let mut samples = Vec::with_capacity(n);
        for (i, (a, cmd)) in agents.iter().zip(&commands).enumerate() {
            let link = (i > 0).then(|| {
                let s = a.receiver.stats();
                LinkSample {
                    gap: Some(a.pose.position.distance_2d(&agents[i - 1].pose.position)),
                    rx: s.accepted,
                    lost: s.lost,
                    rejected: s.gate_rejected + s.stale_rejected + s.invalid,
                }
            });
            samples.push(VehicleSample {
                id: a.id,
                position: a.pose.position,
                speed: a.pose.speed,
                heading: a.pose.heading,
                cmd_speed: cmd.applied_speed,
                steer: cmd.steering_angle.clamp(
                    -a.controller.config().plant.steer_max,
                    a.controller.config().plant.steer_max,
                ),
                link,
            });
        }
        trace.rows.push(TraceRow {
            time,
            vehicles: samples,
        });

        for (a, cmd) in agents.iter_mut().zip(&commands) {
            let plant = a.controller.config().plant;
            let next = bicycle_step(&a.pose, cmd, &plant, dt);
            a.acceleration = (next.speed - a.pose.speed) / dt;
            a.pose = next;
        }
    }

    let links = agents
        .iter()
        .map(|a| LinkReport {
            id: a.id,
            sent: a.sent,
            stats: *a.receiver.stats(),
        })
        .collect();
    Ok(SimRun { trace, links })
}
