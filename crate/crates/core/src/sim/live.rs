//! One vehicle on a real multicast socket, paced by the wall clock.
//!
//! Each process runs a single vehicle of the scenario. A receive thread feeds
//! a shared state store while the control loop ticks every control period.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use super::engine::{SimError, VehicleController};
use super::plant::{bicycle_step, Pose};
use super::scenario::{ScenarioConfig, ScenarioError};
use super::trace::{LinkSample, Trace, TraceRow, VehicleSample};
use crate::geo::{enu_from_geodetic, geodetic_from_enu, wrap_to_two_pi};
use crate::model::{SharedStateStore, StateStore, VehicleId, VehicleState};
use crate::net::{
    encode_bsm, FrameReceiver, LossModel, MulticastConfig, MulticastTransport, NetError, RxStats,
    Transport,
};
use crate::policy::{self, GateDecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiveOptions {
    pub vehicle: VehicleId,
    pub multicast: MulticastConfig,
}

#[derive(Debug, Clone)]
pub struct LiveReport {
    /// This vehicle only; the gap comes from the freshest predecessor state
    /// received, so it is empty until one arrives.
    pub trace: Trace,
    pub sent: u64,
    pub stats: RxStats,
}

fn wall_clock_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

/// Drives `options.vehicle` for `config.duration_s` of wall-clock time.
pub fn run_live(config: &ScenarioConfig, options: &LiveOptions) -> Result<LiveReport, SimError> {
    config.validate()?;
    let id = options.vehicle;
    if id.index() >= config.convoy.vehicle_count {
        return Err(ScenarioError::Invalid {
            line: None,
            field: "vehicle".into(),
            reason: format!(
                "{id} is outside a convoy of {} vehicles",
                config.convoy.vehicle_count
            ),
        }
        .into());
    }
    let dt = config.control_period_s;
    let world = config.origin.geo();
    let convoy = config.convoy_config(id);
    let rx_gate = policy::rx_gate_by_name(&config.policy.rx_gate)?;
    let tx_gate = policy::tx_gate_by_name(&config.policy.tx_gate)?;
    let mut controller = VehicleController::new(
        convoy.clone(),
        policy::spacing_policy_by_name(&config.policy.spacing)?,
    );
    let loss = LossModel::for_receiver(config.per_for(id), config.seed, id).map_err(|e| {
        ScenarioError::Invalid {
            line: None,
            field: "loss.per".into(),
            reason: e.to_string(),
        }
    })?;

    let (position, heading, speed) = config.initial_pose_for(id);
    let mut pose = Pose {
        position,
        heading: wrap_to_two_pi(heading),
        speed,
    };
    let clock = Instant::now();
    let epoch_us = wall_clock_us();
    let now_us = || epoch_us + clock.elapsed().as_micros() as u64;
    let mut sequence = 0u32;
    let mut acceleration = 0.0;
    let own = |pose: &Pose, seq: u32, acc: f64, t: u64| -> Result<VehicleState, SimError> {
        Ok(VehicleState {
            vehicle_id: id,
            timestamp_us: t,
            position: geodetic_from_enu(&world, &pose.position)?,
            speed: pose.speed,
            heading: wrap_to_two_pi(pose.heading),
            acceleration: acc,
            sequence: seq,
        })
    };
    let mut ego = own(&pose, sequence, acceleration, now_us())?;
    let store = SharedStateStore::new(StateStore::new(
        ego,
        convoy.buffer_depth,
        convoy.staleness_horizon_us(),
    )?);

    let mut transport = MulticastTransport::open(&options.multicast)?;
    let stop = Arc::new(AtomicBool::new(false));
    let live_stats = Arc::new(Mutex::new(RxStats::default()));
    let receiver = {
        let socket = transport.try_clone()?;
        let store = store.clone();
        let stop = Arc::clone(&stop);
        let live_stats = Arc::clone(&live_stats);
        thread::spawn(move || -> Result<RxStats, NetError> {
            let mut rx = FrameReceiver::new(id, loss);
            while !stop.load(Ordering::Relaxed) {
                if let Some(datagram) = socket.recv_timeout(Duration::from_millis(10))? {
                    rx.deliver_shared(&datagram, &store, rx_gate.as_ref());
                    *live_stats.lock().unwrap_or_else(|e| e.into_inner()) = *rx.stats();
                }
            }
            Ok(*rx.stats())
        })
    };

    let mut trace = Trace::new(vec![id]);
    let every = config.broadcast_every();
    let mut sent = 0;
    let predecessor = (!id.is_leader()).then(|| VehicleId(id.0 - 1));
    let result = (|| -> Result<(), SimError> {
        for k in 0..config.ticks() {
            let due = Duration::from_secs_f64(k as f64 * dt);
            if let Some(wait) = due.checked_sub(clock.elapsed()) {
                thread::sleep(wait);
            }
            let t_us = now_us();
            if k > 0 {
                sequence = sequence.wrapping_add(1);
                ego = own(&pose, sequence, acceleration, t_us)?;
                store.record_own(ego);
            }
            let snap = store.snapshot(t_us);
            if k % every == 0 && tx_gate.should_broadcast(&snap) == GateDecision::Open {
                transport.send(&encode_bsm(&ego)?)?;
                sent += 1;
            }
            let time = k as f64 * dt;
            let cmd = if id.is_leader() {
                controller.lead(&ego, config.leader_speed_at(time), dt)
            } else {
                controller.follow(&snap, &ego, dt)?
            };
            let link = match predecessor {
                Some(p) => {
                    let gap = match snap.latest(p) {
                        Some(s) => Some(
                            enu_from_geodetic(&world, &s.position)?.distance_2d(&pose.position),
                        ),
                        None => None,
                    };
                    let s = *live_stats.lock().unwrap_or_else(|e| e.into_inner());
                    Some(LinkSample {
                        gap,
                        rx: s.accepted,
                        lost: s.lost,
                        rejected: s.gate_rejected + s.stale_rejected + s.invalid,
                    })
                }
                None => None,
            };
            let plant = controller.config().plant;
            trace.rows.push(TraceRow {
                time,
                vehicles: vec![VehicleSample {
                    id,
                    position: pose.position,
                    speed: pose.speed,
                    heading: pose.heading,
                    cmd_speed: cmd.applied_speed,
                    steer: cmd.steering_angle.clamp(-plant.steer_max, plant.steer_max),
                    link,
                }],
            });
            let next = bicycle_step(&pose, &cmd, &plant, dt);
            acceleration = (next.speed - pose.speed) / dt;
            pose = next;
        }
        Ok(())
    })();

    stop.store(true, Ordering::Relaxed);
    let stats = receiver.join().unwrap_or_else(|_| {
        Err(NetError::Io {
            context: "receive thread".into(),
            source: std::io::Error::other("panicked"),
        })
    })?;
    result?;
    Ok(LiveReport { trace, sent, stats })
}
