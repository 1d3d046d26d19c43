//! Communication gates and the platooning spacing policy.
//!
//! A cooperative-driving implementation is a choice of receive gate (which
//! senders' states are stored), transmit gate (whether to broadcast this
//! cycle) and spacing policy (a cost over candidate speed and heading whose
//! minimiser becomes the target). Implementations are looked up by name so a
//! scenario file can select them.

use std::fmt;

use thiserror::Error;

use crate::geo::{bearing_enu, enu_from_geodetic, EnuPoint, GeoError, GeoPoint};
use crate::model::{ConvoyConfig, StoreSnapshot, VehicleId, VehicleState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("snapshot has no state for the ego vehicle")]
    MissingEgo,
    #[error("vehicle {pred} is not a predecessor of {ego}")]
    NotPredecessor { ego: VehicleId, pred: VehicleId },
    #[error("predecessor heading {0} is not finite")]
    DegenerateHeading(f64),
    #[error("projection step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("unknown {kind} '{name}' (known: {known})")]
    Unknown {
        kind: &'static str,
        name: String,
        known: String,
    },
}

/// Binary gate output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Closed,
    Open,
}

impl GateDecision {
    pub fn value(self) -> u8 {
        match self {
            GateDecision::Closed => 0,
            GateDecision::Open => 1,
        }
    }
}

impl From<bool> for GateDecision {
    fn from(open: bool) -> Self {
        if open {
            GateDecision::Open
        } else {
            GateDecision::Closed
        }
    }
}

/// Decides whether ego vehicle `ego` stores a message broadcast by `sender`.
pub trait RxGate: Send + Sync {
    fn admit(&self, ego: VehicleId, sender: VehicleId) -> GateDecision;
}

/// Decides whether the ego vehicle broadcasts on this period, given its view.
pub trait TxGate: Send + Sync {
    fn should_broadcast(&self, snapshot: &StoreSnapshot) -> GateDecision;
}

/// Stores states from every vehicle ahead of the ego.
#[derive(Debug, Clone, Copy, Default)]
pub struct AllPredecessor;

impl RxGate for AllPredecessor {
    fn admit(&self, ego: VehicleId, sender: VehicleId) -> GateDecision {
        rx_gate_all_predecessor(ego, sender)
    }
}

pub fn rx_gate_all_predecessor(ego: VehicleId, sender: VehicleId) -> GateDecision {
    (sender < ego).into()
}

/// Time-triggered transmission: broadcast every period.
#[derive(Debug, Clone, Copy, Default)]
pub struct TxAlways;

impl TxGate for TxAlways {
    fn should_broadcast(&self, snapshot: &StoreSnapshot) -> GateDecision {
        tx_gate_always(snapshot)
    }
}

pub fn tx_gate_always(_snapshot: &StoreSnapshot) -> GateDecision {
    GateDecision::Open
}

/// Target produced by a spacing policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetCommand {
    /// m/s
    pub target_speed: f64,
    /// Compass heading, radians in `[0, 2π)`.
    pub target_heading: f64,
    /// The point the target steers toward (ENU). Used for cross-track error.
    pub goal: EnuPoint,
    /// False when no usable predecessor state exists; downstream holds its
    /// previous command.
    pub valid: bool,
}

impl TargetCommand {
    pub fn invalid() -> Self {
        Self {
            target_speed: 0.0,
            target_heading: 0.0,
            goal: EnuPoint::ORIGIN,
            valid: false,
        }
    }
}

pub trait SpacingPolicy: Send + Sync {
    /// Cost of driving at `(speed, heading)` for one step of `dt` seconds.
    fn cost(
        &self,
        speed: f64,
        heading: f64,
        snapshot: &StoreSnapshot,
        config: &ConvoyConfig,
        origin: &GeoPoint,
        dt: f64,
    ) -> Result<f64, PolicyError>;

    /// Minimiser of [`SpacingPolicy::cost`] over `[0, v_max] × [0, 2π)`.
    fn solve(
        &self,
        snapshot: &StoreSnapshot,
        config: &ConvoyConfig,
        origin: &GeoPoint,
        dt: f64,
    ) -> TargetCommand;
}

/// Where `pred` wants a vehicle `ego_index − pred_index` places behind it to be:
/// `(ego_index − pred_index) · desired_gap` metres back along its heading.
pub fn predecessor_goal_point(
    pred: &VehicleState,
    ego_index: VehicleId,
    pred_index: VehicleId,
    desired_gap: f64,
    origin: &GeoPoint,
) -> Result<EnuPoint, PolicyError> {
    if pred_index >= ego_index {
        return Err(PolicyError::NotPredecessor {
            ego: ego_index,
            pred: pred_index,
        });
    }
    if !pred.heading.is_finite() {
        return Err(PolicyError::DegenerateHeading(pred.heading));
    }
    let pos = enu_from_geodetic(origin, &pred.position)?;
    let hops = f64::from(ego_index.0 - pred_index.0);
    Ok(pos.advanced(pred.heading, -hops * desired_gap))
}

/// The platooning objective with the snapshot lookups and coordinate
/// conversions already done: ego position plus one goal point per fresh
/// predecessor.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatooningObjective {
    pub ego_position: EnuPoint,
    pub ego_heading: f64,
    pub goals: Vec<EnuPoint>,
}

impl PlatooningObjective {
    pub fn prepare(
        snapshot: &StoreSnapshot,
        config: &ConvoyConfig,
        origin: &GeoPoint,
    ) -> Result<Self, PolicyError> {
        let ego = snapshot.own_state().ok_or(PolicyError::MissingEgo)?;
        let ego_id = snapshot.own_id();
        let ego_position = enu_from_geodetic(origin, &ego.position)?;
        let mut goals = Vec::new();
        for source in snapshot.sources().filter(|s| *s < ego_id) {
            if let Some(pred) = snapshot.latest(source) {
                goals.push(predecessor_goal_point(
                    pred,
                    ego_id,
                    source,
                    config.desired_gap,
                    origin,
                )?);
            }
        }
        Ok(Self {
            ego_position,
            ego_heading: ego.heading,
            goals,
        })
    }

    /// Sum of squared distances from each goal to the ego position projected
    /// `dt · speed` metres along `heading`.
    pub fn eval(&self, speed: f64, heading: f64, dt: f64) -> f64 {
        let projected = self.ego_position.advanced(heading, dt * speed);
        self.goals
            .iter()
            .map(|g| {
                let de = g.east - projected.east;
                let dn = g.north - projected.north;
                de * de + dn * dn
            })
            .sum()
    }

    /// Closed-form minimiser: head for the goal centroid, at the speed that
    /// reaches it in one step, clamped to `[0, max_speed]`.
    pub fn minimise(&self, max_speed: f64, dt: f64) -> TargetCommand {
        if self.goals.is_empty() {
            return TargetCommand::invalid();
        }
        let n = self.goals.len() as f64;
        let (se, sn) = self
            .goals
            .iter()
            .fold((0.0, 0.0), |(e, n), g| (e + g.east, n + g.north));
        let centroid = EnuPoint::new(se / n, sn / n, self.ego_position.up);
        let distance = self.ego_position.distance_2d(&centroid);
        match bearing_enu(&self.ego_position, &centroid) {
            Ok(heading) if distance > 1e-9 => TargetCommand {
                target_speed: (distance / dt).clamp(0.0, max_speed),
                target_heading: heading,
                goal: centroid,
                valid: true,
            },
            // already at the centroid: any heading is optimal, keep ours
            _ => TargetCommand {
                target_speed: 0.0,
                target_heading: self.ego_heading,
                goal: centroid,
                valid: true,
            },
        }
    }
}

pub fn sigma_platooning_cost(
    speed: f64,
    heading: f64,
    snapshot: &StoreSnapshot,
    config: &ConvoyConfig,
    origin: &GeoPoint,
    dt: f64,
) -> Result<f64, PolicyError> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(PolicyError::NonPositiveStep(dt));
    }
    Ok(PlatooningObjective::prepare(snapshot, config, origin)?.eval(speed, heading, dt))
}

pub fn solve_targets(
    snapshot: &StoreSnapshot,
    config: &ConvoyConfig,
    origin: &GeoPoint,
    dt: f64,
) -> TargetCommand {
    if dt.is_nan() || dt <= 0.0 {
        return TargetCommand::invalid();
    }
    match PlatooningObjective::prepare(snapshot, config, origin) {
        Ok(objective) => objective.minimise(config.max_speed(), dt),
        Err(_) => TargetCommand::invalid(),
    }
}

/// Distance-keeping spacing policy over all fresh predecessors.
#[derive(Debug, Clone, Copy, Default)]
pub struct Platooning;

impl SpacingPolicy for Platooning {
    fn cost(
        &self,
        speed: f64,
        heading: f64,
        snapshot: &StoreSnapshot,
        config: &ConvoyConfig,
        origin: &GeoPoint,
        dt: f64,
    ) -> Result<f64, PolicyError> {
        sigma_platooning_cost(speed, heading, snapshot, config, origin, dt)
    }

    fn solve(
        &self,
        snapshot: &StoreSnapshot,
        config: &ConvoyConfig,
        origin: &GeoPoint,
        dt: f64,
    ) -> TargetCommand {
        solve_targets(snapshot, config, origin, dt)
    }
}

pub const RX_GATES: &[&str] = &["all_predecessor"];
pub const TX_GATES: &[&str] = &["tx_always"];
pub const SPACING_POLICIES: &[&str] = &["platooning"];

fn unknown(kind: &'static str, name: &str, known: &[&str]) -> PolicyError {
    PolicyError::Unknown {
        kind,
        name: name.to_string(),
        known: known.join(", "),
    }
}

pub fn rx_gate_by_name(name: &str) -> Result<Box<dyn RxGate>, PolicyError> {
    match name {
        "all_predecessor" => Ok(Box::new(AllPredecessor)),
        _ => Err(unknown("rx gate", name, RX_GATES)),
    }
}

pub fn tx_gate_by_name(name: &str) -> Result<Box<dyn TxGate>, PolicyError> {
    match name {
        "tx_always" => Ok(Box::new(TxAlways)),
        _ => Err(unknown("tx gate", name, TX_GATES)),
    }
}

pub fn spacing_policy_by_name(name: &str) -> Result<Box<dyn SpacingPolicy>, PolicyError> {
    match name {
        "platooning" => Ok(Box::new(Platooning)),
        _ => Err(unknown("spacing policy", name, SPACING_POLICIES)),
    }
}

impl fmt::Debug for dyn RxGate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RxGate")
    }
}

impl fmt::Debug for dyn TxGate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("TxGate")
    }
}

impl fmt::Debug for dyn SpacingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SpacingPolicy")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::geodetic_from_enu;
    use crate::model::StateStore;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    const NOW: u64 = 10_000_000;

    fn origin() -> GeoPoint {
        GeoPoint::new(28.6024, -81.2001, 0.0).unwrap()
    }

    fn at(id: u8, east: f64, north: f64, heading: f64) -> VehicleState {
        VehicleState {
            vehicle_id: VehicleId(id),
            timestamp_us: NOW,
            position: geodetic_from_enu(&origin(), &EnuPoint::horizontal(east, north)).unwrap(),
            speed: 1.0,
            heading,
            acceleration: 0.0,
            sequence: 1,
        }
    }

    fn snapshot(ego: VehicleState, preds: &[VehicleState]) -> StoreSnapshot {
        let mut store = StateStore::new(ego, 10, 300_000).unwrap();
        for p in preds {
            assert!(store.insert(*p, &AllPredecessor).is_accepted());
        }
        store.snapshot(NOW)
    }

    fn config(ego: u8, v_max: f64) -> ConvoyConfig {
        let mut c = ConvoyConfig::new(usize::from(ego) + 1, VehicleId(ego));
        c.speed_gains.v_max = v_max;
        c
    }

    fn close(a: &EnuPoint, e: f64, n: f64) -> bool {
        (a.east - e).abs() < 1e-6 && (a.north - n).abs() < 1e-6
    }

    #[test]
    fn all_predecessor_gate_table() {
        let g = |i, j| rx_gate_all_predecessor(VehicleId(i), VehicleId(j)).value();
        assert_eq!(g(2, 0), 1);
        assert_eq!(g(2, 1), 1);
        assert_eq!(g(2, 2), 0);
        assert_eq!(g(0, 1), 0);
        assert_eq!(g(1, 2), 0);
    }

    #[test]
    fn all_predecessor_is_strict_partial_order() {
        let g = |i: u8, j: u8| {
            rx_gate_all_predecessor(VehicleId(i), VehicleId(j)) == GateDecision::Open
        };
        for i in 0..8 {
            assert!(!g(i, i));
            for j in 0..8 {
                for l in 0..8 {
                    if g(i, j) && g(j, l) {
                        assert!(g(i, l));
                    }
                }
            }
        }
    }

    #[test]
    fn tx_always_opens() {
        let empty = snapshot(at(0, 0.0, 0.0, 0.0), &[]);
        assert_eq!(tx_gate_always(&empty), GateDecision::Open);
        let stale = {
            let mut s = StateStore::new(at(2, 0.0, 0.0, 0.0), 10, 1).unwrap();
            s.insert(at(0, 0.0, 30.0, 0.0), &AllPredecessor);
            s.snapshot(NOW * 2)
        };
        assert!(stale.latest(VehicleId(0)).is_none());
        assert_eq!(TxAlways.should_broadcast(&stale), GateDecision::Open);
    }

    #[test]
    fn goal_points_by_hand() {
        let o = origin();
        let p = at(0, 0.0, 30.0, 0.0);
        let g = predecessor_goal_point(&p, VehicleId(1), VehicleId(0), 15.0, &o).unwrap();
        assert!(close(&g, 0.0, 15.0), "{g:?}");
        let g = predecessor_goal_point(&p, VehicleId(2), VehicleId(0), 15.0, &o).unwrap();
        assert!(close(&g, 0.0, 0.0), "{g:?}");
        let p = at(0, 0.0, 0.0, FRAC_PI_2);
        let g = predecessor_goal_point(&p, VehicleId(1), VehicleId(0), 15.0, &o).unwrap();
        assert!(close(&g, -15.0, 0.0), "{g:?}");
    }

    #[test]
    fn goal_point_errors() {
        let o = origin();
        let p = at(1, 0.0, 0.0, 0.0);
        assert!(matches!(
            predecessor_goal_point(&p, VehicleId(1), VehicleId(1), 15.0, &o),
            Err(PolicyError::NotPredecessor { .. })
        ));
        let mut bad = p;
        bad.heading = f64::NAN;
        assert!(matches!(
            predecessor_goal_point(&bad, VehicleId(2), VehicleId(1), 15.0, &o),
            Err(PolicyError::DegenerateHeading(h)) if h.is_nan()
        ));
    }

    #[test]
    fn cost_zero_at_goal() {
        let o = origin();
        // ego sits exactly on the goal 15 m behind the leader
        let snap = snapshot(at(1, 0.0, 0.0, 0.0), &[at(0, 0.0, 15.0, 0.0)]);
        let c = sigma_platooning_cost(0.0, 0.0, &snap, &config(1, 3.0), &o, 0.05).unwrap();
        assert!(c < 1e-12, "{c}");
        // goal 1 m due north, one second at 1 m/s heading north
        let snap = snapshot(at(1, 0.0, 0.0, 0.0), &[at(0, 0.0, 16.0, 0.0)]);
        let c = sigma_platooning_cost(1.0, 0.0, &snap, &config(1, 3.0), &o, 1.0).unwrap();
        assert!(c < 1e-12, "{c}");
    }

    #[test]
    fn coincident_goals_unique_minimum() {
        let o = origin();
        // leader 30 m ahead and follower 15 m ahead put their goals at (0, 2)
        let snap = snapshot(
            at(2, 0.0, 0.0, 0.0),
            &[at(0, 0.0, 32.0, 0.0), at(1, 0.0, 17.0, 0.0)],
        );
        let cfg = config(2, 3.0);
        assert!(sigma_platooning_cost(2.0, 0.0, &snap, &cfg, &o, 1.0).unwrap() < 1e-12);
        for (v, th) in [(1.9, 0.0), (2.0, 0.01), (0.0, 0.0), (2.0, PI)] {
            assert!(sigma_platooning_cost(v, th, &snap, &cfg, &o, 1.0).unwrap() > 0.0);
        }
    }

    #[test]
    fn cost_requires_ego_and_positive_step() {
        let o = origin();
        let snap = snapshot(at(1, 0.0, 0.0, 0.0), &[]).without(VehicleId(1));
        assert_eq!(
            sigma_platooning_cost(1.0, 0.0, &snap, &config(1, 3.0), &o, 1.0),
            Err(PolicyError::MissingEgo)
        );
        let snap = snapshot(at(1, 0.0, 0.0, 0.0), &[]);
        assert!(matches!(
            sigma_platooning_cost(1.0, 0.0, &snap, &config(1, 3.0), &o, 0.0),
            Err(PolicyError::NonPositiveStep(_))
        ));
    }

    #[test]
    fn solve_clamps_speed() {
        let o = origin();
        let snap = snapshot(at(1, 0.0, 0.0, 0.0), &[at(0, 0.0, 25.0, 0.0)]);
        let t = solve_targets(&snap, &config(1, 5.0), &o, 1.0);
        assert!(t.valid);
        assert_eq!(t.target_speed, 5.0);
        assert!(t.target_heading.abs() < 1e-9 || (TAU - t.target_heading) < 1e-9);
    }

    #[test]
    fn solve_at_equilibrium_keeps_heading() {
        let o = origin();
        let snap = snapshot(
            at(1, 0.0, 0.0, 1.25),
            &[at(0, 15.0 * 1.25f64.sin(), 15.0 * 1.25f64.cos(), 1.25)],
        );
        let t = solve_targets(&snap, &config(1, 3.0), &o, 0.05);
        assert!(t.valid);
        assert!(t.target_speed < 1e-6);
        // centroid may differ from ego by rounding; heading either held or toward it
        if t.target_speed == 0.0 {
            assert_eq!(t.target_heading, 1.25);
        }
        let exact = PlatooningObjective {
            ego_position: EnuPoint::horizontal(1.0, 1.0),
            ego_heading: 2.0,
            goals: vec![EnuPoint::horizontal(1.0, 1.0)],
        };
        let t = exact.minimise(3.0, 0.05);
        assert_eq!(
            (t.target_speed, t.target_heading, t.valid),
            (0.0, 2.0, true)
        );
    }

    #[test]
    fn symmetric_goals_point_north() {
        let o = origin();
        // ego 2 between a leader whose goal is 5 m east and a follower whose goal is
        // 5 m west, both 4 m ahead
        let snap = snapshot(
            at(2, 0.0, 0.0, 0.0),
            &[at(0, 5.0, 34.0, 0.0), at(1, -5.0, 19.0, 0.0)],
        );
        let t = solve_targets(&snap, &config(2, 3.0), &o, 1.0);
        assert!(t.valid);
        assert!(
            t.target_heading < 1e-9 || TAU - t.target_heading < 1e-9,
            "{}",
            t.target_heading
        );
        assert!((t.target_speed - 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_fresh_predecessor_is_invalid() {
        let o = origin();
        assert!(
            !solve_targets(
                &snapshot(at(0, 0.0, 0.0, 0.0), &[]),
                &config(0, 3.0),
                &o,
                0.05
            )
            .valid
        );
        let mut s = StateStore::new(at(1, 0.0, 0.0, 0.0), 10, 300_000).unwrap();
        s.insert(at(0, 0.0, 15.0, 0.0), &AllPredecessor);
        assert!(!solve_targets(&s.snapshot(NOW + 300_000), &config(1, 3.0), &o, 0.05).valid);
    }

    #[test]
    fn registry_lookup() {
        assert!(rx_gate_by_name("all_predecessor").is_ok());
        assert!(tx_gate_by_name("tx_always").is_ok());
        assert!(spacing_policy_by_name("platooning").is_ok());
        let err = rx_gate_by_name("bidirectional").unwrap_err();
        assert!(err.to_string().contains("all_predecessor"));
    }

    /// Exhaustive search over the (speed, heading) grid.
    fn grid_minimum(obj: &PlatooningObjective, v_max: f64, dt: f64) -> (f64, f64, f64) {
        let steps = (v_max / 0.01).floor() as usize;
        let mut speeds: Vec<f64> = (0..=steps).map(|k| k as f64 * 0.01).collect();
        if *speeds.last().unwrap() < v_max {
            speeds.push(v_max);
        }
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let mut k = 0;
        loop {
            let th = k as f64 * 0.001;
            if th >= TAU {
                break;
            }
            for &v in &speeds {
                let c = obj.eval(v, th, dt);
                if c < best.0 {
                    best = (c, v, th);
                }
            }
            k += 1;
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn solver_matches_grid_search(
            ego_e in -20.0f64..20.0,
            ego_n in -20.0f64..20.0,
            ego_h in 0.0f64..TAU,
            preds in proptest::collection::vec((-40.0f64..40.0, -40.0f64..40.0, 0.0f64..TAU), 1..3),
            v_max in 0.5f64..3.0,
            dt in 0.05f64..2.0,
        ) {
            let o = origin();
            let ego_id = preds.len() as u8;
            let states: Vec<VehicleState> = preds.iter().enumerate()
                .map(|(j, (e, n, h))| at(j as u8, *e, *n, *h)).collect();
            let snap = snapshot(at(ego_id, ego_e, ego_n, ego_h), &states);
            let cfg = config(ego_id, v_max);
            let t = solve_targets(&snap, &cfg, &o, dt);
            prop_assert!(t.valid);
            let got = sigma_platooning_cost(t.target_speed, t.target_heading, &snap, &cfg, &o, dt).unwrap();
            let obj = PlatooningObjective::prepare(&snap, &cfg, &o).unwrap();
            let (best, _, _) = grid_minimum(&obj, v_max, dt);
            prop_assert!(got <= best + 1e-6, "solver {got} grid {best}");
        }

        #[test]
        fn cost_nonnegative_and_stale_exclusion_exact(
            v in 0.0f64..3.0,
            th in 0.0f64..TAU,
            n1 in 5.0f64..40.0,
        ) {
            let o = origin();
            let mut s = StateStore::new(at(2, 0.0, 0.0, 0.0), 10, 300_000).unwrap();
            let mut old = at(0, 1.0, n1 + 15.0, 0.0);
            old.timestamp_us = NOW - 400_000;
            s.insert(old, &AllPredecessor);
            s.insert(at(1, 0.0, n1, 0.0), &AllPredecessor);
            let snap = s.snapshot(NOW);
            let cfg = config(2, 3.0);
            let with = sigma_platooning_cost(v, th, &snap, &cfg, &o, 0.05).unwrap();
            let without = sigma_platooning_cost(v, th, &snap.without(VehicleId(0)), &cfg, &o, 0.05).unwrap();
            prop_assert!(with >= 0.0);
            prop_assert_eq!(with, without);
        }
    }
}
