//! Vehicle state snapshots, the per-vehicle state store and convoy configuration.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::TAU;
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{PdGains, StanleyGains};
use crate::geo::{GeoError, GeoPoint};
use crate::policy::{GateDecision, RxGate};
use crate::sim::PlantParams;

/// Position of a vehicle in the convoy. Vehicle 0 is the leader.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u8);

impl VehicleId {
    pub const LEADER: VehicleId = VehicleId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_leader(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("speed {0} must be finite and non-negative")]
    Speed(f64),
    #[error("heading {0} outside [0, 2π)")]
    Heading(f64),
    #[error("acceleration {0} is not finite")]
    Acceleration(f64),
    #[error(transparent)]
    Position(#[from] GeoError),
}

/// One broadcast-equivalent snapshot of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub vehicle_id: VehicleId,
    /// Microseconds since the Unix epoch.
    pub timestamp_us: u64,
    pub position: GeoPoint,
    /// m/s
    pub speed: f64,
    /// Compass heading in radians, 0 = north, clockwise.
    pub heading: f64,
    /// m/s²
    pub acceleration: f64,
    /// Per-sender message counter.
    pub sequence: u32,
}

impl VehicleState {
    pub fn validate(&self) -> Result<(), StateError> {
        self.position.validate()?;
        if !(self.speed.is_finite() && self.speed >= 0.0) {
            return Err(StateError::Speed(self.speed));
        }
        if !(0.0..TAU).contains(&self.heading) {
            return Err(StateError::Heading(self.heading));
        }
        if !self.acceleration.is_finite() {
            return Err(StateError::Acceleration(self.acceleration));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl ConfigError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field,
            reason: reason.into(),
        }
    }

    pub fn field(&self) -> &'static str {
        match self {
            ConfigError::Invalid { field, .. } => field,
        }
    }
}

/// Convoy topology and per-vehicle tuning, seen from one ego vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvoyConfig {
    pub vehicle_count: usize,
    pub ego: VehicleId,
    /// Desired centre-to-centre gap between consecutive vehicles, metres.
    pub desired_gap: f64,
    /// Seconds between broadcast opportunities.
    pub broadcast_period: f64,
    /// States older than this (seconds) are treated as absent.
    pub staleness_horizon: f64,
    /// Number of retained states per source.
    pub buffer_depth: usize,
    pub speed_gains: PdGains,
    pub steering_gains: StanleyGains,
    pub plant: PlantParams,
}

pub const DEFAULT_DESIRED_GAP: f64 = 15.0;
pub const DEFAULT_BROADCAST_PERIOD: f64 = 0.1;
pub const DEFAULT_BUFFER_DEPTH: usize = 10;

impl ConvoyConfig {
    pub fn new(vehicle_count: usize, ego: VehicleId) -> Self {
        Self {
            vehicle_count,
            ego,
            desired_gap: DEFAULT_DESIRED_GAP,
            broadcast_period: DEFAULT_BROADCAST_PERIOD,
            staleness_horizon: 3.0 * DEFAULT_BROADCAST_PERIOD,
            buffer_depth: DEFAULT_BUFFER_DEPTH,
            speed_gains: PdGains::default(),
            steering_gains: StanleyGains::default(),
            plant: PlantParams::default(),
        }
    }

    /// Top speed used to clamp targets.
    pub fn max_speed(&self) -> f64 {
        self.speed_gains.v_max
    }

    pub fn staleness_horizon_us(&self) -> u64 {
        (self.staleness_horizon * 1e6).round() as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.vehicle_count == 0 || self.vehicle_count > 256 {
            return Err(ConfigError::invalid(
                "vehicle_count",
                format!("{} not in 1..=256", self.vehicle_count),
            ));
        }
        if self.ego.index() >= self.vehicle_count {
            return Err(ConfigError::invalid(
                "ego_index",
                format!("{} >= vehicle_count {}", self.ego.0, self.vehicle_count),
            ));
        }
        if !(self.desired_gap.is_finite() && self.desired_gap > 0.0) {
            return Err(ConfigError::invalid("desired_gap", "must be > 0"));
        }
        if !(self.broadcast_period.is_finite() && self.broadcast_period > 0.0) {
            return Err(ConfigError::invalid("broadcast_period", "must be > 0"));
        }
        if !(self.staleness_horizon.is_finite() && self.staleness_horizon > 0.0) {
            return Err(ConfigError::invalid("staleness_horizon", "must be > 0"));
        }
        if self.buffer_depth == 0 {
            return Err(ConfigError::invalid("buffer_depth", "must be >= 1"));
        }
        self.speed_gains.validate()?;
        self.steering_gains.validate()?;
        self.plant.validate()?;
        Ok(())
    }
}

/// Result of offering a state to a [`StateStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Accepted,
    /// The receive gate returned 0 for this sender.
    GateRejected,
    /// Sequence or timestamp not newer than the stored head.
    Stale,
    /// The state violates a field invariant.
    Invalid,
}

impl InsertOutcome {
    pub fn is_accepted(self) -> bool {
        self == InsertOutcome::Accepted
    }
}

/// Bounded per-source history of the most recent accepted states, including the
/// ego vehicle's own.
#[derive(Debug, Clone, PartialEq)]
pub struct StateStore {
    own_id: VehicleId,
    depth: usize,
    staleness_us: u64,
    buffers: BTreeMap<VehicleId, VecDeque<VehicleState>>,
}

impl StateStore {
    pub fn new(own: VehicleState, depth: usize, staleness_us: u64) -> Result<Self, StateError> {
        own.validate()?;
        let depth = depth.max(1);
        let mut buffers = BTreeMap::new();
        let mut own_buf = VecDeque::with_capacity(depth);
        own_buf.push_back(own);
        buffers.insert(own.vehicle_id, own_buf);
        Ok(Self {
            own_id: own.vehicle_id,
            depth,
            staleness_us,
            buffers,
        })
    }

    pub fn own_id(&self) -> VehicleId {
        self.own_id
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Records the ego vehicle's own state. Bypasses the receive gate but keeps
    /// the ordering rules.
    pub fn record_own(&mut self, state: VehicleState) -> InsertOutcome {
        if state.vehicle_id != self.own_id {
            return InsertOutcome::Invalid;
        }
        self.push(state)
    }

    /// Offers a state received from another vehicle.
    pub fn insert<G: RxGate + ?Sized>(
        &mut self,
        incoming: VehicleState,
        gate: &G,
    ) -> InsertOutcome {
        if incoming.vehicle_id == self.own_id {
            return InsertOutcome::GateRejected;
        }
        if gate.admit(self.own_id, incoming.vehicle_id) == GateDecision::Closed {
            return InsertOutcome::GateRejected;
        }
        self.push(incoming)
    }

    fn push(&mut self, state: VehicleState) -> InsertOutcome {
        if state.validate().is_err() {
            return InsertOutcome::Invalid;
        }
        let buf = self.buffers.entry(state.vehicle_id).or_default();
        if let Some(head) = buf.back() {
            if state.sequence <= head.sequence || state.timestamp_us <= head.timestamp_us {
                return InsertOutcome::Stale;
            }
        }
        buf.push_back(state);
        while buf.len() > self.depth {
            buf.pop_front();
        }
        InsertOutcome::Accepted
    }

    /// Most recent state from `source`, or `None` when absent or older than the
    /// staleness horizon at `now_us`. The ego's own state never goes stale.
    pub fn latest(&self, source: VehicleId, now_us: u64) -> Option<&VehicleState> {
        let head = self.buffers.get(&source)?.back()?;
        if source == self.own_id || now_us.saturating_sub(head.timestamp_us) < self.staleness_us {
            Some(head)
        } else {
            None
        }
    }

    pub fn own_state(&self) -> &VehicleState {
        self.buffers[&self.own_id]
            .back()
            .expect("own buffer is never empty")
    }

    pub fn buffer(&self, source: VehicleId) -> Option<&VecDeque<VehicleState>> {
        self.buffers.get(&source)
    }

    /// Point-in-time copy of every buffer, evaluated for freshness at `now_us`.
    pub fn snapshot(&self, now_us: u64) -> StoreSnapshot {
        let buffers = self
            .buffers
            .iter()
            .map(|(id, buf)| (*id, buf.iter().copied().collect::<Vec<_>>()))
            .collect();
        StoreSnapshot {
            inner: Arc::new(SnapshotInner {
                own_id: self.own_id,
                taken_at_us: now_us,
                staleness_us: self.staleness_us,
                buffers,
            }),
        }
    }
}

#[derive(Debug, PartialEq)]
struct SnapshotInner {
    own_id: VehicleId,
    taken_at_us: u64,
    staleness_us: u64,
    buffers: BTreeMap<VehicleId, Vec<VehicleState>>,
}

/// Immutable view of a [`StateStore`]. Cheap to clone.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreSnapshot {
    inner: Arc<SnapshotInner>,
}

impl StoreSnapshot {
    pub fn own_id(&self) -> VehicleId {
        self.inner.own_id
    }

    pub fn taken_at_us(&self) -> u64 {
        self.inner.taken_at_us
    }

    pub fn own_state(&self) -> Option<&VehicleState> {
        self.inner.buffers.get(&self.inner.own_id)?.last()
    }

    /// Sources with at least one stored state, ascending.
    pub fn sources(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.inner.buffers.keys().copied()
    }

    pub fn buffer(&self, source: VehicleId) -> &[VehicleState] {
        self.inner
            .buffers
            .get(&source)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn is_fresh(&self, state: &VehicleState) -> bool {
        state.vehicle_id == self.inner.own_id
            || self.inner.taken_at_us.saturating_sub(state.timestamp_us) < self.inner.staleness_us
    }

    /// Same semantics as [`StateStore::latest`] at snapshot time.
    pub fn latest(&self, source: VehicleId) -> Option<&VehicleState> {
        self.inner
            .buffers
            .get(&source)?
            .last()
            .filter(|s| self.is_fresh(s))
    }

    /// Returns a copy of this view with `source` removed.
    pub fn without(&self, source: VehicleId) -> StoreSnapshot {
        let mut buffers = self.inner.buffers.clone();
        buffers.remove(&source);
        StoreSnapshot {
            inner: Arc::new(SnapshotInner {
                own_id: self.inner.own_id,
                taken_at_us: self.inner.taken_at_us,
                staleness_us: self.inner.staleness_us,
                buffers,
            }),
        }
    }
}

/// A store shared between a receive thread (the single writer) and the control
/// loop (readers via [`SharedStateStore::snapshot`]).
#[derive(Debug, Clone)]
pub struct SharedStateStore {
    inner: Arc<RwLock<StateStore>>,
}

impl SharedStateStore {
    pub fn new(store: StateStore) -> Self {
        Self {
            inner: Arc::new(RwLock::new(store)),
        }
    }

    pub fn insert<G: RxGate + ?Sized>(&self, incoming: VehicleState, gate: &G) -> InsertOutcome {
        self.inner
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(incoming, gate)
    }

    pub fn record_own(&self, state: VehicleState) -> InsertOutcome {
        self.inner
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .record_own(state)
    }

    pub fn snapshot(&self, now_us: u64) -> StoreSnapshot {
        self.inner
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .snapshot(now_us)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::AllPredecessor;
    use proptest::prelude::*;

    pub(crate) fn state(id: u8, seq: u32, t_us: u64) -> VehicleState {
        VehicleState {
            vehicle_id: VehicleId(id),
            timestamp_us: t_us,
            position: GeoPoint::new(28.6, -81.2, 0.0).unwrap(),
            speed: 1.0,
            heading: 0.0,
            acceleration: 0.0,
            sequence: seq,
        }
    }

    struct Never;
    impl RxGate for Never {
        fn admit(&self, _: VehicleId, _: VehicleId) -> GateDecision {
            GateDecision::Closed
        }
    }

    fn store(ego: u8) -> StateStore {
        StateStore::new(state(ego, 1, 1), 10, 300_000).unwrap()
    }

    #[test]
    fn predecessor_accepted_successor_rejected() {
        let mut s = store(2);
        assert!(s.insert(state(1, 1, 10), &AllPredecessor).is_accepted());
        let mut s = store(1);
        assert_eq!(
            s.insert(state(2, 1, 10), &AllPredecessor),
            InsertOutcome::GateRejected
        );
        assert!(s.buffer(VehicleId(2)).is_none());
    }

    #[test]
    fn duplicate_leaves_store_unchanged() {
        let mut s = store(2);
        assert!(s.insert(state(0, 5, 100), &AllPredecessor).is_accepted());
        let before = s.clone();
        assert_eq!(
            s.insert(state(0, 5, 100), &AllPredecessor),
            InsertOutcome::Stale
        );
        assert_eq!(s, before);
        // older sequence, newer timestamp: still stale
        assert_eq!(
            s.insert(state(0, 4, 200), &AllPredecessor),
            InsertOutcome::Stale
        );
        assert_eq!(s, before);
    }

    #[test]
    fn latest_picks_max_timestamp() {
        let mut s = store(2);
        for (seq, t) in [(1, 1_000_000), (2, 2_000_000), (3, 3_000_000)] {
            s.insert(state(0, seq, t), &AllPredecessor);
        }
        assert_eq!(
            s.latest(VehicleId(0), 3_000_000).unwrap().timestamp_us,
            3_000_000
        );
        assert!(s.latest(VehicleId(1), 3_000_000).is_none());
    }

    #[test]
    fn stale_head_is_absent() {
        let mut s = store(2);
        s.insert(state(0, 1, 1_000_000), &AllPredecessor);
        assert!(s.latest(VehicleId(0), 1_299_999).is_some());
        assert!(s.latest(VehicleId(0), 1_300_000).is_none());
        // own state never ages out
        assert!(s.latest(VehicleId(2), u64::MAX).is_some());
    }

    #[test]
    fn snapshot_is_isolated_from_later_inserts() {
        let mut s = store(2);
        let fresh = s.snapshot(1);
        assert_eq!(fresh.sources().count(), 1);
        assert_eq!(fresh.own_state().unwrap().vehicle_id, VehicleId(2));
        s.insert(state(0, 1, 10), &AllPredecessor);
        let snap = s.snapshot(10);
        s.insert(state(0, 2, 20), &AllPredecessor);
        s.insert(state(1, 1, 20), &AllPredecessor);
        assert_eq!(snap.buffer(VehicleId(0)).len(), 1);
        assert_eq!(snap.sources().count(), 2);
        let later = s.snapshot(20);
        let seqs: Vec<u32> = later
            .buffer(VehicleId(0))
            .iter()
            .map(|s| s.sequence)
            .collect();
        assert_eq!(seqs, vec![1, 2]);
    }

    #[test]
    fn record_own_rejects_foreign_id() {
        let mut s = store(1);
        assert_eq!(s.record_own(state(0, 9, 9)), InsertOutcome::Invalid);
        assert!(s.record_own(state(1, 2, 2)).is_accepted());
    }

    #[test]
    fn invalid_state_rejected() {
        let mut s = store(2);
        let mut bad = state(0, 1, 10);
        bad.speed = -1.0;
        assert_eq!(s.insert(bad, &AllPredecessor), InsertOutcome::Invalid);
    }

    #[test]
    fn concurrent_snapshots_are_consistent() {
        let shared = SharedStateStore::new(StateStore::new(state(3, 1, 1), 8, u64::MAX).unwrap());
        let writer = {
            let shared = shared.clone();
            std::thread::spawn(move || {
                for i in 1..=2000u32 {
                    shared.insert(state((i % 3) as u8, i, i as u64 * 10), &AllPredecessor);
                }
            })
        };
        for _ in 0..500 {
            let snap = shared.snapshot(0);
            for src in snap.sources() {
                let buf = snap.buffer(src);
                assert!(buf.len() <= 8);
                assert!(buf.windows(2).all(
                    |w| w[0].sequence < w[1].sequence && w[0].timestamp_us < w[1].timestamp_us
                ));
            }
        }
        writer.join().unwrap();
    }

    #[test]
    fn config_validation() {
        let mut c = ConvoyConfig::new(3, VehicleId(2));
        assert!(c.validate().is_ok());
        c.desired_gap = 0.0;
        assert_eq!(c.validate().unwrap_err().field(), "desired_gap");
        let c = ConvoyConfig::new(3, VehicleId(3));
        assert_eq!(c.validate().unwrap_err().field(), "ego_index");
    }

    proptest! {
        #[test]
        fn buffers_bounded_and_ordered(
            depth in 1usize..12,
            ops in proptest::collection::vec((0u8..4, 0u32..50, 0u64..50), 0..200),
        ) {
            let mut s = StateStore::new(state(3, 0, 0), depth, u64::MAX).unwrap();
            let mut accepted = std::collections::HashMap::<u8, Vec<u32>>::new();
            for (src, seq, t) in ops {
                if s.insert(state(src, seq, t), &AllPredecessor).is_accepted() {
                    accepted.entry(src).or_default().push(seq);
                }
            }
            for src in 0u8..3 {
                let expect: Vec<u32> = accepted.get(&src).map(|v| {
                    v[v.len().saturating_sub(depth)..].to_vec()
                }).unwrap_or_default();
                let got: Vec<u32> = s.buffer(VehicleId(src))
                    .map(|b| b.iter().map(|x| x.sequence).collect())
                    .unwrap_or_default();
                prop_assert_eq!(got, expect);
                if let Some(b) = s.buffer(VehicleId(src)) {
                    prop_assert!(b.len() <= depth);
                    for w in b.iter().collect::<Vec<_>>().windows(2) {
                        prop_assert!(w[0].sequence < w[1].sequence);
                        prop_assert!(w[0].timestamp_us < w[1].timestamp_us);
                    }
                }
            }
        }

        #[test]
        fn closed_gate_never_changes_store(
            ops in proptest::collection::vec((0u8..6, 0u32..50, 0u64..50), 0..100),
        ) {
            let mut s = store(2);
            let initial = s.clone();
            for (src, seq, t) in ops {
                s.insert(state(src, seq, t), &Never);
            }
            prop_assert_eq!(s, initial);
        }
    }
}
