//! Scenario files: a TOML document describing the convoy, its controllers,
//! the network and the leader's speed schedule.

use std::net::Ipv6Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::plant::PlantParams;
use crate::control::{PdGains, StanleyGains};
use crate::geo::{EnuPoint, GeoPoint};
use crate::model::{ConfigError, ConvoyConfig, VehicleId};
use crate::net::{MulticastConfig, DEFAULT_GROUP, DEFAULT_PORT};
use crate::policy;

/// The scenario shipped with the crate: three vehicles, 1 → 2 → 1 m/s leader,
/// 15 m gap, PER sweep 0 to 0.6.
pub const BUNDLED_SCENARIO: &str = include_str!("../../scenarios/paper-repro.toml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{}{field}: {reason}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid {
        line: Option<usize>,
        field: String,
        reason: String,
    },
}

impl ScenarioError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ScenarioError::Invalid {
            line: None,
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            ScenarioError::Invalid { field, .. } => Some(field),
            ScenarioError::Parse { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    Virtual,
    Multicast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvoySection {
    pub vehicle_count: usize,
    pub desired_gap_m: f64,
    pub broadcast_period_s: f64,
    /// Defaults to three broadcast periods.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub staleness_horizon_s: Option<f64>,
    pub buffer_depth: usize,
}

impl Default for ConvoySection {
    fn default() -> Self {
        Self {
            vehicle_count: 3,
            desired_gap_m: 15.0,
            broadcast_period_s: 0.1,
            staleness_horizon_s: None,
            buffer_depth: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub rx_gate: String,
    pub tx_gate: String,
    pub spacing: String,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            rx_gate: "all_predecessor".into(),
            tx_gate: "tx_always".into(),
            spacing: "platooning".into(),
        }
    }
}

/// Geodetic anchor of the simulated world and the convoy's initial heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OriginSection {
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
    pub heading_rad: f64,
}

impl Default for OriginSection {
    fn default() -> Self {
        Self {
            latitude: 28.6024,
            longitude: -81.2001,
            altitude: 0.0,
            heading_rad: 0.0,
        }
    }
}

impl OriginSection {
    pub fn geo(&self) -> GeoPoint {
        GeoPoint {
            latitude: self.latitude,
            longitude: self.longitude,
            altitude: self.altitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    /// Packet error rate applied at every receiver unless overridden.
    pub per: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSegment {
    pub speed_mps: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialPose {
    pub east_m: f64,
    pub north_m: f64,
    pub heading_rad: f64,
    #[serde(default)]
    pub speed_mps: f64,
}

/// Per-vehicle overrides. A table given here replaces the global one; keys it
/// omits take built-in defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSection {
    pub id: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plant: Option<PlantParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speed_gains: Option<PdGains>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steering_gains: Option<StanleyGains>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialPose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub group: Ipv6Addr,
    pub port: u16,
    pub interface: u32,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            group: DEFAULT_GROUP,
            port: DEFAULT_PORT,
            interface: 0,
        }
    }
}

impl NetworkSection {
    pub fn multicast(&self) -> MulticastConfig {
        MulticastConfig {
            group: self.group,
            port: self.port,
            interface: self.interface,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub per_levels: Vec<f64>,
    pub seeds: u32,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            per_levels: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            seeds: 20,
        }
    }
}

/// Complete description of one simulated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    pub control_period_s: f64,
    /// Virtual-clock epoch, microseconds since the Unix epoch.
    pub start_time_us: u64,
    pub transport: TransportKind,
    pub convoy: ConvoySection,
    pub policy: PolicySection,
    pub origin: OriginSection,
    pub loss: LossSection,
    pub speed_gains: PdGains,
    pub steering_gains: StanleyGains,
    pub plant: PlantParams,
    pub leader_profile: Vec<ProfileSegment>,
    pub network: NetworkSection,
    pub sweep: SweepSection,
    pub vehicles: Vec<VehicleSection>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            seed: 1,
            duration_s: 180.0,
            control_period_s: 0.05,
            start_time_us: 1_700_000_000_000_000,
            transport: TransportKind::Virtual,
            convoy: ConvoySection::default(),
            policy: PolicySection::default(),
            origin: OriginSection::default(),
            loss: LossSection::default(),
            speed_gains: PdGains::default(),
            steering_gains: StanleyGains::default(),
            plant: PlantParams::default(),
            leader_profile: vec![
                ProfileSegment {
                    speed_mps: 1.0,
                    duration_s: 60.0,
                },
                ProfileSegment {
                    speed_mps: 2.0,
                    duration_s: 60.0,
                },
                ProfileSegment {
                    speed_mps: 1.0,
                    duration_s: 60.0,
                },
            ],
            network: NetworkSection::default(),
            sweep: SweepSection::default(),
            vehicles: Vec::new(),
        }
    }
}

fn toml_line(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key = ...` inside table `table` ("" for the root), if present.
fn locate_key(text: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line
                .trim_matches(|c| c == '[' || c == ']')
                .trim()
                .to_string();
            continue;
        }
        if current != table {
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            if k.trim() == key {
                return Some(i + 1);
            }
        }
    }
    None
}

impl ScenarioConfig {
    /// Parses and validates a scenario document. Errors carry the 1-based line
    /// of the offending key when it can be located.
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.span().map(|s| toml_line(text, s.start)).unwrap_or(1),
            message: e.message().trim().to_string(),
        })?;
        config.validate().map_err(|e| match e {
            ScenarioError::Invalid { field, reason, .. } => {
                let (table, key) = field.rsplit_once('.').unwrap_or(("", field.as_str()));
                ScenarioError::Invalid {
                    line: locate_key(text, table, key),
                    field,
                    reason,
                }
            }
            other => other,
        })?;
        Ok(config)
    }

    pub fn bundled() -> Self {
        Self::from_toml_str(BUNDLED_SCENARIO).expect("bundled scenario is valid")
    }

    /// Canonical TOML of this configuration, used for hashing and archiving.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn ticks(&self) -> usize {
        (self.duration_s / self.control_period_s).round() as usize
    }

    /// Control ticks per broadcast period.
    pub fn broadcast_every(&self) -> usize {
        ((self.convoy.broadcast_period_s / self.control_period_s).round() as usize).max(1)
    }

    pub fn staleness_horizon_s(&self) -> f64 {
        self.convoy
            .staleness_horizon_s
            .unwrap_or(3.0 * self.convoy.broadcast_period_s)
    }

    /// Sets the packet error rate of every receiver, clearing overrides.
    pub fn set_uniform_per(&mut self, per: f64) {
        self.loss.per = per;
        for v in &mut self.vehicles {
            v.per = None;
        }
    }

    fn vehicle(&self, id: VehicleId) -> Option<&VehicleSection> {
        self.vehicles.iter().find(|v| v.id == id.0)
    }

    pub fn per_for(&self, id: VehicleId) -> f64 {
        self.vehicle(id)
            .and_then(|v| v.per)
            .unwrap_or(self.loss.per)
    }

    pub fn plant_for(&self, id: VehicleId) -> PlantParams {
        self.vehicle(id).and_then(|v| v.plant).unwrap_or(self.plant)
    }

    /// Initial pose: explicit override, or in line behind the leader at
    /// exactly the desired gap, at rest.
    pub fn initial_pose_for(&self, id: VehicleId) -> (EnuPoint, f64, f64) {
        if let Some(p) = self.vehicle(id).and_then(|v| v.initial) {
            return (
                EnuPoint::horizontal(p.east_m, p.north_m),
                p.heading_rad,
                p.speed_mps,
            );
        }
        let h = self.origin.heading_rad;
        let back = -(id.0 as f64) * self.convoy.desired_gap_m;
        (EnuPoint::ORIGIN.advanced(h, back), h, 0.0)
    }

    /// The convoy configuration as seen by vehicle `id`.
    pub fn convoy_config(&self, id: VehicleId) -> ConvoyConfig {
        let v = self.vehicle(id);
        ConvoyConfig {
            vehicle_count: self.convoy.vehicle_count,
            ego: id,
            desired_gap: self.convoy.desired_gap_m,
            broadcast_period: self.convoy.broadcast_period_s,
            staleness_horizon: self.staleness_horizon_s(),
            buffer_depth: self.convoy.buffer_depth,
            speed_gains: v.and_then(|v| v.speed_gains).unwrap_or(self.speed_gains),
            steering_gains: v
                .and_then(|v| v.steering_gains)
                .unwrap_or(self.steering_gains),
            plant: self.plant_for(id),
        }
    }

    /// Leader target speed at time `t`; the last segment holds past its end.
    pub fn leader_speed_at(&self, t: f64) -> f64 {
        let mut end = 0.0;
        for seg in &self.leader_profile {
            end += seg.duration_s;
            if t < end {
                return seg.speed_mps;
            }
        }
        self.leader_profile.last().map_or(0.0, |s| s.speed_mps)
    }

    /// Times at which the leader's target speed changes, including the start.
    pub fn profile_jumps(&self) -> Vec<f64> {
        let mut jumps = vec![0.0];
        let mut t = 0.0;
        for w in self.leader_profile.windows(2) {
            t += w[0].duration_s;
            if w[1].speed_mps != w[0].speed_mps {
                jumps.push(t);
            }
        }
        jumps
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ScenarioError::invalid(field, format!("{v} must be > 0")))
            }
        };
        let probability = |field: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(ScenarioError::invalid(field, format!("{v} outside [0, 1]")))
            }
        };
        positive("duration_s", self.duration_s)?;
        positive("control_period_s", self.control_period_s)?;
        positive("convoy.broadcast_period_s", self.convoy.broadcast_period_s)?;
        let ratio = self.convoy.broadcast_period_s / self.control_period_s;
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-6 {
            return Err(ScenarioError::invalid(
                "convoy.broadcast_period_s",
                "must be a positive integer multiple of control_period_s",
            ));
        }
        if !(2..=256).contains(&self.convoy.vehicle_count) {
            return Err(ScenarioError::invalid(
                "convoy.vehicle_count",
                format!("{} not in 2..=256", self.convoy.vehicle_count),
            ));
        }
        positive("convoy.desired_gap_m", self.convoy.desired_gap_m)?;
        if let Some(h) = self.convoy.staleness_horizon_s {
            positive("convoy.staleness_horizon_s", h)?;
        }
        if self.convoy.buffer_depth == 0 {
            return Err(ScenarioError::invalid(
                "convoy.buffer_depth",
                "must be >= 1",
            ));
        }
        policy::rx_gate_by_name(&self.policy.rx_gate)
            .map_err(|e| ScenarioError::invalid("policy.rx_gate", e.to_string()))?;
        policy::tx_gate_by_name(&self.policy.tx_gate)
            .map_err(|e| ScenarioError::invalid("policy.tx_gate", e.to_string()))?;
        policy::spacing_policy_by_name(&self.policy.spacing)
            .map_err(|e| ScenarioError::invalid("policy.spacing", e.to_string()))?;
        self.origin
            .geo()
            .validate()
            .map_err(|e| ScenarioError::invalid("origin.latitude", e.to_string()))?;
        if !self.origin.heading_rad.is_finite() {
            return Err(ScenarioError::invalid(
                "origin.heading_rad",
                "must be finite",
            ));
        }
        probability("loss.per", self.loss.per)?;
        let sub = |table: &str, e: ConfigError| {
            ScenarioError::invalid(format!("{table}.{}", e.field()), e.to_string())
        };
        self.speed_gains
            .validate()
            .map_err(|e| sub("speed_gains", e))?;
        self.steering_gains
            .validate()
            .map_err(|e| sub("steering_gains", e))?;
        self.plant.validate().map_err(|e| sub("plant", e))?;
        if self.leader_profile.is_empty() {
            return Err(ScenarioError::invalid(
                "leader_profile",
                "needs at least one segment",
            ));
        }
        for seg in &self.leader_profile {
            if !(seg.speed_mps.is_finite() && seg.speed_mps >= 0.0) {
                return Err(ScenarioError::invalid(
                    "leader_profile.speed_mps",
                    "must be >= 0",
                ));
            }
            positive("leader_profile.duration_s", seg.duration_s)?;
        }
        for per in &self.sweep.per_levels {
            probability("sweep.per_levels", *per)?;
        }
        for v in &self.vehicles {
            if usize::from(v.id) >= self.convoy.vehicle_count {
                return Err(ScenarioError::invalid(
                    "vehicles.id",
                    format!("{} >= vehicle_count", v.id),
                ));
            }
            if let Some(per) = v.per {
                probability("vehicles.per", per)?;
            }
            if let Some(p) = v.plant {
                p.validate().map_err(|e| sub("vehicles.plant", e))?;
            }
            if let Some(g) = v.speed_gains {
                g.validate().map_err(|e| sub("vehicles.speed_gains", e))?;
            }
            if let Some(g) = v.steering_gains {
                g.validate()
                    .map_err(|e| sub("vehicles.steering_gains", e))?;
            }
        }
        for id in 0..self.convoy.vehicle_count {
            self.convoy_config(VehicleId(id as u8))
                .validate()
                .map_err(|e| sub("convoy", e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenario_parses() {
        let s = ScenarioConfig::bundled();
        assert_eq!(s.name, "paper-repro");
        assert_eq!(s.convoy.vehicle_count, 3);
        assert_eq!(s.convoy.desired_gap_m, 15.0);
        assert_eq!(s.sweep.per_levels.len(), 7);
        assert_eq!(s.ticks(), 3600);
        assert_eq!(s.broadcast_every(), 2);
        assert_eq!(s.profile_jumps(), vec![0.0, 60.0, 120.0]);
        assert_eq!(s.leader_speed_at(59.99), 1.0);
        assert_eq!(s.leader_speed_at(60.0), 2.0);
        assert_eq!(s.leader_speed_at(500.0), 1.0);
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let s = ScenarioConfig::from_toml_str("name = \"x\"\n").unwrap();
        assert_eq!(s.convoy.broadcast_period_s, 0.1);
        assert!((s.staleness_horizon_s() - 0.3).abs() < 1e-12);
        let (pos, h, v) = s.initial_pose_for(VehicleId(2));
        assert_eq!((pos.north, h, v), (-30.0, 0.0, 0.0));
    }

    #[test]
    fn validation_reports_field_and_line() {
        let text = "name = \"x\"\n[convoy]\nvehicle_count = 3\ndesired_gap_m = -1.0\n";
        let err = ScenarioConfig::from_toml_str(text).unwrap_err();
        assert_eq!(
            err,
            ScenarioError::Invalid {
                line: Some(4),
                field: "convoy.desired_gap_m".into(),
                reason: "-1 must be > 0".into()
            }
        );
        assert!(err.to_string().starts_with("line 4: convoy.desired_gap_m"));
    }

    #[test]
    fn parse_errors_carry_line() {
        let text = "name = \"x\"\n\n[convoy]\nvehicle_count = \"three\"\n";
        match ScenarioConfig::from_toml_str(text).unwrap_err() {
            ScenarioError::Parse { line, .. } => assert_eq!(line, 4),
            e => panic!("{e:?}"),
        }
        let text = "[loss]\nper = 0.1\nbogus = 1\n";
        assert!(matches!(
            ScenarioConfig::from_toml_str(text),
            Err(ScenarioError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn rejects_bad_ranges() {
        let mut s = ScenarioConfig::default();
        s.loss.per = 2.0;
        assert_eq!(s.validate().unwrap_err().field(), Some("loss.per"));
        let mut s = ScenarioConfig::default();
        s.convoy.broadcast_period_s = 0.075;
        assert_eq!(
            s.validate().unwrap_err().field(),
            Some("convoy.broadcast_period_s")
        );
        let mut s = ScenarioConfig::default();
        s.policy.rx_gate = "leader_only".into();
        assert_eq!(s.validate().unwrap_err().field(), Some("policy.rx_gate"));
        let mut s = ScenarioConfig::default();
        s.plant.wheelbase = 0.0;
        assert_eq!(s.validate().unwrap_err().field(), Some("plant.wheelbase_m"));
    }

    #[test]
    fn per_vehicle_overrides() {
        let text = r#"
[loss]
per = 0.2

[[vehicles]]
id = 2
per = 0.5
plant = { wheelbase_m = 0.5 }
initial = { east_m = 1.0, north_m = -20.0, heading_rad = 0.1 }
"#;
        let s = ScenarioConfig::from_toml_str(text).unwrap();
        assert_eq!(s.per_for(VehicleId(1)), 0.2);
        assert_eq!(s.per_for(VehicleId(2)), 0.5);
        assert_eq!(s.plant_for(VehicleId(2)).wheelbase, 0.5);
        assert_eq!(s.plant_for(VehicleId(1)).wheelbase, 0.33);
        assert_eq!(s.initial_pose_for(VehicleId(2)).0.east, 1.0);
        let mut s = s;
        s.set_uniform_per(0.0);
        assert_eq!(s.per_for(VehicleId(2)), 0.0);
    }

    #[test]
    fn canonical_toml_round_trips() {
        let s = ScenarioConfig::bundled();
        let again = ScenarioConfig::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, again);
    }
}
