//! Speed (PD) and steering (Stanley) controllers that turn targets into
//! actuator commands.

use serde::{Deserialize, Serialize};

use crate::geo::{wrap_to_pi, EnuPoint};
use crate::model::{ConfigError, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdGains {
    pub kp: f64,
    /// seconds
    pub kd: f64,
    /// Upper output clamp, m/s. The lower clamp is always 0.
    pub v_max: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        Self {
            kp: 0.8,
            kd: 0.1,
            v_max: 3.0,
        }
    }
}

impl PdGains {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.kp.is_finite() && self.kp > 0.0) {
            return Err(ConfigError::invalid("kp", "must be > 0"));
        }
        if !(self.kd.is_finite() && self.kd >= 0.0) {
            return Err(ConfigError::invalid("kd", "must be >= 0"));
        }
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            return Err(ConfigError::invalid("v_max", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StanleyGains {
    /// Cross-track gain, 1/s.
    pub k_cte: f64,
    /// Low-speed softening, m/s.
    pub softening: f64,
    /// Steering clamp, radians.
    pub steer_max: f64,
}

impl Default for StanleyGains {
    fn default() -> Self {
        Self {
            k_cte: 1.0,
            softening: 0.1,
            steer_max: 0.35,
        }
    }
}

impl StanleyGains {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.k_cte.is_finite() && self.k_cte > 0.0) {
            return Err(ConfigError::invalid("k_cte", "must be > 0"));
        }
        if !(self.softening.is_finite() && self.softening > 0.0) {
            return Err(ConfigError::invalid("softening", "must be > 0"));
        }
        if !(self.steer_max > 0.0 && self.steer_max <= std::f64::consts::FRAC_PI_2) {
            return Err(ConfigError::invalid("steer_max", "must be in (0, π/2]"));
        }
        Ok(())
    }
}

/// Commands sent to the vehicle plant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Actuation {
    /// Speed setpoint, m/s.
    pub applied_speed: f64,
    /// Front-wheel angle, radians; positive turns clockwise (right).
    pub steering_angle: f64,
}

/// Velocity-form PD on speed error. Returns the speed setpoint and the error to
/// feed back as `prev_error` on the next call.
pub fn pd_speed_control(
    target_speed: f64,
    ego: &VehicleState,
    gains: &PdGains,
    prev_error: f64,
    dt: f64,
) -> (f64, f64) {
    let error = target_speed - ego.speed;
    let raw = ego.speed + gains.kp * error + gains.kd * (error - prev_error) / dt;
    let applied = if raw.is_nan() {
        0.0
    } else {
        raw.clamp(0.0, gains.v_max)
    };
    (applied, error)
}

/// Signed lateral offset of `point` from the line through `anchor` along
/// compass heading `heading`; positive when `point` is left of the line.
pub fn cross_track_error(point: &EnuPoint, anchor: &EnuPoint, heading: f64) -> f64 {
    let (s, c) = heading.sin_cos();
    // left normal of (sin, cos) in east/north is (-cos, sin)
    -(point.east - anchor.east) * c + (point.north - anchor.north) * s
}

/// Stanley steering law: heading error plus the arctangent of the softened,
/// gain-scaled cross-track error, clamped to `±steer_max`.
pub fn stanley_heading_control(
    target_heading: f64,
    goal: &EnuPoint,
    ego_position: &EnuPoint,
    ego: &VehicleState,
    gains: &StanleyGains,
) -> f64 {
    let heading_error = wrap_to_pi(target_heading - ego.heading);
    let cte = cross_track_error(ego_position, goal, target_heading);
    let delta = heading_error + (gains.k_cte * cte / (gains.softening + ego.speed)).atan();
    if delta.is_nan() {
        return 0.0;
    }
    delta.clamp(-gains.steer_max, gains.steer_max)
}

/// PD controller with its one word of state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedController {
    pub gains: PdGains,
    prev_error: f64,
}

impl SpeedController {
    pub fn new(gains: PdGains) -> Self {
        Self {
            gains,
            prev_error: 0.0,
        }
    }

    pub fn update(&mut self, target_speed: f64, ego: &VehicleState, dt: f64) -> f64 {
        let (applied, error) =
            pd_speed_control(target_speed, ego, &self.gains, self.prev_error, dt);
        self.prev_error = error;
        applied
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::model::VehicleId;
    use crate::sim::{bicycle_step, PlantParams, Pose};
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, TAU};

    fn ego(speed: f64, heading: f64) -> VehicleState {
        VehicleState {
            vehicle_id: VehicleId(1),
            timestamp_us: 0,
            position: GeoPoint::new(0.0, 0.0, 0.0).unwrap(),
            speed,
            heading,
            acceleration: 0.0,
            sequence: 0,
        }
    }

    #[test]
    fn pd_fixed_point() {
        let g = PdGains::default();
        let (v, e) = pd_speed_control(1.3, &ego(1.3, 0.0), &g, 0.0, 0.05);
        assert_eq!((v, e), (1.3, 0.0));
    }

    #[test]
    fn pd_proportional_step() {
        let g = PdGains {
            kp: 0.5,
            kd: 0.0,
            v_max: 3.0,
        };
        let (v, e) = pd_speed_control(2.0, &ego(1.0, 0.0), &g, 0.0, 0.1);
        assert!((v - 1.5).abs() < 1e-12);
        assert_eq!(e, 1.0);
    }

    #[test]
    fn pd_lower_clamp() {
        let (v, _) = pd_speed_control(-1.0, &ego(0.0, 0.0), &PdGains::default(), 0.0, 0.05);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn pd_derivative_term() {
        let g = PdGains {
            kp: 1.0,
            kd: 0.1,
            v_max: 10.0,
        };
        // e = 1, prev = 0.5, dt = 0.1 -> 1 + 1 + 0.1 * 5 = 2.5
        let (v, _) = pd_speed_control(2.0, &ego(1.0, 0.0), &g, 0.5, 0.1);
        assert!((v - 2.5).abs() < 1e-12);
    }

    #[test]
    fn stanley_on_path() {
        let d = stanley_heading_control(
            0.3,
            &EnuPoint::horizontal(2.0, 2.0),
            &EnuPoint::horizontal(2.0 - 3.0 * 0.3f64.sin(), 2.0 - 3.0 * 0.3f64.cos()),
            &ego(1.0, 0.3),
            &StanleyGains::default(),
        );
        assert!(d.abs() < 1e-12, "{d}");
    }

    #[test]
    fn stanley_heading_only() {
        let g = StanleyGains {
            steer_max: 0.5,
            ..Default::default()
        };
        let d = stanley_heading_control(
            0.2,
            &EnuPoint::ORIGIN,
            &EnuPoint::ORIGIN,
            &ego(1.0, 0.0),
            &g,
        );
        assert!((d - 0.2).abs() < 1e-12);
        // wrap across north: target 0.1, heading 2π − 0.1 -> +0.2
        let d = stanley_heading_control(
            0.1,
            &EnuPoint::ORIGIN,
            &EnuPoint::ORIGIN,
            &ego(1.0, TAU - 0.1),
            &g,
        );
        assert!((d - 0.2).abs() < 1e-12, "{d}");
    }

    #[test]
    fn stanley_cross_track_only() {
        let g = StanleyGains {
            k_cte: 1.0,
            softening: 0.1,
            steer_max: 1.0,
        };
        // path runs north through the origin; ego 1 m west (left of it)
        let ego_pos = EnuPoint::horizontal(-1.0, 0.0);
        assert!((cross_track_error(&ego_pos, &EnuPoint::ORIGIN, 0.0) - 1.0).abs() < 1e-12);
        let d = stanley_heading_control(0.0, &EnuPoint::ORIGIN, &ego_pos, &ego(0.9, 0.0), &g);
        assert!((d - FRAC_PI_4).abs() < 1e-12);
        let params = PlantParams {
            wheelbase: 0.33,
            speed_lag: 0.0,
            v_max: 3.0,
            steer_max: 1.0,
        };
        let pose = Pose {
            position: ego_pos,
            heading: 0.0,
            speed: 0.9,
        };
        let next = bicycle_step(
            &pose,
            &Actuation {
                applied_speed: 0.9,
                steering_angle: d,
            },
            &params,
            0.05,
        );
        assert!(cross_track_error(&next.position, &EnuPoint::ORIGIN, 0.0).abs() < 1.0);
    }

    proptest! {
        #[test]
        fn pd_output_always_clamped(
            vt in -1e6f64..1e6,
            speed in 0.0f64..1e6,
            prev in -1e6f64..1e6,
            dt in 1e-4f64..10.0,
            kp in 1e-3f64..100.0,
            kd in 0.0f64..10.0,
            v_max in 0.1f64..50.0,
        ) {
            let g = PdGains { kp, kd, v_max };
            let (v, _) = pd_speed_control(vt, &ego(speed, 0.0), &g, prev, dt);
            prop_assert!((0.0..=v_max).contains(&v));
        }

        #[test]
        fn stanley_steers_toward_path(
            cte in prop_oneof![-5.0f64..-0.01, 0.01f64..5.0],
            speed in 0.1f64..3.0,
            heading in 0.0f64..TAU,
            wheelbase in 0.2f64..1.0,
        ) {
            let g = StanleyGains::default();
            let anchor = EnuPoint::horizontal(3.0, -2.0);
            // place ego `cte` to the left of the line through the anchor
            let (s, c) = heading.sin_cos();
            let ego_pos = EnuPoint::horizontal(anchor.east - cte * c, anchor.north + cte * s);
            prop_assert!((cross_track_error(&ego_pos, &anchor, heading) - cte).abs() < 1e-9);
            let d = stanley_heading_control(heading, &anchor, &ego_pos, &ego(speed, heading), &g);
            let params = PlantParams { wheelbase, speed_lag: 0.0, v_max: 3.0, steer_max: g.steer_max };
            let pose = Pose { position: ego_pos, heading, speed };
            let next = bicycle_step(&pose, &Actuation { applied_speed: speed, steering_angle: d }, &params, 0.05);
            prop_assert!(cross_track_error(&next.position, &anchor, heading).abs() < cte.abs());
        }

        #[test]
        fn stanley_within_clamp(
            th in -10.0f64..10.0,
            h in 0.0f64..TAU,
            e in -100.0f64..100.0,
            n in -100.0f64..100.0,
            speed in 0.0f64..5.0,
        ) {
            let g = StanleyGains::default();
            let d = stanley_heading_control(th, &EnuPoint::ORIGIN, &EnuPoint::horizontal(e, n), &ego(speed, h), &g);
            prop_assert!(d.abs() <= g.steer_max);
        }
    }
}
