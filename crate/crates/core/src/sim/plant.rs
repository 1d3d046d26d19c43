use serde::{Deserialize, Serialize};

use crate::control::Actuation;
use crate::geo::{wrap_to_two_pi, EnuPoint};
use crate::model::ConfigError;

/// Kinematic bicycle plant parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantParams {
    /// metres
    #[serde(rename = "wheelbase_m")]
    pub wheelbase: f64,
    /// First-order lag on the speed setpoint, seconds. 0 tracks instantly.
    #[serde(rename = "speed_lag_s")]
    pub speed_lag: f64,
    pub v_max: f64,
    pub steer_max: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        // 1/10-scale car
        Self {
            wheelbase: 0.33,
            speed_lag: 0.25,
            v_max: 3.0,
            steer_max: 0.35,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.wheelbase.is_finite() && self.wheelbase > 0.0) {
            return Err(ConfigError::invalid("wheelbase_m", "must be > 0"));
        }
        if !(self.speed_lag.is_finite() && self.speed_lag >= 0.0) {
            return Err(ConfigError::invalid("speed_lag_s", "must be >= 0"));
        }
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            return Err(ConfigError::invalid("v_max", "must be > 0"));
        }
        if !(self.steer_max > 0.0 && self.steer_max < std::f64::consts::FRAC_PI_2) {
            return Err(ConfigError::invalid("steer_max", "must be in (0, π/2)"));
        }
        Ok(())
    }
}

/// Plant state in the ENU plane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub position: EnuPoint,
    /// Compass heading, radians.
    pub heading: f64,
    /// m/s
    pub speed: f64,
}

/// Advances the kinematic bicycle one step. Commands are clamped to the plant
/// limits; speed follows the setpoint through a first-order lag, then heading
/// and position integrate with the updated speed.
pub fn bicycle_step(pose: &Pose, command: &Actuation, params: &PlantParams, dt: f64) -> Pose {
    let setpoint = command.applied_speed.clamp(0.0, params.v_max);
    let steer = command
        .steering_angle
        .clamp(-params.steer_max, params.steer_max);
    let speed = if params.speed_lag > 0.0 {
        let gain = dt / params.speed_lag.max(dt);
        pose.speed + gain * (setpoint - pose.speed)
    } else {
        setpoint
    }
    .clamp(0.0, params.v_max);
    let heading = wrap_to_two_pi(pose.heading + dt * speed * steer.tan() / params.wheelbase);
    Pose {
        position: pose.position.advanced(heading, dt * speed),
        heading,
        speed,
    }
}
