//! Local tangent-plane (East-North-Up) geometry on the WGS84 ellipsoid.
//!
//! Positions travel over the air as geodetic coordinates; every spacing and
//! steering computation happens in a flat ENU plane anchored at a fixed
//! reference point. At convoy scales (well under a kilometre) the tangent-plane
//! approximation is accurate to a few millimetres.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// WGS84 semi-major axis in metres.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// WGS84 first eccentricity squared.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90] degrees")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} outside [-180, 180] degrees")]
    LongitudeOutOfRange(f64),
    #[error("altitude {0} is not finite")]
    NonFiniteAltitude(f64),
    #[error("ENU component is not finite")]
    NonFiniteEnu,
    #[error("reference latitude too close to a pole for a tangent plane")]
    PolarReference,
    #[error("bearing between coincident points is undefined")]
    CoincidentPoints,
}

/// Geodetic position in degrees and metres above the ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64, altitude: f64) -> Result<Self, GeoError> {
        let p = Self {
            latitude,
            longitude,
            altitude,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(GeoError::LatitudeOutOfRange(self.latitude));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(GeoError::LongitudeOutOfRange(self.longitude));
        }
        if !self.altitude.is_finite() {
            return Err(GeoError::NonFiniteAltitude(self.altitude));
        }
        Ok(())
    }
}

/// Offset in metres from a reference point, in the local East-North-Up frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnuPoint {
    pub east: f64,
    pub north: f64,
    pub up: f64,
}

impl EnuPoint {
    pub const ORIGIN: EnuPoint = EnuPoint {
        east: 0.0,
        north: 0.0,
        up: 0.0,
    };

    pub fn new(east: f64, north: f64, up: f64) -> Self {
        Self { east, north, up }
    }

    /// A point on the ground plane.
    pub fn horizontal(east: f64, north: f64) -> Self {
        Self::new(east, north, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.east.is_finite() && self.north.is_finite() && self.up.is_finite()
    }

    /// Horizontal Euclidean distance.
    pub fn distance_2d(&self, other: &EnuPoint) -> f64 {
        (self.east - other.east).hypot(self.north - other.north)
    }

    /// Moves `distance` metres along a compass heading (0 = north, clockwise).
    pub fn advanced(&self, heading: f64, distance: f64) -> EnuPoint {
        let (s, c) = heading.sin_cos();
        EnuPoint::new(self.east + distance * s, self.north + distance * c, self.up)
    }
}

/// Meridian and prime-vertical radii of curvature at a latitude (radians).
fn radii_of_curvature(lat_rad: f64) -> (f64, f64) {
    let s = lat_rad.sin();
    let w2 = 1.0 - WGS84_E2 * s * s;
    let prime_vertical = WGS84_A / w2.sqrt();
    let meridian = WGS84_A * (1.0 - WGS84_E2) / (w2 * w2.sqrt());
    (meridian, prime_vertical)
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_to_pi(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    a
}

/// Wraps an angle to `[0, 2π)`.
pub fn wrap_to_two_pi(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// ENU offset of `point` relative to `reference` on the reference tangent plane.
pub fn enu_from_geodetic(reference: &GeoPoint, point: &GeoPoint) -> Result<EnuPoint, GeoError> {
    reference.validate()?;
    point.validate()?;
    let lat0 = reference.latitude.to_radians();
    let (meridian, prime_vertical) = radii_of_curvature(lat0);
    let dlat = (point.latitude - reference.latitude).to_radians();
    let dlon = wrap_to_pi((point.longitude - reference.longitude).to_radians());
    Ok(EnuPoint {
        east: dlon * (prime_vertical + reference.altitude) * lat0.cos(),
        north: dlat * (meridian + reference.altitude),
        up: point.altitude - reference.altitude,
    })
}

/// Inverse of [`enu_from_geodetic`] under the same tangent-plane formulation.
pub fn geodetic_from_enu(reference: &GeoPoint, offset: &EnuPoint) -> Result<GeoPoint, GeoError> {
    reference.validate()?;
    if !offset.is_finite() {
        return Err(GeoError::NonFiniteEnu);
    }
    let lat0 = reference.latitude.to_radians();
    let cos_lat = lat0.cos();
    if cos_lat < 1e-9 {
        return Err(GeoError::PolarReference);
    }
    let (meridian, prime_vertical) = radii_of_curvature(lat0);
    let dlat = offset.north / (meridian + reference.altitude);
    let dlon = offset.east / ((prime_vertical + reference.altitude) * cos_lat);
    let mut longitude = reference.longitude + dlon.to_degrees();
    if longitude > 180.0 {
        longitude -= 360.0;
    } else if longitude < -180.0 {
        longitude += 360.0;
    }
    GeoPoint::new(
        reference.latitude + dlat.to_degrees(),
        longitude,
        reference.altitude + offset.up,
    )
}

/// Compass bearing from `from` to `to`: radians in `[0, 2π)`, 0 = north, clockwise.
pub fn bearing_enu(from: &EnuPoint, to: &EnuPoint) -> Result<f64, GeoError> {
    let de = to.east - from.east;
    let dn = to.north - from.north;
    if !(de.is_finite() && dn.is_finite()) {
        return Err(GeoError::NonFiniteEnu);
    }
    if de == 0.0 && dn == 0.0 {
        return Err(GeoError::CoincidentPoints);
    }
    Ok(wrap_to_two_pi(de.atan2(dn)))
}
