//! Fixed-layout binary encoding of a vehicle state broadcast.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "OCVY"
//!      4     1  version (0x01)
//!      5     1  vehicle id
//!      6     2  flags (reserved, 0)
//!      8     4  sequence          u32 BE
//!     12     8  timestamp (µs)    u64 BE
//!     20     8  latitude (deg)    f64 BE
//!     28     8  longitude (deg)   f64 BE
//!     36     8  altitude (m)      f64 BE
//!     44     8  speed (m/s)       f64 BE
//!     52     8  heading (rad)     f64 BE
//!     60     8  accel (m/s²)      f64 BE
//! ```

use thiserror::Error;

use crate::geo::GeoPoint;
use crate::model::{StateError, VehicleId, VehicleState};

pub const FRAME_LEN: usize = 68;
pub const MAGIC: [u8; 4] = *b"OCVY";
pub const VERSION: u8 = 0x01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("field {0} is not finite")]
    NonFinite(&'static str),
    #[error("state violates an invariant: {0}")]
    InvalidState(#[from] StateError),
    #[error("foreign frame (bad magic)")]
    Foreign,
    #[error("malformed frame: {0}")]
    Malformed(String),
}

/// An encoded 68-octet broadcast frame.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct WireFrame([u8; FRAME_LEN]);

impl WireFrame {
    pub fn as_bytes(&self) -> &[u8; FRAME_LEN] {
        &self.0
    }
}

impl AsRef<[u8]> for WireFrame {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl std::fmt::Debug for WireFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "WireFrame(")?;
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

pub fn encode_bsm(state: &VehicleState) -> Result<WireFrame, CodecError> {
    let floats = [
        ("latitude", state.position.latitude),
        ("longitude", state.position.longitude),
        ("altitude", state.position.altitude),
        ("speed", state.speed),
        ("heading", state.heading),
        ("acceleration", state.acceleration),
    ];
    if let Some((name, _)) = floats.iter().find(|(_, v)| !v.is_finite()) {
        return Err(CodecError::NonFinite(name));
    }
    state.validate()?;

    let mut buf = [0u8; FRAME_LEN];
    buf[0..4].copy_from_slice(&MAGIC);
    buf[4] = VERSION;
    buf[5] = state.vehicle_id.0;
    // 6..8 reserved flags stay zero
    buf[8..12].copy_from_slice(&state.sequence.to_be_bytes());
    buf[12..20].copy_from_slice(&state.timestamp_us.to_be_bytes());
    for (i, (_, v)) in floats.iter().enumerate() {
        let at = 20 + 8 * i;
        buf[at..at + 8].copy_from_slice(&v.to_be_bytes());
    }
    Ok(WireFrame(buf))
}

fn f64_at(buf: &[u8], at: usize) -> f64 {
    let mut raw = [0u8; 8];
    raw.copy_from_slice(&buf[at..at + 8]);
    f64::from_be_bytes(raw)
}

pub fn decode_bsm(bytes: &[u8]) -> Result<VehicleState, CodecError> {
    if bytes.len() >= 4 && bytes[0..4] != MAGIC {
        return Err(CodecError::Foreign);
    }
    if bytes.len() != FRAME_LEN {
        return Err(CodecError::Malformed(format!(
            "length {} != {FRAME_LEN}",
            bytes.len()
        )));
    }
    if bytes[4] != VERSION {
        return Err(CodecError::Malformed(format!("version {:#04x}", bytes[4])));
    }
    let sequence = u32::from_be_bytes(bytes[8..12].try_into().expect("4 octets"));
    let timestamp_us = u64::from_be_bytes(bytes[12..20].try_into().expect("8 octets"));
    let v: Vec<f64> = (0..6).map(|i| f64_at(bytes, 20 + 8 * i)).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CodecError::Malformed("non-finite field".into()));
    }
    let state = VehicleState {
        vehicle_id: VehicleId(bytes[5]),
        timestamp_us,
        position: GeoPoint {
            latitude: v[0],
            longitude: v[1],
            altitude: v[2],
        },
        speed: v[3],
        heading: v[4],
        acceleration: v[5],
        sequence,
    };
    state
        .validate()
        .map_err(|e| CodecError::Malformed(e.to_string()))?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_state() -> VehicleState {
        VehicleState {
            vehicle_id: VehicleId(0),
            timestamp_us: 0,
            position: GeoPoint {
                latitude: 0.0,
                longitude: 0.0,
                altitude: 0.0,
            },
            speed: 0.0,
            heading: 0.0,
            acceleration: 0.0,
            sequence: 0,
        }
    }

    #[test]
    fn framing_constants() {
        let f = encode_bsm(&zero_state()).unwrap();
        assert_eq!(f.as_bytes().len(), FRAME_LEN);
        assert_eq!(&f.as_bytes()[0..4], b"OCVY");
        assert_eq!(f.as_bytes()[4], 1);
        // header then an all-zero payload: +0.0 encodes as zero octets
        assert!(f.as_bytes()[5..].iter().all(|b| *b == 0));
    }

    #[test]
    fn layout_is_big_endian() {
        let s = VehicleState {
            vehicle_id: VehicleId(2),
            timestamp_us: 0x0102_0304_0506_0708,
            sequence: 0xdead_beef,
            speed: 1.5,
            ..zero_state()
        };
        let f = encode_bsm(&s).unwrap();
        let b = f.as_bytes();
        assert_eq!(b[5], 2);
        assert_eq!(&b[6..8], &[0, 0]);
        assert_eq!(&b[8..12], &[0xde, 0xad, 0xbe, 0xef]);
        assert_eq!(&b[12..20], &[1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(&b[44..52], &1.5f64.to_be_bytes());
    }

    #[test]
    fn encode_rejects_non_finite() {
        let mut s = zero_state();
        s.acceleration = f64::INFINITY;
        assert_eq!(encode_bsm(&s), Err(CodecError::NonFinite("acceleration")));
        let mut s = zero_state();
        s.speed = -1.0;
        assert!(matches!(encode_bsm(&s), Err(CodecError::InvalidState(_))));
    }

    #[test]
    fn decode_errors() {
        let f = encode_bsm(&zero_state()).unwrap();
        assert!(matches!(
            decode_bsm(&f.as_bytes()[..67]),
            Err(CodecError::Malformed(_))
        ));
        assert!(matches!(decode_bsm(&[]), Err(CodecError::Malformed(_))));
        let mut foreign = *f.as_bytes();
        foreign[0..4].copy_from_slice(b"XXXX");
        assert_eq!(decode_bsm(&foreign), Err(CodecError::Foreign));
        let mut v2 = *f.as_bytes();
        v2[4] = 2;
        assert!(matches!(decode_bsm(&v2), Err(CodecError::Malformed(_))));
        let mut nan = *f.as_bytes();
        nan[44..52].copy_from_slice(&f64::NAN.to_be_bytes());
        assert!(matches!(decode_bsm(&nan), Err(CodecError::Malformed(_))));
        assert_eq!(decode_bsm(f.as_bytes()).unwrap(), zero_state());
    }
}
