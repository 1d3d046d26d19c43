use std::f64::consts::TAU;

use convoy_core::geo::GeoPoint;
use convoy_core::model::{VehicleId, VehicleState};
use convoy_core::net::{decode_bsm, encode_bsm, CodecError, FRAME_LEN, MAGIC, VERSION};
use proptest::prelude::*;

fn any_state() -> impl Strategy<Value = VehicleState> {
    (
        any::<u8>(),
        any::<u64>(),
        -90.0f64..=90.0,
        -180.0f64..=180.0,
        -500.0f64..9000.0,
        0.0f64..100.0,
        0.0f64..TAU,
        -50.0f64..50.0,
        any::<u32>(),
    )
        .prop_map(
            |(id, ts, lat, lon, alt, speed, heading, acc, seq)| VehicleState {
                vehicle_id: VehicleId(id),
                timestamp_us: ts,
                position: GeoPoint::new(lat, lon, alt).unwrap(),
                speed,
                heading,
                acceleration: acc,
                sequence: seq,
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn decode_inverts_encode(state in any_state()) {
        let frame = encode_bsm(&state).unwrap();
        prop_assert_eq!(frame.as_ref().len(), FRAME_LEN);
        let back = decode_bsm(frame.as_ref()).unwrap();
        prop_assert_eq!(back, state);
        // bit-exact, including the sign of zero
        prop_assert_eq!(back.speed.to_bits(), state.speed.to_bits());
        prop_assert_eq!(back.position.latitude.to_bits(), state.position.latitude.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4000))]

    #[test]
    fn random_buffers_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode_bsm(&bytes);
    }

    #[test]
    fn truncated_frames_rejected(state in any_state(), cut in 0usize..FRAME_LEN) {
        let frame = encode_bsm(&state).unwrap();
        prop_assert!(decode_bsm(&frame.as_ref()[..cut]).is_err());
        let mut long = frame.as_ref().to_vec();
        long.push(0);
        prop_assert!(decode_bsm(&long).is_err());
    }

    #[test]
    fn mutated_frames_decode_or_fail_cleanly(state in any_state(), pos in 0usize..FRAME_LEN, bit in 0u8..8) {
        let mut bytes = encode_bsm(&state).unwrap().as_ref().to_vec();
        bytes[pos] ^= 1 << bit;
        match decode_bsm(&bytes) {
            Ok(s) => prop_assert!(s.validate().is_ok()),
            Err(CodecError::Foreign) => prop_assert!(pos < 4),
            Err(_) => {}
        }
    }

    #[test]
    fn framed_garbage_payload(id in any::<u8>(), payload in proptest::collection::vec(any::<u8>(), FRAME_LEN - 8)) {
        let mut bytes = MAGIC.to_vec();
        bytes.extend([VERSION, id, 0, 0]);
        bytes.extend(payload);
        if let Ok(s) = decode_bsm(&bytes) {
            prop_assert!(s.validate().is_ok());
        }
    }
}
