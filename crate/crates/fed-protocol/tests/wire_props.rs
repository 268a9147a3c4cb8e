//! Wire robustness: randomized round-trips, exhaustive single-byte
//! corruption, exhaustive truncation.

use bn_adapt::LccsCoefficients;
use fed_protocol::{
    decode_client_update, encode_client_update, frame_len, ClientUpdate, FedError,
};
use nn_engine::RngStream;

fn random_update(rng: &mut RngStream) -> ClientUpdate {
    let n_layers = 1 + rng.index(6);
    let flat: Vec<f32> = (0..n_layers * 4)
        .map(|_| rng.uniform(-3.0, 3.0) as f32)
        .collect();
    ClientUpdate {
        round: rng.next_u64() as u32,
        client_id: rng.next_u64() as u32,
        n_samples: 1 + rng.index(10_000) as u32,
        coefficients: LccsCoefficients::from_flat(&flat).unwrap(),
    }
}

#[test]
fn thousand_random_round_trips_are_field_exact() {
    let mut rng = RngStream::new(2024);
    for _ in 0..1000 {
        let u = random_update(&mut rng);
        let bytes = encode_client_update(&u).unwrap();
        assert_eq!(bytes.len(), frame_len(u.coefficients.n_layers()));
        let decoded = decode_client_update(&bytes).unwrap();
        assert_eq!(decoded, u);
    }
}

#[test]
fn every_single_byte_corruption_is_rejected() {
    let mut rng = RngStream::new(77);
    let u = random_update(&mut rng);
    let bytes = encode_client_update(&u).unwrap();
    for pos in 0..bytes.len() {
        for bit in 0..8 {
            let mut bad = bytes.clone();
            bad[pos] ^= 1 << bit;
            assert!(
                decode_client_update(&bad).is_err(),
                "flip of byte {pos} bit {bit} was accepted"
            );
        }
    }
}

#[test]
fn every_truncation_is_incomplete() {
    let mut rng = RngStream::new(78);
    let u = random_update(&mut rng);
    let bytes = encode_client_update(&u).unwrap();
    for cut in 0..bytes.len() {
        let err = decode_client_update(&bytes[..cut]).unwrap_err();
        assert!(
            matches!(err, FedError::Incomplete(_)),
            "cut at {cut}: {err:?}"
        );
    }
}
