use garlic::config::RunConfig;
use garlic::io::{encode_fvecs, encode_ivecs, parse_fvecs, parse_ivecs, parse_labels, synth_mixture, IntMatrix};
use garlic::{build_index, fit, GarlicError, HyperParams, Index, VectorSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_index() -> (Index, VectorSet) {
    let ds = synth_mixture(400, 6, 3, 0.3, 4).unwrap();
    let hp = HyperParams {
        k_init: 4,
        epochs_max: 3,
        warmup_epochs: 1,
        splitclone_period: 2,
        batch_size: 100,
        ..Default::default()
    };
    let state = fit(&ds.vectors, &hp).unwrap();
    (build_index(&ds.vectors, &state.gaussians, &hp).unwrap(), ds.vectors)
}

/// Replaces the trailer with the checksum of the (mutated) body.
fn reseal(bytes: &mut [u8]) {
    let body = bytes.len() - 4;
    let crc = crc32fast::hash(&bytes[..body]);
    bytes[body..].copy_from_slice(&crc.to_le_bytes());
}

#[test]
fn index_bytes_round_trip() {
    let (index, data) = small_index();
    let bytes = index.to_bytes();
    assert_eq!(&bytes[..4], b"GRLC");
    let back = Index::from_bytes(&bytes).unwrap();
    assert_eq!(back, index);
    assert_eq!(back.to_bytes(), bytes);
    back.check_dataset(&data).unwrap();
}

#[test]
fn index_rejects_corruption() {
    let (index, _) = small_index();
    let bytes = index.to_bytes();
    let mut flipped = bytes.clone();
    flipped[40] ^= 0x10;
    assert!(matches!(Index::from_bytes(&flipped), Err(GarlicError::Format { .. })));
    assert!(Index::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut version = bytes.clone();
    version[4] = 9;
    reseal(&mut version);
    assert!(matches!(Index::from_bytes(&version), Err(GarlicError::Format { .. })));
}

#[test]
fn index_decoder_never_panics() {
    let (index, _) = small_index();
    let good = index.to_bytes();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for round in 0..3000 {
        let mut bytes = if round % 3 == 0 {
            let len = rng.random_range(0..200);
            let mut b: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            if len >= 4 && rng.random_bool(0.5) {
                b[..4].copy_from_slice(b"GRLC");
            }
            b
        } else {
            let mut b = good.clone();
            for _ in 0..rng.random_range(1..6) {
                let i = rng.random_range(4..b.len() - 4);
                b[i] = rng.random();
            }
            if round % 3 == 2 {
                let cut = rng.random_range(12..b.len());
                b.truncate(cut);
            }
            b
        };
        if bytes.len() >= 8 && rng.random_bool(0.8) {
            reseal(&mut bytes);
        }
        let _ = Index::from_bytes(&bytes);
    }
}

#[test]
fn fvecs_hand_cases() {
    let mut one = 2i32.to_le_bytes().to_vec();
    one.extend_from_slice(&1.0f32.to_le_bytes());
    one.extend_from_slice(&2.0f32.to_le_bytes());
    assert_eq!(parse_fvecs(&one).unwrap().as_slice(), &[1.0, 2.0]);

    let mut mixed = one.clone();
    mixed.extend_from_slice(&3i32.to_le_bytes());
    mixed.extend_from_slice(&[0u8; 12]);
    assert!(matches!(parse_fvecs(&mixed), Err(GarlicError::Format { offset: 12, .. })));

    assert!(parse_fvecs(&one[..10]).is_err());
    assert!(parse_fvecs(&0i32.to_le_bytes()).is_err());
    assert!(parse_fvecs(&(-1i32).to_le_bytes()).is_err());
}

#[test]
fn parsers_never_panic_on_random_bytes() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..5000 {
        let len = rng.random_range(0..64);
        let mut b: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        if len >= 4 && rng.random_bool(0.5) {
            // Plausible small dimension to reach the payload paths.
            b[..4].copy_from_slice(&rng.random_range(-2i32..4).to_le_bytes());
        }
        let _ = parse_fvecs(&b);
        let _ = parse_ivecs(&b);
        let text = String::from_utf8_lossy(&b);
        let _ = parse_labels(&text);
        let _ = RunConfig::parse(&text);
    }
}

#[test]
fn labels_reject_garbage() {
    assert_eq!(parse_labels("1\n 2 \n\n3").unwrap(), vec![1, 2, 3]);
    assert!(matches!(parse_labels("1\nx\n"), Err(GarlicError::Format { offset: 2, .. })));
    assert!(parse_labels("-1\n").is_err());
}

proptest! {
    #[test]
    fn fvecs_round_trip(d in 2usize..9, n in 1usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..n * d).map(|_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff)).collect();
        let v = VectorSet::new(d, data).unwrap();
        let back = parse_fvecs(&encode_fvecs(&v)).unwrap();
        prop_assert_eq!(back.len(), n);
        let same = back.as_slice().iter().zip(v.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn ivecs_round_trip(rows in proptest::collection::vec(proptest::collection::vec(any::<i32>(), 3), 1..10)) {
        let m = IntMatrix::from_rows(&rows).unwrap();
        let back = parse_ivecs(&encode_ivecs(&m)).unwrap();
        prop_assert_eq!(back, m);
    }
}
