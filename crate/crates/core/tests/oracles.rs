mod common;

use garlic::gaussian::{mahalanobis, mahalanobis_batch, GaussianParams, GaussianSet};
use garlic::VectorSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn mahalanobis_matches_explicit_inverse() {
    let worst = common::mahalanobis_oracle(10_000, 11);
    assert!(worst <= 1e-8, "worst relative error {worst:e}");
}

#[test]
fn batch_equals_scalar_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 12;
    let data: Vec<f32> = (0..300 * d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let x = VectorSet::new(d, data).unwrap();
    let mut set = GaussianSet::new(d);
    for _ in 0..7 {
        set.push(common::random_spd_gaussian(&mut rng, d).0).unwrap();
    }
    set.deactivate(3);
    let dm = mahalanobis_batch(&x, &set).unwrap();
    for i in 0..x.len() {
        assert_eq!(dm.get(i, 3), f64::INFINITY);
        for g in (0..set.len()).filter(|&g| g != 3) {
            let want = mahalanobis(x.row(i), set.get(g)).unwrap();
            assert_eq!(dm.get(i, g).to_bits(), want.to_bits());
        }
    }
    assert_eq!(dm.argmin(0).map(|(g, _)| g == 3), Some(false));
}

#[test]
fn isotropic_distance_is_scaled_euclidean() {
    let g = GaussianParams::isotropic(vec![1.0, -1.0, 2.0], 0.5);
    let x = [4.0f64, 3.0, 2.0];
    assert!((mahalanobis(&x, &g).unwrap() - 10.0).abs() < 1e-12);
}

#[test]
fn bin_distance_matches_descent() {
    let worst = common::bin_distance_oracle(10_000, 21);
    assert!(worst <= 1e-6, "worst gap {worst:e}");
}
