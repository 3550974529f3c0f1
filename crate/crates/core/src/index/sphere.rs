//! Hyperspherical coordinates: a radius followed by `r − 1` angles.
//!
//! `φ_k = atan2(‖v_{k+1..}‖, v_k)` lies in `[0, π]` for all but the last angle, which is
//! `atan2(v_r, v_{r−1})` in `(−π, π]`.

/// Cartesian to hyperspherical; the zero vector maps to all zeros.
pub fn cart2sph(v: &[f64], out: &mut [f64]) {
    let r = v.len();
    debug_assert!(r >= 2 && out.len() == r);
    // tail[k] = ‖v_k..‖
    let mut tail = vec![0.0f64; r + 1];
    for k in (0..r).rev() {
        tail[k] = tail[k + 1].hypot(v[k]);
    }
    out[0] = tail[0];
    if out[0] == 0.0 {
        out.iter_mut().for_each(|s| *s = 0.0);
        return;
    }
    for k in 0..r - 2 {
        out[k + 1] = tail[k + 1].atan2(v[k]);
    }
    let last = v[r - 1].atan2(v[r - 2]);
    // atan2(-0.0, x<0) = −π; keep the half-open range (−π, π].
    out[r - 1] = if last == -std::f64::consts::PI { std::f64::consts::PI } else { last + 0.0 };
}

pub fn cart2sph_vec(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    cart2sph(v, &mut out);
    out
}

/// Inverse of [`cart2sph`].
pub fn sph2cart(s: &[f64]) -> Vec<f64> {
    let r = s.len();
    let mut v = vec![0.0; r];
    let mut prod = s[0];
    for k in 0..r - 2 {
        let (sin, cos) = s[k + 1].sin_cos();
        v[k] = prod * cos;
        prod *= sin;
    }
    let (sin, cos) = s[r - 1].sin_cos();
    v[r - 2] = prod * cos;
    v[r - 1] = prod * sin;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn axis_cases() {
        let cases: [([f64; 3], [f64; 3]); 6] = [
            ([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
            ([-1.0, 0.0, 0.0], [1.0, PI, 0.0]),
            ([0.0, 1.0, 0.0], [1.0, FRAC_PI_2, 0.0]),
            ([0.0, -1.0, 0.0], [1.0, FRAC_PI_2, PI]),
            ([0.0, 0.0, 1.0], [1.0, FRAC_PI_2, FRAC_PI_2]),
            ([0.0, 0.0, -1.0], [1.0, FRAC_PI_2, -FRAC_PI_2]),
        ];
        for (v, s) in cases {
            let got = cart2sph_vec(&v);
            for (a, b) in got.iter().zip(&s) {
                assert!((a - b).abs() < 1e-15, "{v:?} -> {got:?}");
            }
        }
        assert_eq!(cart2sph_vec(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(cart2sph_vec(&[-2.0, -0.0]), vec![2.0, PI]);
    }

    #[test]
    fn angle_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let r = rng.random_range(2..7);
            let v: Vec<f64> = (0..r).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = cart2sph_vec(&v);
            assert!(s[0] >= 0.0);
            for a in &s[1..r - 1] {
                assert!((0.0..=PI).contains(a));
            }
            assert!(s[r - 1] > -PI && s[r - 1] <= PI);
        }
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for i in 0..100_000 {
            let r = 2 + i % 5;
            let v: Vec<f64> = (0..r).map(|_| rng.random_range(-5.0..5.0)).collect();
            let back = sph2cart(&cart2sph_vec(&v));
            for (a, b) in v.iter().zip(&back) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
