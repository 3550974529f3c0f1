//! Oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use garlic::gaussian::{mahalanobis, strict_lower_len, GaussianParams, GaussianSet};
use garlic::params::HyperParams;
use garlic::query::bin_distance;
use garlic::training::{branch_signature, total_loss_and_grads};
use garlic::VectorSet;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform points in `[-2, 2]^d` and `k` Gaussians centered near data points with
/// moderate random factors.
pub fn random_instance(seed: u64, n: usize, d: usize, k: usize) -> (VectorSet, GaussianSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x = VectorSet::new(d, data).unwrap();
    let mut set = GaussianSet::new(d);
    for _ in 0..k {
        let i = rng.random_range(0..n);
        set.push(GaussianParams {
            mu: x.row(i).iter().map(|v| *v as f64 + rng.random_range(-0.3..0.3)).collect(),
            log_diag: (0..d).map(|_| rng.random_range(-0.2..0.6)).collect(),
            lower: (0..strict_lower_len(d)).map(|_| rng.random_range(-0.4..0.4)).collect(),
        })
        .unwrap();
    }
    (x, set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tensor {
    Mu,
    LogDiag,
    Lower,
}

fn coord(g: &mut GaussianParams, t: Tensor, i: usize) -> &mut f64 {
    match t {
        Tensor::Mu => &mut g.mu[i],
        Tensor::LogDiag => &mut g.log_diag[i],
        Tensor::Lower => &mut g.lower[i],
    }
}

#[derive(Debug, Clone, Default)]
pub struct FdReport {
    pub checked: usize,
    /// Coordinates whose ±guard perturbation changes a hinge, argmin or argmax branch.
    pub skipped: usize,
    pub max_rel: f64,
    pub worst: String,
}

impl FdReport {
    pub fn merge(&mut self, other: FdReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.max_rel > self.max_rel {
            self.max_rel = other.max_rel;
            self.worst = other.worst;
        }
    }
}

/// Relative error with a floor on the denominator, so coordinates whose true gradient
/// is zero are judged on an absolute scale.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares analytic gradients of the total loss with central differences of step `h`
/// on one random instance, skipping coordinates whose branch changes within `guard`.
pub fn finite_difference_check(seed: u64, n: usize, d: usize, k: usize, h: f64, guard: f64, floor: f64) -> FdReport {
    let (x, set) = random_instance(seed, n, d, k);
    let batch: Vec<&[f32]> = x.rows().collect();
    let hp = HyperParams::default();
    let (_, grads) = total_loss_and_grads(&batch, &set, &hp).unwrap();
    let base_sig = branch_signature(&batch, &set, hp.tau).unwrap();
    let total_at = |s: &GaussianSet| total_loss_and_grads(&batch, s, &hp).unwrap().0.total;
    let mut report = FdReport::default();
    for g in 0..k {
        for (t, len) in [(Tensor::Mu, d), (Tensor::LogDiag, d), (Tensor::Lower, strict_lower_len(d))] {
            for i in 0..len {
                let shifted = |delta: f64| {
                    let mut s = set.clone();
                    *coord(s.get_mut(g), t, i) += delta;
                    s
                };
                let stable = [guard, -guard]
                    .iter()
                    .all(|&e| branch_signature(&batch, &shifted(e), hp.tau).unwrap() == base_sig);
                if !stable {
                    report.skipped += 1;
                    continue;
                }
                let fd = (total_at(&shifted(h)) - total_at(&shifted(-h))) / (2.0 * h);
                let analytic = match t {
                    Tensor::Mu => grads.mu[g][i],
                    Tensor::LogDiag => grads.log_diag[g][i],
                    Tensor::Lower => grads.lower[g][i],
                };
                let e = rel_err(analytic, fd, floor);
                report.checked += 1;
                if e > report.max_rel {
                    report.max_rel = e;
                    report.worst = format!("seed {seed} gaussian {g} {t:?}[{i}]: analytic {analytic:e} vs fd {fd:e}");
                }
            }
        }
    }
    report
}

/// Random well-conditioned SPD covariance `Σ = A Aᵀ + c I` with its Cholesky factor as
/// Gaussian parameters.
pub fn random_spd_gaussian(rng: &mut ChaCha8Rng, d: usize) -> (GaussianParams, DMatrix<f64>) {
    let a = DMatrix::<f64>::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let sigma = &a * a.transpose() + DMatrix::<f64>::identity(d, d) * rng.random_range(0.05..1.0);
    let l = sigma.clone().cholesky().expect("SPD").l();
    let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
    (GaussianParams::from_factor(mu, &l).unwrap(), sigma)
}

/// Largest relative error between `δ_M²` and `(x−μ)ᵀΣ⁻¹(x−μ)` computed from an explicit
/// inverse, over `count` random instances of dimension 2 to 16.
pub fn mahalanobis_oracle(count: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..count {
        let d = 2 + i % 15;
        let (g, sigma) = random_spd_gaussian(&mut rng, d);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
        let inv = sigma.try_inverse().expect("invertible");
        let z = DMatrix::from_fn(d, 1, |r, _| x[r] - g.mu[r]);
        let want = (z.transpose() * inv * &z)[(0, 0)];
        let got = mahalanobis(&x, &g).unwrap().powi(2);
        worst = worst.max((got - want).abs() / want.abs().max(f64::MIN_POSITIVE));
    }
    worst
}

/// Distance from `s` to the box by projected gradient descent on `‖p − s‖²`.
pub fn box_distance_by_descent(s: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut p: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
    for _ in 0..200 {
        let mut moved = 0.0f64;
        for j in 0..p.len() {
            let next = (p[j] - 0.5 * (p[j] - s[j])).clamp(lo[j], hi[j]);
            moved = moved.max((next - p[j]).abs());
            p[j] = next;
        }
        if moved < 1e-15 {
            break;
        }
    }
    p.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Largest gap between [`bin_distance`] and the descent oracle over random
/// (point, box) pairs, including points inside, outside and on faces.
pub fn bin_distance_oracle(count: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let r = rng.random_range(2..7);
        let lo: Vec<f64> = (0..r).map(|_| rng.random_range(-3.0..3.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.0..2.0)).collect();
        let s: Vec<f64> = (0..r)
            .map(|j| match rng.random_range(0..4) {
                0 => lo[j],
                1 => rng.random_range(lo[j]..=hi[j]),
                _ => rng.random_range(-6.0..6.0),
            })
            .collect();
        worst = worst.max((bin_distance(&s, &lo, &hi) - box_distance_by_descent(&s, &lo, &hi)).abs());
    }
    worst
}
