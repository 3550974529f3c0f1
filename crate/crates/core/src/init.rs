//! Initial Gaussians: K-Means++ means and near-isotropic Cholesky factors scaled to the
//! local spacing of the centers.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::kmeans;
use crate::error::{GarlicError, Result};
use crate::gaussian::{strict_lower_len, GaussianParams, GaussianSet};
use crate::params::InitNeighbors;
use crate::vectors::{euclidean_f64, VectorSet};

/// Smallest admissible initial scale; guards `ln` against coincident centers.
const MIN_SCALE: f64 = 1e-6;

/// What initialization chose, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct InitReport {
    pub centers: Vec<Vec<f64>>,
    /// Mean Euclidean distance from each center to its nearest neighbors.
    pub mean_nn_dist: Vec<f64>,
    /// True when the scales came from data points rather than other centers.
    pub data_fallback: bool,
}

/// K-Means++ seeding plus Lloyd refinement on a uniform subsample of at most
/// `subsample_factor · k` points.
pub fn kmeans_pp_init(
    points: &VectorSet,
    k: usize,
    subsample_factor: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(GarlicError::InvalidParameter(format!(
            "K-Means++ needs 1 <= K <= n, got K={k}, n={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = n.min(subsample_factor.saturating_mul(k)).max(k);
    let sub = if m < n {
        let mut ids = sample(&mut rng, n, m).into_vec();
        ids.sort_unstable();
        points.subset(&ids)?
    } else {
        points.clone()
    };
    let (centers, _) = kmeans(&sub, k, &mut rng);
    Ok(centers)
}

/// `2·sigmoid(r) − 1` with `r ~ U(0, 0.01)`; lands in `(0, 0.005)`.
pub fn perturbation<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let r: f64 = rng.random_range(0.0..0.01);
    2.0 / (1.0 + (-r).exp()) - 1.0
}

fn mean_of_smallest(mut dists: Vec<f64>, k: usize) -> Option<f64> {
    if dists.is_empty() {
        return None;
    }
    dists.sort_by(f64::total_cmp);
    let take = k.min(dists.len());
    Some(dists[..take].iter().sum::<f64>() / take as f64)
}

/// Builds one Gaussian per center with `log_diag = ln(δ̄)` and a small random strictly
/// lower triangle, where `δ̄` is the mean distance to the `k_nn` nearest other centers
/// (or data points, when there are too few centers or `neighbors` asks for it).
pub fn cholesky_init<R: Rng + ?Sized>(
    centers: &[Vec<f64>],
    points: &VectorSet,
    k_nn: usize,
    neighbors: InitNeighbors,
    rng: &mut R,
) -> Result<(GaussianSet, InitReport)> {
    if centers.is_empty() {
        return Err(GarlicError::InvalidInput("no centers to initialize".into()));
    }
    if k_nn == 0 {
        return Err(GarlicError::InvalidParameter("k_init_nn must be >= 1".into()));
    }
    let d = points.dim();
    let data_fallback = neighbors == InitNeighbors::Data || centers.len() < k_nn + 1;
    let mut set = GaussianSet::new(d);
    let mut mean_nn_dist = Vec::with_capacity(centers.len());
    for (i, mu) in centers.iter().enumerate() {
        if mu.len() != d {
            return Err(GarlicError::DimensionMismatch {
                expected: d,
                got: mu.len(),
            });
        }
        let dists: Vec<f64> = if data_fallback {
            points
                .rows()
                .map(|x| euclidean_f64(x, mu))
                .filter(|v| *v > 0.0)
                .collect()
        } else {
            centers
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, c)| c.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .collect()
        };
        let scale = mean_of_smallest(dists, k_nn).unwrap_or(1.0).max(MIN_SCALE);
        mean_nn_dist.push(scale);
        let lower = (0..strict_lower_len(d)).map(|_| perturbation(rng)).collect();
        set.push(GaussianParams {
            mu: mu.clone(),
            log_diag: vec![scale.ln(); d],
            lower,
        })?;
    }
    Ok((
        set,
        InitReport {
            centers: centers.to_vec(),
            mean_nn_dist,
            data_fallback,
        },
    ))
}
