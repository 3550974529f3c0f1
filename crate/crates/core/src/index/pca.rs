//! Per-bucket principal axes.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::vectors::VectorSet;

/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-12;

/// Centroid, orthonormal basis and spectrum of one bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub centroid: Vec<f64>,
    /// `r` basis vectors of length `d`, stored row after row.
    pub basis: Vec<f64>,
    /// Eigenvalues matching `basis`, descending.
    pub eigenvalues: Vec<f64>,
    /// Too few points or a rank-deficient spread; the basis is then padded with
    /// arbitrary orthonormal directions.
    pub degenerate: bool,
}

impl Pca {
    pub fn dim(&self) -> usize {
        self.centroid.len()
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn axis(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.basis[k * d..(k + 1) * d]
    }

    /// `Pᵀ(x − x̄)`.
    pub fn project(&self, x: &[f32], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for ((v, c), p) in x.iter().zip(&self.centroid).zip(self.axis(k)) {
                acc += (*v as f64 - c) * p;
            }
            *o = acc;
        }
    }

    /// `x̄ + P z`.
    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.centroid.clone();
        for (k, zk) in z.iter().enumerate() {
            for (o, p) in out.iter_mut().zip(self.axis(k)) {
                *o += zk * p;
            }
        }
        out
    }
}

/// Top-`r` principal axes of the listed points (`r` is clamped to `d`).
///
/// Eigenvalues are sorted descending with ties kept in index order, and each axis is
/// signed so that its largest-magnitude component is positive.
pub fn bucket_pca(points: &VectorSet, members: &[usize], r: usize) -> Pca {
    let d = points.dim();
    let r = r.min(d);
    let m = members.len();
    let mut centroid = vec![0.0; d];
    for &i in members {
        for (c, v) in centroid.iter_mut().zip(points.row(i)) {
            *c += *v as f64;
        }
    }
    if m > 0 {
        centroid.iter_mut().for_each(|c| *c /= m as f64);
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut c = vec![0.0; d];
    for &i in members {
        for ((cj, v), mean) in c.iter_mut().zip(points.row(i)).zip(&centroid) {
            *cj = *v as f64 - mean;
        }
        for a in 0..d {
            let ca = c[a];
            for b in 0..=a {
                cov[(a, b)] += ca * c[b];
            }
        }
    }
    let scale = if m > 1 { 1.0 / (m - 1) as f64 } else { 0.0 };
    for a in 0..d {
        for b in 0..=a {
            let v = cov[(a, b)] * scale;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut basis = Vec::with_capacity(r * d);
    let mut eigenvalues = Vec::with_capacity(r);
    for &k in order.iter().take(r) {
        let col = eig.eigenvectors.column(k);
        let mut lead = 0;
        for j in 1..d {
            if col[j].abs() > col[lead].abs() {
                lead = j;
            }
        }
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        basis.extend(col.iter().map(|v| v * sign));
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
    }
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    let degenerate = m <= r || !(top > 0.0) || eigenvalues[r - 1] <= RANK_TOLERANCE * top;
    Pca {
        centroid,
        basis,
        eigenvalues,
        degenerate,
    }
}
