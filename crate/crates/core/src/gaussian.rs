//! The Gaussian data model: log-diagonal Cholesky parameterization and Mahalanobis
//! distances.
//!
//! A Gaussian stores its covariance factor `L` as a log-diagonal plus a strictly lower
//! triangle, so `diag(L) = exp(log_diag)` is positive for every finite parameter and
//! `Σ = L Lᵀ` is always positive definite.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{GarlicError, Result};
use crate::vectors::VectorSet;

/// Offset of row `j` in a packed strictly-lower triangle.
#[inline]
pub(crate) fn strict_row_offset(j: usize) -> usize {
    j * j.saturating_sub(1) / 2
}

/// Number of entries in a strictly-lower `d×d` triangle.
#[inline]
pub fn strict_lower_len(d: usize) -> usize {
    d * d.saturating_sub(1) / 2
}

/// Mean and Cholesky parameters of one Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    /// `ln` of the diagonal of `L`.
    pub log_diag: Vec<f64>,
    /// Strictly-lower part of `L`, packed row by row (row `j` holds `L[j][0..j]`).
    pub lower: Vec<f64>,
}

impl GaussianParams {
    /// Isotropic Gaussian `N(mu, scale² I)`.
    pub fn isotropic(mu: Vec<f64>, scale: f64) -> Self {
        let d = mu.len();
        Self {
            mu,
            log_diag: vec![scale.ln(); d],
            lower: vec![0.0; strict_lower_len(d)],
        }
    }

    /// Builds parameters from an explicit lower-triangular factor with positive diagonal.
    pub fn from_factor(mu: Vec<f64>, factor: &DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if factor.nrows() != d || factor.ncols() != d {
            return Err(GarlicError::DimensionMismatch {
                expected: d,
                got: factor.nrows(),
            });
        }
        let mut log_diag = Vec::with_capacity(d);
        let mut lower = Vec::with_capacity(strict_lower_len(d));
        for j in 0..d {
            let diag = factor[(j, j)];
            if !(diag > 0.0) {
                return Err(GarlicError::InvalidParameter(format!(
                    "factor diagonal entry {j} is not positive"
                )));
            }
            log_diag.push(diag.ln());
            for k in 0..j {
                lower.push(factor[(j, k)]);
            }
        }
        Ok(Self { mu, log_diag, lower })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    #[inline]
    pub fn lower_at(&self, j: usize, k: usize) -> f64 {
        debug_assert!(k < j);
        self.lower[strict_row_offset(j) + k]
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().all(|v| v.is_finite())
            && self.log_diag.iter().all(|v| v.is_finite())
            && self.lower.iter().all(|v| v.is_finite())
    }

    fn check_shape(&self) -> Result<()> {
        let d = self.mu.len();
        if self.log_diag.len() != d {
            return Err(GarlicError::DimensionMismatch {
                expected: d,
                got: self.log_diag.len(),
            });
        }
        if self.lower.len() != strict_lower_len(d) {
            return Err(GarlicError::DimensionMismatch {
                expected: strict_lower_len(d),
                got: self.lower.len(),
            });
        }
        Ok(())
    }

    /// Prepares the factor for repeated distance evaluation.
    pub fn factor(&self) -> Result<CholeskyFactor> {
        self.check_shape()?;
        if !self.is_finite() {
            return Err(GarlicError::InvalidParameter(
                "Gaussian parameters contain non-finite values".into(),
            ));
        }
        let d = self.dim();
        let mut rows = Vec::with_capacity(d * (d + 1) / 2);
        let mut diag = Vec::with_capacity(d);
        for j in 0..d {
            let off = strict_row_offset(j);
            rows.extend_from_slice(&self.lower[off..off + j]);
            let v = self.log_diag[j].exp();
            if !(v > 0.0) || !v.is_finite() {
                return Err(GarlicError::InvalidParameter(format!(
                    "diagonal entry {j} of L under/overflows"
                )));
            }
            rows.push(v);
            diag.push(v);
        }
        let inv_rows = invert_packed(&rows, d);
        if inv_rows.iter().any(|v| !v.is_finite()) {
            return Err(GarlicError::InvalidParameter("L is numerically singular".into()));
        }
        Ok(CholeskyFactor {
            mu: self.mu.clone(),
            rows,
            diag,
            inv_rows,
        })
    }

    /// `Σ = L Lᵀ` as a dense matrix.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let l = materialize_cholesky(self)?;
        Ok(&l * l.transpose())
    }
}

/// Returns the dense lower-triangular factor `L` of `g`.
pub fn materialize_cholesky(g: &GaussianParams) -> Result<DMatrix<f64>> {
    let f = g.factor()?;
    let d = g.dim();
    let mut l = DMatrix::zeros(d, d);
    for j in 0..d {
        let row = f.row(j);
        for (k, v) in row.iter().enumerate() {
            l[(j, k)] = *v;
        }
    }
    Ok(l)
}

/// A materialized, validated factor `L` together with its mean.
///
/// Rows of `L` are stored packed including the diagonal, which keeps forward
/// substitution a sequence of contiguous dot products. Rows of `L⁻¹` are kept as well:
/// each whitened coordinate is then an independent dot product, and the running norm
/// can be abandoned as soon as it exceeds a bound.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    mu: Vec<f64>,
    rows: Vec<f64>,
    diag: Vec<f64>,
    inv_rows: Vec<f64>,
}

/// `L⁻¹` from row-packed `L`, also row-packed.
fn invert_packed(rows: &[f64], d: usize) -> Vec<f64> {
    let off = |j: usize| j * (j + 1) / 2;
    let mut out = vec![0.0; d * (d + 1) / 2];
    let mut m = vec![0.0; d];
    for c in 0..d {
        // Column c of L⁻¹ solves L m = e_c.
        m[c] = 1.0 / rows[off(c) + c];
        for j in c + 1..d {
            let r = &rows[off(j)..off(j) + j + 1];
            m[j] = -dot(&r[c..j], &m[c..j]) / r[j];
        }
        for j in c..d {
            out[off(j) + c] = m[j];
        }
    }
    out
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl CholeskyFactor {
    #[inline]
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    #[inline]
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    #[inline]
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Row `j` of `L`, entries `0..=j`.
    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        let off = j * (j + 1) / 2;
        &self.rows[off..off + j + 1]
    }

    /// Solves `L y = x − μ` by forward substitution and returns `‖y‖₂`.
    ///
    /// `y` must have length `d`; it receives the whitened displacement.
    #[inline]
    pub fn whiten<T: Copy + Into<f64>>(&self, x: &[T], y: &mut [f64]) -> f64 {
        let d = self.dim();
        let mut norm_sq = 0.0;
        for j in 0..d {
            let row = self.row(j);
            let z = x[j].into() - self.mu[j];
            let s = dot(&row[..j], &y[..j]);
            let v = (z - s) / row[j];
            y[j] = v;
            norm_sq += v * v;
        }
        norm_sq.sqrt()
    }

    /// Solves `Lᵀ w = y` by back substitution.
    pub fn solve_transpose(&self, y: &[f64], w: &mut [f64]) {
        let d = self.dim();
        let mut r = y.to_vec();
        for j in (0..d).rev() {
            let row = self.row(j);
            let wj = r[j] / row[j];
            w[j] = wj;
            for k in 0..j {
                r[k] -= row[k] * wj;
            }
        }
    }

    /// Mahalanobis distance `‖L⁻¹(x − μ)‖₂`, using `scratch` (length `d`) for `x − μ`.
    #[inline]
    pub fn distance_with<T: Copy + Into<f64>>(&self, x: &[T], scratch: &mut [f64]) -> f64 {
        self.distance_within(x, scratch, f64::INFINITY).unwrap_or(f64::INFINITY)
    }

    /// Like [`Self::distance_with`] but gives up with `None` once the distance is known to
    /// exceed `bound`. The returned value does not depend on `bound`.
    #[inline]
    pub fn distance_within<T: Copy + Into<f64>>(&self, x: &[T], scratch: &mut [f64], bound: f64) -> Option<f64> {
        let d = self.dim();
        let z = &mut scratch[..d];
        for ((zj, xj), m) in z.iter_mut().zip(x).zip(&self.mu) {
            *zj = (*xj).into() - m;
        }
        let limit = bound * bound;
        let mut norm_sq = 0.0;
        let mut off = 0;
        for j in 0..d {
            let y = dot(&self.inv_rows[off..off + j + 1], &z[..j + 1]);
            norm_sq += y * y;
            if norm_sq > limit {
                return None;
            }
            off += j + 1;
        }
        Some(norm_sq.sqrt())
    }

    pub fn distance<T: Copy + Into<f64>>(&self, x: &[T]) -> f64 {
        let mut y = vec![0.0; self.dim()];
        self.distance_with(x, &mut y)
    }
}

/// Mahalanobis distance `δ_M(x, g) = ‖L⁻¹(x − μ)‖₂`.
pub fn mahalanobis<T: Copy + Into<f64>>(x: &[T], g: &GaussianParams) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(GarlicError::DimensionMismatch {
            expected: g.dim(),
            got: x.len(),
        });
    }
    Ok(g.factor()?.distance(x))
}

/// An ordered collection of Gaussians; removed Gaussians stay in place but inactive so
/// ids remain stable.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    dim: usize,
    gaussians: Vec<GaussianParams>,
    active: Vec<bool>,
}

impl GaussianSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            gaussians: Vec::new(),
            active: Vec::new(),
        }
    }

    pub fn from_gaussians(gaussians: Vec<GaussianParams>) -> Result<Self> {
        let dim = gaussians
            .first()
            .map(|g| g.dim())
            .ok_or_else(|| GarlicError::InvalidInput("empty Gaussian list".into()))?;
        let mut set = Self::new(dim);
        for g in gaussians {
            set.push(g)?;
        }
        Ok(set)
    }

    /// Appends an active Gaussian and returns its id.
    pub fn push(&mut self, g: GaussianParams) -> Result<usize> {
        if g.dim() != self.dim {
            return Err(GarlicError::DimensionMismatch {
                expected: self.dim,
                got: g.dim(),
            });
        }
        g.check_shape()?;
        self.gaussians.push(g);
        self.active.push(true);
        Ok(self.gaussians.len() - 1)
    }

    pub(crate) fn push_with_state(&mut self, g: GaussianParams, active: bool) -> Result<usize> {
        let id = self.push(g)?;
        self.active[id] = active;
        Ok(id)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total number of slots, active or not.
    #[inline]
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    #[inline]
    pub fn get(&self, id: usize) -> &GaussianParams {
        &self.gaussians[id]
    }

    #[inline]
    pub fn get_mut(&mut self, id: usize) -> &mut GaussianParams {
        &mut self.gaussians[id]
    }

    #[inline]
    pub fn is_active(&self, id: usize) -> bool {
        self.active[id]
    }

    pub fn deactivate(&mut self, id: usize) {
        self.active[id] = false;
    }

    pub fn active_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.active[i]).collect()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &GaussianParams, bool)> {
        self.gaussians
            .iter()
            .zip(&self.active)
            .enumerate()
            .map(|(i, (g, a))| (i, g, *a))
    }

    /// Factors for every slot; `None` for inactive Gaussians.
    pub fn factors(&self) -> Result<Vec<Option<CholeskyFactor>>> {
        self.iter()
            .map(|(_, g, active)| if active { g.factor().map(Some) } else { Ok(None) })
            .collect()
    }

    /// Drops inactive slots, renumbering the survivors in id order.
    pub fn compacted(&self) -> Self {
        let mut out = Self::new(self.dim);
        for (_, g, active) in self.iter() {
            if active {
                out.gaussians.push(g.clone());
                out.active.push(true);
            }
        }
        out
    }
}

/// An `n × K` matrix of point-to-Gaussian Mahalanobis distances.
///
/// Columns of inactive Gaussians hold `+∞` and are skipped by every selection helper.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    k: usize,
    data: Vec<f64>,
    active: Vec<bool>,
}

impl DistanceMatrix {
    #[inline]
    pub fn n_points(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn n_gaussians(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, point: usize, gaussian: usize) -> f64 {
        self.data[point * self.k + gaussian]
    }

    #[inline]
    pub fn row(&self, point: usize) -> &[f64] {
        &self.data[point * self.k..(point + 1) * self.k]
    }

    #[inline]
    pub fn is_active(&self, gaussian: usize) -> bool {
        self.active[gaussian]
    }

    /// Nearest active Gaussian of `point`; ties go to the lowest id.
    pub fn argmin(&self, point: usize) -> Option<(usize, f64)> {
        argmin_active(self.row(point), &self.active)
    }
}

/// Index and value of the smallest entry among active columns, lowest id on ties.
pub(crate) fn argmin_active(row: &[f64], active: &[bool]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, (&v, &a)) in row.iter().zip(active).enumerate() {
        if !a {
            continue;
        }
        match best {
            Some((_, b)) if !(v < b) => {}
            _ => best = Some((j, v)),
        }
    }
    best
}

/// Mahalanobis distance from every point to every Gaussian.
pub fn mahalanobis_batch(points: &VectorSet, gaussians: &GaussianSet) -> Result<DistanceMatrix> {
    if points.dim() != gaussians.dim() {
        return Err(GarlicError::DimensionMismatch {
            expected: gaussians.dim(),
            got: points.dim(),
        });
    }
    let factors = gaussians.factors()?;
    let k = gaussians.len();
    let n = points.len();
    let d = points.dim();
    let mut data = vec![f64::INFINITY; n * k];
    if k > 0 {
        data.par_chunks_mut(k).enumerate().for_each_init(
            || vec![0.0; d],
            |scratch, (i, row)| {
                let x = points.row(i);
                for (slot, f) in row.iter_mut().zip(&factors) {
                    if let Some(f) = f {
                        *slot = f.distance_with(x, scratch);
                    }
                }
            },
        );
    }
    Ok(DistanceMatrix {
        n,
        k,
        data,
        active: (0..k).map(|j| gaussians.is_active(j)).collect(),
    })
}
