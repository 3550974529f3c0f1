//! Gradient-based fitting of the Gaussian set.
//!
//! The objective is `λ_div·L_div + λ_cov·L_cov + λ_anchor·L_anchor`:
//!
//! * `L_div`: mean hinge `max(0, min_g δ_M(x, g) − τ)`, pushing Gaussians to cover points;
//! * `L_cov`: `1 − mean max_i p_i(x)` over covered points, where `p` is a softmax of
//!   negative Euclidean distances to the means of the Gaussians covering `x`;
//! * `L_anchor`: mean and covariance mismatch against the batch statistics of each
//!   Gaussian's hard-assigned points (statistics are held constant).
//!
//! Gradients are derived in closed form. With `y = L⁻¹(x − μ)`, `δ = ‖y‖` and
//! `w = L⁻ᵀ y`: `∂δ/∂μ = −w/δ` and `∂δ/∂L_jk = −w_j y_k / δ` for `j ≥ k`. Diagonal
//! gradients are mapped to `log_diag` through `∂L_jj/∂log_diag_j = L_jj`.

use std::io::Write;

use log::{debug, info};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{GarlicError, Result};
use crate::gaussian::{
    argmin_active, materialize_cholesky, strict_lower_len, strict_row_offset, CholeskyFactor,
    GaussianParams, GaussianSet,
};
use crate::init::{cholesky_init, kmeans_pp_init, InitReport};
use crate::params::{HyperParams, Normalization, Optimizer};
use crate::refinement::{refine_prune, refine_split_clone, RefinementEvent, RefinementKind};
use crate::vectors::{euclidean_f64, VectorSet};

/// Loss components of one batch or one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub epoch: usize,
    pub l_div: f64,
    pub l_cov: f64,
    pub l_anchor: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_parts(epoch: usize, l_div: f64, l_cov: f64, l_anchor: f64, hp: &HyperParams) -> Self {
        Self {
            epoch,
            l_div,
            l_cov,
            l_anchor,
            total: hp.lambda_div * l_div + hp.lambda_cov * l_cov + hp.lambda_anchor * l_anchor,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_div.is_finite() && self.l_cov.is_finite() && self.l_anchor.is_finite() && self.total.is_finite()
    }
}

/// Gradient of the total loss, one entry per Gaussian slot (zeros for inactive ones).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub mu: Vec<Vec<f64>>,
    pub log_diag: Vec<Vec<f64>>,
    pub lower: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros(k: usize, d: usize) -> Self {
        Self {
            mu: vec![vec![0.0; d]; k],
            log_diag: vec![vec![0.0; d]; k],
            lower: vec![vec![0.0; strict_lower_len(d)]; k],
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.mu, &self.log_diag, &self.lower]
            .iter()
            .all(|t| t.iter().flatten().all(|v| v.is_finite()))
    }

    /// Dense `d×d` lower-triangular gradient w.r.t. `L` (before the log-diagonal map).
    fn accumulate_factor_grad(&mut self, g: usize, factor: &CholeskyFactor, grad_l: &DMatrix<f64>) {
        let d = factor.dim();
        for j in 0..d {
            let off = strict_row_offset(j);
            for k in 0..j {
                self.lower[g][off + k] += grad_l[(j, k)];
            }
            self.log_diag[g][j] += grad_l[(j, j)] * factor.diag()[j];
        }
    }
}

/// Ids of the active Gaussians whose Mahalanobis distance to `x` is at most `tau`.
pub fn coverage_set(x: &[f32], gaussians: &GaussianSet, tau: f64) -> Result<Vec<usize>> {
    check_dim(x, gaussians)?;
    let factors = gaussians.factors()?;
    let mut scratch = vec![0.0; gaussians.dim()];
    Ok(factors
        .iter()
        .enumerate()
        .filter_map(|(j, f)| f.as_ref().map(|f| (j, f)))
        .filter(|(_, f)| f.distance_with(x, &mut scratch) <= tau)
        .map(|(j, _)| j)
        .collect())
}

/// Softmax of negative Euclidean distances to the means of `members`, plus `eps`.
///
/// Returns `None` for an empty coverage set (an uncovered point).
pub fn soft_assign(x: &[f32], gaussians: &GaussianSet, members: &[usize], eps: f64) -> Option<Vec<f64>> {
    if members.is_empty() {
        return None;
    }
    let dists: Vec<f64> = members
        .iter()
        .map(|&j| euclidean_f64(x, &gaussians.get(j).mu))
        .collect();
    let mut p = softmax_neg(&dists);
    p.iter_mut().for_each(|v| *v += eps);
    Some(p)
}

/// `exp(−e_i) / Σ_j exp(−e_j)`, stabilized by subtracting the smallest distance.
fn softmax_neg(dists: &[f64]) -> Vec<f64> {
    let lo = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = dists.iter().map(|e| (-(e - lo)).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

fn check_dim(x: &[f32], gaussians: &GaussianSet) -> Result<()> {
    if x.len() != gaussians.dim() {
        return Err(GarlicError::DimensionMismatch {
            expected: gaussians.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Per-point quantities shared by the three loss terms.
struct PointEval {
    argmin: usize,
    min_delta: f64,
    /// Coverage set, ascending ids.
    covered: Vec<usize>,
    /// Softmax over `covered` (without `eps`).
    soft: Vec<f64>,
    /// Euclidean distance to each covered mean.
    euclid: Vec<f64>,
    /// Position of the largest probability inside `covered`.
    best: usize,
    /// Whitened displacement `y` and `w = L⁻ᵀ y` for the nearest Gaussian, when outside τ.
    outside: Option<(Vec<f64>, Vec<f64>)>,
}

fn evaluate_point(
    x: &[f32],
    factors: &[Option<CholeskyFactor>],
    active: &[bool],
    tau: f64,
    want_grads: bool,
    deltas: &mut Vec<f64>,
    scratch: &mut [f64],
) -> Option<PointEval> {
    // Gaussians farther than both τ and the best distance so far can neither cover `x`
    // nor be its nearest, so their scans stop early and they read as infinitely far.
    deltas.clear();
    let mut best = f64::INFINITY;
    for (f, &on) in factors.iter().zip(active) {
        let v = match f {
            Some(f) => f.distance_within(x, scratch, best.max(tau)).unwrap_or(f64::INFINITY),
            None => f64::INFINITY,
        };
        if on && v < best {
            best = v;
        }
        deltas.push(v);
    }
    let (argmin, min_delta) = argmin_active(deltas, active)?;
    let covered: Vec<usize> = (0..factors.len())
        .filter(|&j| active[j] && deltas[j] <= tau)
        .collect();
    let euclid: Vec<f64> = covered
        .iter()
        .map(|&j| euclidean_f64(x, factors[j].as_ref().unwrap().mu()))
        .collect();
    let soft = if covered.is_empty() { Vec::new() } else { softmax_neg(&euclid) };
    let mut best = 0;
    for (i, p) in soft.iter().enumerate() {
        if *p > soft[best] {
            best = i;
        }
    }
    let outside = if want_grads && min_delta > tau {
        let f = factors[argmin].as_ref().unwrap();
        let d = f.dim();
        let mut y = vec![0.0; d];
        f.whiten(x, &mut y);
        let mut w = vec![0.0; d];
        f.solve_transpose(&y, &mut w);
        Some((y, w))
    } else {
        None
    };
    Some(PointEval {
        argmin,
        min_delta,
        covered,
        soft,
        euclid,
        best,
        outside,
    })
}

type BatchEval = (Vec<Option<CholeskyFactor>>, Vec<PointEval>);

fn evaluate_batch(batch: &[&[f32]], gaussians: &GaussianSet, tau: f64, want_grads: bool) -> Result<BatchEval> {
    if batch.is_empty() {
        return Err(GarlicError::InvalidInput("empty batch".into()));
    }
    for x in batch {
        check_dim(x, gaussians)?;
    }
    let factors = gaussians.factors()?;
    let active: Vec<bool> = (0..gaussians.len()).map(|j| gaussians.is_active(j)).collect();
    if !active.iter().any(|a| *a) {
        return Err(GarlicError::InvalidInput("no active Gaussians".into()));
    }
    let d = gaussians.dim();
    let evals: Vec<PointEval> = batch
        .par_iter()
        .map_init(
            || (Vec::with_capacity(factors.len()), vec![0.0; d]),
            |(deltas, scratch), x| {
                evaluate_point(x, &factors, &active, tau, want_grads, deltas, scratch)
                    .expect("at least one active Gaussian")
            },
        )
        .collect();
    Ok((factors, evals))
}

/// Mean hinge `max(0, min_g δ_M(x, g) − τ)` over the batch.
pub fn loss_div(batch: &[&[f32]], gaussians: &GaussianSet, tau: f64) -> Result<f64> {
    let (_, evals) = evaluate_batch(batch, gaussians, tau, false)?;
    Ok(div_from(&evals, tau))
}

fn div_from(evals: &[PointEval], tau: f64) -> f64 {
    evals.iter().map(|e| (e.min_delta - tau).max(0.0)).sum::<f64>() / evals.len() as f64
}

/// `1 − mean max_i p_i(x)` over covered points; 0 when no point is covered.
pub fn loss_cov(batch: &[&[f32]], gaussians: &GaussianSet, tau: f64, eps: f64) -> Result<f64> {
    let (_, evals) = evaluate_batch(batch, gaussians, tau, false)?;
    Ok(cov_from(&evals, eps))
}

fn cov_from(evals: &[PointEval], eps: f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for e in evals.iter().filter(|e| !e.covered.is_empty()) {
        sum += e.soft[e.best] + eps;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        1.0 - sum / count as f64
    }
}

/// Batch statistics of the points hard-assigned to one Gaussian.
struct AnchorStats {
    gaussian: usize,
    mean: Vec<f64>,
    cov: DMatrix<f64>,
}

fn anchor_stats(batch: &[&[f32]], evals: &[PointEval], k: usize, d: usize) -> Vec<AnchorStats> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, e) in evals.iter().enumerate() {
        groups[e.argmin].push(i);
    }
    groups
        .iter()
        .enumerate()
        .filter(|(_, ids)| ids.len() >= 2)
        .map(|(g, ids)| {
            let inv = 1.0 / ids.len() as f64;
            let mut mean = vec![0.0; d];
            for &i in ids {
                for (m, v) in mean.iter_mut().zip(batch[i]) {
                    *m += *v as f64;
                }
            }
            mean.iter_mut().for_each(|m| *m *= inv);
            let mut cov = DMatrix::<f64>::zeros(d, d);
            let mut c = vec![0.0; d];
            for &i in ids {
                for (cj, (v, m)) in c.iter_mut().zip(batch[i].iter().zip(&mean)) {
                    *cj = *v as f64 - m;
                }
                for a in 0..d {
                    for b in 0..=a {
                        cov[(a, b)] += c[a] * c[b];
                    }
                }
            }
            for a in 0..d {
                for b in 0..=a {
                    let v = cov[(a, b)] * inv;
                    cov[(a, b)] = v;
                    cov[(b, a)] = v;
                }
            }
            AnchorStats { gaussian: g, mean, cov }
        })
        .collect()
}

/// Anchor loss: `Σ_g (‖μ_g − μ̂_g‖² + α‖L_g L_gᵀ − Σ̂_g‖_F²) / (d·|G_active|)` over
/// Gaussians with at least two hard-assigned batch points.
pub fn loss_anchor(batch: &[&[f32]], gaussians: &GaussianSet, alpha: f64) -> Result<f64> {
    let (_, evals) = evaluate_batch(batch, gaussians, f64::INFINITY, false)?;
    let stats = anchor_stats(batch, &evals, gaussians.len(), gaussians.dim());
    let mut sum = 0.0;
    for s in &stats {
        sum += anchor_term(gaussians.get(s.gaussian), s, alpha)?.0;
    }
    Ok(sum / (gaussians.dim() * gaussians.active_count()) as f64)
}

type AnchorTerm = (f64, Vec<f64>, DMatrix<f64>, DMatrix<f64>);

/// Returns the unnormalized term, `μ − μ̂`, the factor and `E = LLᵀ − Σ̂`.
fn anchor_term(
    g: &GaussianParams,
    stats: &AnchorStats,
    alpha: f64,
) -> Result<AnchorTerm> {
    let l = materialize_cholesky(g)?;
    let e = &l * l.transpose() - &stats.cov;
    let dmu: Vec<f64> = g.mu.iter().zip(&stats.mean).map(|(a, b)| a - b).collect();
    let value = dmu.iter().map(|v| v * v).sum::<f64>() + alpha * e.iter().map(|v| v * v).sum::<f64>();
    Ok((value, dmu, l, e))
}

/// Loss breakdown and gradients of the weighted objective.
///
/// Hinge, argmin and argmax use the subgradient of the selected branch; ties go to the
/// lowest Gaussian id.
pub fn total_loss_and_grads(
    batch: &[&[f32]],
    gaussians: &GaussianSet,
    hp: &HyperParams,
) -> Result<(LossBreakdown, Gradients)> {
    let (factors, evals) = evaluate_batch(batch, gaussians, hp.tau, true)?;
    let k = gaussians.len();
    let d = gaussians.dim();
    let n = batch.len() as f64;
    let mut grads = Gradients::zeros(k, d);

    // Divergence.
    let l_div = div_from(&evals, hp.tau);
    let div_scale = hp.lambda_div / n;
    let mut grad_l = DMatrix::<f64>::zeros(d, d);
    for e in &evals {
        let Some((y, w)) = &e.outside else { continue };
        let delta = e.min_delta;
        if !(delta > 0.0) {
            continue;
        }
        let g = e.argmin;
        let c = div_scale / delta;
        for (gm, wj) in grads.mu[g].iter_mut().zip(w) {
            *gm -= c * wj;
        }
        let f = factors[g].as_ref().unwrap();
        for j in 0..d {
            let off = strict_row_offset(j);
            let cw = c * w[j];
            for (gl, yk) in grads.lower[g][off..off + j].iter_mut().zip(&y[..j]) {
                *gl -= cw * yk;
            }
            grads.log_diag[g][j] -= cw * y[j] * f.diag()[j];
        }
    }

    // Confidence.
    let l_cov = cov_from(&evals, hp.eps_num);
    let n_cov = evals.iter().filter(|e| !e.covered.is_empty()).count();
    if n_cov > 0 && hp.lambda_cov != 0.0 {
        let cov_scale = -hp.lambda_cov / n_cov as f64;
        for (x, e) in batch.iter().zip(&evals) {
            if e.covered.len() < 2 {
                continue;
            }
            let pa = e.soft[e.best];
            for (pos, &j) in e.covered.iter().enumerate() {
                let ej = e.euclid[pos];
                if !(ej > 0.0) {
                    continue;
                }
                let indicator = if pos == e.best { 1.0 } else { 0.0 };
                // ∂p_a/∂e_j · ∂e_j/∂μ_j with ∂e_j/∂μ_j = −(x − μ_j)/e_j.
                let coef = cov_scale * pa * (e.soft[pos] - indicator) / ej;
                let mu = factors[j].as_ref().unwrap().mu();
                for (gm, (xv, m)) in grads.mu[j].iter_mut().zip(x.iter().zip(mu)) {
                    *gm -= coef * (*xv as f64 - m);
                }
            }
        }
    }

    // Anchor.
    let stats = anchor_stats(batch, &evals, k, d);
    let norm = (d * gaussians.active_count()) as f64;
    let mut anchor_sum = 0.0;
    for s in &stats {
        let g = s.gaussian;
        let (value, dmu, l, e) = anchor_term(gaussians.get(g), s, hp.alpha_anchor)?;
        anchor_sum += value;
        let scale = hp.lambda_anchor / norm;
        for (gm, v) in grads.mu[g].iter_mut().zip(&dmu) {
            *gm += scale * 2.0 * v;
        }
        grad_l.copy_from(&(&e * &l));
        grad_l *= scale * 4.0 * hp.alpha_anchor;
        grads.accumulate_factor_grad(g, factors[g].as_ref().unwrap(), &grad_l);
    }
    let l_anchor = anchor_sum / norm;

    Ok((LossBreakdown::from_parts(0, l_div, l_cov, l_anchor, hp), grads))
}

/// Per point: nearest Gaussian, outside `τ`, coverage set, most probable covering Gaussian.
pub type BranchSignature = Vec<(usize, bool, Vec<usize>, Option<usize>)>;

/// Discrete decisions behind the loss at the current parameters: per point, the nearest
/// Gaussian, whether it lies outside `τ`, its coverage set and its most probable
/// covering Gaussian. The loss is smooth wherever this stays constant.
#[doc(hidden)]
pub fn branch_signature(batch: &[&[f32]], gaussians: &GaussianSet, tau: f64) -> Result<BranchSignature> {
    let (_, evals) = evaluate_batch(batch, gaussians, tau, false)?;
    Ok(evals
        .into_iter()
        .map(|e| {
            let best = e.covered.get(e.best).copied();
            (e.argmin, e.min_delta > tau, e.covered, best)
        })
        .collect())
}

/// Linear warm-up followed by exponential decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub start: f64,
    pub peak: f64,
    pub final_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub fn mu(hp: &HyperParams) -> Self {
        Self {
            start: hp.lr_mu_start,
            peak: hp.lr_mu_peak,
            final_lr: hp.lr_mu_final,
            warmup_epochs: hp.warmup_epochs,
            total_epochs: hp.epochs_max,
        }
    }

    pub fn cholesky(hp: &HyperParams) -> Self {
        Self {
            start: hp.lr_l_start,
            peak: hp.lr_l_peak,
            final_lr: hp.lr_l_final,
            warmup_epochs: hp.warmup_epochs,
            total_epochs: hp.epochs_max,
        }
    }
}

/// Learning rate at `epoch`: linear from `start` to `peak` over the warm-up, then
/// `peak · (final/peak)^((epoch − warmup)/(total − warmup))`.
pub fn lr_at(s: &LrSchedule, epoch: usize) -> f64 {
    if epoch < s.warmup_epochs {
        return s.start + (s.peak - s.start) * epoch as f64 / s.warmup_epochs as f64;
    }
    if s.total_epochs <= s.warmup_epochs {
        return s.peak;
    }
    let t = (epoch - s.warmup_epochs) as f64 / (s.total_epochs - s.warmup_epochs) as f64;
    s.peak * (s.final_lr / s.peak).powf(t)
}

/// First and second moments for one Gaussian.
#[derive(Debug, Clone)]
struct Moments {
    m: [Vec<f64>; 3],
    v: [Vec<f64>; 3],
    step: u64,
}

impl Moments {
    fn zeros(d: usize) -> Self {
        let shape = [d, d, strict_lower_len(d)];
        Self {
            m: shape.map(|s| vec![0.0; s]),
            v: shape.map(|s| vec![0.0; s]),
            step: 0,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn apply_update(
    gaussians: &mut GaussianSet,
    grads: &Gradients,
    moments: &mut Vec<Moments>,
    hp: &HyperParams,
    lr_mu: f64,
    lr_l: f64,
) {
    let d = gaussians.dim();
    while moments.len() < gaussians.len() {
        moments.push(Moments::zeros(d));
    }
    for g in gaussians.active_ids() {
        let mom = &mut moments[g];
        mom.step += 1;
        let step = mom.step as i32;
        let params = gaussians.get_mut(g);
        let tensors: [(&mut Vec<f64>, &Vec<f64>, f64); 3] = [
            (&mut params.mu, &grads.mu[g], lr_mu),
            (&mut params.log_diag, &grads.log_diag[g], lr_l),
            (&mut params.lower, &grads.lower[g], lr_l),
        ];
        for (t, (p, gr, lr)) in tensors.into_iter().enumerate() {
            match hp.optimizer {
                Optimizer::Sgd => {
                    for (pv, gv) in p.iter_mut().zip(gr) {
                        *pv -= lr * gv;
                    }
                }
                Optimizer::Momentum => {
                    for ((pv, gv), mv) in p.iter_mut().zip(gr).zip(mom.m[t].iter_mut()) {
                        *mv = hp.momentum * *mv + gv;
                        *pv -= lr * *mv;
                    }
                }
                Optimizer::Adam => {
                    let c1 = 1.0 - ADAM_BETA1.powi(step);
                    let c2 = 1.0 - ADAM_BETA2.powi(step);
                    for (((pv, gv), mv), vv) in p
                        .iter_mut()
                        .zip(gr)
                        .zip(mom.m[t].iter_mut())
                        .zip(mom.v[t].iter_mut())
                    {
                        *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
                        *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
                        *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// Affine map from the original space to the standardized training space.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(points: &VectorSet, mode: Normalization) -> Option<Self> {
        let d = points.dim();
        let n = points.len() as f64;
        let mut mean = vec![0.0; d];
        for x in points.rows() {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += *v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for x in points.rows() {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                let t = *v as f64 - m;
                *s += t * t;
            }
        }
        var.iter_mut().for_each(|s| *s /= n);
        let scale = match mode {
            Normalization::None => return None,
            Normalization::PerDimension => var
                .iter()
                .map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 })
                .collect(),
            Normalization::Global => {
                let g = (var.iter().sum::<f64>() / d as f64).sqrt();
                vec![if g > 0.0 { g } else { 1.0 }; d]
            }
        };
        Some(Self { mean, scale })
    }

    pub fn apply(&self, points: &VectorSet) -> Result<VectorSet> {
        let d = points.dim();
        let mut data = Vec::with_capacity(points.len() * d);
        for x in points.rows() {
            for ((v, m), s) in x.iter().zip(&self.mean).zip(&self.scale) {
                data.push(((*v as f64 - m) / s) as f32);
            }
        }
        VectorSet::new(d, data)
    }

    /// Maps a Gaussian fitted in standardized space back to the original space, so that
    /// `δ_M` is unchanged: `μ ← s ⊙ μ + m`, `L ← diag(s) L`.
    pub fn restore(&self, g: &GaussianParams) -> GaussianParams {
        let d = g.dim();
        let mu = g
            .mu
            .iter()
            .zip(&self.scale)
            .zip(&self.mean)
            .map(|((v, s), m)| v * s + m)
            .collect();
        let log_diag = g
            .log_diag
            .iter()
            .zip(&self.scale)
            .map(|(v, s)| v + s.ln())
            .collect();
        let mut lower = g.lower.clone();
        for j in 0..d {
            let off = strict_row_offset(j);
            for v in &mut lower[off..off + j] {
                *v *= self.scale[j];
            }
        }
        GaussianParams { mu, log_diag, lower }
    }
}

/// One logged epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub loss: LossBreakdown,
    pub active_k: usize,
    pub lr_mu: f64,
    pub lr_l: f64,
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct TrainState {
    /// Fitted Gaussians in the original data space.
    pub gaussians: GaussianSet,
    /// Number of epochs run.
    pub epochs: usize,
    pub history: Vec<EpochLog>,
    pub events: Vec<RefinementEvent>,
    pub k_init: usize,
    pub init: InitReport,
    pub standardizer: Option<Standardizer>,
    pub early_stopped: bool,
}

impl TrainState {
    /// Active count predicted by the event log: `K′ + splits + clones − pruned`.
    pub fn expected_active_count(&self) -> usize {
        let mut k = self.k_init as isize;
        for e in &self.events {
            match e.kind {
                RefinementKind::Split => k += e.created.len() as isize - 1,
                RefinementKind::Clone => k += e.created.len() as isize,
                RefinementKind::Prune => k -= e.removed.len() as isize,
            }
        }
        k as usize
    }

    /// Training log: one `epoch` row per epoch followed by that epoch's refinement rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "type,epoch,l_div,l_cov,l_anchor,total,active_k,lr_mu,lr_l,target,created,removed,cardinality,out_in_ratio"
        )?;
        for h in &self.history {
            let l = &h.loss;
            writeln!(
                w,
                "epoch,{},{:?},{:?},{:?},{:?},{},{:?},{:?},,,,,",
                l.epoch, l.l_div, l.l_cov, l.l_anchor, l.total, h.active_k, h.lr_mu, h.lr_l
            )?;
            for e in self.events.iter().filter(|e| e.epoch == l.epoch) {
                let ids = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
                writeln!(
                    w,
                    "{},{},,,,,,,,{},{},{},{},{}",
                    e.kind,
                    e.epoch,
                    e.target.map(|t| t.to_string()).unwrap_or_default(),
                    ids(&e.created),
                    ids(&e.removed),
                    e.cardinality,
                    e.ratio.map(|r| format!("{r:?}")).unwrap_or_default()
                )?;
            }
        }
        Ok(())
    }
}

/// Fits Gaussians to `points`: standardization, K-Means++ initialization, mini-batch
/// descent with scheduled rates, and periodic split/clone/prune refinement.
pub fn fit(points: &VectorSet, hp: &HyperParams) -> Result<TrainState> {
    hp.validate()?;
    let n = points.len();
    let standardizer = Standardizer::fit(points, hp.normalization);
    let work = match &standardizer {
        Some(s) => s.apply(points)?,
        None => points.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let k_init = hp.k_init.min(n);
    let centers = kmeans_pp_init(&work, k_init, hp.kmeans_subsample, hp.seed)?;
    let (mut gaussians, init) = cholesky_init(&centers, &work, hp.k_init_nn, hp.init_neighbors, &mut rng)?;

    let sched_mu = LrSchedule::mu(hp);
    let sched_l = LrSchedule::cholesky(hp);
    let mut moments: Vec<Moments> = Vec::new();
    let mut history: Vec<EpochLog> = Vec::new();
    let mut events: Vec<RefinementEvent> = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    let mut last_structural: Option<usize> = None;
    let mut early_stopped = false;
    let mut epochs = 0;

    for epoch in 0..hp.epochs_max {
        let lr_mu = lr_at(&sched_mu, epoch);
        let lr_l = lr_at(&sched_l, epoch);
        order.shuffle(&mut rng);
        let (mut s_div, mut s_cov, mut s_anchor) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(hp.batch_size) {
            let batch: Vec<&[f32]> = chunk.iter().map(|&i| work.row(i)).collect();
            let (loss, grads) = total_loss_and_grads(&batch, &gaussians, hp)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(GarlicError::TrainingDivergence {
                    epoch,
                    detail: format!(
                        "non-finite loss or gradient (l_div={}, l_cov={}, l_anchor={}, active={})",
                        loss.l_div,
                        loss.l_cov,
                        loss.l_anchor,
                        gaussians.active_count()
                    ),
                });
            }
            let w = chunk.len() as f64 / n as f64;
            s_div += w * loss.l_div;
            s_cov += w * loss.l_cov;
            s_anchor += w * loss.l_anchor;
            apply_update(&mut gaussians, &grads, &mut moments, hp, lr_mu, lr_l);
            if gaussians.iter().any(|(_, g, a)| a && !g.is_finite()) {
                return Err(GarlicError::TrainingDivergence {
                    epoch,
                    detail: "parameters became non-finite after update".into(),
                });
            }
        }
        let loss = LossBreakdown::from_parts(epoch, s_div, s_cov, s_anchor, hp);
        history.push(EpochLog {
            loss,
            active_k: gaussians.active_count(),
            lr_mu,
            lr_l,
        });
        epochs = epoch + 1;
        debug!(
            "epoch {epoch}: total={:.6} div={:.6} cov={:.6} anchor={:.6} K={}",
            loss.total,
            loss.l_div,
            loss.l_cov,
            loss.l_anchor,
            gaussians.active_count()
        );

        let completed = epoch + 1;
        let mut structural = false;
        if completed >= hp.warmup_epochs && completed % hp.splitclone_period == 0 {
            let ev = refine_split_clone(&work, &mut gaussians, hp, epoch, &mut rng)?;
            structural |= !ev.is_empty();
            events.extend(ev);
        }
        if completed >= hp.warmup_epochs && completed % hp.prune_period == 0 {
            if let Some(ev) = refine_prune(&work, &mut gaussians, hp, epoch)? {
                structural = true;
                events.push(ev);
            }
        }
        if structural {
            last_structural = Some(epoch);
            if let Some(last) = history.last_mut() {
                last.active_k = gaussians.active_count();
            }
            info!("epoch {epoch}: refinement -> {} active Gaussians", gaussians.active_count());
            continue;
        }

        let window = hp.early_stop_window;
        // The window must not reach back across a structural change.
        let window_clear = epoch >= window && last_structural.is_none_or(|s| epoch - window > s);
        if completed > hp.warmup_epochs && window > 0 && window_clear {
            let prev = history[epoch - window].loss.total;
            let cur = loss.total;
            let rel = (prev - cur) / prev.abs().max(f64::MIN_POSITIVE);
            if cur <= 1e-12 || rel < hp.early_stop_tol {
                info!("early stop at epoch {epoch} (relative improvement {rel:.3e})");
                early_stopped = true;
                break;
            }
        }
    }

    let restored = match &standardizer {
        Some(s) => {
            let mut out = GaussianSet::new(points.dim());
            for (_, g, active) in gaussians.iter() {
                out.push_with_state(s.restore(g), active)?;
            }
            out
        }
        None => gaussians,
    };

    Ok(TrainState {
        gaussians: restored,
        epochs,
        history,
        events,
        k_init,
        init,
        standardizer,
        early_stopped,
    })
}
