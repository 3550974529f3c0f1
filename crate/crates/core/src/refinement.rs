//! Structural refinement between epochs: split over-full Gaussians, clone Gaussians
//! whose shell holds a dense mode, prune Gaussians that collapsed to too few points.

use std::fmt;

use log::warn;
use rand::seq::index::sample;
use rand::Rng;

use crate::cluster::{dbscan, kmeans, mean_of};
use crate::error::{GarlicError, Result};
use crate::gaussian::{argmin_active, mahalanobis_batch, DistanceMatrix, GaussianParams, GaussianSet};
use crate::params::HyperParams;
use crate::vectors::{euclidean, euclidean_f64, VectorSet};

/// Points sampled when estimating the DBSCAN radius.
const EPS_SAMPLE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefinementKind {
    Split,
    Clone,
    Prune,
}

impl fmt::Display for RefinementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RefinementKind::Split => "split",
            RefinementKind::Clone => "clone",
            RefinementKind::Prune => "prune",
        })
    }
}

/// One structural change to the Gaussian set.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementEvent {
    pub kind: RefinementKind,
    /// Zero-based epoch after which the change happened.
    pub epoch: usize,
    /// Gaussian that triggered a split or clone.
    pub target: Option<usize>,
    pub created: Vec<usize>,
    pub removed: Vec<usize>,
    /// Bucket size of the target (split, clone) or total pruned bucket size.
    pub cardinality: usize,
    /// Boundary-to-interior ratio that triggered a clone.
    pub ratio: Option<f64>,
}

/// Bucket rule on a precomputed distance matrix: every Gaussian covering a point within
/// `tau`, or the nearest one when none does.
pub fn buckets_from_distances(dm: &DistanceMatrix, tau: f64) -> Vec<Vec<usize>> {
    let mut buckets = vec![Vec::new(); dm.n_gaussians()];
    for i in 0..dm.n_points() {
        let row = dm.row(i);
        let mut covered = false;
        for (j, &v) in row.iter().enumerate() {
            if dm.is_active(j) && v <= tau {
                buckets[j].push(i);
                covered = true;
            }
        }
        if !covered {
            if let Some((j, _)) = dm.argmin(i) {
                buckets[j].push(i);
            }
        }
    }
    buckets
}

/// Member ids per Gaussian slot (empty for inactive slots).
pub fn current_buckets(points: &VectorSet, gaussians: &GaussianSet, tau: f64) -> Result<Vec<Vec<usize>>> {
    if gaussians.active_count() == 0 {
        return Err(GarlicError::InvalidInput("no active Gaussians".into()));
    }
    let dm = mahalanobis_batch(points, gaussians)?;
    Ok(buckets_from_distances(&dm, tau))
}

/// How a split chose the children's means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMethod {
    Dbscan,
    KMeans,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitOutcome {
    Split {
        children: [GaussianParams; 2],
        method: SplitMethod,
    },
    /// Too few or fully coincident points.
    NoOp,
}

fn shrink(parent: &GaussianParams, mu: Vec<f64>, alpha: f64) -> GaussianParams {
    let shift = alpha.ln();
    GaussianParams {
        mu,
        log_diag: parent.log_diag.iter().map(|v| v + shift).collect(),
        lower: parent.lower.iter().map(|v| v * alpha).collect(),
    }
}

/// DBSCAN radius: mean distance of up to 64 sampled points to their `min_pts`-th
/// nearest neighbor.
fn dbscan_eps<R: Rng + ?Sized>(points: &VectorSet, min_pts: usize, rng: &mut R) -> f64 {
    let m = points.len();
    let take = EPS_SAMPLE.min(m);
    let mut ids = sample(rng, m, take).into_vec();
    ids.sort_unstable();
    let mut total = 0.0;
    for &i in &ids {
        let mut d: Vec<f64> = (0..m)
            .filter(|&j| j != i)
            .map(|j| euclidean(points.row(i), points.row(j)))
            .collect();
        let kth = (min_pts - 1).min(d.len() - 1);
        d.select_nth_unstable_by(kth, f64::total_cmp);
        total += d[kth];
    }
    total / take as f64
}

/// Two cluster means from DBSCAN when it finds exactly two clusters of at least two
/// points; noise joins the nearest cluster mean before the means are recomputed.
fn dbscan_means<R: Rng + ?Sized>(points: &VectorSet, rng: &mut R) -> Option<[Vec<f64>; 2]> {
    let m = points.len();
    let min_pts = 5usize.max(m.div_ceil(100));
    if min_pts >= m {
        return None;
    }
    let eps = dbscan_eps(points, min_pts, rng);
    if !(eps > 0.0) {
        return None;
    }
    let labels = dbscan(points, eps, min_pts);
    let n_clusters = labels.iter().flatten().max().map_or(0, |c| c + 1);
    if n_clusters != 2 {
        return None;
    }
    let labels = &labels;
    let members = |c: usize| (0..m).filter(move |&i| labels[i] == Some(c));
    if members(0).count() < 2 || members(1).count() < 2 {
        return None;
    }
    let first = [mean_of(points, members(0))?, mean_of(points, members(1))?];
    let assign: Vec<usize> = (0..m)
        .map(|i| match labels[i] {
            Some(c) => c,
            None => {
                let x = points.row(i);
                usize::from(euclidean_f64(x, &first[1]) < euclidean_f64(x, &first[0]))
            }
        })
        .collect();
    let a = mean_of(points, (0..m).filter(|&i| assign[i] == 0))?;
    let b = mean_of(points, (0..m).filter(|&i| assign[i] == 1))?;
    Some([a, b])
}

/// Splits `parent` into two children centered on the two modes of its bucket, each with
/// factor `alpha_split · L`. DBSCAN runs on at most `refine_sample_cap` sampled points;
/// K-Means with two clusters is the fallback.
pub fn split_gaussian<R: Rng + ?Sized>(
    parent: &GaussianParams,
    bucket: &VectorSet,
    hp: &HyperParams,
    rng: &mut R,
) -> SplitOutcome {
    let m = bucket.len();
    if m < 4 {
        return SplitOutcome::NoOp;
    }
    let capped;
    let sample_set = if m > hp.refine_sample_cap {
        let mut ids = sample(rng, m, hp.refine_sample_cap).into_vec();
        ids.sort_unstable();
        capped = bucket.subset(&ids).expect("valid ids");
        &capped
    } else {
        bucket
    };
    let (means, method) = match dbscan_means(sample_set, rng) {
        Some(means) => (means, SplitMethod::Dbscan),
        None => {
            let (centers, _) = kmeans(bucket, 2, rng);
            let [a, b]: [Vec<f64>; 2] = centers.try_into().expect("two centers");
            ([a, b], SplitMethod::KMeans)
        }
    };
    if means[0] == means[1] {
        return SplitOutcome::NoOp;
    }
    let [a, b] = means;
    SplitOutcome::Split {
        children: [shrink(parent, a, hp.alpha_split), shrink(parent, b, hp.alpha_split)],
        method,
    }
}

/// Per-point nearest Gaussian and whether any active Gaussian covers the point.
struct Nearest {
    argmin: Vec<Option<usize>>,
    covered: Vec<bool>,
}

impl Nearest {
    fn of(dm: &DistanceMatrix, tau: f64) -> Self {
        let argmin = (0..dm.n_points()).map(|i| dm.argmin(i).map(|(j, _)| j)).collect();
        let covered = (0..dm.n_points())
            .map(|i| dm.row(i).iter().enumerate().any(|(j, v)| dm.is_active(j) && *v <= tau))
            .collect();
        Self { argmin, covered }
    }
}

fn shell_points(dm: &DistanceMatrix, nearest: &Nearest, g: usize, tau: f64, outer: f64) -> Vec<usize> {
    (0..dm.n_points())
        .filter(|&i| {
            let v = dm.get(i, g);
            v > tau && v < outer && nearest.argmin[i] == Some(g)
        })
        .collect()
}

/// Points in the open shell `(tau, outer)` of Gaussian `g` for which `g` is nearest.
pub fn boundary_from_distances(dm: &DistanceMatrix, g: usize, tau: f64, outer: f64) -> Vec<usize> {
    shell_points(dm, &Nearest::of(dm, tau), g, tau, outer)
}

/// Shell points of `g`: `tau < δ_M(x, g) < e_clone·tau` and `g` is the nearest Gaussian.
pub fn boundary_set(g: usize, points: &VectorSet, gaussians: &GaussianSet, tau: f64, e_clone: f64) -> Result<Vec<usize>> {
    if g >= gaussians.len() || !gaussians.is_active(g) {
        return Err(GarlicError::InvalidInput(format!("Gaussian {g} is not active")));
    }
    let dm = mahalanobis_batch(points, gaussians)?;
    Ok(boundary_from_distances(&dm, g, tau, e_clone * tau))
}

/// Inverse mean Euclidean distance from `p` to its `k` nearest points of `others`
/// (`k` shrinks to `|others|` when there are fewer). Infinite when all of them coincide
/// with `p` or `others` is empty.
pub fn local_density(p: &[f32], others: &[&[f32]], k: usize) -> f64 {
    let k = k.min(others.len());
    if k == 0 {
        return f64::INFINITY;
    }
    let mut d: Vec<f64> = others.iter().map(|o| euclidean(p, o)).collect();
    d.select_nth_unstable_by(k - 1, f64::total_cmp);
    let mut nearest = d[..k].to_vec();
    nearest.sort_by(f64::total_cmp);
    let mean = nearest.iter().sum::<f64>() / k as f64;
    if mean > 0.0 {
        1.0 / mean
    } else {
        f64::INFINITY
    }
}

/// Trigger statistics of a clone candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CloneCheck {
    pub boundary: Vec<usize>,
    pub inside: usize,
    pub bucket_size: usize,
    pub ratio: f64,
}

fn clone_check(dm: &DistanceMatrix, nearest: &Nearest, g: usize, hp: &HyperParams) -> CloneCheck {
    let boundary = shell_points(dm, nearest, g, hp.tau, hp.shell_outer());
    let mut inside = 0;
    let mut bucket_size = 0;
    for i in 0..dm.n_points() {
        if dm.get(i, g) <= hp.tau {
            inside += 1;
            bucket_size += 1;
        } else if !nearest.covered[i] && nearest.argmin[i] == Some(g) {
            bucket_size += 1;
        }
    }
    let ratio = if inside == 0 {
        if boundary.is_empty() { 0.0 } else { f64::INFINITY }
    } else {
        boundary.len() as f64 / inside as f64
    };
    CloneCheck {
        boundary,
        inside,
        bucket_size,
        ratio,
    }
}

/// New Gaussian at the densest sampled shell point of `g` with a copy of its factor, or
/// `None` when the shell is empty, the boundary/interior ratio is at most `beta_clone`,
/// or the bucket is smaller than `clone_min_frac · n`.
pub fn clone_gaussian<R: Rng + ?Sized>(
    g: usize,
    points: &VectorSet,
    gaussians: &GaussianSet,
    hp: &HyperParams,
    rng: &mut R,
) -> Result<Option<GaussianParams>> {
    if g >= gaussians.len() || !gaussians.is_active(g) {
        return Err(GarlicError::InvalidInput(format!("Gaussian {g} is not active")));
    }
    let dm = mahalanobis_batch(points, gaussians)?;
    let nearest = Nearest::of(&dm, hp.tau);
    Ok(clone_from_distances(&dm, &nearest, g, points, gaussians, hp, rng).map(|(p, _)| p))
}

fn clone_from_distances<R: Rng + ?Sized>(
    dm: &DistanceMatrix,
    nearest: &Nearest,
    g: usize,
    points: &VectorSet,
    gaussians: &GaussianSet,
    hp: &HyperParams,
    rng: &mut R,
) -> Option<(GaussianParams, CloneCheck)> {
    let check = clone_check(dm, nearest, g, hp);
    let n = points.len() as f64;
    if check.boundary.is_empty()
        || !(check.ratio > hp.beta_clone)
        || (check.bucket_size as f64) < hp.clone_min_frac * n
    {
        return None;
    }
    let b = check.boundary.len();
    let take = ((hp.rho_clone * b as f64).ceil() as usize).clamp(1, b).min(hp.refine_sample_cap);
    let mut picks: Vec<usize> = sample(rng, b, take).into_iter().map(|i| check.boundary[i]).collect();
    picks.sort_unstable();
    let rows: Vec<&[f32]> = picks.iter().map(|&i| points.row(i)).collect();
    let mut best = (picks[0], f64::NEG_INFINITY);
    let mut others: Vec<&[f32]> = Vec::with_capacity(rows.len());
    for (pos, &id) in picks.iter().enumerate() {
        others.clear();
        others.extend(rows.iter().enumerate().filter(|(o, _)| *o != pos).map(|(_, r)| *r));
        let rho = local_density(rows[pos], &others, hp.k_density);
        if rho > best.1 {
            best = (id, rho);
        }
    }
    let parent = gaussians.get(g);
    let clone = GaussianParams {
        mu: points.row(best.0).iter().map(|v| *v as f64).collect(),
        log_diag: parent.log_diag.clone(),
        lower: parent.lower.clone(),
    };
    Some((clone, check))
}

/// Result of [`prune`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PruneOutcome {
    pub pruned: Vec<usize>,
    /// `(point, new Gaussian)` for every member of a pruned bucket.
    pub reassigned: Vec<(usize, usize)>,
}

/// Deactivates Gaussians whose bucket has fewer than `min_card` members and moves their
/// members to the nearest survivor. Nothing is pruned if no Gaussian would survive.
pub fn prune(
    gaussians: &mut GaussianSet,
    buckets: &[Vec<usize>],
    min_card: usize,
    dm: &DistanceMatrix,
) -> PruneOutcome {
    let victims: Vec<usize> = gaussians
        .active_ids()
        .into_iter()
        .filter(|&g| buckets.get(g).map_or(0, Vec::len) < min_card)
        .collect();
    if victims.is_empty() {
        return PruneOutcome::default();
    }
    if victims.len() == gaussians.active_count() {
        warn!("prune would remove every Gaussian; skipping");
        return PruneOutcome::default();
    }
    for &g in &victims {
        gaussians.deactivate(g);
    }
    let survivors: Vec<bool> = (0..gaussians.len()).map(|j| gaussians.is_active(j)).collect();
    let mut reassigned = Vec::new();
    for &g in &victims {
        for &i in &buckets[g] {
            let (to, _) = argmin_active(dm.row(i), &survivors).expect("a survivor exists");
            reassigned.push((i, to));
        }
    }
    PruneOutcome {
        pruned: victims,
        reassigned,
    }
}

/// Splits every Gaussian whose bucket exceeds `gamma_split · n`, then clones where the
/// shell criterion holds on the post-split set.
pub fn refine_split_clone<R: Rng + ?Sized>(
    points: &VectorSet,
    gaussians: &mut GaussianSet,
    hp: &HyperParams,
    epoch: usize,
    rng: &mut R,
) -> Result<Vec<RefinementEvent>> {
    let n = points.len();
    let mut events = Vec::new();
    let dm = mahalanobis_batch(points, gaussians)?;
    let buckets = buckets_from_distances(&dm, hp.tau);
    for g in gaussians.active_ids() {
        let size = buckets[g].len();
        if (size as f64) <= hp.gamma_split * n as f64 {
            continue;
        }
        let bucket = points.subset(&buckets[g])?;
        if let SplitOutcome::Split { children, .. } = split_gaussian(gaussians.get(g), &bucket, hp, rng) {
            let [a, b] = children;
            let ia = gaussians.push(a)?;
            let ib = gaussians.push(b)?;
            gaussians.deactivate(g);
            events.push(RefinementEvent {
                kind: RefinementKind::Split,
                epoch,
                target: Some(g),
                created: vec![ia, ib],
                removed: vec![g],
                cardinality: size,
                ratio: None,
            });
        }
    }

    let dm = if events.is_empty() { dm } else { mahalanobis_batch(points, gaussians)? };
    let nearest = Nearest::of(&dm, hp.tau);
    let mut clones = Vec::new();
    for g in gaussians.active_ids() {
        if let Some((c, check)) = clone_from_distances(&dm, &nearest, g, points, gaussians, hp, rng) {
            clones.push((g, c, check));
        }
    }
    for (g, c, check) in clones {
        let id = gaussians.push(c)?;
        events.push(RefinementEvent {
            kind: RefinementKind::Clone,
            epoch,
            target: Some(g),
            created: vec![id],
            removed: Vec::new(),
            cardinality: check.bucket_size,
            ratio: Some(check.ratio),
        });
    }
    Ok(events)
}

/// Prunes under-populated Gaussians; `None` when nothing was removed.
pub fn refine_prune(
    points: &VectorSet,
    gaussians: &mut GaussianSet,
    hp: &HyperParams,
    epoch: usize,
) -> Result<Option<RefinementEvent>> {
    let dm = mahalanobis_batch(points, gaussians)?;
    let buckets = buckets_from_distances(&dm, hp.tau);
    let out = prune(gaussians, &buckets, hp.prune_min_card, &dm);
    if out.pruned.is_empty() {
        return Ok(None);
    }
    Ok(Some(RefinementEvent {
        kind: RefinementKind::Prune,
        epoch,
        target: None,
        created: Vec::new(),
        cardinality: out.pruned.iter().map(|&g| buckets[g].len()).sum(),
        removed: out.pruned,
        ratio: None,
    }))
}
