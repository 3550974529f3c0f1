//! kNN search and majority-vote classification over an [`Index`].
//!
//! A query picks buckets by Mahalanobis distance, ranks each bucket's bins by the
//! distance from its spherical coordinates to the bin box, gathers the members of the
//! closest bins and re-ranks them by exact Euclidean distance.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{GarlicError, Result};
use crate::index::{cart2sph, Bucket, Index};
use crate::vectors::{sq_euclidean, VectorSet};

/// Which buckets a query visits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BucketMode {
    /// The nearest Gaussian only.
    Argmin,
    /// Every Gaussian within the given Mahalanobis radius, nearest first; the nearest
    /// Gaussian when none qualifies.
    Threshold(f64),
    /// The `k` nearest Gaussians.
    TopK(usize),
}

impl fmt::Display for BucketMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BucketMode::Argmin => f.write_str("argmin"),
            BucketMode::Threshold(t) => write!(f, "threshold:{t:?}"),
            BucketMode::TopK(k) => write!(f, "topk:{k}"),
        }
    }
}

/// Parses `argmin`, `threshold:T` and `topk:K`.
impl FromStr for BucketMode {
    type Err = GarlicError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || GarlicError::InvalidParameter(format!("bad bucket mode {s:?}; expected argmin, threshold:T or topk:K"));
        match s.split_once(':') {
            None if s == "argmin" => Ok(BucketMode::Argmin),
            Some(("threshold", t)) => t.parse().map(BucketMode::Threshold).map_err(|_| bad()),
            Some(("topk", k)) => k.parse().map(BucketMode::TopK).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

/// How much of the index one query may touch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryBudget {
    pub bucket_mode: BucketMode,
    /// Fraction of each visited bucket's bins to probe, in `(0, 1]`.
    pub probe_ratio: f64,
    /// Stop gathering once this many distinct candidates are collected.
    pub max_candidates: Option<usize>,
}

impl QueryBudget {
    pub fn new(bucket_mode: BucketMode, probe_ratio: f64) -> Self {
        Self {
            bucket_mode,
            probe_ratio,
            max_candidates: None,
        }
    }

    pub fn with_max_candidates(mut self, cap: usize) -> Self {
        self.max_candidates = Some(cap);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.probe_ratio > 0.0 && self.probe_ratio <= 1.0) {
            return Err(GarlicError::InvalidParameter(format!(
                "probe_ratio must lie in (0, 1], got {}",
                self.probe_ratio
            )));
        }
        match self.bucket_mode {
            BucketMode::TopK(0) => Err(GarlicError::InvalidParameter("top-k bucket count must be >= 1".into())),
            BucketMode::Threshold(t) if !(t >= 0.0) => {
                Err(GarlicError::InvalidParameter("bucket threshold must be >= 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Neighbors sorted by ascending distance, plus work counters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryResult {
    pub ids: Vec<usize>,
    pub distances: Vec<f64>,
    /// Distinct candidates whose exact distance was computed.
    pub candidates_examined: usize,
    pub bins_probed: usize,
    pub buckets_probed: usize,
    /// Degenerate buckets searched by scanning all members.
    pub buckets_scanned: usize,
}

/// Gathered candidate ids before re-ranking.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Candidates {
    pub ids: Vec<u32>,
    pub bins_probed: usize,
    pub buckets_probed: usize,
    pub buckets_scanned: usize,
}

/// Buckets to visit with their Mahalanobis distance, nearest first (ties by id).
pub fn select_buckets(q: &[f32], index: &Index, mode: BucketMode) -> Vec<(usize, f64)> {
    let mut scratch = vec![0.0; index.dim()];
    let mut all: Vec<(usize, f64)> = index
        .factors()
        .iter()
        .enumerate()
        .map(|(j, f)| (j, f.distance_with(q, &mut scratch)))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    match mode {
        BucketMode::Argmin => all.truncate(1),
        BucketMode::TopK(k) => all.truncate(k),
        BucketMode::Threshold(t) => {
            let within = all.iter().take_while(|(_, d)| *d <= t).count();
            all.truncate(within.max(1));
        }
    }
    all
}

/// `‖s − clamp(s, lo, hi)‖`: distance from `s` to the nearest point of the box.
pub fn bin_distance(s: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    s.iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (l, h))| {
            let t = v - v.clamp(*l, *h);
            t * t
        })
        .sum::<f64>()
        .sqrt()
}

/// Bin positions of `bucket` sorted by ascending [`bin_distance`] from spherical
/// coordinates `s`; ties keep lexicographic coordinate order. Empty for degenerate buckets.
pub fn ranked_bins(s: &[f64], bucket: &Bucket) -> Vec<(usize, f64)> {
    if bucket.is_degenerate() {
        return Vec::new();
    }
    let r = bucket.grid.axes.len();
    let mut lo = vec![0.0; r];
    let mut hi = vec![0.0; r];
    let mut ranked: Vec<(usize, f64)> = bucket
        .grid
        .bins
        .iter()
        .enumerate()
        .map(|(i, bin)| {
            bucket.grid.bin_box(bin, &mut lo, &mut hi);
            (i, bin_distance(s, &lo, &hi))
        })
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    ranked
}

struct Seen {
    bits: Vec<u64>,
}

impl Seen {
    fn new(n: usize) -> Self {
        Self { bits: vec![0; n.div_ceil(64)] }
    }

    /// True when `id` was not seen before.
    fn insert(&mut self, id: u32) -> bool {
        let (w, b) = (id as usize / 64, id % 64);
        let fresh = self.bits[w] & (1 << b) == 0;
        self.bits[w] |= 1 << b;
        fresh
    }
}

/// Distinct member ids of the probed bins, in visiting order.
pub fn gather_candidates(q: &[f32], index: &Index, budget: &QueryBudget) -> Result<Candidates> {
    budget.validate()?;
    if index.n_buckets() == 0 {
        return Err(GarlicError::EmptyIndex);
    }
    if q.len() != index.dim() {
        return Err(GarlicError::DimensionMismatch {
            expected: index.dim(),
            got: q.len(),
        });
    }
    let cap = budget.max_candidates.unwrap_or(usize::MAX);
    let mut seen = Seen::new(index.len());
    let mut out = Candidates::default();
    let mut z = Vec::new();
    let mut s = Vec::new();
    'buckets: for (b, _) in select_buckets(q, index, budget.bucket_mode) {
        if out.ids.len() >= cap {
            break;
        }
        let bucket = &index.buckets[b];
        out.buckets_probed += 1;
        if bucket.is_degenerate() {
            out.buckets_scanned += 1;
            for &m in &bucket.members {
                if out.ids.len() >= cap {
                    break 'buckets;
                }
                if seen.insert(m) {
                    out.ids.push(m);
                }
            }
            continue;
        }
        z.resize(bucket.pca.rank(), 0.0);
        s.resize(bucket.pca.rank(), 0.0);
        bucket.pca.project(q, &mut z);
        cart2sph(&z, &mut s);
        let ranked = ranked_bins(&s, bucket);
        let probes = ((budget.probe_ratio * ranked.len() as f64).ceil() as usize).clamp(1, ranked.len().max(1));
        for &(bin, _) in ranked.iter().take(probes) {
            if out.ids.len() >= cap {
                break 'buckets;
            }
            out.bins_probed += 1;
            for &m in bucket.grid.members(&bucket.grid.bins[bin]) {
                if out.ids.len() >= cap {
                    break 'buckets;
                }
                if seen.insert(m) {
                    out.ids.push(m);
                }
            }
        }
    }
    Ok(out)
}

/// `k` nearest candidates of `q` by exact Euclidean distance (ties by id).
pub fn search(q: &[f32], index: &Index, data: &VectorSet, k: usize, budget: &QueryBudget) -> Result<QueryResult> {
    if k == 0 {
        return Err(GarlicError::InvalidParameter("k must be >= 1".into()));
    }
    if data.len() != index.len() || data.dim() != index.dim() {
        return Err(GarlicError::InvalidInput(format!(
            "dataset shape {}x{} differs from the index ({}x{})",
            data.len(),
            data.dim(),
            index.len(),
            index.dim()
        )));
    }
    let c = gather_candidates(q, index, budget)?;
    let mut scored: Vec<(f64, u32)> = c.ids.iter().map(|&i| (sq_euclidean(q, data.row(i as usize)), i)).collect();
    let take = k.min(scored.len());
    let by_dist = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if take < scored.len() && take > 0 {
        scored.select_nth_unstable_by(take - 1, by_dist);
        scored.truncate(take);
    }
    scored.sort_by(by_dist);
    scored.truncate(take);
    Ok(QueryResult {
        ids: scored.iter().map(|&(_, i)| i as usize).collect(),
        distances: scored.iter().map(|&(d, _)| d.sqrt()).collect(),
        candidates_examined: c.ids.len(),
        bins_probed: c.bins_probed,
        buckets_probed: c.buckets_probed,
        buckets_scanned: c.buckets_scanned,
    })
}

/// Most frequent label, smallest label on ties; `None` for no votes.
pub fn majority_vote(labels: impl IntoIterator<Item = u32>) -> Option<u32> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut best: Option<(u32, usize)> = None;
    for (l, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((l, c));
        }
    }
    best.map(|(l, _)| l)
}

/// Majority label over every gathered candidate. With no candidates, the members of the
/// nearest bucket vote instead.
pub fn classify(q: &[f32], index: &Index, labels: &[u32], budget: &QueryBudget) -> Result<u32> {
    if labels.len() != index.len() {
        return Err(GarlicError::InvalidInput(format!(
            "{} labels for {} indexed points",
            labels.len(),
            index.len()
        )));
    }
    let c = gather_candidates(q, index, budget)?;
    if let Some(l) = majority_vote(c.ids.iter().map(|&i| labels[i as usize])) {
        return Ok(l);
    }
    let (nearest, _) = select_buckets(q, index, BucketMode::Argmin)[0];
    let members = &index.buckets[nearest].members;
    majority_vote(members.iter().map(|&i| labels[i as usize]))
        .or_else(|| majority_vote(labels.iter().copied()))
        .ok_or(GarlicError::EmptyIndex)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Projected gradient descent on `‖s − y‖²` over the box.
    fn iterative_box_distance(s: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
        let mut y: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
        for _ in 0..100 {
            for k in 0..y.len() {
                let g = 2.0 * (y[k] - s[k]);
                y[k] = (y[k] - 0.5 * g).clamp(lo[k], hi[k]);
            }
        }
        s.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn box_distance_cases() {
        assert_eq!(bin_distance(&[0.5, 0.5], &[0.0, 0.0], &[1.0, 1.0]), 0.0);
        assert!((bin_distance(&[1.3, 0.5], &[0.0, 0.0], &[1.0, 1.0]) - 0.3).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let r = rng.random_range(2..5);
            let lo: Vec<f64> = (0..r).map(|_| rng.random_range(-2.0..1.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.0..2.0)).collect();
            let s: Vec<f64> = (0..r).map(|_| rng.random_range(-4.0..4.0)).collect();
            assert!((bin_distance(&s, &lo, &hi) - iterative_box_distance(&s, &lo, &hi)).abs() < 1e-6);
        }
    }

    #[test]
    fn votes() {
        assert_eq!(majority_vote([3, 3, 3]), Some(3));
        assert_eq!(majority_vote([1, 1, 1, 1, 1, 1, 2, 2, 2, 2]), Some(1));
        assert_eq!(majority_vote([2, 2, 1, 1]), Some(1));
        assert_eq!(majority_vote(std::iter::empty()), None);
    }

    #[test]
    fn bucket_mode_text() {
        for m in [BucketMode::Argmin, BucketMode::Threshold(2.5), BucketMode::TopK(4)] {
            assert_eq!(m.to_string().parse::<BucketMode>().unwrap(), m);
        }
        assert!("topk:x".parse::<BucketMode>().is_err());
        assert!("nearest".parse::<BucketMode>().is_err());
    }

    #[test]
    fn budget_validation() {
        assert!(QueryBudget::new(BucketMode::Argmin, 0.0).validate().is_err());
        assert!(QueryBudget::new(BucketMode::Argmin, 1.5).validate().is_err());
        assert!(QueryBudget::new(BucketMode::TopK(0), 0.5).validate().is_err());
        assert!(QueryBudget::new(BucketMode::Threshold(3.0), 1.0).validate().is_ok());
    }
}
