//! Brute-force ground truth, recall metrics, budget sweeps, a random-partition control
//! and classification accuracy.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{GarlicError, Result};
use crate::index::Index;
use crate::io::IntMatrix;
use crate::params::HyperParams;
use crate::query::{classify, majority_vote, search, BucketMode, QueryBudget, QueryResult};
use crate::vectors::{euclidean_f64, sq_euclidean, VectorSet};

/// Exact nearest neighbors of each query, ties by id.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub ids: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn to_ivecs(&self) -> Result<IntMatrix> {
        let rows: Vec<Vec<i32>> = self.ids.iter().map(|r| r.iter().map(|&i| i as i32).collect()).collect();
        IntMatrix::from_rows(&rows)
    }

    /// Ids only; distances are left empty.
    pub fn from_ivecs(m: &IntMatrix) -> Result<Self> {
        let mut ids = Vec::with_capacity(m.len());
        for i in 0..m.len() {
            let row = m.row(i);
            if row.iter().any(|v| *v < 0) {
                return Err(GarlicError::InvalidInput("negative id in ground truth".into()));
            }
            ids.push(row.iter().map(|&v| v as usize).collect());
        }
        Ok(Self {
            distances: vec![Vec::new(); ids.len()],
            ids,
        })
    }
}

fn top_k(q: &[f32], data: &VectorSet, k: usize) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = data.rows().enumerate().map(|(i, x)| (sq_euclidean(q, x), i)).collect();
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, by);
        all.truncate(k);
    }
    all.sort_by(by);
    all
}

/// Exact Euclidean top-`k` (capped at `n`) for every query.
pub fn brute_force_knn(data: &VectorSet, queries: &VectorSet, k: usize) -> Result<GroundTruth> {
    if k == 0 {
        return Err(GarlicError::InvalidParameter("k must be >= 1".into()));
    }
    if data.dim() != queries.dim() {
        return Err(GarlicError::DimensionMismatch {
            expected: data.dim(),
            got: queries.dim(),
        });
    }
    let k = k.min(data.len());
    let rows: Vec<Vec<(f64, usize)>> = (0..queries.len())
        .into_par_iter()
        .map(|i| top_k(queries.row(i), data, k))
        .collect();
    Ok(GroundTruth {
        ids: rows.iter().map(|r| r.iter().map(|p| p.1).collect()).collect(),
        distances: rows.iter().map(|r| r.iter().map(|p| p.0.sqrt()).collect()).collect(),
    })
}

/// Fraction of queries whose first result is the true nearest neighbor.
pub fn recall_at_1(results: &[Vec<usize>], gt: &GroundTruth) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let hits = results
        .iter()
        .zip(&gt.ids)
        .filter(|(r, g)| !r.is_empty() && !g.is_empty() && r[0] == g[0])
        .count();
    hits as f64 / results.len() as f64
}

/// Mean overlap between the first ten results and the true top ten.
pub fn recall_10_at_10(results: &[Vec<usize>], gt: &GroundTruth) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (r, g) in results.iter().zip(&gt.ids) {
        let truth = &g[..g.len().min(10)];
        if truth.is_empty() {
            continue;
        }
        let hits = r.iter().take(10).filter(|id| truth.contains(id)).count();
        total += hits as f64 / truth.len() as f64;
    }
    total / results.len() as f64
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetReport {
    pub budget: QueryBudget,
    pub recall_at_1: f64,
    pub recall_10_at_10: f64,
    pub mean_candidates: f64,
    pub mean_bins_probed: f64,
    pub mean_buckets_probed: f64,
    /// Zero when timing is suppressed for reproducible output.
    pub wall_time_s: f64,
    pub queries: usize,
}

/// Sweep results plus `key=value` metadata written as `#` lines ahead of the header.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub metadata: Vec<(String, String)>,
    pub rows: Vec<BudgetReport>,
}

impl EvalReport {
    pub const HEADER: &'static str = "bucket_mode,probe_ratio,max_candidates,recall_at_1,recall_10_at_10,mean_candidates,mean_bins_probed,mean_buckets_probed,wall_time_s,queries";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for (k, v) in &self.metadata {
            writeln!(w, "# {k}={v}")?;
        }
        writeln!(w, "{}", Self::HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:?},{},{:?},{:?},{:?},{:?},{:?},{:?},{}",
                r.budget.bucket_mode,
                r.budget.probe_ratio,
                r.budget.max_candidates.map(|c| c.to_string()).unwrap_or_default(),
                r.recall_at_1,
                r.recall_10_at_10,
                r.mean_candidates,
                r.mean_bins_probed,
                r.mean_buckets_probed,
                r.wall_time_s,
                r.queries
            )?;
        }
        Ok(())
    }
}

/// Runs every query under each budget. Results are identical for any thread count;
/// `timed = false` reports a wall time of zero so output is byte-reproducible.
pub fn bench_sweep(
    data: &VectorSet,
    queries: &VectorSet,
    index: &Index,
    gt: &GroundTruth,
    budgets: &[QueryBudget],
    timed: bool,
) -> Result<EvalReport> {
    if gt.len() != queries.len() {
        return Err(GarlicError::InvalidInput(format!(
            "{} ground-truth rows for {} queries",
            gt.len(),
            queries.len()
        )));
    }
    let mut rows = Vec::with_capacity(budgets.len());
    for budget in budgets {
        budget.validate()?;
        let start = Instant::now();
        let results: Vec<QueryResult> = (0..queries.len())
            .into_par_iter()
            .map(|i| search(queries.row(i), index, data, 10, budget))
            .collect::<Result<_>>()?;
        let elapsed = start.elapsed().as_secs_f64();
        rows.push(summarize(budget, &results, gt, if timed { elapsed } else { 0.0 }));
    }
    Ok(EvalReport {
        metadata: vec![
            ("n".into(), index.len().to_string()),
            ("d".into(), index.dim().to_string()),
            ("checksum".into(), format!("{:08x}", index.fingerprint.checksum)),
            ("buckets".into(), index.n_buckets().to_string()),
            ("seed".into(), index.hp.seed.to_string()),
        ],
        rows,
    })
}

pub fn summarize(budget: &QueryBudget, results: &[QueryResult], gt: &GroundTruth, wall_time_s: f64) -> BudgetReport {
    let ids: Vec<Vec<usize>> = results.iter().map(|r| r.ids.clone()).collect();
    let m = results.len().max(1) as f64;
    BudgetReport {
        budget: *budget,
        recall_at_1: recall_at_1(&ids, gt),
        recall_10_at_10: recall_10_at_10(&ids, gt),
        mean_candidates: results.iter().map(|r| r.candidates_examined as f64).sum::<f64>() / m,
        mean_bins_probed: results.iter().map(|r| r.bins_probed as f64).sum::<f64>() / m,
        mean_buckets_probed: results.iter().map(|r| r.buckets_probed as f64).sum::<f64>() / m,
        wall_time_s,
        queries: results.len(),
    }
}

/// Baseline with the same number of buckets but uniformly random membership. Buckets
/// are visited in order of centroid distance and scanned until the candidate cap.
#[derive(Debug, Clone)]
pub struct RandomPartition {
    pub buckets: Vec<Vec<u32>>,
    pub centroids: Vec<Vec<f64>>,
}

impl RandomPartition {
    pub fn build(data: &VectorSet, n_buckets: usize, seed: u64) -> Result<Self> {
        if n_buckets == 0 {
            return Err(GarlicError::InvalidParameter("need at least one bucket".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buckets = vec![Vec::new(); n_buckets];
        for i in 0..data.len() {
            buckets[rng.random_range(0..n_buckets)].push(i as u32);
        }
        let centroids = buckets
            .iter()
            .map(|b| {
                let mut c = vec![0.0; data.dim()];
                for &i in b {
                    for (s, v) in c.iter_mut().zip(data.row(i as usize)) {
                        *s += *v as f64;
                    }
                }
                if !b.is_empty() {
                    c.iter_mut().for_each(|s| *s /= b.len() as f64);
                }
                c
            })
            .collect();
        Ok(Self { buckets, centroids })
    }

    pub fn search(&self, q: &[f32], data: &VectorSet, k: usize, max_candidates: usize) -> QueryResult {
        let mut order: Vec<(f64, usize)> = self
            .centroids
            .iter()
            .enumerate()
            .filter(|(b, _)| !self.buckets[*b].is_empty())
            .map(|(b, c)| (euclidean_f64(q, c), b))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut scored: Vec<(f64, u32)> = Vec::new();
        let mut buckets_probed = 0;
        'outer: for (_, b) in order {
            buckets_probed += 1;
            for &i in &self.buckets[b] {
                if scored.len() >= max_candidates {
                    break 'outer;
                }
                scored.push((sq_euclidean(q, data.row(i as usize)), i));
            }
        }
        let candidates = scored.len();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.truncate(k);
        QueryResult {
            ids: scored.iter().map(|p| p.1 as usize).collect(),
            distances: scored.iter().map(|p| p.0.sqrt()).collect(),
            candidates_examined: candidates,
            bins_probed: 0,
            buckets_probed,
            buckets_scanned: buckets_probed,
        }
    }
}

/// The three bucket-selection variants: nearest Gaussian, all within `tau`, and the
/// `topk_buckets` nearest.
pub fn variant_budget(variant: u8, hp: &HyperParams) -> Result<QueryBudget> {
    let mode = match variant {
        1 => BucketMode::Argmin,
        2 => BucketMode::Threshold(hp.tau),
        3 => BucketMode::TopK(hp.topk_buckets),
        other => return Err(GarlicError::InvalidParameter(format!("unknown variant {other}; expected 1, 2 or 3"))),
    };
    Ok(QueryBudget::new(mode, hp.probe_ratio))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    /// `(variant name, accuracy)`.
    pub variants: Vec<(String, f64)>,
    /// Majority vote over the exact 10 nearest training points.
    pub knn_accuracy: f64,
}

pub fn accuracy(predicted: &[u32], truth: &[u32]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / predicted.len() as f64
}

/// Labels predicted by majority vote over the exact `k` nearest training points.
pub fn knn_predict(train: &VectorSet, train_labels: &[u32], test: &VectorSet, k: usize) -> Result<Vec<u32>> {
    let gt = brute_force_knn(train, test, k)?;
    Ok(gt
        .ids
        .iter()
        .map(|ids| majority_vote(ids.iter().map(|&i| train_labels[i])).unwrap_or(0))
        .collect())
}

/// Accuracy of each named budget and of the exact 10-NN vote.
pub fn classification_eval(
    index: &Index,
    train_labels: &[u32],
    train: &VectorSet,
    test: &VectorSet,
    test_labels: &[u32],
    variants: &[(String, QueryBudget)],
) -> Result<ClassificationReport> {
    if test_labels.len() != test.len() {
        return Err(GarlicError::InvalidInput("test labels do not match the test set".into()));
    }
    index.check_dataset(train)?;
    let mut out = Vec::with_capacity(variants.len());
    for (name, budget) in variants {
        let predicted: Vec<u32> = (0..test.len())
            .into_par_iter()
            .map(|i| classify(test.row(i), index, train_labels, budget))
            .collect::<Result<_>>()?;
        out.push((name.clone(), accuracy(&predicted, test_labels)));
    }
    let knn = knn_predict(train, train_labels, test, 10)?;
    Ok(ClassificationReport {
        variants: out,
        knn_accuracy: accuracy(&knn, test_labels),
    })
}
