//! K-Means++ / Lloyd and DBSCAN, used for initialization and for splitting Gaussians.

use std::collections::VecDeque;

use rand::Rng;

use crate::vectors::{euclidean_f64, sq_euclidean, VectorSet};

/// Lloyd stops once no center moves farther than this.
pub const LLOYD_TOLERANCE: f64 = 1e-4;
pub const LLOYD_MAX_ITERS: usize = 25;

fn sq_dist_f64(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let t = *x as f64 - y;
            t * t
        })
        .sum()
}

/// Index of the nearest center; ties go to the lowest index.
pub fn nearest_center(x: &[f32], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist_f64(x, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// K-Means++ seeding: the first center is uniform, each further center is drawn with
/// probability proportional to the squared distance to the nearest chosen center.
pub fn kmeans_pp_seed<R: Rng + ?Sized>(points: &VectorSet, k: usize, rng: &mut R) -> Vec<usize> {
    let n = points.len();
    assert!(k >= 1 && k <= n, "k must lie in 1..=n");
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = points
        .rows()
        .map(|x| sq_euclidean(x, points.row(first)))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if *w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave the target just past the final sum.
            pick.unwrap_or_else(|| d2.iter().rposition(|w| *w > 0.0).unwrap())
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !taken[*i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        taken[next] = true;
        for (i, x) in points.rows().enumerate() {
            let d = sq_euclidean(x, points.row(next));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen
}

/// Lloyd iterations from the given centers. Empty clusters keep their previous center.
///
/// Returns the final centers and each point's cluster.
pub fn lloyd(points: &VectorSet, mut centers: Vec<Vec<f64>>) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = points.dim();
    let k = centers.len();
    let mut assign = vec![0usize; points.len()];
    for _ in 0..LLOYD_MAX_ITERS {
        for (i, x) in points.rows().enumerate() {
            assign[i] = nearest_center(x, &centers).0;
        }
        let mut sums = vec![vec![0.0f64; d]; k];
        let mut counts = vec![0usize; k];
        for (x, &c) in points.rows().zip(&assign) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x) {
                *s += *v as f64;
            }
        }
        let mut max_move = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let mut moved = 0.0;
            for (old, s) in centers[c].iter_mut().zip(&sums[c]) {
                let new = s * inv;
                moved += (new - *old) * (new - *old);
                *old = new;
            }
            max_move = max_move.max(moved.sqrt());
        }
        if max_move < LLOYD_TOLERANCE {
            break;
        }
    }
    for (i, x) in points.rows().enumerate() {
        assign[i] = nearest_center(x, &centers).0;
    }
    (centers, assign)
}

/// K-Means++ seeding followed by Lloyd iterations.
pub fn kmeans<R: Rng + ?Sized>(
    points: &VectorSet,
    k: usize,
    rng: &mut R,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let seeds = kmeans_pp_seed(points, k, rng);
    let centers = seeds
        .iter()
        .map(|&i| points.row(i).iter().map(|v| *v as f64).collect())
        .collect();
    lloyd(points, centers)
}

/// DBSCAN cluster labels; `None` marks noise.
///
/// A point is core when at least `min_pts` points (itself included) lie within `eps`.
pub fn dbscan(points: &VectorSet, eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let x = points.row(i);
            (0..n)
                .filter(|&j| sq_euclidean(x, points.row(j)) <= eps2)
                .collect()
        })
        .collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut cluster = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        if neighbors[i].len() < min_pts {
            continue;
        }
        labels[i] = Some(cluster);
        let mut queue: VecDeque<usize> = neighbors[i].iter().copied().collect();
        while let Some(j) = queue.pop_front() {
            if labels[j].is_none() {
                labels[j] = Some(cluster);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            if neighbors[j].len() >= min_pts {
                queue.extend(neighbors[j].iter().copied());
            }
        }
        cluster += 1;
    }
    labels
}

/// Mean of the listed rows.
pub fn mean_of(points: &VectorSet, ids: impl IntoIterator<Item = usize>) -> Option<Vec<f64>> {
    let mut sum = vec![0.0f64; points.dim()];
    let mut count = 0usize;
    for i in ids {
        for (s, v) in sum.iter_mut().zip(points.row(i)) {
            *s += *v as f64;
        }
        count += 1;
    }
    if count == 0 {
        return None;
    }
    let inv = 1.0 / count as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    Some(sum)
}

/// Distance from `x` to the nearest of `centers`.
pub fn nearest_center_distance(x: &[f32], centers: &[Vec<f64>]) -> f64 {
    centers
        .iter()
        .map(|c| euclidean_f64(x, c))
        .fold(f64::INFINITY, f64::min)
}
