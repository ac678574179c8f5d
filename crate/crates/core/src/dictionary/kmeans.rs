use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Lloyd's algorithm seeded with k-means++.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KmeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    /// `k x d`, one centroid per row.
    pub centroids: DMatrix<f64>,
    /// Cluster of each input row under the returned centroids' predecessors.
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares at each Lloyd iteration.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid (lowest index on ties) and its squared distance.
fn nearest(point: &[f64], centroids: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, col) in centroids.column_iter().enumerate() {
        let dist = sq_dist(point, col.as_slice());
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

pub fn kmeans(y: &DMatrix<f64>, cfg: &KmeansConfig) -> Result<KmeansResult> {
    let (n, d) = y.shape();
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("k-means needs a non-empty input".into()));
    }
    if cfg.k == 0 || cfg.k > n {
        return Err(Error::InvalidArgument(format!(
            "k-means with k = {} on {n} samples",
            cfg.k
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    // Samples as contiguous columns.
    let data = y.transpose();
    let mut centroids = plus_plus_seeds(&data, cfg.k, cfg.seed);

    let mut assignments = vec![usize::MAX; n];
    let mut inertia_trace = Vec::new();
    for _ in 0..cfg.max_iters.max(1) {
        let assigned: Vec<(usize, f64)> = data
            .par_column_iter()
            .map(|p| nearest(p.as_slice(), &centroids))
            .collect();
        let inertia: f64 = assigned.iter().map(|a| a.1).sum();
        let changed = assigned.iter().zip(&assignments).any(|(a, &b)| a.0 != b);
        inertia_trace.push(inertia);
        if !changed {
            break;
        }
        for (slot, a) in assignments.iter_mut().zip(&assigned) {
            *slot = a.0;
        }
        let mut sums = DMatrix::<f64>::zeros(d, cfg.k);
        let mut counts = vec![0usize; cfg.k];
        for (i, &c) in assignments.iter().enumerate() {
            let mut col = sums.column_mut(c);
            col += data.column(i);
            counts[c] += 1;
        }
        for c in 0..cfg.k {
            // Empty clusters keep their previous centroid.
            if counts[c] > 0 {
                let mean = sums.column(c) / counts[c] as f64;
                centroids.set_column(c, &mean);
            }
        }
    }
    Ok(KmeansResult {
        centroids: centroids.transpose(),
        assignments,
        inertia_trace,
    })
}

/// k-means++ seeding over the columns of `data`; returns `d x k`.
fn plus_plus_seeds(data: &DMatrix<f64>, k: usize, seed: u64) -> DMatrix<f64> {
    let (d, n) = data.shape();
    let mut rng = rng::seeded(seed);
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut min_dist: Vec<f64> = data
        .par_column_iter()
        .map(|p| sq_dist(p.as_slice(), data.column(chosen[0]).as_slice()))
        .collect();
    while chosen.len() < k {
        let total: f64 = min_dist.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in min_dist.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave the target just above the accumulated sum.
            pick.unwrap_or_else(|| min_dist.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // Every point coincides with a chosen centre.
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        let c = data.column(next).into_owned();
        min_dist
            .par_iter_mut()
            .zip(data.par_column_iter())
            .for_each(|(m, p)| *m = m.min(sq_dist(p.as_slice(), c.as_slice())));
    }
    let mut centroids = DMatrix::zeros(d, k);
    for (c, &i) in chosen.iter().enumerate() {
        centroids.set_column(c, &data.column(i));
    }
    centroids
}
