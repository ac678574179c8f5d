use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{kmeans, Dictionary, KmeansConfig, ScaleBlock};
use crate::coding::{lasso_cd, CdSettings};
use crate::error::{Error, Result};
use crate::features::SourceTag;
use crate::rng::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DictLearnConfig {
    /// Weight of the L1 penalty in `||y - Dx||^2 + lambda_dl * ||x||_1`.
    pub lambda_dl: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Passes over the atoms per dictionary update.
    pub atom_passes: usize,
    /// Coordinate-descent stopping threshold on the largest code change.
    pub inner_tol: f64,
    pub inner_max_sweeps: usize,
}

impl Default for DictLearnConfig {
    fn default() -> Self {
        DictLearnConfig {
            lambda_dl: 0.1,
            epochs: 10,
            seed: 0,
            atom_passes: 1,
            inner_tol: 1e-6,
            inner_max_sweeps: 200,
        }
    }
}

impl DictLearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_dl >= 0.0) || !self.lambda_dl.is_finite() {
            return Err(Error::Config(format!("lambda_dl {} must be non-negative", self.lambda_dl)));
        }
        if self.epochs == 0 || self.atom_passes == 0 || self.inner_max_sweeps == 0 {
            return Err(Error::Config("epochs, atom passes and inner sweeps must be positive".into()));
        }
        Ok(())
    }
}

/// Result of [`learn`].
#[derive(Debug, Clone)]
pub struct Learned {
    pub dictionary: Dictionary,
    /// Objective at the initial dictionary (after its first coding pass),
    /// followed by the objective after each epoch.
    pub objective_trace: Vec<f64>,
    /// Number of samples using each atom in the final coding pass.
    pub usage: Vec<usize>,
    /// Reconstruction residual norm of each sample with the final codes and
    /// dictionary.
    pub residual_norms: Vec<f64>,
}

/// Clusters each scale's descriptors and concatenates the normalized
/// centroids, one block per scale in input order.
pub fn build_initial_dictionary(
    per_scale: &[(u32, DMatrix<f64>)],
    per_scale_k: &[usize],
    kmeans_cfg: &KmeansConfig,
    source: SourceTag,
) -> Result<Dictionary> {
    if per_scale.is_empty() || per_scale.len() != per_scale_k.len() {
        return Err(Error::InvalidArgument(format!(
            "{} feature matrices but {} cluster counts",
            per_scale.len(),
            per_scale_k.len()
        )));
    }
    let d = per_scale[0].1.ncols();
    if let Some((_, m)) = per_scale.iter().find(|(_, m)| m.ncols() != d) {
        return Err(Error::DimensionMismatch {
            context: "per-scale feature dimension",
            expected: d,
            found: m.ncols(),
        });
    }
    let total: usize = per_scale_k.iter().sum();
    let mut atoms = DMatrix::zeros(d, total);
    let mut blocks = Vec::with_capacity(per_scale.len());
    let mut start = 0;
    for ((scale_id, feats), &k) in per_scale.iter().zip(per_scale_k) {
        let cfg = KmeansConfig {
            k,
            seed: mix_seed(kmeans_cfg.seed, *scale_id as u64),
            ..*kmeans_cfg
        };
        let result = kmeans(feats, &cfg).map_err(|e| e.in_stage("k-means"))?;
        for c in 0..k {
            let mut col = result.centroids.row(c).transpose();
            let n = col.norm();
            if n > 1e-12 {
                col /= n;
            } else {
                // Degenerate centroid at the origin: fall back to a basis vector.
                col.fill(0.0);
                col[(start + c) % d] = 1.0;
            }
            atoms.set_column(start + c, &col);
        }
        blocks.push(ScaleBlock {
            scale_id: *scale_id,
            start,
            len: k,
        });
        start += k;
    }
    if total < 2 * d {
        tracing::warn!(
            columns = total,
            dim = d,
            "dictionary is not over-complete (fewer than 2x the descriptor dimension)"
        );
    }
    Dictionary::new(atoms, blocks, source)
}

/// Mean of `||y_i - D x_i||^2 + lambda * ||x_i||_1` over samples stored as
/// the columns of `samples`.
fn objective_cols(atoms: &DMatrix<f64>, samples: &DMatrix<f64>, codes: &[Vec<(usize, f64)>], lambda: f64) -> (f64, Vec<f64>) {
    let per: Vec<(f64, f64)> = samples
        .par_column_iter()
        .zip(codes.par_iter())
        .map(|(y, code)| {
            let mut r: DVector<f64> = y.into_owned();
            let mut l1 = 0.0;
            for &(j, v) in code {
                r.axpy(-v, &atoms.column(j), 1.0);
                l1 += v.abs();
            }
            let sq = r.norm_squared();
            (sq + lambda * l1, sq.sqrt())
        })
        .collect();
    let n = per.len().max(1) as f64;
    let total: f64 = per.iter().map(|p| p.0).sum();
    (total / n, per.into_iter().map(|p| p.1).collect())
}

/// Dictionary-learning objective for `codes` (one dense code per row of `y`).
pub fn objective(dict: &Dictionary, y: &DMatrix<f64>, codes: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    if y.ncols() != dict.dim() || codes.ncols() != dict.columns() || codes.nrows() != y.nrows() {
        return Err(Error::InvalidArgument("objective: inconsistent shapes".into()));
    }
    let sparse: Vec<Vec<(usize, f64)>> = codes
        .row_iter()
        .map(|r| r.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect())
        .collect();
    Ok(objective_cols(dict.atoms(), &y.transpose(), &sparse, lambda).0)
}

/// Alternating minimization starting from `d0`.
///
/// Each epoch codes every sample by L1-regularized coordinate descent (warm
/// started from the previous codes) and then updates the atoms one at a time
/// with the codes fixed. The atom update is the exact minimizer over the
/// unit sphere, `d_j = r / ||r||` with `r = B_j - sum_{l != j} d_l A_lj`,
/// where `A = sum x x^T` and `B = sum y x^T`. Both half-steps are exact
/// block minimizations, so the objective trace is non-increasing.
pub fn learn(d0: &Dictionary, y: &DMatrix<f64>, cfg: &DictLearnConfig) -> Result<Learned> {
    cfg.validate()?;
    if y.ncols() != d0.dim() {
        return Err(Error::DimensionMismatch {
            context: "dictionary learning input",
            expected: d0.dim(),
            found: y.ncols(),
        });
    }
    if y.nrows() == 0 {
        return Err(Error::InvalidArgument("dictionary learning needs samples".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dictionary learning input".into()));
    }
    let samples = y.transpose();
    let k = d0.columns();
    let mut atoms = d0.atoms().clone();
    let mut codes: Vec<Vec<(usize, f64)>> = vec![Vec::new(); samples.ncols()];
    let settings = CdSettings {
        tol: cfg.inner_tol,
        max_sweeps: cfg.inner_max_sweeps,
    };
    // The coordinate solver minimizes 0.5 * ||y - Dx||^2 + t * ||x||_1, which
    // is half of the learning objective when t = lambda_dl / 2.
    let half_lambda = cfg.lambda_dl / 2.0;
    let mut trace = Vec::with_capacity(cfg.epochs + 1);

    for epoch in 0..cfg.epochs {
        let gram = atoms.tr_mul(&atoms);
        codes = samples
            .par_column_iter()
            .zip(codes.par_iter())
            .map(|(col, prev)| {
                let dty: Vec<f64> = atoms.tr_mul(&col).iter().copied().collect();
                let mut x = vec![0.0; k];
                for &(j, v) in prev {
                    x[j] = v;
                }
                lasso_cd(&gram, &dty, half_lambda, &mut x, settings);
                x.into_iter().enumerate().filter(|&(_, v)| v != 0.0).collect()
            })
            .collect();
        if epoch == 0 {
            let (j0, _) = objective_cols(&atoms, &samples, &codes, cfg.lambda_dl);
            check_finite(j0, epoch)?;
            trace.push(j0);
        }

        let (a, b) = sufficient_statistics(&samples, &codes, k);
        for _ in 0..cfg.atom_passes {
            for j in 0..k {
                if a[(j, j)] <= 0.0 {
                    continue;
                }
                // r = B_j - D A_j + d_j A_jj
                let mut r = b.column(j) - &atoms * a.column(j);
                r.axpy(a[(j, j)], &atoms.column(j), 1.0);
                let n = r.norm();
                if n > 0.0 && n.is_finite() {
                    atoms.set_column(j, &(r / n));
                }
            }
        }

        let (jv, _) = objective_cols(&atoms, &samples, &codes, cfg.lambda_dl);
        check_finite(jv, epoch + 1)?;
        tracing::debug!(epoch = epoch + 1, objective = jv, "dictionary learning");
        trace.push(jv);
    }

    let (_, residual_norms) = objective_cols(&atoms, &samples, &codes, cfg.lambda_dl);
    let mut usage = vec![0usize; k];
    for code in &codes {
        for &(j, _) in code {
            usage[j] += 1;
        }
    }
    Ok(Learned {
        dictionary: d0.with_atoms(atoms)?,
        objective_trace: trace,
        usage,
        residual_norms,
    })
}

fn check_finite(j: f64, epoch: usize) -> Result<()> {
    if j.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "dictionary learning objective became {j} at epoch {epoch}"
        )))
    }
}

/// `A = sum_i x_i x_i^T` (`k x k`) and `B = sum_i y_i x_i^T` (`d x k`).
fn sufficient_statistics(samples: &DMatrix<f64>, codes: &[Vec<(usize, f64)>], k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = samples.nrows();
    let mut a = DMatrix::zeros(k, k);
    let mut b = DMatrix::zeros(d, k);
    for (i, code) in codes.iter().enumerate() {
        let y = samples.column(i);
        for &(p, vp) in code {
            b.column_mut(p).axpy(vp, &y, 1.0);
            for &(q, vq) in code {
                a[(q, p)] += vp * vq;
            }
        }
    }
    (a, b)
}

/// Replaces atoms with zero usage by the worst-reconstructed samples,
/// normalized, taking samples in order of decreasing residual (lowest index
/// on ties). Samples with zero norm are skipped.
pub fn replace_dead_atoms(dict: &Dictionary, y: &DMatrix<f64>, usage: &[usize], residual_norms: &[f64]) -> Result<Dictionary> {
    if usage.len() != dict.columns() {
        return Err(Error::DimensionMismatch {
            context: "atom usage counts",
            expected: dict.columns(),
            found: usage.len(),
        });
    }
    if residual_norms.len() != y.nrows() || y.ncols() != dict.dim() {
        return Err(Error::InvalidArgument("replace_dead_atoms: inconsistent shapes".into()));
    }
    let dead: Vec<usize> = (0..usage.len()).filter(|&j| usage[j] == 0).collect();
    if dead.is_empty() {
        return Ok(dict.clone());
    }
    let mut order: Vec<usize> = (0..y.nrows()).collect();
    order.sort_by(|&a, &b| residual_norms[b].total_cmp(&residual_norms[a]).then(a.cmp(&b)));
    let mut atoms = dict.atoms().clone();
    let mut candidates = order.into_iter().filter(|&i| y.row(i).norm() > 0.0);
    for j in dead {
        let Some(i) = candidates.next() else { break };
        let row = y.row(i).transpose();
        let n = row.norm();
        atoms.set_column(j, &(row / n));
    }
    dict.with_atoms(atoms)
}
