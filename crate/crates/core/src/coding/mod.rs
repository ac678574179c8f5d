//! Sparse coding of descriptors against a fixed dictionary.
//!
//! OMP is the default solver; LASSO by coordinate descent is available as
//! an alternative and is also the inner solver of dictionary learning.

mod lasso;
mod omp;

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

pub use lasso::{kkt_violation, lasso, lasso_cd, soft_threshold, CdSettings};
pub use omp::{omp, omp_detailed, OmpOutcome};

/// Sparse coefficient vector over the columns of a dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    indices: Vec<usize>,
    coefficients: Vec<f64>,
    dict_columns: usize,
}

impl SparseCode {
    /// Builds a code from `(index, value)` pairs in any order. Zero values
    /// are dropped.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>, dict_columns: usize) -> Result<Self> {
        pairs.retain(|&(_, v)| v != 0.0);
        pairs.sort_by_key(|&(i, _)| i);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument("duplicate index in sparse code".into()));
        }
        if let Some(&(i, _)) = pairs.iter().find(|&&(i, _)| i >= dict_columns) {
            return Err(Error::InvalidArgument(format!(
                "code index {i} out of range for {dict_columns} columns"
            )));
        }
        if pairs.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite("sparse code".into()));
        }
        let (indices, coefficients) = pairs.into_iter().unzip();
        Ok(SparseCode {
            indices,
            coefficients,
            dict_columns,
        })
    }

    pub fn from_dense(x: &[f64]) -> Result<Self> {
        Self::from_pairs(x.iter().copied().enumerate().collect(), x.len())
    }

    pub fn zero(dict_columns: usize) -> Self {
        SparseCode {
            indices: Vec::new(),
            coefficients: Vec::new(),
            dict_columns,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn dict_columns(&self) -> usize {
        self.dict_columns
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.coefficients.iter().copied())
    }

    pub fn get(&self, index: usize) -> f64 {
        match self.indices.binary_search(&index) {
            Ok(p) => self.coefficients[p],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dict_columns];
        for (i, v) in self.iter() {
            x[i] = v;
        }
        x
    }

    /// Keeps the `limit` largest-magnitude coefficients (lowest index on ties).
    pub fn truncated(&self, limit: usize) -> Self {
        if self.nnz() <= limit {
            return self.clone();
        }
        let mut order: Vec<usize> = (0..self.nnz()).collect();
        order.sort_by(|&a, &b| {
            self.coefficients[b]
                .abs()
                .total_cmp(&self.coefficients[a].abs())
                .then(self.indices[a].cmp(&self.indices[b]))
        });
        let mut keep: Vec<usize> = order[..limit].to_vec();
        keep.sort_unstable();
        SparseCode {
            indices: keep.iter().map(|&p| self.indices[p]).collect(),
            coefficients: keep.iter().map(|&p| self.coefficients[p]).collect(),
            dict_columns: self.dict_columns,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Omp,
    Lasso,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodingConfig {
    /// Fraction of dictionary columns allowed to be nonzero.
    pub sparsity_fraction: f64,
    /// OMP stops once the residual norm falls to this value.
    pub residual_tol: f64,
    pub solver: Solver,
    /// Penalty of the LASSO solver (on `0.5 * ||y - Dx||^2`).
    pub lasso_lambda: f64,
}

impl Default for CodingConfig {
    fn default() -> Self {
        CodingConfig {
            sparsity_fraction: 0.03,
            residual_tol: 1e-6,
            solver: Solver::Omp,
            lasso_lambda: 0.1,
        }
    }
}

impl CodingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sparsity_fraction > 0.0 && self.sparsity_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "sparsity fraction {} outside (0, 1]",
                self.sparsity_fraction
            )));
        }
        if !(self.residual_tol >= 0.0) || !(self.lasso_lambda >= 0.0) {
            return Err(Error::Config(
                "residual tolerance and lasso lambda must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Maximum number of nonzeros for a dictionary with `columns` atoms:
    /// `max(1, floor(sparsity_fraction * columns))`.
    pub fn sparsity_limit(&self, columns: usize) -> usize {
        // The small slack keeps e.g. 0.03 * 700 from flooring to 20.
        let raw = (self.sparsity_fraction * columns as f64 + 1e-9).floor() as usize;
        raw.clamp(1, columns.max(1))
    }
}

/// Codes one descriptor with the configured solver.
pub fn encode(dict: &Dictionary, y: &[f64], cfg: &CodingConfig) -> Result<SparseCode> {
    match cfg.solver {
        Solver::Omp => omp(dict, y, cfg),
        Solver::Lasso => {
            let code = lasso(dict, y, cfg.lasso_lambda)?;
            Ok(code.truncated(cfg.sparsity_limit(dict.columns())))
        }
    }
}

/// Codes of several descriptors, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodeMatrix {
    columns: usize,
    rows: Vec<SparseCode>,
}

impl SparseCodeMatrix {
    pub fn new(columns: usize, rows: Vec<SparseCode>) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.dict_columns != columns) {
            return Err(Error::DimensionMismatch {
                context: "sparse code width",
                expected: columns,
                found: r.dict_columns,
            });
        }
        Ok(SparseCodeMatrix { columns, rows })
    }

    pub fn from_dense(x: &DMatrix<f64>) -> Result<Self> {
        let rows = (0..x.nrows())
            .map(|i| SparseCode::from_dense(&x.row(i).iter().copied().collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        Ok(SparseCodeMatrix {
            columns: x.ncols(),
            rows,
        })
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn rows(&self) -> &[SparseCode] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, code: SparseCode) -> Result<()> {
        if code.dict_columns != self.columns {
            return Err(Error::DimensionMismatch {
                context: "sparse code width",
                expected: self.columns,
                found: code.dict_columns,
            });
        }
        self.rows.push(code);
        Ok(())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.columns);
        for (i, r) in self.rows.iter().enumerate() {
            for (j, v) in r.iter() {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Debug dump, one line per row: `sample_index idx:val idx:val ...`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(out, "{i}");
            for (j, v) in r.iter() {
                let _ = write!(out, " {j}:{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Codes every row of `y` independently.
pub fn code_matrix(dict: &Dictionary, y: &DMatrix<f64>, cfg: &CodingConfig) -> Result<SparseCodeMatrix> {
    cfg.validate()?;
    if y.ncols() != dict.dim() {
        return Err(Error::DimensionMismatch {
            context: "descriptor dimension",
            expected: dict.dim(),
            found: y.ncols(),
        });
    }
    let samples = y.transpose();
    let results: Vec<Result<SparseCode>> = samples
        .par_column_iter()
        .enumerate()
        .map(|(i, col)| encode(dict, col.as_slice(), cfg).map_err(|e| e.at_sample(i)))
        .collect();
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SparseCodeMatrix {
        columns: dict.columns(),
        rows,
    })
}
