use super::{CodingConfig, SparseCode};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

/// Diagonal jitter added when the Gram matrix of the selected atoms is
/// numerically singular.
const GRAM_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OmpOutcome {
    pub code: SparseCode,
    /// Atoms in selection order.
    pub selection: Vec<usize>,
    /// Residual norm before the first iteration and after each one.
    pub residual_norms: Vec<f64>,
}

/// Orthogonal matching pursuit with at most `cfg.sparsity_limit(columns)` atoms.
pub fn omp(dict: &Dictionary, y: &[f64], cfg: &CodingConfig) -> Result<SparseCode> {
    omp_detailed(dict, y, cfg.sparsity_limit(dict.columns()), cfg.residual_tol).map(|o| o.code)
}

/// OMP with an explicit atom budget, also reporting the selection order and
/// residual history.
///
/// Each iteration selects the unused atom with the largest absolute
/// correlation to the residual (lowest index on ties) and re-fits all
/// selected coefficients by least squares, using an incrementally updated
/// Cholesky factor of the selected atoms' Gram matrix.
pub fn omp_detailed(dict: &Dictionary, y: &[f64], max_atoms: usize, residual_tol: f64) -> Result<OmpOutcome> {
    let d = dict.dim();
    let k = dict.columns();
    if y.len() != d {
        return Err(Error::DimensionMismatch {
            context: "OMP input",
            expected: d,
            found: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("OMP input".into()));
    }
    let atoms = dict.atoms();
    let max_atoms = max_atoms.min(k).min(d);

    let mut residual = y.to_vec();
    let mut rnorm = norm(&residual);
    let mut residual_norms = vec![rnorm];
    let mut selected: Vec<usize> = Vec::with_capacity(max_atoms);
    let mut used = vec![false; k];
    // Lower-triangular Cholesky factor, row-major with stride max_atoms.
    let stride = max_atoms.max(1);
    let mut chol = vec![0.0; stride * stride];
    let mut dty: Vec<f64> = Vec::with_capacity(max_atoms);
    let mut coef: Vec<f64> = Vec::new();

    while selected.len() < max_atoms && rnorm > residual_tol {
        let mut best = None;
        let mut best_corr = 0.0;
        for j in 0..k {
            if used[j] {
                continue;
            }
            let c = dot(atoms.column(j).as_slice(), &residual).abs();
            if c > best_corr {
                best_corr = c;
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        if best_corr <= 1e-14 * rnorm {
            break;
        }
        let atom = atoms.column(j);
        let atom = atom.as_slice();

        // Extend the factor with the new atom: solve L w = D_S^T d_j.
        let s = selected.len();
        let mut w: Vec<f64> = selected
            .iter()
            .map(|&p| dot(atoms.column(p).as_slice(), atom))
            .collect();
        for r in 0..s {
            let mut acc = w[r];
            for c in 0..r {
                acc -= chol[r * stride + c] * w[c];
            }
            w[r] = acc / chol[r * stride + r];
        }
        let mut diag2 = dot(atom, atom) - dot(&w, &w);
        if diag2 <= GRAM_JITTER {
            diag2 = diag2.max(0.0) + GRAM_JITTER;
        }
        for (c, wc) in w.iter().enumerate() {
            chol[s * stride + c] = *wc;
        }
        chol[s * stride + s] = diag2.sqrt();

        selected.push(j);
        used[j] = true;
        dty.push(dot(atom, y));

        // Solve L L^T x = D_S^T y.
        let n = selected.len();
        let mut z = dty.clone();
        for r in 0..n {
            let mut acc = z[r];
            for c in 0..r {
                acc -= chol[r * stride + c] * z[c];
            }
            z[r] = acc / chol[r * stride + r];
        }
        for r in (0..n).rev() {
            let mut acc = z[r];
            for c in r + 1..n {
                acc -= chol[c * stride + r] * z[c];
            }
            z[r] = acc / chol[r * stride + r];
        }
        coef = z;

        residual.copy_from_slice(y);
        for (&p, &x) in selected.iter().zip(&coef) {
            for (r, a) in residual.iter_mut().zip(atoms.column(p).iter()) {
                *r -= x * a;
            }
        }
        let next = norm(&residual);
        if !next.is_finite() {
            return Err(Error::Numerical("OMP residual became non-finite".into()));
        }
        rnorm = next;
        residual_norms.push(rnorm);
    }

    let code = SparseCode::from_pairs(selected.iter().copied().zip(coef).collect(), k)?;
    Ok(OmpOutcome {
        code,
        selection: selected,
        residual_norms,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
