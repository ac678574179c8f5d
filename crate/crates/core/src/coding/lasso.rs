use nalgebra::{DMatrix, DVector};

use super::SparseCode;
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

/// Maximum tolerated KKT violation of a returned LASSO solution.
pub const KKT_TOL: f64 = 1e-6;

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Stopping rule for coordinate descent.
#[derive(Debug, Clone, Copy)]
pub struct CdSettings {
    /// Stop once no coordinate moves by more than this in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for CdSettings {
    fn default() -> Self {
        CdSettings {
            tol: 1e-12,
            max_sweeps: 100_000,
        }
    }
}

/// Cyclic coordinate descent for `0.5 * ||y - Dx||^2 + lambda * ||x||_1`,
/// expressed through `gram = D^T D` and `dty = D^T y`. `x` is the warm start
/// and receives the result. Every coordinate step is an exact minimization,
/// so the objective never increases. Returns the number of sweeps.
///
/// Sweeps alternate between the full coordinate set and the current support
/// until the support stops moving.
pub fn lasso_cd(gram: &DMatrix<f64>, dty: &[f64], lambda: f64, x: &mut [f64], settings: CdSettings) -> usize {
    let k = dty.len();
    debug_assert_eq!(gram.shape(), (k, k));
    debug_assert_eq!(x.len(), k);
    // q = G x
    let mut q = vec![0.0; k];
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            for (qi, g) in q.iter_mut().zip(gram.column(j).iter()) {
                *qi += xj * g;
            }
        }
    }

    let step = |j: usize, x: &mut [f64], q: &mut [f64]| -> f64 {
        let gjj = gram[(j, j)];
        if gjj <= 0.0 {
            return 0.0;
        }
        let rho = dty[j] - q[j] + gjj * x[j];
        let new = soft_threshold(rho, lambda) / gjj;
        let delta = new - x[j];
        if delta != 0.0 {
            x[j] = new;
            for (qi, g) in q.iter_mut().zip(gram.column(j).iter()) {
                *qi += delta * g;
            }
        }
        delta.abs()
    };

    let mut sweeps = 0;
    let mut active: Vec<usize> = Vec::with_capacity(k);
    while sweeps < settings.max_sweeps {
        let mut max_delta = 0f64;
        for j in 0..k {
            max_delta = max_delta.max(step(j, x, &mut q));
        }
        sweeps += 1;
        if max_delta <= settings.tol {
            break;
        }
        active.clear();
        active.extend((0..k).filter(|&j| x[j] != 0.0));
        while sweeps < settings.max_sweeps {
            let mut max_delta = 0f64;
            for &j in &active {
                max_delta = max_delta.max(step(j, x, &mut q));
            }
            sweeps += 1;
            if max_delta <= settings.tol {
                break;
            }
        }
    }
    sweeps
}

/// Largest violation of the LASSO optimality conditions at `x`.
pub fn kkt_violation(gram: &DMatrix<f64>, dty: &[f64], lambda: f64, x: &[f64]) -> f64 {
    let xv = DVector::from_column_slice(x);
    let gx = gram * xv;
    (0..dty.len())
        .map(|j| {
            let g = dty[j] - gx[j];
            if x[j] > 0.0 {
                (g - lambda).abs()
            } else if x[j] < 0.0 {
                (g + lambda).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Minimizer of `0.5 * ||y - Dx||^2 + lambda * ||x||_1`.
pub fn lasso(dict: &Dictionary, y: &[f64], lambda: f64) -> Result<SparseCode> {
    if y.len() != dict.dim() {
        return Err(Error::DimensionMismatch {
            context: "LASSO input",
            expected: dict.dim(),
            found: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LASSO input".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lasso lambda {lambda} must be non-negative")));
    }
    let gram = dict.gram();
    let dty: Vec<f64> = dict.atoms().tr_mul(&DVector::from_column_slice(y)).iter().copied().collect();
    let mut x = vec![0.0; dict.columns()];
    lasso_cd(&gram, &dty, lambda, &mut x, CdSettings::default());
    let viol = kkt_violation(&gram, &dty, lambda, &x);
    if !(viol < KKT_TOL) {
        return Err(Error::Numerical(format!(
            "LASSO did not converge: KKT violation {viol:e}"
        )));
    }
    SparseCode::from_dense(&x)
}
