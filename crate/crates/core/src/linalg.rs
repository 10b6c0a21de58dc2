//! Dense small-matrix routines.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAX_SWEEPS: usize = 100;

/// Singular values of a small dense matrix, in descending order.
///
/// One-sided (Hestenes) Jacobi: columns are orthogonalized by plane rotations
/// until every pair is orthogonal to working precision; the singular values
/// are then the column norms. Intended for the ≤ 8×8 Jacobians produced by the
/// samplers, though any shape works.
pub fn svd_small<T: Scalar>(m: ArrayView2<'_, T>) -> Result<Vec<T>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("svd_small: non-finite matrix entry".into()));
    }
    // Work on the orientation with at most as many columns as rows.
    let mut a: Array2<T> = if m.nrows() >= m.ncols() {
        m.to_owned()
    } else {
        m.t().to_owned()
    };
    let (rows, cols) = a.dim();
    if cols == 0 {
        return Ok(Vec::new());
    }
    let eps = T::epsilon();
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols - 1 {
            for q in p + 1..cols {
                let mut alpha = T::zero();
                let mut beta = T::zero();
                let mut gamma = T::zero();
                for i in 0..rows {
                    let ap = a[[i, p]];
                    let aq = a[[i, q]];
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::of(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let ap = a[[i, p]];
                    let aq = a[[i, q]];
                    a[[i, p]] = c * ap - s * aq;
                    a[[i, q]] = s * ap + c * aq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "svd_small: no convergence after {MAX_SWEEPS} sweeps"
        )));
    }
    let mut sv: Vec<T> = (0..cols)
        .map(|j| a.column(j).iter().map(|&x| x * x).sum::<T>().sqrt())
        .collect();
    sv.sort_by(|x, y| y.partial_cmp(x).expect("finite singular values"));
    Ok(sv)
}

/// Largest and smallest singular value.
pub fn sigma_extremes<T: Scalar>(m: ArrayView2<'_, T>) -> Result<(T, T)> {
    let sv = svd_small(m)?;
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) => Ok((hi, lo)),
        _ => Ok((T::zero(), T::zero())),
    }
}
