//! Column-sequential quantization with curvature-weighted error feedback.
//!
//! Columns are quantized left to right; the rounding error of each column
//! is pushed into the not-yet-quantized columns along the rows of an
//! upper-triangular factor `U` with `H_damped⁻¹ = Uᵀ U`. Group scales are
//! recomputed from the updated weights at each group boundary. When the
//! second-moment matrix is diagonal, `U` is diagonal, no feedback occurs,
//! and the output is bit-identical to plain round-to-nearest.

use super::{encode_one, group_params, QuantGrid, ScalarQuantResult};
use crate::error::Error;
use crate::{Mat, Result};

/// Attempts before giving up on damping a non-positive-definite matrix;
/// each retry multiplies the damping term by ten.
const DAMP_ATTEMPTS: usize = 3;

/// Cholesky factorization `a = L Lᵀ` with `L` lower triangular. Errors
/// unless `a` is (numerically) symmetric positive definite.
pub fn cholesky_lower(a: &Mat) -> Result<Mat> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Dimension(format!(
            "Cholesky of a {}x{} matrix",
            n,
            a.cols()
        )));
    }
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.at(i, j);
            for k in 0..j {
                sum -= l.at(i, k) * l.at(j, k);
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(Error::Numerical(format!(
                        "matrix is not positive definite (pivot {i} is {sum})"
                    )));
                }
                *l.at_mut(i, j) = sum.sqrt();
            } else {
                *l.at_mut(i, j) = sum / l.at(j, j);
            }
        }
    }
    Ok(l)
}

/// Inverts a lower-triangular matrix by forward substitution.
fn invert_lower(l: &Mat) -> Mat {
    let n = l.rows();
    let mut inv = Mat::zeros(n, n);
    for col in 0..n {
        // Solve L x = e_col; x is zero above the diagonal.
        for i in col..n {
            let mut rhs = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                rhs -= l.at(i, k) * inv.at(k, col);
            }
            *inv.at_mut(i, col) = rhs / l.at(i, i);
        }
    }
    inv
}

/// Builds the upper-triangular feedback factor `U` with
/// `(H + damp·mean(diag H)·I)⁻¹ = Uᵀ U`. If the damped matrix still
/// fails to factor, the damping term is raised tenfold a few times
/// before the error is surfaced.
pub fn gptq_factor(h: &Mat, damp: f64) -> Result<Mat> {
    let n = h.rows();
    if h.cols() != n || n == 0 {
        return Err(Error::Dimension(format!(
            "feedback factor of a {}x{} matrix",
            n,
            h.cols()
        )));
    }
    if !damp.is_finite() || damp <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "damping fraction must be positive finite, got {damp}"
        )));
    }
    let tol = 1e-8 * h.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (h.at(i, j) - h.at(j, i)).abs() > tol {
                return Err(Error::InvalidArgument(format!(
                    "second-moment matrix is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    let mean_diag = (0..n).map(|i| h.at(i, i)).sum::<f64>() / n as f64;
    let base = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut last_err = None;
    for attempt in 0..DAMP_ATTEMPTS {
        let lambda = damp * base * 10f64.powi(attempt as i32);
        let damped = Mat::from_fn(n, n, |i, j| h.at(i, j) + if i == j { lambda } else { 0.0 });
        match cholesky_lower(&damped) {
            Ok(l) => {
                let linv = invert_lower(&l);
                // H⁻¹ = L⁻ᵀ L⁻¹; symmetrize against roundoff.
                let prod = linv.transpose().matmul(&linv)?;
                let hinv = Mat::from_fn(n, n, |i, j| 0.5 * (prod.at(i, j) + prod.at(j, i)));
                let lt = cholesky_lower(&hinv)?;
                return Ok(lt.transpose());
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::Numerical(format!(
        "second-moment matrix stayed indefinite after {} damping retries: {}",
        DAMP_ATTEMPTS,
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Quantizes `w` column by column against the grid, feeding each
/// column's rounding error forward through `u` (from [`gptq_factor`]).
pub fn gptq_quantize(w: &Mat, grid: &QuantGrid, u: &Mat) -> Result<ScalarQuantResult> {
    grid.validate()?;
    let (m, n) = (w.rows(), w.cols());
    if u.rows() != n || u.cols() != n {
        return Err(Error::Dimension(format!(
            "{}x{} feedback factor for {} columns",
            u.rows(),
            u.cols(),
            n
        )));
    }
    let groups = grid.groups_per_row(n);
    let mut work = w.clone();
    let mut codes = vec![0u8; m * n];
    let mut scales = vec![0.0; m * groups];
    let mut zeros = if grid.symmetric {
        None
    } else {
        Some(vec![0u8; m * groups])
    };
    let mut deq = Mat::zeros(m, n);
    let mut params = Vec::with_capacity(m);
    for j in 0..n {
        if j % grid.group_size == 0 {
            // Group boundary: take scales from the *updated* weights.
            let g = j / grid.group_size;
            let hi = (j + grid.group_size).min(n);
            params.clear();
            for i in 0..m {
                let p = group_params(&work.row(i)[j..hi], grid);
                scales[i * groups + g] = p.scale;
                if let Some(z) = zeros.as_mut() {
                    z[i * groups + g] = p.zero as u8;
                }
                params.push(p);
            }
        }
        let ujj = u.at(j, j);
        let urow = u.row(j);
        for i in 0..m {
            let wij = work.at(i, j);
            let (code, dq) = encode_one(wij, &params[i], grid);
            codes[i * n + j] = code;
            *deq.at_mut(i, j) = dq;
            let err = (wij - dq) / ujj;
            if err != 0.0 {
                let row = work.row_mut(i);
                for k in (j + 1)..n {
                    row[k] -= err * urow[k];
                }
            }
        }
    }
    Ok(ScalarQuantResult {
        codes,
        scales,
        zeros,
        deq,
    })
}
