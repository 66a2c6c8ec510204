//! Slow, independent reference implementations used by self-tests and the
//! verification suites: dense transform materializations and a symmetric
//! eigensolver. Nothing here is on the quantization fast path.

use crate::error::Error;
use crate::fwht::is_power_of_two;
use crate::rotation::RotationPlan;
use crate::{Mat, Matrix, Result};

/// Dense orthonormal Hadamard matrix of power-of-two order `n`:
/// `H[i][j] = (-1)^popcount(i & j) / sqrt(n)`.
pub fn dense_hadamard(n: usize) -> Result<Mat> {
    if !is_power_of_two(n) {
        return Err(Error::InvalidArgument(format!(
            "Hadamard order {} is not a power of two",
            n
        )));
    }
    let scale = 1.0 / (n as f64).sqrt();
    Ok(Mat::from_fn(n, n, |i, j| {
        let sign = if (i & j).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        sign * scale
    }))
}

/// Dense `n x n` matrix of the combined permutation-then-blocks rotation,
/// so that `plan.apply_forward(m) == m * dense_rotation(plan)`.
pub fn dense_rotation(plan: &RotationPlan) -> Result<Mat> {
    let n = plan.n();
    let mut p = Mat::zeros(n, n);
    for (j, &src) in plan.perm().indices().iter().enumerate() {
        *p.at_mut(src as usize, j) = 1.0;
    }
    let mut q = Mat::identity(n);
    let b_h = plan.block_hadamard();
    if b_h > 0 {
        let h = dense_hadamard(b_h)?;
        let mut start = plan.block_identity();
        while start < n {
            for i in 0..b_h {
                for j in 0..b_h {
                    *q.at_mut(start + i, start + j) = h.at(i, j);
                }
            }
            start += b_h;
        }
    }
    p.matmul(&q)
}

/// Eigenvalues of a symmetric matrix, sorted descending, via cyclic
/// two-sided Jacobi rotations. The input is symmetrized first.
pub fn symmetric_eigenvalues(a: &Mat) -> Result<Vec<f64>> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::Dimension(format!(
            "eigensolver needs a square matrix, got {}x{}",
            n,
            a.cols()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut w: Matrix<f64> = Mat::from_fn(n, n, |i, j| 0.5 * (a.at(i, j) + a.at(j, i)));

    let scale = w.max_abs().max(1.0);
    let tol = 1e-15 * scale;
    for _sweep in 0..100 {
        let mut off: f64 = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(w.at(p, q).abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w.at(p, q);
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let theta = (w.at(q, q) - w.at(p, p)) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- A J, then A <- Jᵀ A, with J the plane rotation.
                for k in 0..n {
                    let akp = w.at(k, p);
                    let akq = w.at(k, q);
                    *w.at_mut(k, p) = c * akp - s * akq;
                    *w.at_mut(k, q) = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = w.at(p, k);
                    let aqk = w.at(q, k);
                    *w.at_mut(p, k) = c * apk - s * aqk;
                    *w.at_mut(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| w.at(i, i)).collect();
    eigs.sort_by(|x, y| y.partial_cmp(x).unwrap());
    Ok(eigs)
}
