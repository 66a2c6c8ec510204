//! Exact thin SVD for small matrices via one-sided Jacobi rotations.
//!
//! Used as the reference factorization in self-tests and to cross-check
//! the sketched decomposition; capped at order 256 because cost grows
//! cubically and the callers only ever need desk-scale instances.

use crate::error::Error;
use crate::matrix::{dot, norm2};
use crate::scalar::Scalar;
use crate::{Matrix, Result};

/// Largest dimension accepted by [`exact_svd_small`].
pub const MAX_EXACT_SVD_DIM: usize = 256;

/// Thin singular value decomposition `a = u * diag(s) * vt` with
/// `s` sorted descending, `u` of shape `m x k`, `vt` of `k x n`,
/// `k = min(m, n)`. Columns of `u` and rows of `vt` are orthonormal
/// even when `a` is rank deficient.
pub fn exact_svd_small<T: Scalar>(a: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>, Matrix<T>)> {
    let (m, n) = (a.rows(), a.cols());
    if m == 0 || n == 0 {
        return Err(Error::Dimension("svd of an empty matrix".into()));
    }
    if m.max(n) > MAX_EXACT_SVD_DIM {
        return Err(Error::InvalidArgument(format!(
            "exact svd capped at {}; got {}x{}",
            MAX_EXACT_SVD_DIM, m, n
        )));
    }
    if m >= n {
        svd_tall(a)
    } else {
        // A = (Ub S Vbt)ᵀ of the transpose: swap the roles of the factors.
        let (ub, s, vbt) = svd_tall(&a.transpose())?;
        Ok((vbt.transpose(), s, ub.transpose()))
    }
}

/// One-sided Jacobi on a tall (or square) matrix: orthogonalizes the
/// columns by plane rotations, accumulating them into V.
fn svd_tall<T: Scalar>(a: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>, Matrix<T>)> {
    let (m, n) = (a.rows(), a.cols());
    debug_assert!(m >= n);
    // Work on columns: cols[j] is column j of the evolving matrix.
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|j| {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            e
        })
        .collect();

    let tol = T::from_f64(1e-15);
    let tiny = T::from_f64(1e-300);
    for _sweep in 0..60 {
        let mut worst = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma);
                {
                    let cp = &cols[p];
                    let cq = &cols[q];
                    alpha = dot(cp, cp);
                    beta = dot(cq, cq);
                    gamma = dot(cp, cq);
                }
                if alpha <= tiny || beta <= tiny {
                    continue;
                }
                let ratio = gamma.abs() / (alpha * beta).sqrt();
                worst = worst.max(ratio);
                if ratio <= tol {
                    continue;
                }
                // Rutishauser's stable rotation parameters.
                let zeta = (beta - alpha) / (T::from_f64(2.0) * gamma);
                let t = if zeta >= T::zero() {
                    T::one() / (zeta + (T::one() + zeta * zeta).sqrt())
                } else {
                    -T::one() / (-zeta + (T::one() + zeta * zeta).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if worst <= tol {
            break;
        }
    }

    // Column norms are the singular values; sort descending.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<T> = cols.iter().map(|c| norm2(c)).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut u = Matrix::zeros(m, n);
    let mut vt = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let cutoff = norms[order[0]] * T::from_f64(1e-14);
    let mut deficient = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        s.push(norms[j]);
        if norms[j] > cutoff && norms[j] > T::zero() {
            for (i, &x) in cols[j].iter().enumerate() {
                *u.at_mut(i, k) = x / norms[j];
            }
        } else {
            deficient.push(k);
        }
        vt.row_mut(k).copy_from_slice(&v[j]);
    }
    if !deficient.is_empty() {
        complete_orthonormal(&mut u, &deficient)?;
    }
    Ok((u, s, vt))
}

/// Applies the rotation `[c -s; s c]` to vector pair `(x[p], x[q])`.
fn rotate_pair<T: Scalar>(x: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (lo, hi) = x.split_at_mut(q);
    let xp = &mut lo[p];
    let xq = &mut hi[0];
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let na = c * *a - s * *b;
        let nb = s * *a + c * *b;
        *a = na;
        *b = nb;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to every
/// other column, via Gram-Schmidt over the canonical basis.
fn complete_orthonormal<T: Scalar>(u: &mut Matrix<T>, fill: &[usize]) -> Result<()> {
    let m = u.rows();
    let k = u.cols();
    let mut filled: Vec<bool> = vec![true; k];
    for &j in fill {
        filled[j] = false;
    }
    for &j in fill {
        let mut found = false;
        'candidates: for basis in 0..m {
            let mut cand = vec![T::zero(); m];
            cand[basis] = T::one();
            for (c, &taken) in filled.iter().enumerate() {
                if !taken {
                    continue;
                }
                let proj = dot_col(u, c, &cand);
                for (i, x) in cand.iter_mut().enumerate() {
                    *x = *x - proj * u.at(i, c);
                }
            }
            let nrm = norm2(&cand);
            if nrm > T::from_f64(1e-6) {
                for (i, &x) in cand.iter().enumerate() {
                    *u.at_mut(i, j) = x / nrm;
                }
                filled[j] = true;
                found = true;
                break 'candidates;
            }
        }
        if !found {
            return Err(Error::Numerical(
                "failed to complete an orthonormal basis for rank-deficient factor".into(),
            ));
        }
    }
    Ok(())
}

fn dot_col<T: Scalar>(u: &Matrix<T>, c: usize, v: &[T]) -> T {
    let mut acc = T::zero();
    for (i, &x) in v.iter().enumerate() {
        acc = acc + u.at(i, c) * x;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mat;

    fn reconstruct(u: &Mat, s: &[f64], vt: &Mat) -> Mat {
        let mut us = u.clone();
        for i in 0..us.rows() {
            for (j, x) in us.row_mut(i).iter_mut().enumerate() {
                *x *= s[j];
            }
        }
        us.matmul(vt).unwrap()
    }

    fn assert_orthonormal_cols(u: &Mat, tol: f64) {
        for a in 0..u.cols() {
            for b in a..u.cols() {
                let d: f64 = (0..u.rows()).map(|i| u.at(i, a) * u.at(i, b)).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((d - want).abs() < tol, "column pair ({a},{b}): {d}");
            }
        }
    }

    #[test]
    fn diagonal_matrix() {
        let a = Mat::from_vec(2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let (u, s, vt) = exact_svd_small(&a).unwrap();
        assert!((s[0] - 3.0).abs() < 1e-12);
        assert!((s[1] - 1.0).abs() < 1e-12);
        let r = reconstruct(&u, &s, &vt);
        for (x, y) in r.data().iter().zip(a.data().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn random_rectangular_both_orientations() {
        for (m, n) in [(7usize, 4usize), (4, 7)] {
            let a = Mat::from_fn(m, n, |i, j| ((i * 31 + j * 17) % 13) as f64 * 0.3 - 1.7);
            let (u, s, vt) = exact_svd_small(&a).unwrap();
            let k = m.min(n);
            assert_eq!(u.cols(), k);
            assert_eq!(vt.rows(), k);
            for w in s.windows(2) {
                assert!(w[0] >= w[1]);
            }
            assert_orthonormal_cols(&u, 1e-10);
            assert_orthonormal_cols(&vt.transpose(), 1e-10);
            let r = reconstruct(&u, &s, &vt);
            let err = r.sub(&a).unwrap().frobenius_norm();
            assert!(err < 1e-10 * a.frobenius_norm().max(1.0), "err {err}");
        }
    }

    #[test]
    fn rank_one_matrix() {
        let a = Mat::from_fn(5, 3, |i, j| (i as f64 + 1.0) * (j as f64 - 1.0));
        let (u, s, vt) = exact_svd_small(&a).unwrap();
        assert!(s[1] < 1e-12 * s[0]);
        assert_orthonormal_cols(&u, 1e-9);
        let r = reconstruct(&u, &s, &vt);
        let err = r.sub(&a).unwrap().frobenius_norm();
        assert!(err < 1e-10 * a.frobenius_norm());
    }

    #[test]
    fn zero_matrix_still_orthonormal() {
        let a = Mat::zeros(4, 3);
        let (u, s, _vt) = exact_svd_small(&a).unwrap();
        assert!(s.iter().all(|&x| x == 0.0));
        assert_orthonormal_cols(&u, 1e-12);
    }

    #[test]
    fn rejects_oversize() {
        let a = Mat::zeros(300, 2);
        assert!(exact_svd_small(&a).is_err());
    }
}
