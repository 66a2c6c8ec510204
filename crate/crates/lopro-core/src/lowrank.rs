//! Sketched low-rank decomposition.
//!
//! Rank-1 factors are peeled one at a time: a Gaussian sketch is pushed
//! through a few Gram-matrix power iterations to align with the leading
//! left direction, the matching right factor is read off exactly, and the
//! (optionally minifloat-rounded) rank-1 term is subtracted before the
//! next factor is drawn. Rounding before deflation lets every later
//! factor absorb the representation error of the earlier ones.

use crate::error::Error;
use crate::matrix::norm2;
use crate::minifloat::{e4m3_round, f32_snap, is_e4m3_exact};
use crate::rng::SeededGaussian;
use crate::{Mat, Result};
use serde::{Deserialize, Serialize};

/// First ChaCha substream used for sketch draws; stream `BASE + 8*step +
/// attempt` serves redraw `attempt` of factor `step`. Streams 0-15 are
/// reserved for other consumers of the same seed space.
const STREAM_SKETCH_BASE: u64 = 16;
/// Redraw attempts before declaring the residual numerically zero.
const MAX_REDRAWS: u64 = 8;

/// Precision the factor entries are held (and stored) at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorPrecision {
    /// Factors kept in f64.
    Full,
    /// Factor entries rounded to the 8-bit 1/4/3 grid.
    E4m3,
}

/// Low-rank factorization `u * diag(s) * v` of a (column-scaled) matrix:
/// `u` is `m x r` with unit-norm columns, `v` is `r x n` with unit-norm
/// rows, and `s` holds the factor magnitudes snapped to f32.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    /// Left factors, one column per rank.
    pub u: Mat,
    /// Factor magnitudes, descending in typical use.
    pub s: Vec<f64>,
    /// Right factors, one row per rank.
    pub v: Mat,
    /// Precision of the stored `u`/`v` entries.
    pub precision: FactorPrecision,
}

impl LowRankFactors {
    /// Number of factors.
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Rows of the decomposed matrix.
    pub fn rows(&self) -> usize {
        self.u.rows()
    }

    /// Columns of the decomposed matrix.
    pub fn cols(&self) -> usize {
        self.v.cols()
    }

    /// Checks shape consistency, unit factor norms (to the tolerance the
    /// stored precision can express), f32-exact magnitudes, and (in
    /// minifloat mode) that every factor entry sits on the storage grid.
    pub fn validate(&self) -> Result<()> {
        let r = self.s.len();
        if self.u.cols() != r || self.v.rows() != r {
            return Err(Error::Dimension(format!(
                "factor count mismatch: {} magnitudes, {} left columns, {} right rows",
                r,
                self.u.cols(),
                self.v.rows()
            )));
        }
        // An 8-bit mantissa grid perturbs a unit vector by up to ~2^-4 in
        // norm; full precision factors must be unit to near roundoff.
        let tol = match self.precision {
            FactorPrecision::Full => 1e-10,
            FactorPrecision::E4m3 => 0.0625,
        };
        for k in 0..r {
            let sk = self.s[k];
            if !sk.is_finite() || sk < 0.0 {
                return Err(Error::Numerical(format!(
                    "factor magnitude {k} is {sk}; must be finite and nonnegative"
                )));
            }
            if f32_snap(sk) != sk {
                return Err(Error::Format(format!(
                    "factor magnitude {k} = {sk} is not an f32 value"
                )));
            }
            let un = norm2(&self.u.col(k));
            let vn = norm2(self.v.row(k));
            for (name, nrm) in [("left", un), ("right", vn)] {
                if (nrm - 1.0).abs() > tol {
                    return Err(Error::Numerical(format!(
                        "{name} factor {k} has norm {nrm}, outside 1 +/- {tol}"
                    )));
                }
            }
        }
        if self.precision == FactorPrecision::E4m3 {
            for (what, m) in [("left", &self.u), ("right", &self.v)] {
                for &x in m.data() {
                    if !is_e4m3_exact(x) {
                        return Err(Error::Format(format!(
                            "{what} factor entry {x} is not on the 1/4/3 grid"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Materializes `u * diag(s) * v * diag(act_scale)^-1`: the low-rank
    /// term mapped back to the unscaled column space.
    pub fn low_rank_term(&self, act_scale: &[f64]) -> Result<Mat> {
        if act_scale.len() != self.v.cols() {
            return Err(Error::Dimension(format!(
                "{} scales for {} columns",
                act_scale.len(),
                self.v.cols()
            )));
        }
        let mut inv = Vec::with_capacity(act_scale.len());
        for &s in act_scale {
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "channel scale {s} must be positive finite"
                )));
            }
            inv.push(1.0 / s);
        }
        if self.rank() == 0 {
            return Ok(Mat::zeros(self.rows(), self.cols()));
        }
        let vs = self.v.scale_columns(&inv)?;
        let us = self.u.scale_columns(&self.s)?;
        us.matmul(&vs)
    }
}

/// One sketched rank-1 extraction from `a`: returns `(u, sigma, v)` with
/// unit `u`, `v` and `a ≈ sigma * u * vᵀ + rest`. A numerically zero
/// input yields the canonical `(e1, 0, e1)` triple after the redraw
/// budget is exhausted.
pub fn r1svd_step(a: &Mat, iterations: usize, seed: u64) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let (m, n) = (a.rows(), a.cols());
    if m == 0 || n == 0 {
        return Err(Error::Dimension("rank-1 step on an empty matrix".into()));
    }
    let tiny = 1e-300;
    for attempt in 0..MAX_REDRAWS {
        let mut g = SeededGaussian::with_stream(seed, STREAM_SKETCH_BASE + attempt);
        let mut sketch = vec![0.0; n];
        g.fill_gaussian(&mut sketch);
        // Same operator as `gram_apply(a, sketch, iterations)` up to a
        // positive scalar, but renormalized between applications so the
        // iterate can neither underflow nor overflow no matter how many
        // iterations are requested; the scale cancels when `u` is formed.
        let mut y = a.matvec(&sketch)?;
        let mut ny = norm2(&y);
        for _ in 0..iterations {
            if !ny.is_finite() {
                return Err(Error::Numerical(
                    "power iteration overflowed; input magnitudes too large".into(),
                ));
            }
            if ny <= tiny {
                break;
            }
            for x in y.iter_mut() {
                *x /= ny;
            }
            let t = a.tr_matvec(&y)?;
            y = a.matvec(&t)?;
            ny = norm2(&y);
        }
        if !ny.is_finite() {
            return Err(Error::Numerical(
                "power iteration overflowed; input magnitudes too large".into(),
            ));
        }
        if ny <= tiny {
            continue;
        }
        let u: Vec<f64> = y.iter().map(|&x| x / ny).collect();
        let b = a.tr_matvec(&u)?;
        let sigma = norm2(&b);
        if sigma <= tiny {
            continue;
        }
        let v: Vec<f64> = b.iter().map(|&x| x / sigma).collect();
        return Ok((u, sigma, v));
    }
    let mut e_m = vec![0.0; m];
    e_m[0] = 1.0;
    let mut e_n = vec![0.0; n];
    e_n[0] = 1.0;
    Ok((e_m, 0.0, e_n))
}

/// Peels `rank` factors off `a` by repeated sketched rank-1 extraction
/// with deflation. Factor `k` sketches with seed `seed + k`; entries are
/// rounded to the requested precision and magnitudes snapped to f32
/// before deflation, so the stored factors reproduce the deflation
/// sequence exactly.
pub fn r1svd_decompose(
    a: &Mat,
    rank: usize,
    iterations: usize,
    seed: u64,
    precision: FactorPrecision,
) -> Result<LowRankFactors> {
    let (m, n) = (a.rows(), a.cols());
    if rank > m.min(n) {
        return Err(Error::InvalidArgument(format!(
            "rank {} exceeds min dimension of {}x{}",
            rank, m, n
        )));
    }
    let mut residual = a.clone();
    let mut u = Mat::zeros(m, rank);
    let mut v = Mat::zeros(rank, n);
    let mut s = Vec::with_capacity(rank);
    for k in 0..rank {
        let (mut uk, sigma, mut vk) = r1svd_step(&residual, iterations, seed + k as u64)?;
        if precision == FactorPrecision::E4m3 {
            for x in uk.iter_mut() {
                *x = e4m3_round(*x);
            }
            for x in vk.iter_mut() {
                *x = e4m3_round(*x);
            }
        }
        let sigma = f32_snap(sigma);
        residual.subtract_outer(sigma, &uk, &vk)?;
        for (i, &x) in uk.iter().enumerate() {
            *u.at_mut(i, k) = x;
        }
        v.row_mut(k).copy_from_slice(&vk);
        s.push(sigma);
    }
    Ok(LowRankFactors { u, s, v, precision })
}

/// Decomposes `w` in the scaled space `w * diag(scale)` and returns the
/// factors together with the unscaled residual, computed as the exact
/// complement `w - low_rank_term` so that factors plus residual
/// reconstruct `w` to working precision by construction.
pub fn scaled_decompose(
    w: &Mat,
    scale: &[f64],
    rank: usize,
    iterations: usize,
    seed: u64,
    precision: FactorPrecision,
) -> Result<(LowRankFactors, Mat)> {
    let ws = w.scale_columns(scale)?;
    let factors = r1svd_decompose(&ws, rank, iterations, seed, precision)?;
    let low_rank = factors.low_rank_term(scale)?;
    let residual = w.sub(&low_rank)?;
    Ok((factors, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svd::exact_svd_small;

    #[test]
    fn rank_one_matrix_recovered_exactly() {
        let u0 = [0.6, 0.8];
        let v0 = [0.0, 1.0, 0.0];
        let a = Mat::from_fn(2, 3, |i, j| 5.0 * u0[i] * v0[j]);
        let f = r1svd_decompose(&a, 1, 4, 7, FactorPrecision::Full).unwrap();
        f.validate().unwrap();
        assert!((f.s[0] - 5.0).abs() < 1e-6);
        let approx = f.low_rank_term(&[1.0, 1.0, 1.0]).unwrap();
        let err = approx.sub(&a).unwrap().frobenius_norm();
        assert!(err < 1e-10 * a.frobenius_norm());
    }

    #[test]
    fn leading_magnitude_of_diagonal() {
        let a = Mat::from_vec(2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let f = r1svd_decompose(&a, 2, 8, 3, FactorPrecision::Full).unwrap();
        assert!((f.s[0] - 3.0).abs() < 1e-6, "s0 {}", f.s[0]);
        assert!((f.s[1] - 1.0).abs() < 1e-6, "s1 {}", f.s[1]);
    }

    #[test]
    fn identity_gives_unit_magnitude() {
        let a = Mat::identity(2);
        let (u, sigma, v) = r1svd_step(&a, 6, 11).unwrap();
        assert!((sigma - 1.0).abs() < 1e-9);
        // For the identity the right factor equals the left factor.
        for (x, y) in u.iter().zip(v.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_matrix_degenerates_cleanly() {
        let a = Mat::zeros(3, 4);
        let f = r1svd_decompose(&a, 2, 4, 0, FactorPrecision::Full).unwrap();
        f.validate().unwrap();
        assert_eq!(f.s, vec![0.0, 0.0]);
        assert_eq!(f.u.at(0, 0), 1.0);
        assert_eq!(f.v.at(0, 0), 1.0);
    }

    #[test]
    fn leading_magnitude_matches_exact_svd() {
        let a = Mat::from_fn(12, 8, |i, j| {
            ((i * 13 + j * 7) % 11) as f64 * 0.4 - 2.0 + if i == j { 6.0 } else { 0.0 }
        });
        let (_, s_exact, _) = exact_svd_small(&a).unwrap();
        let f = r1svd_decompose(&a, 1, 8, 21, FactorPrecision::Full).unwrap();
        let rel = (f.s[0] - s_exact[0]).abs() / s_exact[0];
        assert!(rel < 1e-3, "sketched {} exact {}", f.s[0], s_exact[0]);
    }

    #[test]
    fn minifloat_factors_sit_on_grid_and_validate() {
        let a = Mat::from_fn(16, 16, |i, j| ((i * 5 + j * 3) % 7) as f64 - 3.0);
        let f = r1svd_decompose(&a, 4, 6, 9, FactorPrecision::E4m3).unwrap();
        f.validate().unwrap();
        for &x in f.u.data().iter().chain(f.v.data().iter()) {
            assert!(is_e4m3_exact(x));
        }
    }

    #[test]
    fn decomposition_is_seed_deterministic() {
        let a = Mat::from_fn(10, 6, |i, j| ((i + 2 * j) % 5) as f64 * 0.7 - 1.0);
        let f1 = r1svd_decompose(&a, 3, 6, 42, FactorPrecision::E4m3).unwrap();
        let f2 = r1svd_decompose(&a, 3, 6, 42, FactorPrecision::E4m3).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn scaled_residual_is_exact_complement() {
        let w = Mat::from_fn(8, 8, |i, j| ((i * 3 + j) % 9) as f64 * 0.25 - 1.0);
        let scale = vec![4.0, 0.5, 1.0, 2.0, 8.0, 0.25, 1.5, 1.0];
        let (f, r) = scaled_decompose(&w, &scale, 3, 6, 5, FactorPrecision::E4m3).unwrap();
        let total = f.low_rank_term(&scale).unwrap().add(&r).unwrap();
        let err = total.sub(&w).unwrap().max_abs();
        assert!(
            err <= 1e-12 * w.max_abs().max(1.0),
            "complement error {err}"
        );
    }

    #[test]
    fn rank_cap_is_enforced() {
        let a = Mat::zeros(4, 3);
        assert!(r1svd_decompose(&a, 4, 2, 0, FactorPrecision::Full).is_err());
    }
}
