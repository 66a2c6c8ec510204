//! Channel permutation plus partial block rotation.
//!
//! A plan reorders columns by importance and then applies an orthonormal
//! Walsh-Hadamard transform to each trailing block, leaving the first
//! `block_identity` columns untouched. Important channels (high curvature,
//! small residual) are parked in the identity prefix; the rest have their
//! outlier energy spread evenly inside each rotated block.

use crate::error::Error;
use crate::fwht::{fwht_normalized, is_power_of_two};
use crate::perm::PermutationIndex;
use crate::scalar::Scalar;
use crate::{Mat, Matrix, Result};

/// Column permutation followed by a block-diagonal rotation: identity on
/// the first `block_identity` columns, orthonormal Hadamard transforms of
/// width `block_hadamard` on the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationPlan {
    n: usize,
    block_identity: usize,
    block_hadamard: usize,
    perm: PermutationIndex,
}

impl RotationPlan {
    /// Validates the block geometry and builds a plan. `block_identity +
    /// k * block_hadamard` must tile all `n` columns; when the identity
    /// prefix covers everything the block width is ignored.
    pub fn make_plan(
        n: usize,
        block_identity: usize,
        block_hadamard: usize,
        perm: PermutationIndex,
    ) -> Result<Self> {
        if perm.len() != n {
            return Err(Error::Dimension(format!(
                "permutation of length {} for {} columns",
                perm.len(),
                n
            )));
        }
        if block_identity > n {
            return Err(Error::Geometry(format!(
                "identity prefix {} exceeds {} columns",
                block_identity, n
            )));
        }
        if block_identity == n {
            return Ok(RotationPlan {
                n,
                block_identity,
                block_hadamard: 0,
                perm,
            });
        }
        if !is_power_of_two(block_hadamard) {
            let down = if block_hadamard < 2 {
                2
            } else {
                1usize << (usize::BITS - 1 - block_hadamard.leading_zeros())
            };
            return Err(Error::Geometry(format!(
                "rotation block width {} is not a power of two; nearest usable width is {}",
                block_hadamard, down
            )));
        }
        let rest = n - block_identity;
        if !rest.is_multiple_of(block_hadamard) {
            let r = rest % block_hadamard;
            return Err(Error::Geometry(format!(
                "{} rotated columns do not tile into blocks of {}; \
                 nearest valid identity prefix is {}",
                rest,
                block_hadamard,
                block_identity + r
            )));
        }
        Ok(RotationPlan {
            n,
            block_identity,
            block_hadamard,
            perm,
        })
    }

    /// The do-nothing plan: identity prefix covers every column.
    pub fn trivial(n: usize) -> Self {
        RotationPlan {
            n,
            block_identity: n,
            block_hadamard: 0,
            perm: PermutationIndex::identity(n),
        }
    }

    /// Number of columns the plan acts on.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Width of the untouched column prefix.
    pub fn block_identity(&self) -> usize {
        self.block_identity
    }

    /// Width of each rotated block (zero when nothing is rotated).
    pub fn block_hadamard(&self) -> usize {
        self.block_hadamard
    }

    /// The column permutation applied before the blocks.
    pub fn perm(&self) -> &PermutationIndex {
        &self.perm
    }

    /// True when the plan changes nothing.
    pub fn is_trivial(&self) -> bool {
        self.block_identity == self.n && self.perm.is_identity()
    }

    /// Transforms each row: permute columns, then rotate each block.
    /// For row vectors this computes `row -> row * P * Q`.
    pub fn apply_forward<T: Scalar>(&self, m: &Matrix<T>) -> Result<Matrix<T>> {
        let mut out = self.perm.apply_columns(m)?;
        self.rotate_rows(&mut out)?;
        Ok(out)
    }

    /// Undoes [`apply_forward`](Self::apply_forward): rotate each block
    /// back (the transform is an involution), then scatter the columns.
    pub fn apply_inverse<T: Scalar>(&self, m: &Matrix<T>) -> Result<Matrix<T>> {
        if m.cols() != self.n {
            return Err(Error::Dimension(format!(
                "plan over {} columns applied to {}",
                self.n,
                m.cols()
            )));
        }
        let mut tmp = m.clone();
        self.rotate_rows(&mut tmp)?;
        self.perm.inverse().apply_columns(&tmp)
    }

    fn rotate_rows<T: Scalar>(&self, m: &mut Matrix<T>) -> Result<()> {
        if self.block_hadamard == 0 {
            return Ok(());
        }
        for r in 0..m.rows() {
            let row = m.row_mut(r);
            let mut start = self.block_identity;
            while start < row.len() {
                fwht_normalized(&mut row[start..start + self.block_hadamard])?;
                start += self.block_hadamard;
            }
        }
        Ok(())
    }

    /// Conjugates a symmetric second-moment matrix into the rotated frame:
    /// `H -> Qᵀ Pᵀ H P Q`. The input must be symmetric to a scaled 1e-8.
    pub fn rotate_hessian(&self, h: &Mat) -> Result<Mat> {
        if h.rows() != self.n || h.cols() != self.n {
            return Err(Error::Dimension(format!(
                "plan over {} columns given a {}x{} matrix",
                self.n,
                h.rows(),
                h.cols()
            )));
        }
        let tol = 1e-8 * h.max_abs().max(1.0);
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if (h.at(i, j) - h.at(j, i)).abs() > tol {
                    return Err(Error::InvalidArgument(format!(
                        "second-moment matrix is not symmetric at ({i},{j}): {} vs {}",
                        h.at(i, j),
                        h.at(j, i)
                    )));
                }
            }
        }
        let half = self.apply_forward(h)?;
        let full = self.apply_forward(&half.transpose())?;
        // Exact symmetry for downstream factorizations.
        Ok(Mat::from_fn(self.n, self.n, |i, j| {
            0.5 * (full.at(i, j) + full.at(j, i))
        }))
    }
}

/// Builds the importance permutation for a residual matrix: channels are
/// ranked by curvature over mean absolute residual, descending, so the
/// most damage-prone columns land in the identity prefix. Ties keep their
/// original order.
pub fn build_permutation(hessian: &Mat, residual: &Mat) -> Result<PermutationIndex> {
    let n = residual.cols();
    if hessian.rows() != n || hessian.cols() != n {
        return Err(Error::Dimension(format!(
            "{}x{} second-moment matrix for {} residual columns",
            hessian.rows(),
            hessian.cols(),
            n
        )));
    }
    let amean = residual.column_abs_mean();
    let mut metric = Vec::with_capacity(n);
    for (j, &am) in amean.iter().enumerate() {
        let d = hessian.at(j, j);
        if !d.is_finite() {
            return Err(Error::NonFinite(format!(
                "curvature diagonal entry {j} is {d}"
            )));
        }
        metric.push(d / am.max(1e-12));
    }
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| {
        metric[b as usize]
            .partial_cmp(&metric[a as usize])
            .expect("importance metric is always finite")
    });
    PermutationIndex::from_indices(order)
}
