//! Column permutations with validated bijection semantics.
//!
//! A `PermutationIndex` holds `indices` such that applying it to a matrix
//! gathers columns: `out[:, j] = input[:, indices[j]]`. The inverse
//! permutation scatters them back.

use crate::error::Error;
use crate::scalar::Scalar;
use crate::{Matrix, Result};
use serde::{Deserialize, Serialize};

/// A permutation of `n` column indices, stored as the gather map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationIndex {
    indices: Vec<u32>,
}

impl PermutationIndex {
    /// The identity permutation on `n` columns.
    pub fn identity(n: usize) -> Self {
        PermutationIndex {
            indices: (0..n as u32).collect(),
        }
    }

    /// Validates that `indices` is a bijection on `0..len`.
    pub fn from_indices(indices: Vec<u32>) -> Result<Self> {
        let n = indices.len();
        let mut seen = vec![false; n];
        for &i in &indices {
            let i = i as usize;
            if i >= n {
                return Err(Error::InvalidArgument(format!(
                    "permutation entry {} out of range for length {}",
                    i, n
                )));
            }
            if seen[i] {
                return Err(Error::InvalidArgument(format!(
                    "permutation entry {} repeated; not a bijection",
                    i
                )));
            }
            seen[i] = true;
        }
        Ok(PermutationIndex { indices })
    }

    /// Number of columns the permutation acts on.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    /// True when the permutation acts on zero columns.
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The gather map.
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    /// True when this is the identity map.
    pub fn is_identity(&self) -> bool {
        self.indices
            .iter()
            .enumerate()
            .all(|(j, &i)| i as usize == j)
    }

    /// Inverse permutation: `inv.indices[indices[j]] = j`.
    pub fn inverse(&self) -> Self {
        let mut inv = vec![0u32; self.indices.len()];
        for (j, &i) in self.indices.iter().enumerate() {
            inv[i as usize] = j as u32;
        }
        PermutationIndex { indices: inv }
    }

    /// Gathers columns of `m`: `out[:, j] = m[:, indices[j]]`.
    pub fn apply_columns<T: Scalar>(&self, m: &Matrix<T>) -> Result<Matrix<T>> {
        if m.cols() != self.indices.len() {
            return Err(Error::Dimension(format!(
                "permutation of length {} applied to {} columns",
                self.indices.len(),
                m.cols()
            )));
        }
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for r in 0..m.rows() {
            let src = m.row(r);
            for (o, &i) in out.row_mut(r).iter_mut().zip(self.indices.iter()) {
                *o = src[i as usize];
            }
        }
        Ok(out)
    }

    /// Gathers entries of a vector: `out[j] = v[indices[j]]`.
    pub fn apply_slice<T: Copy>(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.indices.len() {
            return Err(Error::Dimension(format!(
                "permutation of length {} applied to vector of {}",
                self.indices.len(),
                v.len()
            )));
        }
        Ok(self.indices.iter().map(|&i| v[i as usize]).collect())
    }
}
