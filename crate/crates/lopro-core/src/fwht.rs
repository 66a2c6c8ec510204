//! Fast Walsh-Hadamard transform.
//!
//! The normalized transform is its own inverse and preserves Euclidean
//! norm; applying it to a block of channels spreads any single large
//! coordinate evenly across the block.

use crate::error::Error;
use crate::scalar::Scalar;
use crate::Result;

/// Checks that `n` is a power of two (and nonzero).
#[inline]
pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// In-place unnormalized transform: butterflies `(a+b, a-b)` at strides
/// 1, 2, 4, ... The result equals `H_n * x` scaled by `2^(log2(n)/2)`.
pub fn fwht_unnormalized<T: Scalar>(x: &mut [T]) -> Result<()> {
    let n = x.len();
    if !is_power_of_two(n) {
        return Err(Error::InvalidArgument(format!(
            "transform length {} is not a power of two",
            n
        )));
    }
    let mut h = 1;
    while h < n {
        for block in x.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let s = *a + *b;
                let d = *a - *b;
                *a = s;
                *b = d;
            }
        }
        h *= 2;
    }
    Ok(())
}

/// In-place orthonormal transform: each butterfly stage divides by sqrt(2),
/// so the whole transform is orthogonal and involutive.
pub fn fwht_normalized<T: Scalar>(x: &mut [T]) -> Result<()> {
    let n = x.len();
    if !is_power_of_two(n) {
        return Err(Error::InvalidArgument(format!(
            "transform length {} is not a power of two",
            n
        )));
    }
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let mut h = 1;
    while h < n {
        for block in x.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let s = (*a + *b) * inv_sqrt2;
                let d = (*a - *b) * inv_sqrt2;
                *a = s;
                *b = d;
            }
        }
        h *= 2;
    }
    Ok(())
}
