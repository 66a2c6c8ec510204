//! Round-to-nearest quantization: each group is scaled and rounded
//! independently, with no cross-column error feedback.

use super::{encode_one, group_params, QuantGrid, ScalarQuantResult};
use crate::{Mat, Result};

/// Quantizes every group of `w` independently to the grid.
pub fn rtn_quantize(w: &Mat, grid: &QuantGrid) -> Result<ScalarQuantResult> {
    grid.validate()?;
    let (m, n) = (w.rows(), w.cols());
    let groups = grid.groups_per_row(n);
    let mut codes = vec![0u8; m * n];
    let mut scales = Vec::with_capacity(m * groups);
    let mut zeros = if grid.symmetric {
        None
    } else {
        Some(Vec::with_capacity(m * groups))
    };
    let mut deq = Mat::zeros(m, n);
    for i in 0..m {
        let row = w.row(i);
        for g in 0..groups {
            let lo = g * grid.group_size;
            let hi = (lo + grid.group_size).min(n);
            let p = group_params(&row[lo..hi], grid);
            scales.push(p.scale);
            if let Some(z) = zeros.as_mut() {
                z.push(p.zero as u8);
            }
            for j in lo..hi {
                let (code, dq) = encode_one(row[j], &p, grid);
                codes[i * n + j] = code;
                *deq.at_mut(i, j) = dq;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minifloat::f16_snap;

    #[test]
    fn two_bit_ternary_row_is_exact() {
        let w = Mat::from_vec(1, 3, vec![-3.0, 0.0, 3.0]).unwrap();
        let grid = QuantGrid::symmetric(2, 4);
        let r = rtn_quantize(&w, &grid).unwrap();
        assert_eq!(r.deq.data(), &[-3.0, 0.0, 3.0]);
        // Signed levels -1, 0, +1 stored with bias 1.
        assert_eq!(r.codes, vec![0, 1, 2]);
        assert_eq!(r.scales, vec![3.0]);
    }

    #[test]
    fn requantizing_the_dequantized_matrix_is_bitwise_stable() {
        let w = Mat::from_fn(6, 20, |i, j| ((i * 37 + j * 11) % 17) as f64 * 0.37 - 2.9);
        for bits in [2u8, 3, 4, 8] {
            let grid = QuantGrid::symmetric(bits, 7); // ragged tail group
            let once = rtn_quantize(&w, &grid).unwrap();
            let twice = rtn_quantize(&once.deq, &grid).unwrap();
            assert_eq!(once.codes, twice.codes, "bits {bits}");
            assert_eq!(once.scales, twice.scales, "bits {bits}");
            assert_eq!(once.deq, twice.deq, "bits {bits}");
        }
    }

    #[test]
    fn scales_are_binary16_values() {
        let w = Mat::from_fn(3, 16, |i, j| ((i + j * 13) % 23) as f64 * 0.173 - 1.5);
        let r = rtn_quantize(&w, &QuantGrid::symmetric(4, 8)).unwrap();
        for &s in &r.scales {
            assert_eq!(s, f16_snap(s));
        }
    }

    #[test]
    fn zero_rows_produce_zero_output() {
        let w = Mat::zeros(2, 8);
        let r = rtn_quantize(&w, &QuantGrid::symmetric(2, 4)).unwrap();
        assert!(r.deq.data().iter().all(|&x| x == 0.0));
        assert!(r.scales.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn asymmetric_grid_handles_skewed_range() {
        let w = Mat::from_vec(1, 4, vec![-1.0, -0.5, 0.0, 0.5]).unwrap();
        let grid = QuantGrid {
            bits: 2,
            group_size: 4,
            symmetric: false,
        };
        let r = rtn_quantize(&w, &grid).unwrap();
        // Range [-1, 0.5] over 3 levels: every value sits on the grid.
        for (a, b) in r.deq.data().iter().zip(w.data().iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(r.zeros, Some(vec![2]));
    }

    #[test]
    fn asymmetric_grid_keeps_zero_representable() {
        // All-positive group: the range widens to include zero.
        let w = Mat::from_vec(1, 4, vec![10.0, 10.5, 11.0, 11.5]).unwrap();
        let grid = QuantGrid {
            bits: 4,
            group_size: 4,
            symmetric: false,
        };
        let r = rtn_quantize(&w, &grid).unwrap();
        assert_eq!(r.zeros, Some(vec![0]));
        let scale = r.scales[0];
        for (a, b) in r.deq.data().iter().zip(w.data().iter()) {
            assert!((a - b).abs() <= 0.5 * scale + 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn error_bounded_by_half_step() {
        let w = Mat::from_fn(4, 32, |i, j| ((i * 5 + j * 3) % 29) as f64 * 0.21 - 3.0);
        let grid = QuantGrid::symmetric(4, 8);
        let r = rtn_quantize(&w, &grid).unwrap();
        for i in 0..4 {
            for g in 0..4 {
                let scale = r.scales[i * 4 + g];
                for j in (g * 8)..(g * 8 + 8) {
                    let err = (w.at(i, j) - r.deq.at(i, j)).abs();
                    assert!(err <= 0.5 * scale + 1e-12, "err {err} scale {scale}");
                }
            }
        }
    }
}
