//! Residual quantizers: round-to-nearest, curvature-compensated
//! column-sequential quantization, and vector quantization.
//!
//! All scalar quantizers share one group-parameter and encode path, so
//! any two of them that see identical inputs and identical group scales
//! produce bit-identical codes. Group scales snap to binary16 at
//! quantization time, which makes quantize-dequantize-quantize exactly
//! idempotent: an integer level times an f16 scale is exact in f64, and
//! dividing it back by the scale recovers the level.

mod gptq;
mod rtn;
mod vq;

pub use gptq::{cholesky_lower, gptq_factor, gptq_quantize};
pub use rtn::rtn_quantize;
pub use vq::{vq_quantize, Codebook, VqQuantResult};

use crate::error::Error;
use crate::matrix::Kahan;
use crate::minifloat::f16_snap;
use crate::{Mat, Result};
use serde::{Deserialize, Serialize};

/// Which residual quantizer a layer was produced with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerKind {
    /// Independent round-to-nearest per group.
    Rtn,
    /// Column-sequential quantization with curvature-weighted error
    /// feedback into not-yet-quantized columns.
    Gptq,
    /// Codebook quantization over short column blocks.
    Vq,
}

/// Uniform grid parameters for the scalar quantizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantGrid {
    /// Code width in bits.
    pub bits: u8,
    /// Columns per scale group within a row.
    pub group_size: usize,
    /// Symmetric (signed levels around zero) or asymmetric (min/max
    /// affine) grid.
    pub symmetric: bool,
}

impl QuantGrid {
    /// Symmetric grid with the given width and group size.
    pub fn symmetric(bits: u8, group_size: usize) -> Self {
        QuantGrid {
            bits,
            group_size,
            symmetric: true,
        }
    }

    /// Checks the width and group size are supported.
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.bits, 2 | 3 | 4 | 8) {
            return Err(Error::InvalidArgument(format!(
                "unsupported code width {} (use 2, 3, 4, or 8 bits)",
                self.bits
            )));
        }
        if self.group_size == 0 {
            return Err(Error::InvalidArgument("group size must be positive".into()));
        }
        Ok(())
    }

    /// Largest signed level of the symmetric grid.
    pub fn qmax(&self) -> i32 {
        (1i32 << (self.bits - 1)) - 1
    }

    /// Largest stored code (biased symmetric level or asymmetric code).
    pub fn code_max(&self) -> u32 {
        if self.symmetric {
            2 * self.qmax() as u32
        } else {
            (1u32 << self.bits) - 1
        }
    }

    /// Number of groups a row of `cols` splits into (last may be short).
    pub fn groups_per_row(&self, cols: usize) -> usize {
        cols.div_ceil(self.group_size)
    }
}

/// Quantized form of one matrix under a scalar grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarQuantResult {
    /// Stored codes, row-major: biased level `q + qmax` for symmetric
    /// grids, the affine code for asymmetric ones.
    pub codes: Vec<u8>,
    /// Per-(row, group) scales, already binary16 values.
    pub scales: Vec<f64>,
    /// Per-(row, group) zero points for asymmetric grids.
    pub zeros: Option<Vec<u8>>,
    /// Dequantized matrix.
    pub deq: Mat,
}

/// Scale and zero point of one group.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GroupParams {
    pub scale: f64,
    /// Bias added to the signed level (symmetric: `qmax`; asymmetric:
    /// the zero point).
    pub zero: i32,
}

/// Smallest positive binary16 value; floors snapped scales so division
/// by a scale never overflows.
const MIN_POSITIVE_F16: f64 = 5.960464477539063e-8;

/// Computes the group's scale and zero point from its current values.
pub(crate) fn group_params(vals: &[f64], grid: &QuantGrid) -> GroupParams {
    if grid.symmetric {
        let maxabs = vals.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        let scale = if maxabs == 0.0 {
            1.0
        } else {
            f16_snap(maxabs / grid.qmax() as f64).max(MIN_POSITIVE_F16)
        };
        GroupParams {
            scale,
            zero: grid.qmax(),
        }
    } else {
        // The range is widened to include zero, so zero is exactly
        // representable and the zero point always fits the code range.
        let lo = vals.iter().cloned().fold(0.0f64, f64::min);
        let hi = vals.iter().cloned().fold(0.0f64, f64::max);
        let levels = grid.code_max() as f64;
        if hi == lo {
            return GroupParams {
                scale: 1.0,
                zero: 0,
            };
        }
        let scale = f16_snap((hi - lo) / levels).max(MIN_POSITIVE_F16);
        let zero = (-lo / scale).round_ties_even().clamp(0.0, levels) as i32;
        GroupParams { scale, zero }
    }
}

/// Encodes one value against its group parameters; returns the stored
/// code and the dequantized value.
pub(crate) fn encode_one(w: f64, p: &GroupParams, grid: &QuantGrid) -> (u8, f64) {
    let level = (w / p.scale).round_ties_even();
    let (lo, hi) = if grid.symmetric {
        (-grid.qmax(), grid.qmax())
    } else {
        (-p.zero, grid.code_max() as i32 - p.zero)
    };
    let q = (level.clamp(lo as f64, hi as f64)) as i32;
    let code = (q + p.zero) as u8;
    (code, q as f64 * p.scale)
}

/// Quantization proxy loss `tr(E H Eᵀ)` of an error matrix against a
/// second-moment matrix, accumulated with compensated summation. Equals
/// the mean squared output error of the layer over the calibration set.
pub fn proxy_loss(error: &Mat, hessian: &Mat) -> Result<f64> {
    if hessian.rows() != error.cols() || hessian.cols() != error.cols() {
        return Err(Error::Dimension(format!(
            "{}x{} second-moment matrix against error with {} columns",
            hessian.rows(),
            hessian.cols(),
            error.cols()
        )));
    }
    let mut acc = Kahan::default();
    for i in 0..error.rows() {
        let row = error.row(i);
        let hv = hessian.matvec(row)?;
        for (&e, &h) in row.iter().zip(hv.iter()) {
            acc.add(e * h);
        }
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(QuantGrid::symmetric(2, 16).validate().is_ok());
        assert!(QuantGrid::symmetric(5, 16).validate().is_err());
        assert!(QuantGrid::symmetric(4, 0).validate().is_err());
    }

    #[test]
    fn qmax_by_width() {
        assert_eq!(QuantGrid::symmetric(2, 1).qmax(), 1);
        assert_eq!(QuantGrid::symmetric(3, 1).qmax(), 3);
        assert_eq!(QuantGrid::symmetric(4, 1).qmax(), 7);
        assert_eq!(QuantGrid::symmetric(8, 1).qmax(), 127);
    }

    #[test]
    fn zero_group_uses_unit_scale_and_zero_levels() {
        let grid = QuantGrid::symmetric(4, 8);
        let p = group_params(&[0.0; 8], &grid);
        assert_eq!(p.scale, 1.0);
        let (code, deq) = encode_one(0.0, &p, &grid);
        assert_eq!(code, grid.qmax() as u8); // biased zero level
        assert_eq!(deq, 0.0);
    }

    #[test]
    fn proxy_loss_with_identity_is_squared_norm() {
        let e = Mat::from_vec(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let h = Mat::identity(2);
        let l = proxy_loss(&e, &h).unwrap();
        let f = e.frobenius_norm();
        assert!((l - f * f).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_params_cover_the_range() {
        let grid = QuantGrid {
            bits: 4,
            group_size: 16,
            symmetric: false,
        };
        let vals: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let p = group_params(&vals, &grid);
        assert_eq!(p.scale, 1.0);
        assert_eq!(p.zero, 0);
        for &v in &vals {
            let (_, deq) = encode_one(v, &p, &grid);
            assert_eq!(deq, v);
        }
    }
}
