//! Quantized layer artifact and its storage cost accounting.
//!
//! A [`QuantizedLayer`] bundles everything needed to reproduce a layer's
//! output: the packed residual codes, group scales or codebook, low-rank
//! factors, channel scale, and the rotation plan. The accounting reports
//! both the closed-form average bits per weight (with sidecar tensors
//! charged at a nominal width) and the bits actually occupied by the
//! serialized payload sections.

pub mod container;
pub mod tensor_io;

use crate::error::Error;
use crate::lowrank::{FactorPrecision, LowRankFactors};
use crate::minifloat::{f16_snap, f32_snap};
use crate::quant::{Codebook, QuantGrid, QuantizerKind};
use crate::rotation::RotationPlan;
use crate::Result;
use serde::{Deserialize, Serialize};

/// Bit width charged per factor entry stored in f64.
pub const FULL_FACTOR_BITS: u32 = 64;
/// Bit width charged per factor entry stored as 1/4/3 minifloat.
pub const MINIFLOAT_FACTOR_BITS: u32 = 8;
/// Default nominal width for sidecar values in the closed-form account.
pub const DEFAULT_SIDECAR_BITS: u32 = 16;

/// Deterministic numbers recorded at quantization time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantReport {
    /// Proxy loss of the low-rank approximation alone (residual left
    /// unquantized), in the original frame.
    pub loss_lowrank_only: f64,
    /// Proxy loss of the full reconstruction, measured in the rotated
    /// frame against the rotated second-moment matrix.
    pub loss_rotated_frame: f64,
}

/// Complete quantized representation of one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    /// Layer name carried through from the input tensor.
    pub name: String,
    /// Output dimension (rows of the weight matrix).
    pub rows: usize,
    /// Input dimension (columns of the weight matrix).
    pub cols: usize,
    /// Residual quantizer used.
    pub quantizer: QuantizerKind,
    /// Scalar grid parameters (for codebook layers, `bits` is the per
    /// weight budget and the group size is unused).
    pub grid: QuantGrid,
    /// Codebook block width; zero for scalar quantizers.
    pub vq_dim: usize,
    /// Scalar residual codes, row-major (empty for codebook layers).
    pub codes: Vec<u8>,
    /// Per-(row, group) scales, binary16 values (empty for codebook layers).
    pub scales: Vec<f64>,
    /// Per-(row, group) zero points for asymmetric grids.
    pub zeros: Option<Vec<u8>>,
    /// Codeword indices, row-major (empty for scalar layers).
    pub vq_indices: Vec<u16>,
    /// Trained codebook for codebook layers.
    pub codebook: Option<Codebook>,
    /// Low-rank factors of the channel-scaled weights.
    pub factors: LowRankFactors,
    /// Per-channel activation scale, binary32 values.
    pub act_scale: Vec<f64>,
    /// Permutation and block rotation applied to the residual.
    pub plan: RotationPlan,
    /// Seed all sketching and initialization derives from.
    pub seed: u64,
    /// Power iterations per extracted factor.
    pub iterations: usize,
    /// Damping fraction for the feedback factor.
    pub damp: f64,
    /// Channel scale exponent.
    pub exponent: f64,
    /// Identifier of the random generator scheme.
    pub generator: String,
    /// Nominal sidecar width used by the closed-form bit account.
    pub accounting_sidecar_bits: u32,
    /// Losses recorded at quantization time.
    pub report: QuantReport,
}

impl QuantizedLayer {
    /// Number of scale groups per row (scalar quantizers).
    pub fn groups_per_row(&self) -> usize {
        self.grid.groups_per_row(self.cols)
    }

    /// Checks internal consistency: shapes, value grids, and the plan
    /// geometry all have to agree before the layer can be serialized or
    /// reconstructed.
    pub fn validate(&self) -> Result<()> {
        let (m, n) = (self.rows, self.cols);
        if m == 0 || n == 0 {
            return Err(Error::Dimension("empty layer".into()));
        }
        self.grid.validate()?;
        if self.plan.n() != n {
            return Err(Error::Dimension(format!(
                "rotation plan over {} columns in a layer with {}",
                self.plan.n(),
                n
            )));
        }
        if self.act_scale.len() != n {
            return Err(Error::Dimension(format!(
                "{} channel scales for {} columns",
                self.act_scale.len(),
                n
            )));
        }
        for &s in &self.act_scale {
            if !s.is_finite() || s <= 0.0 || f32_snap(s) != s {
                return Err(Error::Format(format!(
                    "channel scale {s} must be a positive binary32 value"
                )));
            }
        }
        self.factors.validate()?;
        if self.factors.rows() != m || self.factors.cols() != n {
            return Err(Error::Dimension(format!(
                "{}x{} factors in a {}x{} layer",
                self.factors.rows(),
                self.factors.cols(),
                m,
                n
            )));
        }
        match self.quantizer {
            QuantizerKind::Rtn | QuantizerKind::Gptq => {
                if self.codes.len() != m * n {
                    return Err(Error::Dimension(format!(
                        "{} codes for {}x{} weights",
                        self.codes.len(),
                        m,
                        n
                    )));
                }
                let want = m * self.groups_per_row();
                if self.scales.len() != want {
                    return Err(Error::Dimension(format!(
                        "{} group scales, expected {}",
                        self.scales.len(),
                        want
                    )));
                }
                for &s in &self.scales {
                    if !s.is_finite() || s <= 0.0 || f16_snap(s) != s {
                        return Err(Error::Format(format!(
                            "group scale {s} must be a positive binary16 value"
                        )));
                    }
                }
                let cap = self.grid.code_max();
                if self.codes.iter().any(|&c| c as u32 > cap) {
                    return Err(Error::Format(format!(
                        "a residual code exceeds the {}-bit ceiling {}",
                        self.grid.bits, cap
                    )));
                }
                if let Some(z) = &self.zeros {
                    if self.grid.symmetric {
                        return Err(Error::Format(
                            "zero points present on a symmetric grid".into(),
                        ));
                    }
                    if z.len() != want {
                        return Err(Error::Dimension(format!(
                            "{} zero points, expected {}",
                            z.len(),
                            want
                        )));
                    }
                } else if !self.grid.symmetric {
                    return Err(Error::Format("asymmetric grid without zero points".into()));
                }
                if !self.vq_indices.is_empty() || self.codebook.is_some() || self.vq_dim != 0 {
                    return Err(Error::Format(
                        "codebook fields set on a scalar-quantized layer".into(),
                    ));
                }
            }
            QuantizerKind::Vq => {
                let cb = self
                    .codebook
                    .as_ref()
                    .ok_or_else(|| Error::Format("codebook layer without a codebook".into()))?;
                if self.vq_dim == 0 || cb.dim != self.vq_dim || n % self.vq_dim != 0 {
                    return Err(Error::Dimension(format!(
                        "codebook width {} does not tile {} columns",
                        self.vq_dim, n
                    )));
                }
                let want = m * (n / self.vq_dim);
                if self.vq_indices.len() != want {
                    return Err(Error::Dimension(format!(
                        "{} codeword indices, expected {}",
                        self.vq_indices.len(),
                        want
                    )));
                }
                let k = cb.len();
                if self.vq_indices.iter().any(|&i| i as usize >= k) {
                    return Err(Error::Format(format!(
                        "a codeword index exceeds the codebook size {k}"
                    )));
                }
                for &x in cb.entries.data() {
                    if f32_snap(x) != x {
                        return Err(Error::Format(format!(
                            "codebook entry {x} is not a binary32 value"
                        )));
                    }
                }
                if !self.codes.is_empty() || !self.scales.is_empty() || self.zeros.is_some() {
                    return Err(Error::Format(
                        "scalar code fields set on a codebook layer".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-term closed-form storage account in bits per weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitsBreakdown {
    /// Residual codes.
    pub code_bits: f64,
    /// Group scales, charged at the nominal sidecar width.
    pub group_scale_bits: f64,
    /// Zero points of asymmetric grids.
    pub zero_point_bits: f64,
    /// Codebook entries, charged at the nominal sidecar width.
    pub codebook_bits: f64,
    /// Left factor entries.
    pub left_factor_bits: f64,
    /// Right factor entries.
    pub right_factor_bits: f64,
    /// Per-channel sidecars (activation scale and permutation).
    pub channel_sidecar_bits: f64,
    /// Factor magnitudes.
    pub magnitude_bits: f64,
}

impl BitsBreakdown {
    /// Sum of all terms.
    pub fn total(&self) -> f64 {
        self.code_bits
            + self.group_scale_bits
            + self.zero_point_bits
            + self.codebook_bits
            + self.left_factor_bits
            + self.right_factor_bits
            + self.channel_sidecar_bits
            + self.magnitude_bits
    }
}

/// Closed-form average bits per weight: codes plus every sidecar tensor
/// amortized over the `rows x cols` weights, with scales, codebook
/// entries, channel sidecars, and magnitudes charged at the layer's
/// nominal sidecar width and factor entries at their storage width.
pub fn average_bits(layer: &QuantizedLayer) -> BitsBreakdown {
    let m = layer.rows as f64;
    let n = layer.cols as f64;
    let r = layer.factors.rank() as f64;
    let d_r = match layer.factors.precision {
        FactorPrecision::Full => FULL_FACTOR_BITS,
        FactorPrecision::E4m3 => MINIFLOAT_FACTOR_BITS,
    } as f64;
    let d_o = layer.accounting_sidecar_bits as f64;
    let d_q = layer.grid.bits as f64;
    let g = layer.grid.group_size as f64;
    let (code_bits, group_scale_bits, zero_point_bits, codebook_bits) = match layer.quantizer {
        QuantizerKind::Rtn | QuantizerKind::Gptq => {
            let zeros = if layer.grid.symmetric { 0.0 } else { d_q / g };
            (d_q, d_o / g, zeros, 0.0)
        }
        QuantizerKind::Vq => {
            let k = layer.codebook.as_ref().map(|c| c.len()).unwrap_or(0) as f64;
            (d_q, 0.0, 0.0, k * layer.vq_dim as f64 * d_o / (m * n))
        }
    };
    BitsBreakdown {
        code_bits,
        group_scale_bits,
        zero_point_bits,
        codebook_bits,
        left_factor_bits: r * d_r / n,
        right_factor_bits: r * d_r / m,
        channel_sidecar_bits: 2.0 * d_o / n,
        magnitude_bits: r * d_o / (m * n),
    }
}

/// Bits per weight actually occupied by the serialized payload sections
/// (raw section bytes; header, metadata, and alignment padding excluded).
pub fn measured_bits(layer: &QuantizedLayer) -> Result<f64> {
    let sections = container::payload_section_sizes(layer)?;
    let bytes: u64 = sections.iter().map(|s| s.bytes).sum();
    Ok(8.0 * bytes as f64 / (layer.rows as f64 * layer.cols as f64))
}
