//! End-to-end quantization pipeline and layer reconstruction.
//!
//! Stages: derive the activation channel scale, peel low-rank factors off
//! the scaled weights, build the importance permutation, rotate the
//! residual and the second-moment matrix into the permuted block frame,
//! and quantize the rotated residual. Each stage's failure is tagged with
//! its name, and wall-clock time per stage is reported alongside the
//! artifact.

use crate::calib::{derive_scale, CalibrationStats};
use crate::error::{Error, StageExt};
use crate::lowrank::{scaled_decompose, FactorPrecision};
use crate::minifloat::f32_snap;
use crate::pack::{QuantReport, QuantizedLayer, DEFAULT_SIDECAR_BITS};
use crate::quant::{
    gptq_factor, gptq_quantize, proxy_loss, rtn_quantize, vq_quantize, QuantGrid, QuantizerKind,
};
use crate::rng::GENERATOR_ID;
use crate::rotation::{build_permutation, RotationPlan};
use crate::{Mat, Result};
use std::time::{Duration, Instant};

/// Full parameter set of the quantization pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Residual code width in bits.
    pub bits: u8,
    /// Columns per scale group.
    pub group_size: usize,
    /// Symmetric or asymmetric residual grid.
    pub symmetric: bool,
    /// Number of low-rank factors.
    pub rank: usize,
    /// Power iterations per factor.
    pub iterations: usize,
    /// Identity prefix width of the rotation plan.
    pub block_identity: usize,
    /// Rotated block width.
    pub block_hadamard: usize,
    /// Order channels by importance before blocking.
    pub use_permutation: bool,
    /// Residual quantizer.
    pub quantizer: QuantizerKind,
    /// Codebook block width (codebook quantizer only).
    pub vq_dim: usize,
    /// Factor storage precision.
    pub precision: FactorPrecision,
    /// Damping fraction for the feedback factor.
    pub damp: f64,
    /// Channel scale exponent.
    pub exponent: f64,
    /// Floor for channel activation means.
    pub eps: f64,
    /// Seed for sketching and codebook initialization.
    pub seed: u64,
    /// Nominal sidecar width for the closed-form bit account.
    pub accounting_sidecar_bits: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            bits: 4,
            group_size: 128,
            symmetric: true,
            rank: 16,
            iterations: 8,
            block_identity: 256,
            block_hadamard: 256,
            use_permutation: true,
            quantizer: QuantizerKind::Gptq,
            vq_dim: 2,
            precision: FactorPrecision::E4m3,
            damp: 0.01,
            exponent: 2.5,
            eps: 1e-8,
            seed: 0,
            accounting_sidecar_bits: DEFAULT_SIDECAR_BITS,
        }
    }
}

impl PipelineConfig {
    /// The scalar grid this configuration quantizes against.
    pub fn grid(&self) -> QuantGrid {
        QuantGrid {
            bits: self.bits,
            group_size: self.group_size,
            symmetric: self.symmetric,
        }
    }
}

/// Wall-clock time spent in each pipeline stage. The named stages cover
/// only the transformation work itself; diagnostic loss evaluations are
/// excluded from them and show up only in `total`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimes {
    /// Channel scale derivation.
    pub scale: Duration,
    /// Low-rank factor extraction.
    pub decompose: Duration,
    /// Importance permutation construction.
    pub permute: Duration,
    /// Residual and second-moment rotation.
    pub rotate: Duration,
    /// Residual quantization.
    pub quantize: Duration,
    /// Whole pipeline.
    pub total: Duration,
}

/// Runs the whole pipeline on one weight matrix.
pub fn quantize_layer_pipeline(
    name: &str,
    w: &Mat,
    stats: &CalibrationStats,
    config: &PipelineConfig,
) -> Result<(QuantizedLayer, StageTimes)> {
    let t_start = Instant::now();
    let (m, n) = (w.rows(), w.cols());
    w.ensure_finite("weight matrix").at_stage("input")?;
    stats.validate().at_stage("input")?;
    if stats.channels() != n {
        return Err(Error::Dimension(format!(
            "calibration covers {} channels but the layer has {} columns",
            stats.channels(),
            n
        )))
        .at_stage("input");
    }
    config.grid().validate().at_stage("input")?;
    let mut times = StageTimes::default();

    // Channel scale, snapped to its binary32 storage grid immediately so
    // decomposition, reconstruction, and the serialized sidecar all see
    // exactly the same values.
    let t = Instant::now();
    let mut local = stats.clone();
    let raw = derive_scale(&mut local, config.exponent, config.eps).at_stage("scale")?;
    let act_scale: Vec<f64> = raw.iter().map(|&s| f32_snap(s)).collect();
    for &s in &act_scale {
        if !s.is_finite() || s <= 0.0 {
            return Err(Error::Numerical(format!(
                "channel scale {s} left the positive binary32 range"
            )))
            .at_stage("scale");
        }
    }
    times.scale = t.elapsed();

    let t = Instant::now();
    let (factors, residual) = scaled_decompose(
        w,
        &act_scale,
        config.rank,
        config.iterations,
        config.seed,
        config.precision,
    )
    .at_stage("decompose")?;
    factors.validate().at_stage("decompose")?;
    times.decompose = t.elapsed();
    // Diagnostic losses are deliberately kept outside the stage timers:
    // evaluating the curvature-weighted loss costs O(m*n^2), which would
    // otherwise dominate and distort the per-stage timings. They still
    // count toward `total`.
    let loss_lowrank_only = proxy_loss(&residual, &stats.hessian).at_stage("decompose")?;

    let t = Instant::now();
    let perm = if config.use_permutation && config.block_identity < n {
        build_permutation(&stats.hessian, &residual).at_stage("permute")?
    } else {
        crate::perm::PermutationIndex::identity(n)
    };
    let plan = RotationPlan::make_plan(n, config.block_identity, config.block_hadamard, perm)
        .at_stage("permute")?;
    times.permute = t.elapsed();

    let t = Instant::now();
    let r_rot = plan.apply_forward(&residual).at_stage("rotate")?;
    let h_rot = plan.rotate_hessian(&stats.hessian).at_stage("rotate")?;
    times.rotate = t.elapsed();

    let t = Instant::now();
    let grid = config.grid();
    let (codes, scales, zeros, vq_indices, codebook, deq) = match config.quantizer {
        QuantizerKind::Rtn => {
            let q = rtn_quantize(&r_rot, &grid).at_stage("quantize")?;
            (q.codes, q.scales, q.zeros, Vec::new(), None, q.deq)
        }
        QuantizerKind::Gptq => {
            let u = gptq_factor(&h_rot, config.damp).at_stage("quantize")?;
            let q = gptq_quantize(&r_rot, &grid, &u).at_stage("quantize")?;
            (q.codes, q.scales, q.zeros, Vec::new(), None, q.deq)
        }
        QuantizerKind::Vq => {
            let q = vq_quantize(
                &r_rot,
                config.bits,
                config.vq_dim,
                &h_rot,
                config.damp,
                config.seed,
            )
            .at_stage("quantize")?;
            (
                Vec::new(),
                Vec::new(),
                None,
                q.indices,
                Some(q.codebook),
                q.deq,
            )
        }
    };
    times.quantize = t.elapsed();
    let loss_rotated_frame =
        proxy_loss(&r_rot.sub(&deq).at_stage("quantize")?, &h_rot).at_stage("quantize")?;

    let layer = QuantizedLayer {
        name: name.to_string(),
        rows: m,
        cols: n,
        quantizer: config.quantizer,
        grid,
        vq_dim: if config.quantizer == QuantizerKind::Vq {
            config.vq_dim
        } else {
            0
        },
        codes,
        scales,
        zeros,
        vq_indices,
        codebook,
        factors,
        act_scale,
        plan,
        seed: config.seed,
        iterations: config.iterations,
        damp: config.damp,
        exponent: config.exponent,
        generator: GENERATOR_ID.to_string(),
        accounting_sidecar_bits: config.accounting_sidecar_bits,
        report: QuantReport {
            loss_lowrank_only,
            loss_rotated_frame,
        },
    };
    layer.validate().at_stage("assemble")?;
    times.total = t_start.elapsed();
    Ok((layer, times))
}

impl QuantizedLayer {
    /// Dequantizes the stored residual codes in the rotated frame.
    pub fn dequantize_residual(&self) -> Result<Mat> {
        let (m, n) = (self.rows, self.cols);
        let mut deq = Mat::zeros(m, n);
        match self.quantizer {
            QuantizerKind::Rtn | QuantizerKind::Gptq => {
                let groups = self.groups_per_row();
                for i in 0..m {
                    for g in 0..groups {
                        let scale = self.scales[i * groups + g];
                        let zero = match &self.zeros {
                            Some(z) => z[i * groups + g] as i32,
                            None => self.grid.qmax(),
                        };
                        let lo = g * self.grid.group_size;
                        let hi = (lo + self.grid.group_size).min(n);
                        for j in lo..hi {
                            let q = self.codes[i * n + j] as i32 - zero;
                            *deq.at_mut(i, j) = q as f64 * scale;
                        }
                    }
                }
            }
            QuantizerKind::Vq => {
                let cb = self
                    .codebook
                    .as_ref()
                    .ok_or_else(|| Error::Format("codebook layer without a codebook".into()))?;
                let dim = self.vq_dim;
                let blocks = n / dim;
                for i in 0..m {
                    for b in 0..blocks {
                        let e = self.vq_indices[i * blocks + b] as usize;
                        deq.row_mut(i)[b * dim..(b + 1) * dim].copy_from_slice(cb.entries.row(e));
                    }
                }
            }
        }
        Ok(deq)
    }

    /// Reassembles the approximate weights: low-rank term plus the
    /// de-rotated dequantized residual.
    pub fn reconstruct_weights(&self) -> Result<Mat> {
        let low = self.factors.low_rank_term(&self.act_scale)?;
        let resid = self.plan.apply_inverse(&self.dequantize_residual()?)?;
        low.add(&resid)
    }

    /// Applies the quantized layer to activations without materializing
    /// the weights: `x` has one sample per row; the result is one output
    /// per row. The low-rank path runs through the factors, the residual
    /// path rotates the activations into the quantization frame.
    pub fn reconstruct_output(&self, x: &Mat) -> Result<Mat> {
        if x.cols() != self.cols {
            return Err(Error::Dimension(format!(
                "{}-channel activations for a layer with {} inputs",
                x.cols(),
                self.cols
            )));
        }
        let inv: Vec<f64> = self.act_scale.iter().map(|&s| 1.0 / s).collect();
        let xs = x.scale_columns(&inv)?;
        let t1 = xs.matmul_rhs_transposed(&self.factors.v)?; // samples x rank
        let t1s = t1.scale_columns(&self.factors.s)?;
        let low = t1s.matmul_rhs_transposed(&self.factors.u)?; // samples x rows
        let z = self.plan.apply_forward(x)?;
        let resid = z.matmul_rhs_transposed(&self.dequantize_residual()?)?;
        low.add(&resid)
    }
}
