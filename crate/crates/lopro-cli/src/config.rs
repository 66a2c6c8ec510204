//! Configuration resolution: built-in defaults, then a JSON config file,
//! then command-line flags, most specific last.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use lopro_core::lowrank::FactorPrecision;
use lopro_core::pipeline::PipelineConfig;
use lopro_core::quant::QuantizerKind;
use serde::Deserialize;

/// JSON config file schema. Field names mirror the long flag names;
/// unknown keys are rejected so typos never fall back to defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub bits: Option<u8>,
    pub group_size: Option<usize>,
    pub symmetric: Option<bool>,
    pub rank: Option<usize>,
    pub iterations: Option<usize>,
    pub block_identity: Option<usize>,
    pub block_hadamard: Option<usize>,
    pub use_permutation: Option<bool>,
    pub quantizer: Option<String>,
    pub vq_dim: Option<usize>,
    pub precision: Option<String>,
    pub damp: Option<f64>,
    pub exponent: Option<f64>,
    pub eps: Option<f64>,
    pub seed: Option<u64>,
    pub sidecar_bits: Option<u32>,
    pub weights: Option<String>,
    pub calib: Option<String>,
    pub out: Option<PathBuf>,
}

/// Pipeline flags shared by `quantize` and `sweep`. Every field is
/// optional here; resolution fills defaults last.
#[derive(Debug, Args)]
pub struct PipelineFlags {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Weight matrix: an LPRT file or a `synth:rows=..,cols=..` spec.
    #[arg(long)]
    pub weights: Option<String>,
    /// Calibration activations: an LPRT file or a
    /// `synth:channels=..,tokens=..` spec.
    #[arg(long)]
    pub calib: Option<String>,
    /// Residual code width in bits (2, 3, 4, or 8).
    #[arg(long)]
    pub bits: Option<u8>,
    /// Columns per scale group.
    #[arg(long = "group-size")]
    pub group_size: Option<usize>,
    /// Symmetric (true) or asymmetric (false) residual grid.
    #[arg(long)]
    pub symmetric: Option<bool>,
    /// Number of low-rank factors.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Power iterations per factor.
    #[arg(long = "it")]
    pub iterations: Option<usize>,
    /// Identity prefix width of the rotation plan.
    #[arg(long = "b-i")]
    pub block_identity: Option<usize>,
    /// Rotated block width.
    #[arg(long = "b-h")]
    pub block_hadamard: Option<usize>,
    /// Order channels by importance before blocking.
    #[arg(long = "use-permutation")]
    pub use_permutation: Option<bool>,
    /// Residual quantizer: rtn, gptq, or vq.
    #[arg(long)]
    pub quantizer: Option<String>,
    /// Codebook block width (vq only): 1, 2, or 4.
    #[arg(long = "vq-dim")]
    pub vq_dim: Option<usize>,
    /// Factor storage precision: e4m3 or full.
    #[arg(long)]
    pub precision: Option<String>,
    /// Damping fraction for the feedback factor.
    #[arg(long)]
    pub damp: Option<f64>,
    /// Channel scale exponent.
    #[arg(long)]
    pub exponent: Option<f64>,
    /// Floor for channel activation means.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Seed for sketching and codebook initialization.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Nominal sidecar width for the closed-form bit account.
    #[arg(long = "sidecar-bits")]
    pub accounting_sidecar_bits: Option<u32>,
}

/// Fully resolved invocation: pipeline parameters plus input locations.
#[derive(Debug)]
pub struct Resolved {
    pub pipeline: PipelineConfig,
    pub weights: String,
    pub calib: String,
    pub out: Option<PathBuf>,
}

pub fn parse_quantizer(s: &str) -> Result<QuantizerKind> {
    match s {
        "rtn" => Ok(QuantizerKind::Rtn),
        "gptq" => Ok(QuantizerKind::Gptq),
        "vq" => Ok(QuantizerKind::Vq),
        _ => bail!("--quantizer must be rtn, gptq, or vq, got {s:?}"),
    }
}

pub fn parse_precision(s: &str) -> Result<FactorPrecision> {
    match s {
        "e4m3" => Ok(FactorPrecision::E4m3),
        "full" => Ok(FactorPrecision::Full),
        _ => bail!("--precision must be e4m3 or full, got {s:?}"),
    }
}

impl PipelineFlags {
    /// Merges defaults, the optional config file, and the flags into one
    /// configuration. `out_flag` is the subcommand's own `--out`.
    pub fn resolve(&self, out_flag: Option<PathBuf>) -> Result<Resolved> {
        let file: FileConfig = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config file {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config file {}", path.display()))?
            }
            None => FileConfig::default(),
        };

        let mut cfg = PipelineConfig::default();
        macro_rules! pick {
            ($field:ident, $flag:expr, $file:expr) => {
                if let Some(v) = $flag.or($file) {
                    cfg.$field = v;
                }
            };
        }
        pick!(bits, self.bits, file.bits);
        pick!(group_size, self.group_size, file.group_size);
        pick!(symmetric, self.symmetric, file.symmetric);
        pick!(rank, self.rank, file.rank);
        pick!(iterations, self.iterations, file.iterations);
        pick!(block_identity, self.block_identity, file.block_identity);
        pick!(block_hadamard, self.block_hadamard, file.block_hadamard);
        pick!(use_permutation, self.use_permutation, file.use_permutation);
        pick!(vq_dim, self.vq_dim, file.vq_dim);
        pick!(damp, self.damp, file.damp);
        pick!(exponent, self.exponent, file.exponent);
        pick!(eps, self.eps, file.eps);
        pick!(seed, self.seed, file.seed);
        pick!(
            accounting_sidecar_bits,
            self.accounting_sidecar_bits,
            file.sidecar_bits
        );
        if let Some(q) = self.quantizer.as_deref().or(file.quantizer.as_deref()) {
            cfg.quantizer = parse_quantizer(q)?;
        }
        if let Some(p) = self.precision.as_deref().or(file.precision.as_deref()) {
            cfg.precision = parse_precision(p)?;
        }

        let weights = self.weights.clone().or(file.weights).context(
            "missing weight input: pass --weights or set \"weights\" in the config file",
        )?;
        let calib = self.calib.clone().or(file.calib).context(
            "missing calibration input: pass --calib or set \"calib\" in the config file",
        )?;
        Ok(Resolved {
            pipeline: cfg,
            weights,
            calib,
            out: out_flag.or(file.out),
        })
    }
}
