//! Ablation sweep driver: one pipeline run per axis value with shared
//! inputs and seeds, bounded worker parallelism, order-stable reporting.

use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use lopro_core::calib::CalibrationStats;
use lopro_core::pack::{average_bits, measured_bits};
use lopro_core::pipeline::{quantize_layer_pipeline, PipelineConfig, StageTimes};
use lopro_core::Mat;
use serde::Serialize;

use crate::config::parse_quantizer;

/// The swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rank,
    Iterations,
    BlockSize,
    Quantizer,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Rank => "rank",
            Axis::Iterations => "iterations",
            Axis::BlockSize => "block_size",
            Axis::Quantizer => "quantizer",
        }
    }
}

impl FromStr for Axis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rank" => Ok(Axis::Rank),
            "iterations" => Ok(Axis::Iterations),
            "block_size" | "block-size" => Ok(Axis::BlockSize),
            "quantizer" => Ok(Axis::Quantizer),
            _ => bail!("--axis must be rank, iterations, block_size, or quantizer, got {s:?}"),
        }
    }
}

/// Per-stage wall time in seconds.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StageSeconds {
    pub scale: f64,
    pub decompose: f64,
    pub permute: f64,
    pub rotate: f64,
    pub quantize: f64,
    pub total: f64,
}

impl From<StageTimes> for StageSeconds {
    fn from(t: StageTimes) -> Self {
        StageSeconds {
            scale: t.scale.as_secs_f64(),
            decompose: t.decompose.as_secs_f64(),
            permute: t.permute.as_secs_f64(),
            rotate: t.rotate.as_secs_f64(),
            quantize: t.quantize.as_secs_f64(),
            total: t.total.as_secs_f64(),
        }
    }
}

/// One sweep result row; also the JSON-lines record schema.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub rows: usize,
    pub cols: usize,
    pub loss_lowrank_only: Option<f64>,
    pub loss_rotated_frame: Option<f64>,
    pub bits_formula: Option<f64>,
    pub bits_measured: Option<f64>,
    pub seconds: Option<StageSeconds>,
    pub error: Option<String>,
}

/// Applies one axis value to a copy of the base configuration.
pub fn apply_axis(base: &PipelineConfig, axis: Axis, value: &str) -> Result<PipelineConfig> {
    let mut cfg = base.clone();
    match axis {
        Axis::Rank => {
            cfg.rank = value
                .parse()
                .with_context(|| format!("rank value {value:?}"))?
        }
        Axis::Iterations => {
            cfg.iterations = value
                .parse()
                .with_context(|| format!("iterations value {value:?}"))?
        }
        Axis::BlockSize => {
            let b: usize = value
                .parse()
                .with_context(|| format!("block_size value {value:?}"))?;
            cfg.block_identity = b;
            cfg.block_hadamard = b;
        }
        Axis::Quantizer => cfg.quantizer = parse_quantizer(value)?,
    }
    Ok(cfg)
}

/// Worker budget from `LOPRO_THREADS` (default 1). An unparsable or zero
/// value is an error rather than a silent fallback.
pub fn worker_count() -> Result<usize> {
    match std::env::var("LOPRO_THREADS") {
        Ok(raw) => {
            let n: usize = raw
                .parse()
                .with_context(|| format!("LOPRO_THREADS={raw:?} is not a number"))?;
            if n == 0 {
                bail!("LOPRO_THREADS must be at least 1");
            }
            Ok(n)
        }
        Err(_) => Ok(1),
    }
}

fn run_one(
    base: &PipelineConfig,
    axis: Axis,
    value: &str,
    w: &Mat,
    stats: &CalibrationStats,
) -> SweepRow {
    let mut row = SweepRow {
        axis: axis.name().to_string(),
        value: value.to_string(),
        rows: w.rows(),
        cols: w.cols(),
        loss_lowrank_only: None,
        loss_rotated_frame: None,
        bits_formula: None,
        bits_measured: None,
        seconds: None,
        error: None,
    };
    let attempt = || -> Result<(f64, f64, f64, f64, StageSeconds)> {
        let cfg = apply_axis(base, axis, value)?;
        let name = format!("sweep-{}-{}", axis.name(), value);
        let (layer, times) = quantize_layer_pipeline(&name, w, stats, &cfg)?;
        let formula = average_bits(&layer).total();
        let measured = measured_bits(&layer)?;
        Ok((
            layer.report.loss_lowrank_only,
            layer.report.loss_rotated_frame,
            formula,
            measured,
            times.into(),
        ))
    };
    match attempt() {
        Ok((lr, rot, formula, measured, seconds)) => {
            row.loss_lowrank_only = Some(lr);
            row.loss_rotated_frame = Some(rot);
            row.bits_formula = Some(formula);
            row.bits_measured = Some(measured);
            row.seconds = Some(seconds);
        }
        Err(e) => row.error = Some(format!("{e:#}")),
    }
    row
}

/// Runs the sweep over `values` with at most `threads` concurrent runs.
/// Every value gets the same inputs and seed; results come back indexed
/// by input position regardless of completion order. A failed run
/// becomes a row with its `error` set; the sweep continues.
pub fn run_sweep(
    base: &PipelineConfig,
    axis: Axis,
    values: &[String],
    w: &Mat,
    stats: &CalibrationStats,
    threads: usize,
) -> Vec<SweepRow> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; values.len()]);
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(values.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= values.len() {
                    break;
                }
                let row = run_one(base, axis, &values[i], w, stats);
                results.lock().unwrap()[i] = Some(row);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every sweep slot filled"))
        .collect()
}

/// Renders the plain-text report table.
pub fn render_table(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>14} {:>14} {:>10} {:>10} {:>11} {:>9}  {}\n",
        "value",
        "loss(low-rank)",
        "loss(quant)",
        "bits(form)",
        "bits(meas)",
        "decompose_s",
        "total_s",
        "status"
    ));
    for row in rows {
        match (&row.error, row.seconds) {
            (None, Some(s)) => out.push_str(&format!(
                "{:<12} {:>14.6} {:>14.6} {:>10.4} {:>10.4} {:>11.3} {:>9.3}  ok\n",
                row.value,
                row.loss_lowrank_only.unwrap_or(f64::NAN),
                row.loss_rotated_frame.unwrap_or(f64::NAN),
                row.bits_formula.unwrap_or(f64::NAN),
                row.bits_measured.unwrap_or(f64::NAN),
                s.decompose,
                s.total,
            )),
            _ => out.push_str(&format!(
                "{:<12} {:>14} {:>14} {:>10} {:>10} {:>11} {:>9}  FAILED: {}\n",
                row.value,
                "-",
                "-",
                "-",
                "-",
                "-",
                "-",
                row.error.as_deref().unwrap_or("unknown"),
            )),
        }
    }
    out
}
