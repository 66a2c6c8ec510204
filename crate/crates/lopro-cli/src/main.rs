//! `lopro` — weight compression by low-rank sketching plus rotated
//! residual quantization, with bit-exact container IO.

mod config;
mod inputs;
mod sweep;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use lopro_core::pack::container::{pack_layer, payload_section_sizes, read_layer};
use lopro_core::pack::{average_bits, QuantizedLayer};
use lopro_core::pipeline::{quantize_layer_pipeline, StageTimes};
use lopro_core::quant::{proxy_loss, QuantizerKind};
use lopro_core::selftest::run_selftest;

use config::PipelineFlags;

#[derive(Parser)]
#[command(
    name = "lopro",
    version,
    about = "Low-rank sketching plus rotated residual quantization for weight matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize one weight matrix and write an LPRQ container.
    Quantize {
        #[command(flatten)]
        flags: PipelineFlags,
        /// Output LPRQ path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a container's metadata, bit accounting, and section map.
    Inspect {
        /// LPRQ file to describe.
        file: PathBuf,
    },
    /// Evaluate a container against activations, and optionally against
    /// the original weights.
    Eval {
        /// LPRQ file to evaluate.
        #[arg(long)]
        layer: PathBuf,
        /// Input activations: an LPRT file or a `synth:` spec.
        #[arg(long)]
        input: String,
        /// Original weights for fresh-loss comparison: LPRT or `synth:`.
        #[arg(long)]
        weights: Option<String>,
    },
    /// Run the built-in numerical cross-checks.
    Selftest,
    /// Run one pipeline per axis value and report a comparison table.
    Sweep {
        #[command(flatten)]
        flags: PipelineFlags,
        /// Swept parameter: rank, iterations, block_size, or quantizer.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Also write rows as JSON lines to this path.
        #[arg(long)]
        jsonl: Option<PathBuf>,
    },
}

/// Dies quietly when stdout closes early (`lopro inspect … | head`),
/// like any other pipeline filter, instead of panicking on EPIPE.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> Result<()> {
    reset_sigpipe();
    match Cli::parse().command {
        Command::Quantize { flags, out } => cmd_quantize(&flags, out),
        Command::Inspect { file } => cmd_inspect(&file),
        Command::Eval {
            layer,
            input,
            weights,
        } => cmd_eval(&layer, &input, weights.as_deref()),
        Command::Selftest => cmd_selftest(),
        Command::Sweep {
            flags,
            axis,
            values,
            jsonl,
        } => cmd_sweep(&flags, &axis, &values, jsonl),
    }
}

fn stage_line(times: &StageTimes) -> String {
    format!(
        "scale {:.3}, decompose {:.3}, permute {:.3}, rotate {:.3}, quantize {:.3}, total {:.3}",
        times.scale.as_secs_f64(),
        times.decompose.as_secs_f64(),
        times.permute.as_secs_f64(),
        times.rotate.as_secs_f64(),
        times.quantize.as_secs_f64(),
        times.total.as_secs_f64()
    )
}

fn describe_grid(layer: &QuantizedLayer) -> String {
    match layer.quantizer {
        QuantizerKind::Vq => format!(
            "vq {}-bit, codeword width {}",
            layer.grid.bits, layer.vq_dim
        ),
        kind => format!(
            "{} {}-bit, groups of {}, {}",
            match kind {
                QuantizerKind::Rtn => "rtn",
                QuantizerKind::Gptq => "gptq",
                QuantizerKind::Vq => unreachable!(),
            },
            layer.grid.bits,
            layer.grid.group_size,
            if layer.grid.symmetric {
                "symmetric"
            } else {
                "asymmetric"
            }
        ),
    }
}

fn cmd_quantize(flags: &PipelineFlags, out: Option<PathBuf>) -> Result<()> {
    let resolved = flags.resolve(out)?;
    let out = resolved
        .out
        .context("missing output path: pass --out or set \"out\" in the config file")?;
    let (name, w) = inputs::load_weights(&resolved.weights)?;
    let stats = inputs::load_calibration(&resolved.calib)?;
    let (layer, times) = quantize_layer_pipeline(&name, &w, &stats, &resolved.pipeline)?;
    let bytes = pack_layer(&layer)?;
    std::fs::write(&out, &bytes).with_context(|| format!("writing {}", out.display()))?;
    let bits = average_bits(&layer);
    println!(
        "layer '{}': {}x{}, {}, rank {} ({} iterations)",
        layer.name,
        layer.rows,
        layer.cols,
        describe_grid(&layer),
        layer.factors.rank(),
        layer.iterations
    );
    println!(
        "losses: low-rank only {:.6}, quantized (rotated frame) {:.6}",
        layer.report.loss_lowrank_only, layer.report.loss_rotated_frame
    );
    println!(
        "bits/weight: formula {:.4}, measured {:.4}",
        bits.total(),
        lopro_core::pack::measured_bits(&layer)?
    );
    println!("stage seconds: {}", stage_line(&times));
    println!("wrote {} ({} bytes)", out.display(), bytes.len());
    Ok(())
}

fn cmd_inspect(file: &PathBuf) -> Result<()> {
    let layer = read_layer(file).with_context(|| format!("reading {}", file.display()))?;
    let file_len = std::fs::metadata(file)?.len();
    println!("file: {} ({} bytes)", file.display(), file_len);
    println!(
        "layer '{}': {}x{}, {}",
        layer.name,
        layer.rows,
        layer.cols,
        describe_grid(&layer)
    );
    println!(
        "factors: rank {}, {}, {} iterations, seed {}",
        layer.factors.rank(),
        match layer.factors.precision {
            lopro_core::lowrank::FactorPrecision::E4m3 => "e4m3",
            lopro_core::lowrank::FactorPrecision::Full => "full precision",
        },
        layer.iterations,
        layer.seed
    );
    println!(
        "plan: identity prefix {}, rotated blocks of {}, permuted: {}",
        layer.plan.block_identity(),
        layer.plan.block_hadamard(),
        if layer.plan.perm().is_identity() {
            "no"
        } else {
            "yes"
        }
    );
    println!(
        "scale exponent {}, damp {}, generator {}",
        layer.exponent, layer.damp, layer.generator
    );
    println!(
        "losses: low-rank only {:.6}, quantized (rotated frame) {:.6}",
        layer.report.loss_lowrank_only, layer.report.loss_rotated_frame
    );
    let b = average_bits(&layer);
    println!(
        "bits/weight (closed form, sidecars at {} bits):",
        layer.accounting_sidecar_bits
    );
    for (label, v) in [
        ("codes", b.code_bits),
        ("group scales", b.group_scale_bits),
        ("zero points", b.zero_point_bits),
        ("codebook", b.codebook_bits),
        ("left factors", b.left_factor_bits),
        ("right factors", b.right_factor_bits),
        ("channel sidecars", b.channel_sidecar_bits),
        ("factor magnitudes", b.magnitude_bits),
    ] {
        if v != 0.0 {
            println!("  {label:<18} {v:.6}");
        }
    }
    println!("  {:<18} {:.6}", "total", b.total());
    println!(
        "bits/weight measured: {:.6} (some sidecars are stored wider than accounted)",
        lopro_core::pack::measured_bits(&layer)?
    );
    println!("sections:");
    for s in payload_section_sizes(&layer)? {
        println!(
            "  {:<10} offset {:>10}  {:>12} bytes",
            s.name, s.offset, s.bytes
        );
    }
    let transform_cost = if layer.plan.block_hadamard() > 1 {
        (layer.plan.block_hadamard() as f64).log2()
    } else {
        0.0
    };
    let multiplies = 2.0 * layer.factors.rank() as f64 + 1.0 + transform_cost;
    println!("per-output-element multiply estimate: 2*rank + 1 + log2(block) = {multiplies:.1}");
    Ok(())
}

fn cmd_eval(layer_path: &Path, input: &str, weights: Option<&str>) -> Result<()> {
    let layer =
        read_layer(layer_path).with_context(|| format!("reading {}", layer_path.display()))?;
    let x = inputs::load_activations(input)?;
    if x.cols() != layer.cols {
        bail!(
            "--input has {} channels but the layer expects {}",
            x.cols(),
            layer.cols
        );
    }
    println!(
        "layer '{}': {}x{}, {}",
        layer.name,
        layer.rows,
        layer.cols,
        describe_grid(&layer)
    );
    println!(
        "stored losses: low-rank only {:.6}, quantized (rotated frame) {:.6}",
        layer.report.loss_lowrank_only, layer.report.loss_rotated_frame
    );
    let y = layer.reconstruct_output(&x)?;
    println!(
        "input: {} samples x {} channels; reconstructed output {}x{}, norm {:.6}",
        x.rows(),
        x.cols(),
        y.rows(),
        y.cols(),
        y.frobenius_norm()
    );
    if let Some(arg) = weights {
        let (_, w) = inputs::load_weights(arg)?;
        if w.rows() != layer.rows || w.cols() != layer.cols {
            bail!(
                "--weights is {}x{} but the layer is {}x{}",
                w.rows(),
                w.cols(),
                layer.rows,
                layer.cols
            );
        }
        let stats = lopro_core::calib::CalibrationStats::from_activations(&x)?;
        let w_hat = layer.reconstruct_weights()?;
        let err = w_hat.sub(&w)?;
        let fresh = proxy_loss(&err, &stats.hessian)?;
        let reference = x.matmul_rhs_transposed(&w)?;
        let num = y.sub(&reference)?.frobenius_norm();
        let den = reference.frobenius_norm().max(f64::MIN_POSITIVE);
        println!("proxy loss on this input: {fresh:.6}");
        println!(
            "relative output error vs original weights: {:.6e}",
            num / den
        );
    } else {
        println!("(pass --weights to compare against the original matrix)");
    }
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    let results = run_selftest();
    let mut failures = 0;
    for r in &results {
        let status = if r.passed { "ok  " } else { "FAIL" };
        println!("{status} {} — {}", r.name, r.detail);
        if !r.passed {
            failures += 1;
        }
    }
    if failures > 0 {
        bail!("{failures} of {} self-checks failed", results.len());
    }
    println!("all {} self-checks passed", results.len());
    Ok(())
}

fn cmd_sweep(
    flags: &PipelineFlags,
    axis: &str,
    values: &[String],
    jsonl: Option<PathBuf>,
) -> Result<()> {
    if values.is_empty() {
        bail!("--values must list at least one axis value");
    }
    let axis = sweep::Axis::from_str(axis)?;
    let resolved = flags.resolve(None)?;
    let threads = sweep::worker_count()?;
    let (_, w) = inputs::load_weights(&resolved.weights)?;
    let stats = inputs::load_calibration(&resolved.calib)?;
    let rows = sweep::run_sweep(&resolved.pipeline, axis, values, &w, &stats, threads);
    println!(
        "sweep over {} on a {}x{} layer ({} worker{}):",
        axis.name(),
        w.rows(),
        w.cols(),
        threads,
        if threads == 1 { "" } else { "s" }
    );
    print!("{}", sweep::render_table(&rows));
    if let Some(path) = jsonl {
        let mut text = String::new();
        for row in &rows {
            text.push_str(&serde_json::to_string(row)?);
            text.push('\n');
        }
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {} rows to {}", rows.len(), path.display());
    }
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        bail!(
            "{failed} of {} sweep rows failed; see the table above",
            rows.len()
        );
    }
    Ok(())
}
