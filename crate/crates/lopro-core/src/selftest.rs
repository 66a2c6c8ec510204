//! Built-in verification suite: fast, deterministic cross-checks of the
//! numerical kernels against independent reference implementations.

use crate::calib::{synthesize_calibration, synthesize_weights, CalibrationStats};
use crate::fwht::fwht_normalized;
use crate::lowrank::{r1svd_decompose, FactorPrecision};
use crate::minifloat::{e4m3_from_bits, e4m3_to_bits};
use crate::oracle::{dense_hadamard, symmetric_eigenvalues};
use crate::pack::container::{pack_layer, unpack_layer};
use crate::pipeline::{quantize_layer_pipeline, PipelineConfig};
use crate::quant::{gptq_factor, gptq_quantize, rtn_quantize, QuantGrid};
use crate::svd::exact_svd_small;
use crate::{Mat, Result};

/// Outcome of one self-test check.
#[derive(Debug, Clone)]
pub struct SelftestResult {
    /// Check name.
    pub name: &'static str,
    /// Whether the check passed.
    pub passed: bool,
    /// Measured value or failure description.
    pub detail: String,
}

fn check(name: &'static str, run: impl FnOnce() -> Result<String>) -> SelftestResult {
    match run() {
        Ok(detail) => SelftestResult {
            name,
            passed: true,
            detail,
        },
        Err(e) => SelftestResult {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn expect(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(crate::Error::Numerical(msg()))
    }
}

/// Runs every self-test check and returns the results in order.
pub fn run_selftest() -> Vec<SelftestResult> {
    vec![
        check("transform-matches-dense-oracle", || {
            let n = 256;
            let h = dense_hadamard(n)?;
            let mut worst = 0.0f64;
            for probe in 0..4 {
                let x: Vec<f64> = (0..n)
                    .map(|i| ((i * 7 + probe * 13) as f64 * 0.37).sin())
                    .collect();
                let mut fast = x.clone();
                fwht_normalized(&mut fast)?;
                let slow = h.matvec(&x)?;
                for (a, b) in fast.iter().zip(slow.iter()) {
                    worst = worst.max((a - b).abs());
                }
            }
            expect(worst < 1e-12, || format!("max deviation {worst}"))?;
            Ok(format!("max deviation {worst:.2e}"))
        }),
        check("transform-involution", || {
            let mut x: Vec<f64> = (0..1024).map(|i| (i as f64 * 0.11).cos()).collect();
            let orig = x.clone();
            fwht_normalized(&mut x)?;
            fwht_normalized(&mut x)?;
            let worst = x
                .iter()
                .zip(orig.iter())
                .fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
            expect(worst < 1e-12, || format!("round-trip deviation {worst}"))?;
            Ok(format!("round-trip deviation {worst:.2e}"))
        }),
        check("minifloat-bits-round-trip", || {
            for b in 0u16..=255 {
                let b = b as u8;
                if b == 0x7F || b == 0xFF {
                    continue;
                }
                let v = e4m3_from_bits(b);
                expect(e4m3_to_bits(v) == b, || {
                    format!("pattern {b:#04x} decoded to {v} re-encoded differently")
                })?;
            }
            Ok("254 finite patterns stable".into())
        }),
        check("sketched-magnitude-matches-exact-svd", || {
            let (w, _) = synthesize_weights(48, 32, 4, 3.0, 12)?;
            let (_, s_exact, _) = exact_svd_small(&w)?;
            let f = r1svd_decompose(&w, 1, 8, 5, FactorPrecision::Full)?;
            let rel = (f.s[0] - s_exact[0]).abs() / s_exact[0];
            expect(rel < 1e-3, || {
                format!(
                    "leading magnitude off by {rel} (sketched {} exact {})",
                    f.s[0], s_exact[0]
                )
            })?;
            Ok(format!("leading magnitude within {rel:.2e}"))
        }),
        check("rotation-preserves-spectrum", || {
            let (x, _) = synthesize_calibration(32, 128, 4, 3.0, 31)?;
            let stats = CalibrationStats::from_activations(&x)?;
            let plan = crate::rotation::RotationPlan::make_plan(
                32,
                8,
                8,
                crate::perm::PermutationIndex::identity(32),
            )?;
            let before = symmetric_eigenvalues(&stats.hessian)?;
            let after = symmetric_eigenvalues(&plan.rotate_hessian(&stats.hessian)?)?;
            let mut worst = 0.0f64;
            for (a, b) in before.iter().zip(after.iter()) {
                worst = worst.max((a - b).abs() / a.abs().max(1.0));
            }
            expect(worst < 1e-8, || format!("eigenvalue drift {worst}"))?;
            Ok(format!("eigenvalue drift {worst:.2e}"))
        }),
        check("diagonal-curvature-equals-independent-rounding", || {
            let (w, _) = synthesize_weights(24, 24, 3, 3.0, 8)?;
            let diag = Mat::from_fn(
                24,
                24,
                |i, j| if i == j { 1.0 + (i % 5) as f64 } else { 0.0 },
            );
            let grid = QuantGrid::symmetric(3, 8);
            let u = gptq_factor(&diag, 0.01)?;
            let a = gptq_quantize(&w, &grid, &u)?;
            let b = rtn_quantize(&w, &grid)?;
            expect(a.codes == b.codes && a.scales == b.scales, || {
                "feedback under diagonal curvature diverged from independent rounding".into()
            })?;
            Ok("bit-identical codes and scales".into())
        }),
        check("pipeline-output-frame-identity", || {
            let (w, _) = synthesize_weights(32, 32, 4, 3.0, 41)?;
            let (x, _) = synthesize_calibration(32, 96, 4, 3.0, 42)?;
            let stats = CalibrationStats::from_activations(&x)?;
            let cfg = PipelineConfig {
                bits: 4,
                group_size: 16,
                rank: 4,
                iterations: 4,
                block_identity: 8,
                block_hadamard: 8,
                seed: 2,
                ..PipelineConfig::default()
            };
            let (layer, _) = quantize_layer_pipeline("selftest", &w, &stats, &cfg)?;
            let direct = layer.reconstruct_output(&x)?;
            let via = x.matmul_rhs_transposed(&layer.reconstruct_weights()?)?;
            let rel = direct.sub(&via)?.frobenius_norm() / via.frobenius_norm().max(1.0);
            expect(rel < 1e-10, || format!("frame mismatch {rel}"))?;
            Ok(format!("frame mismatch {rel:.2e}"))
        }),
        check("container-round-trip-bitwise", || {
            let (w, _) = synthesize_weights(16, 16, 2, 3.0, 51)?;
            let (x, _) = synthesize_calibration(16, 64, 2, 3.0, 52)?;
            let stats = CalibrationStats::from_activations(&x)?;
            let cfg = PipelineConfig {
                bits: 4,
                group_size: 8,
                rank: 3,
                iterations: 4,
                block_identity: 4,
                block_hadamard: 4,
                seed: 6,
                ..PipelineConfig::default()
            };
            let (layer, _) = quantize_layer_pipeline("selftest", &w, &stats, &cfg)?;
            let bytes = pack_layer(&layer)?;
            let back = unpack_layer(&bytes)?;
            expect(back == layer, || {
                "container round trip changed the layer".into()
            })?;
            let again = pack_layer(&back)?;
            expect(again == bytes, || "repacking changed the bytes".into())?;
            Ok(format!("{} container bytes stable", bytes.len()))
        }),
        check("pipeline-determinism", || {
            let (w, _) = synthesize_weights(24, 24, 3, 3.0, 61)?;
            let (x, _) = synthesize_calibration(24, 64, 3, 3.0, 62)?;
            let stats = CalibrationStats::from_activations(&x)?;
            let cfg = PipelineConfig {
                bits: 2,
                group_size: 8,
                rank: 4,
                iterations: 4,
                block_identity: 8,
                block_hadamard: 8,
                seed: 13,
                ..PipelineConfig::default()
            };
            let (a, _) = quantize_layer_pipeline("selftest", &w, &stats, &cfg)?;
            let (b, _) = quantize_layer_pipeline("selftest", &w, &stats, &cfg)?;
            expect(pack_layer(&a)? == pack_layer(&b)?, || {
                "two identical runs produced different bytes".into()
            })?;
            Ok("byte-identical across runs".into())
        }),
    ]
}
