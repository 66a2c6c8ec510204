//! Acceptance check driven through the sweep harness: the sketched
//! decomposition's wall time must scale roughly quadratically with the
//! layer side, measured end to end through the real binary.

use std::process::Command;
use std::time::Instant;
use tempfile::TempDir;

fn verdict(number: u32, pass: bool, budget_s: f64, elapsed_s: f64, detail: &str) {
    let word = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {number:02} {word} — {detail} ({elapsed_s:.2}s of {budget_s:.0}s budget)");
    assert!(pass, "acceptance {number:02} failed: {detail}");
    assert!(
        elapsed_s < budget_s,
        "acceptance {number:02} overran its budget: {elapsed_s:.2}s of {budget_s:.0}s"
    );
}

/// Runs one single-point sweep at `side` x `side` and returns the
/// decompose-stage seconds reported in the JSONL row.
fn decompose_seconds(side: usize, jsonl: &std::path::Path) -> f64 {
    let status = Command::new(env!("CARGO_BIN_EXE_lopro"))
        .env_remove("LOPRO_THREADS")
        .args([
            "sweep",
            "--axis",
            "rank",
            "--values",
            "16",
            "--weights",
            &format!("synth:rows={side},cols={side},outliers=32,gain=3.0,seed=1"),
            "--calib",
            &format!("synth:channels={side},tokens=256,outliers=32,gain=3.0,seed=2"),
            "--bits",
            "4",
            "--group-size",
            "128",
            "--it",
            "8",
            "--b-i",
            "256",
            "--b-h",
            "256",
            "--quantizer",
            "rtn",
            "--seed",
            "3",
            "--jsonl",
            jsonl.to_str().unwrap(),
        ])
        .stdout(std::process::Stdio::null())
        .status()
        .expect("spawning lopro");
    assert!(status.success(), "sweep at side {side} failed");
    let text = std::fs::read_to_string(jsonl).unwrap();
    let row: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(row["error"].is_null(), "sweep row failed: {row}");
    row["seconds"]["decompose"].as_f64().unwrap()
}

#[test]
fn a12_decomposition_time_scales_quadratically() {
    let start = Instant::now();
    let dir = TempDir::new().unwrap();
    let reps = 3;
    let mut best = [f64::INFINITY; 2];
    for rep in 0..reps {
        for (slot, side) in [(0, 512), (1, 1024)] {
            let jsonl = dir.path().join(format!("{side}-{rep}.jsonl"));
            let s = decompose_seconds(side, &jsonl);
            best[slot] = best[slot].min(s);
        }
    }
    let ratio = best[1] / best[0];
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        12,
        (3.0..=6.0).contains(&ratio),
        120.0,
        elapsed,
        &format!(
            "decompose best-of-{reps}: {:.3}s at 512, {:.3}s at 1024, ratio {ratio:.2} (want 3 to 6)",
            best[0], best[1]
        ),
    );
}
