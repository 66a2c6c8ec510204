//! Weight and activation inputs: LPRT tensor files, or deterministic
//! `synth:` specs for desk-scale experiments.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use lopro_core::calib::{synthesize_calibration, synthesize_weights, CalibrationStats};
use lopro_core::pack::tensor_io::read_tensor;
use lopro_core::Mat;

const SYNTH_PREFIX: &str = "synth:";

/// Parses `key=value,key=value` into a map, rejecting duplicates and
/// malformed entries.
fn parse_pairs(spec: &str) -> Result<BTreeMap<&str, &str>> {
    let mut map = BTreeMap::new();
    for part in spec.split(',') {
        let (key, value) = part
            .split_once('=')
            .with_context(|| format!("synth spec entry {part:?} is not key=value"))?;
        if map.insert(key.trim(), value.trim()).is_some() {
            bail!("synth spec repeats key {key:?}");
        }
    }
    Ok(map)
}

fn take<T: std::str::FromStr>(
    map: &mut BTreeMap<&str, &str>,
    key: &str,
    default: Option<T>,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match map.remove(key) {
        Some(raw) => raw
            .parse()
            .map_err(|e| anyhow::anyhow!("synth spec key {key}={raw:?}: {e}")),
        None => default.with_context(|| format!("synth spec is missing required key {key:?}")),
    }
}

fn reject_leftovers(map: &BTreeMap<&str, &str>, allowed: &str) -> Result<()> {
    if let Some(key) = map.keys().next() {
        bail!("synth spec has unknown key {key:?}; allowed keys: {allowed}");
    }
    Ok(())
}

/// Loads a weight matrix from an LPRT file or synthesizes one from a
/// `synth:rows=..,cols=..[,outliers=..][,gain=..][,seed=..]` spec.
/// Returns the tensor name alongside the matrix.
pub fn load_weights(arg: &str) -> Result<(String, Mat)> {
    if let Some(spec) = arg.strip_prefix(SYNTH_PREFIX) {
        let mut map = parse_pairs(spec)?;
        let rows = take::<usize>(&mut map, "rows", None)?;
        let cols = take::<usize>(&mut map, "cols", None)?;
        let outliers = take::<usize>(&mut map, "outliers", Some(0))?;
        let gain = take::<f64>(&mut map, "gain", Some(1.0))?;
        let seed = take::<u64>(&mut map, "seed", Some(0))?;
        reject_leftovers(&map, "rows, cols, outliers, gain, seed")?;
        let (w, _) =
            synthesize_weights(rows, cols, outliers, gain, seed).context("synthesizing weights")?;
        Ok((format!("synthetic-{rows}x{cols}"), w))
    } else {
        let t = read_tensor(Path::new(arg)).with_context(|| format!("reading weights {arg}"))?;
        Ok((t.name, t.data))
    }
}

/// Loads an activation matrix (rows are samples) from an LPRT file or a
/// `synth:channels=..,tokens=..[,outliers=..][,gain=..][,seed=..]` spec.
pub fn load_activations(arg: &str) -> Result<Mat> {
    if let Some(spec) = arg.strip_prefix(SYNTH_PREFIX) {
        let mut map = parse_pairs(spec)?;
        let channels = take::<usize>(&mut map, "channels", None)?;
        let tokens = take::<usize>(&mut map, "tokens", None)?;
        let outliers = take::<usize>(&mut map, "outliers", Some(0))?;
        let gain = take::<f64>(&mut map, "gain", Some(1.0))?;
        let seed = take::<u64>(&mut map, "seed", Some(0))?;
        reject_leftovers(&map, "channels, tokens, outliers, gain, seed")?;
        let (x, _) = synthesize_calibration(channels, tokens, outliers, gain, seed)
            .context("synthesizing calibration activations")?;
        Ok(x)
    } else {
        Ok(read_tensor(Path::new(arg))
            .with_context(|| format!("reading activations {arg}"))?
            .data)
    }
}

/// Loads activations and reduces them to second-moment statistics.
pub fn load_calibration(arg: &str) -> Result<CalibrationStats> {
    CalibrationStats::from_activations(&load_activations(arg)?)
        .context("reducing calibration activations")
}
