//! Calibration statistics: a streaming second-moment accumulator, the
//! activation-derived channel scale, and a synthetic activation generator
//! for experiments and self-tests.

use crate::error::Error;
use crate::matrix::Kahan;
use crate::rng::SeededGaussian;
use crate::{Mat, Result};

/// Channel correlation of the synthetic generator's common factor. High
/// enough that a shared component dominates pairwise channel covariance,
/// which is the regime where spreading outlier energy across a block pays.
const CORRELATION: f64 = 0.65;

/// Second-moment summary of a calibration activation set.
#[derive(Debug, Clone)]
pub struct CalibrationStats {
    /// Mean outer product `XᵀX / samples` over calibration rows.
    pub hessian: Mat,
    /// Per-channel mean absolute activation.
    pub act_mean: Vec<f64>,
    /// Number of rows accumulated.
    pub sample_count: usize,
    /// Channel scale; all ones until a scale is derived.
    pub scale: Vec<f64>,
}

impl CalibrationStats {
    /// Neutral statistics for `n` channels: identity Hessian, unit means.
    pub fn identity(n: usize) -> Self {
        CalibrationStats {
            hessian: Mat::identity(n),
            act_mean: vec![1.0; n],
            sample_count: 0,
            scale: vec![1.0; n],
        }
    }

    /// One-shot construction from an activation matrix (rows are samples).
    pub fn from_activations(x: &Mat) -> Result<Self> {
        let mut acc = StatsAccumulator::new(x.cols());
        acc.accumulate(x)?;
        acc.finalize()
    }

    /// Number of channels.
    pub fn channels(&self) -> usize {
        self.act_mean.len()
    }

    /// Validates internal shape consistency.
    pub fn validate(&self) -> Result<()> {
        let n = self.channels();
        if self.hessian.rows() != n || self.hessian.cols() != n || self.scale.len() != n {
            return Err(Error::Dimension(format!(
                "inconsistent statistics: {} channels, {}x{} moment matrix, {} scales",
                n,
                self.hessian.rows(),
                self.hessian.cols(),
                self.scale.len()
            )));
        }
        self.hessian.ensure_finite("second-moment matrix")?;
        Ok(())
    }
}

/// Streaming accumulator over activation batches. Accumulating a split
/// batch sequence gives the same sums as one concatenated batch, so the
/// derived statistics are batching invariant.
#[derive(Debug, Clone)]
pub struct StatsAccumulator {
    n: usize,
    sum_outer: Mat,
    sum_abs: Vec<Kahan<f64>>,
    count: usize,
}

impl StatsAccumulator {
    /// Accumulator for `n` channels.
    pub fn new(n: usize) -> Self {
        StatsAccumulator {
            n,
            sum_outer: Mat::zeros(n, n),
            sum_abs: vec![Kahan::default(); n],
            count: 0,
        }
    }

    /// Adds a batch with rows as samples and `n` columns.
    pub fn accumulate(&mut self, batch: &Mat) -> Result<()> {
        if batch.cols() != self.n {
            return Err(Error::Dimension(format!(
                "batch has {} channels, accumulator expects {}",
                batch.cols(),
                self.n
            )));
        }
        batch.ensure_finite("activation batch")?;
        for t in 0..batch.rows() {
            let row = batch.row(t);
            for (acc, &x) in self.sum_abs.iter_mut().zip(row.iter()) {
                acc.add(x.abs());
            }
            for (i, &xi) in row.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (o, &xj) in self.sum_outer.row_mut(i).iter_mut().zip(row.iter()) {
                    *o += xi * xj;
                }
            }
        }
        self.count += batch.rows();
        Ok(())
    }

    /// Closes the accumulator into per-sample statistics.
    pub fn finalize(&self) -> Result<CalibrationStats> {
        if self.count == 0 {
            return Err(Error::InvalidArgument(
                "cannot finalize statistics over zero samples".into(),
            ));
        }
        let inv = 1.0 / self.count as f64;
        // Symmetrize: the accumulation is symmetric in exact arithmetic.
        let hessian = Mat::from_fn(self.n, self.n, |i, j| {
            0.5 * (self.sum_outer.at(i, j) + self.sum_outer.at(j, i)) * inv
        });
        let act_mean = self.sum_abs.iter().map(|k| k.value() * inv).collect();
        Ok(CalibrationStats {
            hessian,
            act_mean,
            sample_count: self.count,
            scale: vec![1.0; self.n],
        })
    }
}

/// Derives the per-channel scale `s_i = max(m_i, eps)^p / sqrt(max_i m ·
/// max(min_i m, eps))` from the mean absolute activations `m`, stores it
/// in `stats.scale`, and returns it. The normalizer keeps the geometric
/// mean of the extreme scales near one so scaling redistributes rather
/// than inflates magnitudes.
pub fn derive_scale(stats: &mut CalibrationStats, exponent: f64, eps: f64) -> Result<Vec<f64>> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "scale floor must be positive and finite, got {eps}"
        )));
    }
    if !exponent.is_finite() {
        return Err(Error::InvalidArgument(
            "scale exponent must be finite".into(),
        ));
    }
    let m = &stats.act_mean;
    if m.is_empty() {
        return Err(Error::InvalidArgument("no channels to scale".into()));
    }
    let hi = m.iter().cloned().fold(f64::MIN, f64::max).max(eps);
    let lo = m.iter().cloned().fold(f64::MAX, f64::min).max(eps);
    let norm = (hi * lo).sqrt();
    let s: Vec<f64> = m
        .iter()
        .map(|&mi| mi.max(eps).powf(exponent) / norm)
        .collect();
    for &si in &s {
        if !si.is_finite() || si <= 0.0 {
            return Err(Error::Numerical(format!(
                "derived channel scale {si} is not positive finite"
            )));
        }
    }
    stats.scale = s.clone();
    Ok(s)
}

/// Draws `count` distinct outlier channel indices for `n` channels on the
/// channel-selection substream of `seed`.
pub fn synthetic_channels(n: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > n {
        return Err(Error::InvalidArgument(format!(
            "cannot place {count} outlier channels among {n}"
        )));
    }
    let mut g = SeededGaussian::with_stream(seed, 0);
    let mut picked = Vec::with_capacity(count);
    let mut taken = vec![false; n];
    while picked.len() < count {
        let i = g.next_index(n);
        if !taken[i] {
            taken[i] = true;
            picked.push(i);
        }
    }
    Ok(picked)
}

/// Synthesizes a `tokens x n` activation matrix with the given outlier
/// channels amplified by `gain`. Each row mixes an independent Gaussian
/// per channel with a shared common factor at correlation 0.65, drawn on
/// the token substream of `seed`.
pub fn synthesize_with_channels(
    n: usize,
    tokens: usize,
    channels: &[usize],
    gain: f64,
    seed: u64,
) -> Result<Mat> {
    if n == 0 || tokens == 0 {
        return Err(Error::InvalidArgument(format!(
            "synthetic activations need positive shape, got {tokens}x{n}"
        )));
    }
    let mut sigma = vec![1.0; n];
    for &c in channels {
        if c >= n {
            return Err(Error::InvalidArgument(format!(
                "outlier channel {c} out of range for {n} channels"
            )));
        }
        sigma[c] = gain;
    }
    let mut g = SeededGaussian::with_stream(seed, 1);
    let mix = (1.0 - CORRELATION * CORRELATION).sqrt();
    let mut out = Mat::zeros(tokens, n);
    for t in 0..tokens {
        let common = g.next_gaussian();
        for (x, &sd) in out.row_mut(t).iter_mut().zip(sigma.iter()) {
            let z = g.next_gaussian();
            *x = sd * (mix * z + CORRELATION * common);
        }
    }
    Ok(out)
}

/// Synthesizes activations and returns them with the chosen outlier
/// channels. Equivalent to [`synthetic_channels`] followed by
/// [`synthesize_with_channels`] on the same seed.
pub fn synthesize_calibration(
    n: usize,
    tokens: usize,
    outliers: usize,
    gain: f64,
    seed: u64,
) -> Result<(Mat, Vec<usize>)> {
    let channels = synthetic_channels(n, outliers, seed)?;
    let x = synthesize_with_channels(n, tokens, &channels, gain, seed)?;
    Ok((x, channels))
}

/// Synthesizes a `rows x cols` weight matrix with amplified columns,
/// normalized by `1/sqrt(cols)` so row norms stay near one.
pub fn synthesize_weights(
    rows: usize,
    cols: usize,
    outliers: usize,
    gain: f64,
    seed: u64,
) -> Result<(Mat, Vec<usize>)> {
    let (mut w, channels) = synthesize_calibration(cols, rows, outliers, gain, seed)?;
    let norm = 1.0 / (cols as f64).sqrt();
    for x in w.data_mut() {
        *x *= norm;
    }
    Ok((w, channels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_hand_example() {
        let mut stats = CalibrationStats::identity(2);
        stats.act_mean = vec![4.0, 1.0];
        let s = derive_scale(&mut stats, 2.5, 1e-8).unwrap();
        assert!((s[0] - 16.0).abs() < 1e-12);
        assert!((s[1] - 0.5).abs() < 1e-12);
        assert_eq!(stats.scale, s);
    }

    #[test]
    fn scale_floors_dead_channel() {
        let mut stats = CalibrationStats::identity(2);
        stats.act_mean = vec![4.0, 0.0];
        let eps = 1e-8;
        let s = derive_scale(&mut stats, 2.5, eps).unwrap();
        let want = eps.powf(2.5) / (4.0 * eps).sqrt();
        assert!((s[1] - want).abs() <= 1e-18 * want.max(1.0));
        assert!(s[1] > 0.0);
    }

    #[test]
    fn scale_survives_all_zero_means() {
        let mut stats = CalibrationStats::identity(3);
        stats.act_mean = vec![0.0; 3];
        let s = derive_scale(&mut stats, 2.5, 1e-8).unwrap();
        for &si in &s {
            assert!(si.is_finite() && si > 0.0);
        }
    }

    #[test]
    fn accumulator_matches_one_shot() {
        let (x, _) = synthesize_calibration(6, 40, 2, 3.0, 11).unwrap();
        let whole = CalibrationStats::from_activations(&x).unwrap();
        let mut acc = StatsAccumulator::new(6);
        let top = Mat::from_fn(13, 6, |i, j| x.at(i, j));
        let bot = Mat::from_fn(27, 6, |i, j| x.at(i + 13, j));
        acc.accumulate(&top).unwrap();
        acc.accumulate(&bot).unwrap();
        let split = acc.finalize().unwrap();
        assert_eq!(whole.sample_count, split.sample_count);
        for (a, b) in whole.hessian.data().iter().zip(split.hessian.data().iter()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        for (a, b) in whole.act_mean.iter().zip(split.act_mean.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn synthesis_is_deterministic_and_composes() {
        let (x1, ch1) = synthesize_calibration(16, 32, 4, 3.0, 99).unwrap();
        let (x2, ch2) = synthesize_calibration(16, 32, 4, 3.0, 99).unwrap();
        assert_eq!(ch1, ch2);
        assert_eq!(x1, x2);
        let direct = synthesize_with_channels(16, 32, &ch1, 3.0, 99).unwrap();
        assert_eq!(x1, direct);
    }

    #[test]
    fn outlier_channels_carry_more_energy() {
        let (x, ch) = synthesize_calibration(32, 512, 4, 3.0, 5).unwrap();
        let means = x.column_abs_mean();
        let hot: f64 = ch.iter().map(|&c| means[c]).sum::<f64>() / ch.len() as f64;
        let cold: f64 = means
            .iter()
            .enumerate()
            .filter(|(i, _)| !ch.contains(i))
            .map(|(_, &m)| m)
            .sum::<f64>()
            / (32 - ch.len()) as f64;
        assert!(hot > 2.0 * cold, "hot {hot} cold {cold}");
    }

    #[test]
    fn finalize_requires_samples() {
        assert!(StatsAccumulator::new(4).finalize().is_err());
    }
}
