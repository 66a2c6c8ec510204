//! Vector quantization over short column blocks.
//!
//! A codebook of `2^(bits·dim)` entries is trained by unweighted Lloyd
//! iterations on all dim-aligned blocks, then snapped to binary32.
//! Assignment runs column-sequentially with curvature-weighted distances,
//! and each block's error is fed forward into later columns through the
//! same upper-triangular factor the scalar feedback quantizer uses.

use super::gptq::gptq_factor;
use crate::error::Error;
use crate::minifloat::f32_snap;
use crate::rng::SeededGaussian;
use crate::{Mat, Result};

/// ChaCha substream for codebook initialization draws.
const STREAM_VQ_INIT: u64 = 2;
/// Lloyd iteration budget; assignment stability usually ends it earlier.
const LLOYD_ITERATIONS: usize = 25;
/// Hard cap on codebook entries (index storage is 16-bit).
const MAX_ENTRIES_LOG2: u32 = 16;

/// Trained codebook: `entries` is `K x dim`, every value a binary32.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// Block width.
    pub dim: usize,
    /// One codeword per row.
    pub entries: Mat,
}

impl Codebook {
    /// Number of codewords.
    pub fn len(&self) -> usize {
        self.entries.rows()
    }

    /// True when the codebook has no entries.
    pub fn is_empty(&self) -> bool {
        self.entries.rows() == 0
    }
}

/// Result of vector quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct VqQuantResult {
    /// Codeword index per (row, block), row-major.
    pub indices: Vec<u16>,
    /// The trained codebook.
    pub codebook: Codebook,
    /// Dequantized matrix.
    pub deq: Mat,
}

/// Curvature-weighted squared distance between a block and a codeword.
pub(crate) fn weighted_block_distance(block: &[f64], entry: &[f64], weights: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((&b, &e), &w) in block.iter().zip(entry.iter()).zip(weights.iter()) {
        let d = b - e;
        acc += w * d * d;
    }
    acc
}

/// Quantizes `w` with a `bits`-per-weight codebook over blocks of `dim`
/// columns. `hessian` supplies both the per-column assignment weights
/// (its diagonal) and the error-feedback factor; `damp` and `seed`
/// control the factor damping and codebook initialization.
pub fn vq_quantize(
    w: &Mat,
    bits: u8,
    dim: usize,
    hessian: &Mat,
    damp: f64,
    seed: u64,
) -> Result<VqQuantResult> {
    let (m, n) = (w.rows(), w.cols());
    if !matches!(dim, 1 | 2 | 4) {
        return Err(Error::InvalidArgument(format!(
            "codebook block width {dim} unsupported (use 1, 2, or 4)"
        )));
    }
    if n % dim != 0 {
        return Err(Error::Dimension(format!(
            "{n} columns do not split into blocks of {dim}"
        )));
    }
    let index_bits = bits as u32 * dim as u32;
    if bits == 0 || index_bits > MAX_ENTRIES_LOG2 {
        return Err(Error::InvalidArgument(format!(
            "{bits} bits over width-{dim} blocks needs 2^{index_bits} codewords; \
             the cap is 2^{MAX_ENTRIES_LOG2}"
        )));
    }
    if hessian.rows() != n || hessian.cols() != n {
        return Err(Error::Dimension(format!(
            "{}x{} second-moment matrix for {} columns",
            hessian.rows(),
            hessian.cols(),
            n
        )));
    }
    let k = 1usize << index_bits;
    let blocks_per_row = n / dim;
    let total_blocks = m * blocks_per_row;
    if total_blocks == 0 {
        return Err(Error::Dimension("nothing to quantize".into()));
    }

    // Initialize codewords from blocks of the matrix at seeded positions.
    let mut g = SeededGaussian::with_stream(seed, STREAM_VQ_INIT);
    let mut entries = Mat::zeros(k, dim);
    for e in 0..k {
        let r = g.next_index(m);
        let b = g.next_index(blocks_per_row);
        entries
            .row_mut(e)
            .copy_from_slice(&w.row(r)[b * dim..(b + 1) * dim]);
    }

    // Unweighted Lloyd refinement over every block.
    let mut assign = vec![0usize; total_blocks];
    for _ in 0..LLOYD_ITERATIONS {
        let mut changed = false;
        for i in 0..m {
            for b in 0..blocks_per_row {
                let block = &w.row(i)[b * dim..(b + 1) * dim];
                let mut best = 0usize;
                let mut best_d = f64::MAX;
                for e in 0..k {
                    let mut d = 0.0;
                    for (x, y) in block.iter().zip(entries.row(e).iter()) {
                        let t = x - y;
                        d += t * t;
                    }
                    if d < best_d {
                        best_d = d;
                        best = e;
                    }
                }
                let slot = i * blocks_per_row + b;
                if assign[slot] != best {
                    assign[slot] = best;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
        let mut sums = Mat::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for i in 0..m {
            for b in 0..blocks_per_row {
                let e = assign[i * blocks_per_row + b];
                counts[e] += 1;
                let block = &w.row(i)[b * dim..(b + 1) * dim];
                for (s, &x) in sums.row_mut(e).iter_mut().zip(block.iter()) {
                    *s += x;
                }
            }
        }
        for (e, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue; // Empty cluster keeps its previous codeword.
            }
            let inv = 1.0 / count as f64;
            for (dst, &s) in entries.row_mut(e).iter_mut().zip(sums.row(e).iter()) {
                *dst = s * inv;
            }
        }
    }
    for x in entries.data_mut() {
        *x = f32_snap(*x);
    }
    let codebook = Codebook { dim, entries };

    // Column-sequential weighted assignment with block-level feedback.
    let u = gptq_factor(hessian, damp)?;
    let weights: Vec<f64> = (0..n).map(|j| hessian.at(j, j).max(1e-12)).collect();
    let mut work = w.clone();
    let mut indices = vec![0u16; total_blocks];
    let mut deq = Mat::zeros(m, n);
    for b in 0..blocks_per_row {
        let j0 = b * dim;
        let wts = &weights[j0..j0 + dim];
        for i in 0..m {
            let best = {
                let block = &work.row(i)[j0..j0 + dim];
                let mut best = 0usize;
                let mut best_d = f64::MAX;
                for e in 0..k {
                    let d = weighted_block_distance(block, codebook.entries.row(e), wts);
                    if d < best_d {
                        best_d = d;
                        best = e;
                    }
                }
                best
            };
            indices[i * blocks_per_row + b] = best as u16;
            deq.row_mut(i)[j0..j0 + dim].copy_from_slice(code_row(&codebook, best));
            for t in 0..dim {
                let j = j0 + t;
                let err = (work.at(i, j) - codebook.entries.at(best, t)) / u.at(j, j);
                if err == 0.0 {
                    continue;
                }
                let urow = u.row(j);
                let row = work.row_mut(i);
                for col in (j0 + dim)..n {
                    row[col] -= err * urow[col];
                }
            }
        }
    }
    Ok(VqQuantResult {
        indices,
        codebook,
        deq,
    })
}

fn code_row(cb: &Codebook, e: usize) -> &[f64] {
    cb.entries.row(e)
}
