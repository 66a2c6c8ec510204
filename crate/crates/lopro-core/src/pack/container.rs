//! Binary container for quantized layers.
//!
//! Layout: magic `LPRQ`, a little-endian u32 format version, a u64
//! metadata length, a JSON metadata block, then 64-byte-aligned payload
//! sections. Section offsets in the metadata are relative to the payload
//! region (which itself starts at the first 64-byte boundary after the
//! metadata), so the metadata does not depend on its own length. Every
//! value written is already snapped to its storage grid, which makes
//! pack -> unpack -> pack byte-identical.

use super::{QuantReport, QuantizedLayer};
use crate::error::Error;
use crate::lowrank::{FactorPrecision, LowRankFactors};
use crate::minifloat::{e4m3_from_bits, e4m3_to_bits};
use crate::perm::PermutationIndex;
use crate::quant::{Codebook, QuantGrid, QuantizerKind};
use crate::rotation::RotationPlan;
use crate::{Mat, Result};
use half::f16;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// File magic.
pub const MAGIC: [u8; 4] = *b"LPRQ";
/// Container format version.
pub const VERSION: u32 = 1;
/// Payload section alignment in bytes.
const ALIGN: usize = 64;

/// Name, payload-relative offset, and raw (unpadded) byte count of one
/// serialized section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionDesc {
    /// Section name.
    pub name: String,
    /// Offset from the start of the payload region; 64-byte aligned.
    pub offset: u64,
    /// Raw byte length, excluding alignment padding.
    pub bytes: u64,
}

/// JSON metadata block. Field order is the serialization order, and no
/// volatile values (timestamps, hostnames) are included, so packing the
/// same layer twice yields identical bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerMeta {
    format: String,
    version: u32,
    name: String,
    rows: u64,
    cols: u64,
    quantizer: QuantizerKind,
    bits: u8,
    group_size: u64,
    symmetric: bool,
    vq_dim: u64,
    rank: u64,
    precision: FactorPrecision,
    block_identity: u64,
    block_hadamard: u64,
    seed: u64,
    iterations: u64,
    damp: f64,
    exponent: f64,
    generator: String,
    accounting_sidecar_bits: u32,
    loss_lowrank_only: f64,
    loss_rotated_frame: f64,
    sections: Vec<SectionDesc>,
}

/// Little-endian bit packer for code widths 1..=16.
#[derive(Debug, Default)]
pub struct BitWriter {
    buf: Vec<u8>,
    acc: u64,
    filled: u32,
}

impl BitWriter {
    /// Empty writer.
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `width` low bits of `value`.
    pub fn push(&mut self, value: u32, width: u32) {
        debug_assert!((1..=16).contains(&width));
        debug_assert!(width == 32 || value < (1u32 << width));
        self.acc |= (value as u64) << self.filled;
        self.filled += width;
        while self.filled >= 8 {
            self.buf.push(self.acc as u8);
            self.acc >>= 8;
            self.filled -= 8;
        }
    }

    /// Flushes the tail bits and returns the packed bytes.
    pub fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.buf.push(self.acc as u8);
        }
        self.buf
    }
}

/// Little-endian bit unpacker matching [`BitWriter`].
#[derive(Debug)]
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u64,
    filled: u32,
}

impl<'a> BitReader<'a> {
    /// Reader over packed bytes.
    pub fn new(data: &'a [u8]) -> Self {
        BitReader {
            data,
            pos: 0,
            acc: 0,
            filled: 0,
        }
    }

    /// Reads the next `width`-bit value.
    pub fn read(&mut self, width: u32) -> Result<u32> {
        debug_assert!((1..=16).contains(&width));
        while self.filled < width {
            let byte = *self
                .data
                .get(self.pos)
                .ok_or_else(|| Error::Format("packed code stream ended early".into()))?;
            self.acc |= (byte as u64) << self.filled;
            self.pos += 1;
            self.filled += 8;
        }
        let value = (self.acc & ((1u64 << width) - 1)) as u32;
        self.acc >>= width;
        self.filled -= width;
        Ok(value)
    }
}

fn align_up(x: usize) -> usize {
    x.div_ceil(ALIGN) * ALIGN
}

fn le_f32(out: &mut Vec<u8>, x: f64) {
    out.extend_from_slice(&(x as f32).to_le_bytes());
}

fn le_f64(out: &mut Vec<u8>, x: f64) {
    out.extend_from_slice(&x.to_le_bytes());
}

/// Serializes each payload section to raw bytes, in file order.
fn section_payloads(layer: &QuantizedLayer) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let mut sections: Vec<(&'static str, Vec<u8>)> = Vec::new();

    // Codes: scalar codes at the grid width, or codeword indices at
    // bits * dim, both row-major LSB-first.
    let mut wtr = BitWriter::new();
    match layer.quantizer {
        QuantizerKind::Rtn | QuantizerKind::Gptq => {
            for &c in &layer.codes {
                wtr.push(c as u32, layer.grid.bits as u32);
            }
        }
        QuantizerKind::Vq => {
            let width = layer.grid.bits as u32 * layer.vq_dim as u32;
            for &i in &layer.vq_indices {
                wtr.push(i as u32, width);
            }
        }
    }
    sections.push(("codes", wtr.finish()));

    if matches!(layer.quantizer, QuantizerKind::Rtn | QuantizerKind::Gptq) {
        let mut bytes = Vec::with_capacity(layer.scales.len() * 2);
        for &s in &layer.scales {
            bytes.extend_from_slice(&f16::from_f64(s).to_bits().to_le_bytes());
        }
        sections.push(("scales", bytes));
        if let Some(zeros) = &layer.zeros {
            let mut wtr = BitWriter::new();
            for &z in zeros {
                wtr.push(z as u32, layer.grid.bits as u32);
            }
            sections.push(("zeros", wtr.finish()));
        }
    }
    if let Some(cb) = &layer.codebook {
        let mut bytes = Vec::with_capacity(cb.entries.data().len() * 4);
        for &x in cb.entries.data() {
            le_f32(&mut bytes, x);
        }
        sections.push(("codebook", bytes));
    }

    let factor_bytes = |m: &Mat| -> Vec<u8> {
        let mut bytes = Vec::new();
        match layer.factors.precision {
            FactorPrecision::E4m3 => {
                for &x in m.data() {
                    bytes.push(e4m3_to_bits(x));
                }
            }
            FactorPrecision::Full => {
                for &x in m.data() {
                    le_f64(&mut bytes, x);
                }
            }
        }
        bytes
    };
    sections.push(("u", factor_bytes(&layer.factors.u)));
    sections.push(("v", factor_bytes(&layer.factors.v)));

    let mut bytes = Vec::with_capacity(layer.factors.s.len() * 4);
    for &s in &layer.factors.s {
        le_f32(&mut bytes, s);
    }
    sections.push(("sigma", bytes));

    let mut bytes = Vec::with_capacity(layer.act_scale.len() * 4);
    for &s in &layer.act_scale {
        le_f32(&mut bytes, s);
    }
    sections.push(("act_scale", bytes));

    let mut bytes = Vec::with_capacity(layer.plan.perm().len() * 4);
    for &i in layer.plan.perm().indices() {
        bytes.extend_from_slice(&i.to_le_bytes());
    }
    sections.push(("perm", bytes));

    Ok(sections)
}

/// Section table (names, aligned offsets, raw sizes) the layer would
/// serialize to. The raw sizes drive the measured bits-per-weight number.
pub fn payload_section_sizes(layer: &QuantizedLayer) -> Result<Vec<SectionDesc>> {
    let payloads = section_payloads(layer)?;
    let mut descs = Vec::with_capacity(payloads.len());
    let mut offset = 0usize;
    for (name, bytes) in &payloads {
        descs.push(SectionDesc {
            name: (*name).to_string(),
            offset: offset as u64,
            bytes: bytes.len() as u64,
        });
        offset = align_up(offset + bytes.len());
    }
    Ok(descs)
}

/// Serializes a validated layer to container bytes.
pub fn pack_layer(layer: &QuantizedLayer) -> Result<Vec<u8>> {
    layer.validate()?;
    let payloads = section_payloads(layer)?;
    let sections = payload_section_sizes(layer)?;
    let meta = LayerMeta {
        format: "lprq".into(),
        version: VERSION,
        name: layer.name.clone(),
        rows: layer.rows as u64,
        cols: layer.cols as u64,
        quantizer: layer.quantizer,
        bits: layer.grid.bits,
        group_size: layer.grid.group_size as u64,
        symmetric: layer.grid.symmetric,
        vq_dim: layer.vq_dim as u64,
        rank: layer.factors.rank() as u64,
        precision: layer.factors.precision,
        block_identity: layer.plan.block_identity() as u64,
        block_hadamard: layer.plan.block_hadamard() as u64,
        seed: layer.seed,
        iterations: layer.iterations as u64,
        damp: layer.damp,
        exponent: layer.exponent,
        generator: layer.generator.clone(),
        accounting_sidecar_bits: layer.accounting_sidecar_bits,
        loss_lowrank_only: layer.report.loss_lowrank_only,
        loss_rotated_frame: layer.report.loss_rotated_frame,
        sections: sections.clone(),
    };
    let meta_bytes = serde_json::to_vec(&meta)
        .map_err(|e| Error::Format(format!("metadata serialization failed: {e}")))?;

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_bytes);
    out.resize(align_up(out.len()), 0);
    let payload_start = out.len();
    for (desc, (_, bytes)) in sections.iter().zip(payloads.iter()) {
        let want = payload_start + desc.offset as usize;
        debug_assert!(out.len() <= want);
        out.resize(want, 0);
        out.extend_from_slice(bytes);
    }
    Ok(out)
}

fn get_section<'a>(
    payload: &'a [u8],
    sections: &[SectionDesc],
    name: &str,
) -> Result<Option<&'a [u8]>> {
    let Some(desc) = sections.iter().find(|s| s.name == name) else {
        return Ok(None);
    };
    let start = desc.offset as usize;
    let end = start + desc.bytes as usize;
    if end > payload.len() {
        return Err(Error::Format(format!(
            "section '{name}' ({start}..{end}) overruns payload of {} bytes",
            payload.len()
        )));
    }
    Ok(Some(&payload[start..end]))
}

fn require_section<'a>(
    payload: &'a [u8],
    sections: &[SectionDesc],
    name: &str,
) -> Result<&'a [u8]> {
    get_section(payload, sections, name)?
        .ok_or_else(|| Error::Format(format!("missing required section '{name}'")))
}

fn read_f32s(bytes: &[u8], what: &str) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format(format!(
            "{what} section length not a multiple of 4"
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Deserializes container bytes back into a layer.
pub fn unpack_layer(data: &[u8]) -> Result<QuantizedLayer> {
    if data.len() < 16 || data[..4] != MAGIC {
        return Err(Error::Format("not a quantized-layer container".into()));
    }
    let version = u32::from_le_bytes([data[4], data[5], data[6], data[7]]);
    if version != VERSION {
        return Err(Error::Format(format!(
            "container version {version} unsupported (expected {VERSION})"
        )));
    }
    let meta_len = u64::from_le_bytes(data[8..16].try_into().unwrap()) as usize;
    if 16 + meta_len > data.len() {
        return Err(Error::Format("metadata overruns the file".into()));
    }
    let meta: LayerMeta = serde_json::from_slice(&data[16..16 + meta_len])
        .map_err(|e| Error::Format(format!("bad metadata: {e}")))?;
    if meta.format != "lprq" {
        return Err(Error::Format(format!(
            "unknown format tag '{}'",
            meta.format
        )));
    }
    let payload_start = align_up(16 + meta_len);
    if payload_start > data.len() {
        return Err(Error::Format("payload region missing".into()));
    }
    let payload = &data[payload_start..];
    let (m, n) = (meta.rows as usize, meta.cols as usize);
    let rank = meta.rank as usize;
    let grid = QuantGrid {
        bits: meta.bits,
        group_size: meta.group_size as usize,
        symmetric: meta.symmetric,
    };
    grid.validate()?;

    let codes_bytes = require_section(payload, &meta.sections, "codes")?;
    let (codes, vq_indices, scales, zeros, codebook) = match meta.quantizer {
        QuantizerKind::Rtn | QuantizerKind::Gptq => {
            let mut rdr = BitReader::new(codes_bytes);
            let mut codes = Vec::with_capacity(m * n);
            for _ in 0..m * n {
                codes.push(rdr.read(meta.bits as u32)? as u8);
            }
            let scale_bytes = require_section(payload, &meta.sections, "scales")?;
            if scale_bytes.len() % 2 != 0 {
                return Err(Error::Format(
                    "scale section length not a multiple of 2".into(),
                ));
            }
            let scales: Vec<f64> = scale_bytes
                .chunks_exact(2)
                .map(|c| f16::from_bits(u16::from_le_bytes([c[0], c[1]])).to_f64())
                .collect();
            let zeros = match get_section(payload, &meta.sections, "zeros")? {
                Some(zb) => {
                    let mut rdr = BitReader::new(zb);
                    let mut zeros = Vec::with_capacity(scales.len());
                    for _ in 0..scales.len() {
                        zeros.push(rdr.read(meta.bits as u32)? as u8);
                    }
                    Some(zeros)
                }
                None => None,
            };
            (codes, Vec::new(), scales, zeros, None)
        }
        QuantizerKind::Vq => {
            let dim = meta.vq_dim as usize;
            if dim == 0 || n % dim != 0 {
                return Err(Error::Format(format!(
                    "codebook width {dim} does not tile {n} columns"
                )));
            }
            let width = meta.bits as u32 * dim as u32;
            let count = m * (n / dim);
            let mut rdr = BitReader::new(codes_bytes);
            let mut indices = Vec::with_capacity(count);
            for _ in 0..count {
                indices.push(rdr.read(width)? as u16);
            }
            let cb_bytes = require_section(payload, &meta.sections, "codebook")?;
            let vals = read_f32s(cb_bytes, "codebook")?;
            if vals.len() % dim != 0 {
                return Err(Error::Format(
                    "codebook length not a multiple of its width".into(),
                ));
            }
            let k = vals.len() / dim;
            let entries = Mat::from_vec(k, dim, vals)?;
            (
                Vec::new(),
                indices,
                Vec::new(),
                None,
                Some(Codebook { dim, entries }),
            )
        }
    };

    let read_factor = |bytes: &[u8], rows: usize, cols: usize, what: &str| -> Result<Mat> {
        match meta.precision {
            FactorPrecision::E4m3 => {
                if bytes.len() != rows * cols {
                    return Err(Error::Format(format!(
                        "{what} section has {} bytes for {}x{} entries",
                        bytes.len(),
                        rows,
                        cols
                    )));
                }
                Mat::from_vec(
                    rows,
                    cols,
                    bytes.iter().map(|&b| e4m3_from_bits(b)).collect(),
                )
            }
            FactorPrecision::Full => {
                if bytes.len() != rows * cols * 8 {
                    return Err(Error::Format(format!(
                        "{what} section has {} bytes for {}x{} f64 entries",
                        bytes.len(),
                        rows,
                        cols
                    )));
                }
                Mat::from_vec(
                    rows,
                    cols,
                    bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
        }
    };
    let u = read_factor(require_section(payload, &meta.sections, "u")?, m, rank, "u")?;
    let v = read_factor(require_section(payload, &meta.sections, "v")?, rank, n, "v")?;
    let s = read_f32s(require_section(payload, &meta.sections, "sigma")?, "sigma")?;
    if s.len() != rank {
        return Err(Error::Format(format!(
            "{} magnitudes for rank {}",
            s.len(),
            rank
        )));
    }
    let act_scale = read_f32s(
        require_section(payload, &meta.sections, "act_scale")?,
        "act_scale",
    )?;
    let perm_bytes = require_section(payload, &meta.sections, "perm")?;
    if perm_bytes.len() % 4 != 0 {
        return Err(Error::Format(
            "permutation section length not a multiple of 4".into(),
        ));
    }
    let perm_indices: Vec<u32> = perm_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let perm = PermutationIndex::from_indices(perm_indices)?;
    let plan = RotationPlan::make_plan(
        n,
        meta.block_identity as usize,
        meta.block_hadamard as usize,
        perm,
    )?;

    let layer = QuantizedLayer {
        name: meta.name,
        rows: m,
        cols: n,
        quantizer: meta.quantizer,
        grid,
        vq_dim: meta.vq_dim as usize,
        codes,
        scales,
        zeros,
        vq_indices,
        codebook,
        factors: LowRankFactors {
            u,
            s,
            v,
            precision: meta.precision,
        },
        act_scale,
        plan,
        seed: meta.seed,
        iterations: meta.iterations as usize,
        damp: meta.damp,
        exponent: meta.exponent,
        generator: meta.generator,
        accounting_sidecar_bits: meta.accounting_sidecar_bits,
        report: QuantReport {
            loss_lowrank_only: meta.loss_lowrank_only,
            loss_rotated_frame: meta.loss_rotated_frame,
        },
    };
    layer.validate()?;
    Ok(layer)
}

/// Writes a layer container to disk.
pub fn write_layer(path: &Path, layer: &QuantizedLayer) -> Result<()> {
    std::fs::write(path, pack_layer(layer)?)?;
    Ok(())
}

/// Reads a layer container from disk.
pub fn read_layer(path: &Path) -> Result<QuantizedLayer> {
    unpack_layer(&std::fs::read(path)?)
}
