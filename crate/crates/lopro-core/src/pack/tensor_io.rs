//! Plain tensor file format for weights and activations.
//!
//! Layout: magic `LPRT`, little-endian u32 version, u64 JSON header
//! length, a JSON header `{name, dtype, shape: [rows, cols]}`, then the
//! raw little-endian row-major values.

use crate::error::Error;
use crate::{Mat, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// File magic.
pub const TENSOR_MAGIC: [u8; 4] = *b"LPRT";
/// Tensor format version.
pub const TENSOR_VERSION: u32 = 1;

/// Element type of a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorDtype {
    /// 4-byte IEEE floats.
    F32,
    /// 8-byte IEEE floats.
    F64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    dtype: TensorDtype,
    shape: [u64; 2],
}

/// A named matrix loaded from (or destined for) a tensor file.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    /// Tensor name from the header.
    pub name: String,
    /// Element type it was stored at.
    pub dtype: TensorDtype,
    /// The values, widened to f64.
    pub data: Mat,
}

/// Serializes a matrix to tensor-file bytes at the given element type.
pub fn tensor_to_bytes(name: &str, m: &Mat, dtype: TensorDtype) -> Result<Vec<u8>> {
    m.ensure_finite(name)?;
    let header = TensorHeader {
        name: name.to_string(),
        dtype,
        shape: [m.rows() as u64, m.cols() as u64],
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Format(format!("tensor header serialization failed: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    match dtype {
        TensorDtype::F32 => {
            for &x in m.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        TensorDtype::F64 => {
            for &x in m.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Parses tensor-file bytes.
pub fn tensor_from_bytes(data: &[u8]) -> Result<TensorFile> {
    if data.len() < 16 || data[..4] != TENSOR_MAGIC {
        return Err(Error::Format("not a tensor file".into()));
    }
    let version = u32::from_le_bytes([data[4], data[5], data[6], data[7]]);
    if version != TENSOR_VERSION {
        return Err(Error::Format(format!(
            "tensor format version {version} unsupported (expected {TENSOR_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(data[8..16].try_into().unwrap()) as usize;
    if 16 + header_len > data.len() {
        return Err(Error::Format("tensor header overruns the file".into()));
    }
    let header: TensorHeader = serde_json::from_slice(&data[16..16 + header_len])
        .map_err(|e| Error::Format(format!("bad tensor header: {e}")))?;
    let (rows, cols) = (header.shape[0] as usize, header.shape[1] as usize);
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("tensor shape overflows".into()))?;
    let body = &data[16 + header_len..];
    let values = match header.dtype {
        TensorDtype::F32 => {
            if body.len() != count * 4 {
                return Err(Error::Format(format!(
                    "tensor body has {} bytes for {} f32 values",
                    body.len(),
                    count
                )));
            }
            body.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect()
        }
        TensorDtype::F64 => {
            if body.len() != count * 8 {
                return Err(Error::Format(format!(
                    "tensor body has {} bytes for {} f64 values",
                    body.len(),
                    count
                )));
            }
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        }
    };
    let data = Mat::from_vec(rows, cols, values)?;
    data.ensure_finite(&header.name)?;
    Ok(TensorFile {
        name: header.name,
        dtype: header.dtype,
        data,
    })
}

/// Writes a tensor file.
pub fn write_tensor(path: &Path, name: &str, m: &Mat, dtype: TensorDtype) -> Result<()> {
    std::fs::write(path, tensor_to_bytes(name, m, dtype)?)?;
    Ok(())
}

/// Reads a tensor file.
pub fn read_tensor(path: &Path) -> Result<TensorFile> {
    tensor_from_bytes(&std::fs::read(path)?)
}
