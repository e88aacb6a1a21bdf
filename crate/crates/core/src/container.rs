//! Single-file array container shared by datasets and checkpoints:
//! an 8-byte magic, a little-endian `u64` header length, a UTF-8 JSON
//! header, then raw little-endian arrays in the order the header lists them.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"EQPKDS01";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EQPKCP01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    fn dtype(&self) -> DType {
        match self {
            ArrayData::F32(_) => DType::F32,
            ArrayData::F64(_) => DType::F64,
        }
    }

    /// Values widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl Array {
    pub fn f32(name: &str, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Array {
            name: name.into(),
            shape,
            data: ArrayData::F32(data),
        }
    }

    pub fn f64(name: &str, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Array {
            name: name.into(),
            shape,
            data: ArrayData::F64(data),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayInfo {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    meta: Value,
    arrays: Vec<ArrayInfo>,
}

pub fn encode(magic: &[u8; 8], meta: Value, arrays: &[Array]) -> Result<Vec<u8>> {
    let mut infos = Vec::with_capacity(arrays.len());
    for a in arrays {
        if a.shape.iter().product::<usize>() != a.data.len() {
            return Err(Error::Format(format!("array {} does not match its shape {:?}", a.name, a.shape)));
        }
        infos.push(ArrayInfo {
            name: a.name.clone(),
            dtype: a.data.dtype(),
            shape: a.shape.clone(),
        });
    }
    let header = serde_json::to_vec(&Header { meta, arrays: infos })?;
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for a in arrays {
        match &a.data {
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

pub fn decode(magic: &[u8; 8], bytes: &[u8]) -> Result<(Value, Vec<Array>)> {
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(Error::Format(format!(
            "missing magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16usize.saturating_add(hlen))
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body)?;
    let mut at = 16 + hlen;
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for info in header.arrays {
        let n: usize = info.shape.iter().product();
        let width = match info.dtype {
            DType::F32 => 4,
            DType::F64 => 8,
        };
        let raw = bytes
            .get(at..at + n * width)
            .ok_or_else(|| Error::Format(format!("array {} is truncated", info.name)))?;
        at += n * width;
        let data = match info.dtype {
            DType::F32 => ArrayData::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            DType::F64 => ArrayData::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
        };
        arrays.push(Array {
            name: info.name,
            shape: info.shape,
            data,
        });
    }
    if at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - at)));
    }
    Ok((header.meta, arrays))
}

/// Removes and returns the array called `name`.
pub fn take(arrays: &mut Vec<Array>, name: &str) -> Result<Array> {
    let i = arrays
        .iter()
        .position(|a| a.name == name)
        .ok_or_else(|| Error::Format(format!("missing array {name}")))?;
    Ok(arrays.remove(i))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
