//! BIT tensor container: `"BIT1"`, little-endian `u32` header length, JSON
//! header, raw row-major little-endian payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{DType, Element, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BIT1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BitHeader {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub byte_order: String,
}

/// A tensor read back in whichever precision it was stored.
#[derive(Debug, Clone, PartialEq)]
pub enum BitTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl BitTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            BitTensor::F32(t) => t.shape(),
            BitTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to `T`; exact when `T` matches the stored dtype.
    pub fn into_tensor<T: Element>(self) -> Tensor<T> {
        match self {
            BitTensor::F32(t) => t.cast(),
            BitTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode_bit<T: Element>(tensor: &Tensor<T>) -> Vec<u8> {
    let header = BitHeader {
        dtype: T::DTYPE,
        shape: tensor.shape().to_vec(),
        byte_order: "LE".into(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + header.len() + tensor.numel() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for &v in tensor.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn write_bit_tensor<T: Element>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_bit(tensor)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn decode_values<T: Element>(shape: Vec<usize>, payload: &[u8]) -> Result<Tensor<T>> {
    let size = T::DTYPE.size();
    let data = payload.chunks_exact(size).map(T::read_le).collect();
    Tensor::new(shape, data)
}

pub fn decode_bit(path: &Path, bytes: &[u8]) -> Result<(BitTensor, BitHeader)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let format = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let len_bytes: [u8; 4] = bytes
        .get(4..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| format("missing header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let header_bytes = bytes
        .get(8..8 + header_len)
        .ok_or_else(|| format(format!("header of {header_len} bytes runs past end of file")))?;
    let header: BitHeader = serde_json::from_slice(header_bytes).map_err(|e| format(format!("bad header: {e}")))?;
    if header.byte_order != "LE" {
        return Err(format(format!("unsupported byte order `{}`", header.byte_order)));
    }
    let numel = header
        .shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| format("shape overflows".into()))?;
    let expected = numel * header.dtype.size();
    let payload = &bytes[8 + header_len..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(format(format!(
            "payload holds {} bytes, shape {:?} needs {expected}",
            payload.len(),
            header.shape
        )));
    }
    let shape = header.shape.clone();
    let tensor = match header.dtype {
        DType::F32 => BitTensor::F32(decode_values(shape, payload)?),
        DType::F64 => BitTensor::F64(decode_values(shape, payload)?),
    };
    Ok((tensor, header))
}

pub fn read_bit_tensor(path: &Path) -> Result<(BitTensor, BitHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_bit(path, &bytes)
}

/// Reads a tensor stored as `T`, rejecting other dtypes.
pub fn read_bit_as<T: Element>(path: &Path) -> Result<Tensor<T>> {
    let (tensor, header) = read_bit_tensor(path)?;
    if header.dtype != T::DTYPE {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("stored as {}, expected {}", header.dtype.as_str(), T::DTYPE.as_str()),
        });
    }
    Ok(tensor.into_tensor())
}
