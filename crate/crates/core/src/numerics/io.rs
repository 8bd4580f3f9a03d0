//! Portable binary tensor format.
//!
//! Layout (all integers little-endian):
//!
//! | bytes   | content                                  |
//! |---------|------------------------------------------|
//! | 0..8    | magic `b"JD3TENSR"`                      |
//! | 8..12   | format version (`u32`, currently 1)      |
//! | 12..16  | reserved, zero                           |
//! | 16..48  | shape `n, c, h, w` as four `u64`         |
//! | 48..52  | precision tag (`u32`: 0 = f32, 1 = f64)  |
//! | 52..    | elements, row-major, little-endian       |

use std::io::{Read, Write};
use std::path::Path;

use super::tensor::{Precision, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"JD3TENSR";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 52;

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + t.len() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for d in t.shape().dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&T::PRECISION.tag().to_le_bytes());
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Stored precision of an encoded tensor, without decoding the payload.
pub fn peek_precision(bytes: &[u8]) -> Result<Precision> {
    header(bytes).map(|(_, p)| p)
}

fn header(bytes: &[u8]) -> Result<(Shape, Precision)> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a tensor file (bad magic)".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()) as usize;
    let version = u32_at(8);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported tensor format version {version}")));
    }
    let shape = Shape::new(u64_at(16), u64_at(24), u64_at(32), u64_at(40));
    let precision = Precision::from_tag(u32_at(48))
        .ok_or_else(|| Error::Format(format!("unknown precision tag {}", u32_at(48))))?;
    Ok((shape, precision))
}

/// Decode into element type `T`, converting precision if the file differs.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let (shape, precision) = header(bytes)?;
    let payload = &bytes[HEADER_LEN..];
    let width = match precision {
        Precision::Standard => 4,
        Precision::High => 8,
    };
    if payload.len() != shape.numel() * width {
        return Err(Error::Format(format!(
            "payload of {} bytes does not match shape {shape}",
            payload.len()
        )));
    }
    let data: Vec<T> = match precision {
        Precision::Standard => payload.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect(),
        Precision::High => payload.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
    };
    Tensor::new(shape, data)
}

pub fn write_tensor<T: Scalar>(t: &Tensor<T>, mut w: impl Write) -> Result<()> {
    w.write_all(&encode(t))?;
    Ok(())
}

pub fn read_tensor<T: Scalar>(mut r: impl Read) -> Result<Tensor<T>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf)
}

pub fn save<T: Scalar>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(t))?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode(&std::fs::read(path)?)
}
