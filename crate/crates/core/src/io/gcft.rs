use std::fs;
use std::path::Path;

use super::Reader;
use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor4};

pub const GCFT_MAGIC: &[u8; 4] = b"GCFT";
const VERSION: u8 = 1;
const DTYPE_F32: u8 = 1;
const NDIM: u8 = 4;
const HEADER_LEN: usize = 4 + 4 + 16;

/// Serializes a tensor: magic, version, dtype, ndim, pad, four u32 dims, f32 payload (all LE).
pub fn encode_tensor(t: &Tensor4) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.data().len());
    out.extend_from_slice(GCFT_MAGIC);
    out.extend_from_slice(&[VERSION, DTYPE_F32, NDIM, 0]);
    for d in t.dims().as_array() {
        let d = u32::try_from(d).expect("tensor dimension exceeds u32");
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Tensor4> {
    r.magic(GCFT_MAGIC)?;
    for (field, want) in [("version", VERSION), ("dtype", DTYPE_F32), ("ndim", NDIM)] {
        let offset = r.pos();
        let got = r.u8()?;
        if got != want {
            return Err(Error::Unsupported {
                field,
                value: got as u64,
                offset,
            });
        }
    }
    let _pad = r.u8()?;
    let dims_offset = r.pos();
    let mut raw = [0u64; 4];
    for d in raw.iter_mut() {
        *d = r.u32()? as u64;
    }
    let overflow = || Error::DimOverflow {
        offset: dims_offset,
        dims: raw.to_vec(),
    };
    let dims = Dims::new(
        usize::try_from(raw[0]).map_err(|_| overflow())?,
        usize::try_from(raw[1]).map_err(|_| overflow())?,
        usize::try_from(raw[2]).map_err(|_| overflow())?,
        usize::try_from(raw[3]).map_err(|_| overflow())?,
    );
    let n = dims
        .checked_len()
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(overflow)?;
    let data = r.f32s(n)?;
    Tensor4::from_vec(dims, data)
}

/// Decodes a GCFT blob at the start of `bytes`, returning the tensor and the bytes consumed.
pub fn decode_tensor_prefix(bytes: &[u8]) -> Result<(Tensor4, usize)> {
    let mut r = Reader::new(bytes);
    let t = decode_from(&mut r)?;
    Ok((t, r.pos()))
}

/// Decodes a complete GCFT file; trailing bytes are an error.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor4> {
    let mut r = Reader::new(bytes);
    let t = decode_from(&mut r)?;
    r.finish()?;
    Ok(t)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor4> {
    decode_tensor(&fs::read(path)?)
}

pub fn write_tensor(t: &Tensor4, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_tensor(t))?;
    Ok(())
}
