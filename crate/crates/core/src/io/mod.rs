//! File codecs: GCFT tensors, binary PPM/PGM frames and Middlebury `.flo` flow fields.

mod flo;
mod gcft;
mod pnm;

pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC};
pub use gcft::{decode_tensor, decode_tensor_prefix, encode_tensor, read_tensor, write_tensor, GCFT_MAGIC};
pub use pnm::{decode_pnm, encode_pnm, read_image, write_image};

use crate::error::{Error, Result};

/// Little-endian cursor that reports the byte offset of every failure.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n,
                available: self.remaining(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn magic(&mut self, expected: &[u8]) -> Result<()> {
        let offset = self.pos;
        let found = self.take(expected.len()).map_err(|_| Error::BadMagic {
            offset,
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(&self.buf[offset..]).into_owned(),
        })?;
        if found != expected {
            return Err(Error::BadMagic {
                offset,
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    /// Reads `n` little-endian f32 values.
    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n.checked_mul(4).ok_or(Error::DimOverflow {
            offset: self.pos,
            dims: vec![n as u64],
        })?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::TrailingBytes {
                offset: self.pos,
                extra: self.remaining(),
            });
        }
        Ok(())
    }
}

/// Loads a frame from a binary PPM/PGM (by `.ppm`/`.pgm` extension) or a GCFT tensor.
pub fn load_frame(path: impl AsRef<std::path::Path>) -> Result<crate::tensor::Tensor4> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("ppm" | "pgm" | "pnm") => read_image(path),
        _ => read_tensor(path),
    }
}
