use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

fn header_err(reason: impl Into<String>) -> Error {
    Error::Header {
        format: "pnm",
        reason: reason.into(),
    }
}

struct HeaderParser<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl HeaderParser<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.buf.get(self.pos) {
            if b == b'#' {
                while self.buf.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.buf.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(header_err(format!("expected {what} at byte {start}")));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| header_err(format!("{what} out of range at byte {start}")))
    }
}

/// Decodes a binary PGM (`P5`) or PPM (`P6`) with maxval 255 into a `(1, C, H, W)` tensor in `[0, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor4> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => {
            return Err(Error::BadMagic {
                offset: 0,
                expected: "P5 or P6".into(),
                found: String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned(),
            })
        }
    };
    let mut p = HeaderParser { buf: bytes, pos: 2 };
    let width = p.number("width")?;
    let height = p.number("height")?;
    let maxval = p.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Unsupported {
            field: "maxval",
            value: maxval as u64,
            offset: p.pos,
        });
    }
    match bytes.get(p.pos) {
        Some(b) if b.is_ascii_whitespace() => p.pos += 1,
        _ => return Err(header_err(format!("missing whitespace before raster at byte {}", p.pos))),
    }
    let n = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| header_err("raster size overflow"))?;
    let raster = &bytes[p.pos..];
    if raster.len() < n {
        return Err(Error::Truncated {
            offset: p.pos,
            needed: n,
            available: raster.len(),
        });
    }
    if raster.len() > n {
        return Err(Error::TrailingBytes {
            offset: p.pos + n,
            extra: raster.len() - n,
        });
    }
    let plane = width * height;
    let mut data = vec![0f32; n];
    for (i, px) in raster.chunks_exact(channels).enumerate() {
        for (c, &s) in px.iter().enumerate() {
            data[c * plane + i] = s as f32 / 255.0;
        }
    }
    Tensor4::from_vec([1, channels, height, width], data)
}

/// Encodes a `(1, 1|3, H, W)` tensor, mapping `x` to `round(clamp(x, 0, 1) * 255)`.
pub fn encode_pnm(t: &Tensor4) -> Result<Vec<u8>> {
    let d = t.dims();
    let magic = match (d.b, d.c) {
        (1, 1) => "P5",
        (1, 3) => "P6",
        _ => return Err(Error::shape(format!("image must be (1, 1|3, H, W), got {d}"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", d.w, d.h).into_bytes();
    out.reserve(d.c * d.plane());
    for h in 0..d.h {
        for w in 0..d.w {
            for c in 0..d.c {
                out.push(quantize(t.get(0, c, h, w)));
            }
        }
    }
    Ok(out)
}

fn quantize(x: f32) -> u8 {
    if x.is_nan() {
        return 0;
    }
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor4> {
    decode_pnm(&fs::read(path)?)
}

pub fn write_image(t: &Tensor4, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pnm(t)?)?;
    Ok(())
}
