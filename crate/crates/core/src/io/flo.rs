use std::fs;
use std::path::Path;

use super::Reader;
use crate::error::{Error, Result};
use crate::tensor::{FlowField, Tensor4};

/// The `.flo` sanity tag: the float 202021.25, stored as the ASCII bytes "PIEH".
pub const FLO_MAGIC: &[u8; 4] = b"PIEH";

/// Encodes batch item 0 of `flow` as a Middlebury `.flo` file.
pub fn encode_flo(flow: &FlowField) -> Result<Vec<u8>> {
    let d = flow.dims();
    if d.b != 1 {
        return Err(Error::shape(format!(".flo holds a single field, got batch {}", d.b)));
    }
    let (w, h) = (
        i32::try_from(d.w).map_err(|_| Error::shape("width exceeds i32"))?,
        i32::try_from(d.h).map_err(|_| Error::shape("height exceeds i32"))?,
    );
    let mut out = Vec::with_capacity(12 + 8 * d.plane());
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    for y in 0..d.h {
        for x in 0..d.w {
            out.extend_from_slice(&flow.u(0, y, x).to_le_bytes());
            out.extend_from_slice(&flow.v(0, y, x).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    let mut r = Reader::new(bytes);
    r.magic(FLO_MAGIC)?;
    let w = r.i32()?;
    let h = r.i32()?;
    if w < 0 || h < 0 {
        return Err(Error::Header {
            format: "flo",
            reason: format!("negative size {w}x{h}"),
        });
    }
    let (w, h) = (w as usize, h as usize);
    let n = w.checked_mul(h).and_then(|n| n.checked_mul(2)).ok_or(Error::DimOverflow {
        offset: 4,
        dims: vec![w as u64, h as u64],
    })?;
    let interleaved = r.f32s(n)?;
    r.finish()?;
    let plane = w * h;
    let mut data = vec![0f32; n];
    for (i, pair) in interleaved.chunks_exact(2).enumerate() {
        data[i] = pair[0];
        data[plane + i] = pair[1];
    }
    FlowField::new(Tensor4::from_vec([1, 2, h, w], data)?)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    decode_flo(&fs::read(path)?)
}

pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_flo(flow)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magic_is_the_sanity_float() {
        assert_eq!(f32::from_le_bytes(*FLO_MAGIC), 202021.25);
    }

    #[test]
    fn zero_4x4_is_140_bytes() {
        let bytes = encode_flo(&FlowField::zeros(1, 4, 4)).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 128);
        assert_eq!(&bytes[4..12], &[4, 0, 0, 0, 4, 0, 0, 0]);
    }

    #[test]
    fn pairs_are_interleaved() {
        let bytes = encode_flo(&FlowField::uniform(1, 2, 3, 1.0, -2.0)).unwrap();
        for pair in bytes[12..].chunks_exact(8) {
            assert_eq!(f32::from_le_bytes(pair[..4].try_into().unwrap()), 1.0);
            assert_eq!(f32::from_le_bytes(pair[4..].try_into().unwrap()), -2.0);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let good = encode_flo(&FlowField::uniform(1, 2, 2, 0.5, 0.25)).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_flo(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_flo(&good[..good.len() - 4]), Err(Error::Truncated { .. })));
        let mut long = good.clone();
        long.extend_from_slice(&[0; 8]);
        assert!(matches!(decode_flo(&long), Err(Error::TrailingBytes { .. })));
        let mut neg = good;
        neg[4..8].copy_from_slice(&(-1i32).to_le_bytes());
        assert!(matches!(decode_flo(&neg), Err(Error::Header { .. })));
    }

    #[test]
    fn batched_flow_is_rejected() {
        assert!(encode_flo(&FlowField::zeros(2, 2, 2)).is_err());
    }
}
