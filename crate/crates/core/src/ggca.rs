//! Grouped global-context attention: channel groups are pooled along each spatial axis
//! (average and max), passed through a shared per-direction 1x1 convolution, summed and
//! squashed into height and width attention maps that rescale the input.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{decode_tensor_prefix, encode_tensor, Reader};
use crate::rng::Pcg32;
use crate::tensor::Tensor4;

pub const GCFW_MAGIC: &[u8; 4] = b"GCFW";
pub const DEFAULT_SEED: u64 = 42;

/// Inference weights. Kernels are `(C/G) x (C/G)` row-major, indexed `[out][in]`, and
/// shared by all groups.
#[derive(Clone, Debug, PartialEq)]
pub struct GgcaWeights {
    channels: usize,
    groups: usize,
    pub kernel_h: Vec<f32>,
    pub bias_h: Vec<f32>,
    pub kernel_w: Vec<f32>,
    pub bias_w: Vec<f32>,
}

fn check_grouping(channels: usize, groups: usize) -> Result<usize> {
    if groups == 0 || channels == 0 || !channels.is_multiple_of(groups) {
        return Err(Error::param(format!(
            "group count {groups} must divide channel count {channels}"
        )));
    }
    Ok(channels / groups)
}

impl GgcaWeights {
    pub fn new(
        channels: usize,
        groups: usize,
        kernel_h: Vec<f32>,
        bias_h: Vec<f32>,
        kernel_w: Vec<f32>,
        bias_w: Vec<f32>,
    ) -> Result<Self> {
        let cg = check_grouping(channels, groups)?;
        for (name, v, n) in [
            ("kernel_h", &kernel_h, cg * cg),
            ("bias_h", &bias_h, cg),
            ("kernel_w", &kernel_w, cg * cg),
            ("bias_w", &bias_w, cg),
        ] {
            if v.len() != n {
                return Err(Error::shape(format!("{name} has {} values, expected {n}", v.len())));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("attention weights"));
            }
        }
        Ok(GgcaWeights {
            channels,
            groups,
            kernel_h,
            bias_h,
            kernel_w,
            bias_w,
        })
    }

    pub fn zeros(channels: usize, groups: usize) -> Result<Self> {
        let cg = check_grouping(channels, groups)?;
        Self::new(
            channels,
            groups,
            vec![0.0; cg * cg],
            vec![0.0; cg],
            vec![0.0; cg * cg],
            vec![0.0; cg],
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn group_channels(&self) -> usize {
        self.channels / self.groups
    }
}

/// Seeded initialization: kernels uniform in `[-k, k]`, `k = (C/G)^-1/2`, biases zero.
///
/// Values come from PCG32 stream 0 seeded with `seed`, drawn for `kernel_h` (row-major)
/// and then `kernel_w`. Biases consume no draws.
pub fn init_weights(channels: usize, groups: usize, seed: u64) -> Result<GgcaWeights> {
    let cg = check_grouping(channels, groups)?;
    let k = 1.0 / (cg as f64).sqrt();
    let mut rng = Pcg32::new(seed, 0);
    let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.uniform(-k, k) as f32).collect() };
    let kernel_h = draw(cg * cg);
    let kernel_w = draw(cg * cg);
    GgcaWeights::new(channels, groups, kernel_h, vec![0.0; cg], kernel_w, vec![0.0; cg])
}

/// Regroups `(B, C, H, W)` as `(B*G, C/G, H, W)`; storage is unchanged.
pub fn group_channels(r: &Tensor4, groups: usize) -> Result<Tensor4> {
    let d = r.dims();
    let cg = check_grouping(d.c, groups)?;
    Tensor4::from_vec([d.b * groups, cg, d.h, d.w], r.data().to_vec())
}

/// Average and max pooled maps along both axes.
///
/// `h_*` collapse the width axis, `(N, C, H, 1)`; `w_*` collapse the height axis, `(N, C, 1, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionalPools {
    pub h_avg: Tensor4,
    pub h_max: Tensor4,
    pub w_avg: Tensor4,
    pub w_max: Tensor4,
}

pub fn directional_pool(x: &Tensor4) -> Result<DirectionalPools> {
    let d = x.dims();
    if d.h == 0 || d.w == 0 {
        return Err(Error::shape(format!("cannot pool empty spatial extent {d}")));
    }
    let mut h_avg = Tensor4::zeros([d.b, d.c, d.h, 1]);
    let mut h_max = Tensor4::zeros([d.b, d.c, d.h, 1]);
    let mut w_avg = Tensor4::zeros([d.b, d.c, 1, d.w]);
    let mut w_max = Tensor4::zeros([d.b, d.c, 1, d.w]);
    for b in 0..d.b {
        for c in 0..d.c {
            let p = x.plane(b, c);
            let mut col_sum = vec![0f64; d.w];
            let mut col_max = vec![f32::NEG_INFINITY; d.w];
            for h in 0..d.h {
                let row = &p[h * d.w..][..d.w];
                let mut sum = 0f64;
                let mut max = f32::NEG_INFINITY;
                for (w, &v) in row.iter().enumerate() {
                    sum += v as f64;
                    max = max.max(v);
                    col_sum[w] += v as f64;
                    col_max[w] = col_max[w].max(v);
                }
                h_avg.set(b, c, h, 0, (sum / d.w as f64) as f32);
                h_max.set(b, c, h, 0, max);
            }
            for w in 0..d.w {
                w_avg.set(b, c, 0, w, (col_sum[w] / d.h as f64) as f32);
                w_max.set(b, c, 0, w, col_max[w]);
            }
        }
    }
    Ok(DirectionalPools {
        h_avg,
        h_max,
        w_avg,
        w_max,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionPair {
    /// `(B, C, H, 1)`
    pub att_h: Tensor4,
    /// `(B, C, 1, W)`
    pub att_w: Tensor4,
}

/// Logistic function clamped to the open interval so saturated inputs stay strictly inside `(0, 1)`.
fn sigmoid(z: f64) -> f32 {
    const HI: f32 = 1.0 - f32::EPSILON / 2.0;
    let s = (1.0 / (1.0 + (-z).exp())) as f32;
    s.clamp(f32::MIN_POSITIVE, HI)
}

/// `sigmoid(K avg + b + K max + b)` per group and position, on grouped `(N, C/G, L)` maps.
fn directional_attention(avg: &Tensor4, max: &Tensor4, kernel: &[f32], bias: &[f32], cg: usize) -> Vec<f32> {
    let n = avg.dims().b;
    let len = avg.dims().plane();
    let (a, m) = (avg.data(), max.data());
    let mut out = vec![0f32; n * cg * len];
    for g in 0..n {
        let base = g * cg * len;
        for o in 0..cg {
            for p in 0..len {
                let mut z = 2.0 * bias[o] as f64;
                for i in 0..cg {
                    let k = kernel[o * cg + i] as f64;
                    z += k * a[base + i * len + p] as f64 + k * m[base + i * len + p] as f64;
                }
                out[base + o * len + p] = sigmoid(z);
            }
        }
    }
    out
}

/// Turns grouped pools into attention maps and regroups them to the full channel count.
pub fn attention_weights(pools: &DirectionalPools, w: &GgcaWeights) -> Result<AttentionPair> {
    let cg = w.group_channels();
    let hd = pools.h_avg.dims();
    let wd = pools.w_avg.dims();
    if hd.c != cg || wd.c != cg || pools.h_max.dims() != hd || pools.w_max.dims() != wd || hd.w != 1 || wd.h != 1 {
        return Err(Error::shape(format!(
            "pools {hd} / {wd} do not match weights with {cg} channels per group"
        )));
    }
    if hd.b != wd.b || !hd.b.is_multiple_of(w.groups()) {
        return Err(Error::shape(format!(
            "grouped batch {} is not a multiple of {} groups",
            hd.b,
            w.groups()
        )));
    }
    let b = hd.b / w.groups();
    let att_h = directional_attention(&pools.h_avg, &pools.h_max, &w.kernel_h, &w.bias_h, cg);
    let att_w = directional_attention(&pools.w_avg, &pools.w_max, &w.kernel_w, &w.bias_w, cg);
    Ok(AttentionPair {
        att_h: Tensor4::from_vec([b, w.channels(), hd.h, 1], att_h)?,
        att_w: Tensor4::from_vec([b, w.channels(), 1, wd.w], att_w)?,
    })
}

/// `O[b,c,h,w] = R[b,c,h,w] * Att_h[b,c,h] * Att_w[b,c,w]`.
pub fn ggca_forward(r: &Tensor4, w: &GgcaWeights) -> Result<Tensor4> {
    let d = r.dims();
    if d.c != w.channels() {
        return Err(Error::shape(format!(
            "input has {} channels, weights expect {}",
            d.c,
            w.channels()
        )));
    }
    let grouped = group_channels(r, w.groups())?;
    let att = attention_weights(&directional_pool(&grouped)?, w)?;
    let mut out = r.clone();
    let plane = d.plane();
    for (bc, dst) in out.data_mut().chunks_mut(plane.max(1)).enumerate().take(d.b * d.c) {
        let ah = &att.att_h.data()[bc * d.h..][..d.h];
        let aw = &att.att_w.data()[bc * d.w..][..d.w];
        for h in 0..d.h {
            for x in 0..d.w {
                dst[h * d.w + x] = dst[h * d.w + x] * ah[h] * aw[x];
            }
        }
    }
    Ok(out)
}

/// Serializes weights as a GCFW container of named GCFT blobs.
pub fn encode_weights(w: &GgcaWeights) -> Vec<u8> {
    let cg = w.group_channels();
    let entries = [
        ("meta", Tensor4::from_vec([1, 1, 1, 2], vec![w.channels as f32, w.groups as f32])),
        ("kernel_h", Tensor4::from_vec([1, 1, cg, cg], w.kernel_h.clone())),
        ("bias_h", Tensor4::from_vec([1, 1, 1, cg], w.bias_h.clone())),
        ("kernel_w", Tensor4::from_vec([1, 1, cg, cg], w.kernel_w.clone())),
        ("bias_w", Tensor4::from_vec([1, 1, 1, cg], w.bias_w.clone())),
    ];
    let mut out = Vec::new();
    out.extend_from_slice(GCFW_MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        let t = t.expect("weights are validated on construction");
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&encode_tensor(&t));
    }
    out
}

pub fn decode_weights(bytes: &[u8]) -> Result<GgcaWeights> {
    const NAMES: [&str; 5] = ["meta", "kernel_h", "bias_h", "kernel_w", "bias_w"];
    let mut r = Reader::new(bytes);
    r.magic(GCFW_MAGIC)?;
    let count = r.u32()?;
    let mut slots: [Option<Tensor4>; 5] = Default::default();
    for _ in 0..count {
        let at = r.pos();
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Header {
            format: "gcfw",
            reason: format!("entry name at byte {at} is not UTF-8"),
        })?;
        let slot = NAMES.iter().position(|n| *n == name).ok_or_else(|| Error::Header {
            format: "gcfw",
            reason: format!("unknown entry {name:?} at byte {at}"),
        })?;
        if slots[slot].is_some() {
            return Err(Error::Header {
                format: "gcfw",
                reason: format!("duplicate entry {name:?} at byte {at}"),
            });
        }
        let start = r.pos();
        let (t, used) = decode_tensor_prefix(&bytes[start..]).map_err(|e| shift_offset(e, start))?;
        r.take(used)?;
        slots[slot] = Some(t);
    }
    r.finish()?;
    let [meta, kh, bh, kw, bw] = slots.map(|s| s);
    let missing = |n: &str| Error::Header {
        format: "gcfw",
        reason: format!("missing entry {n:?}"),
    };
    let meta = meta.ok_or_else(|| missing("meta"))?;
    if meta.dims().len() != 2 {
        return Err(Error::shape(format!("meta entry must hold (C, G), got {}", meta.dims())));
    }
    let (c, g) = (meta.data()[0], meta.data()[1]);
    if !(c >= 1.0 && g >= 1.0 && c.fract() == 0.0 && g.fract() == 0.0) {
        return Err(Error::param(format!("meta holds invalid (C, G) = ({c}, {g})")));
    }
    GgcaWeights::new(
        c as usize,
        g as usize,
        kh.ok_or_else(|| missing("kernel_h"))?.into_data(),
        bh.ok_or_else(|| missing("bias_h"))?.into_data(),
        kw.ok_or_else(|| missing("kernel_w"))?.into_data(),
        bw.ok_or_else(|| missing("bias_w"))?.into_data(),
    )
}

fn shift_offset(e: Error, by: usize) -> Error {
    match e {
        Error::BadMagic { offset, expected, found } => Error::BadMagic {
            offset: offset + by,
            expected,
            found,
        },
        Error::Unsupported { field, value, offset } => Error::Unsupported {
            field,
            value,
            offset: offset + by,
        },
        Error::Truncated { offset, needed, available } => Error::Truncated {
            offset: offset + by,
            needed,
            available,
        },
        Error::DimOverflow { offset, dims } => Error::DimOverflow {
            offset: offset + by,
            dims,
        },
        other => other,
    }
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<GgcaWeights> {
    decode_weights(&fs::read(path)?)
}

pub fn write_weights(w: &GgcaWeights, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_weights(w))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_weights(8, 2, DEFAULT_SEED).unwrap();
        assert_eq!(a, init_weights(8, 2, DEFAULT_SEED).unwrap());
        assert_ne!(a, init_weights(8, 2, 43).unwrap());
        assert_eq!(a.kernel_h.len(), 16);
        assert_eq!(a.bias_h.len(), 4);
        assert!(a.kernel_h.iter().chain(&a.kernel_w).all(|v| v.abs() <= 0.5));
        assert!(a.bias_h.iter().chain(&a.bias_w).all(|&v| v == 0.0));
        assert!(matches!(init_weights(8, 3, 1), Err(Error::Param(_))));
    }

    #[test]
    fn pooling_constant_input() {
        let p = directional_pool(&Tensor4::full([2, 3, 4, 5], 0.25)).unwrap();
        for t in [&p.h_avg, &p.h_max, &p.w_avg, &p.w_max] {
            assert!(t.data().iter().all(|&v| v == 0.25));
        }
        assert_eq!(p.h_avg.dims().as_array(), [2, 3, 4, 1]);
        assert_eq!(p.w_max.dims().as_array(), [2, 3, 1, 5]);
    }

    #[test]
    fn pooling_single_spike() {
        let mut x = Tensor4::zeros([1, 1, 4, 4]);
        x.set(0, 0, 2, 1, 8.0);
        let p = directional_pool(&x).unwrap();
        assert_eq!(p.h_max.data(), &[0.0, 0.0, 8.0, 0.0]);
        assert_eq!(p.h_avg.data(), &[0.0, 0.0, 2.0, 0.0]);
        assert_eq!(p.w_max.data(), &[0.0, 8.0, 0.0, 0.0]);
        assert_eq!(p.w_avg.data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_weights_give_half() {
        let x = Tensor4::from_fn([1, 4, 3, 3], |_, c, h, w| (c * 9 + h * 3 + w) as f32);
        let w = GgcaWeights::zeros(4, 2).unwrap();
        let att = attention_weights(&directional_pool(&group_channels(&x, 2).unwrap()).unwrap(), &w).unwrap();
        assert!(att.att_h.data().iter().chain(att.att_w.data()).all(|&v| v == 0.5));
    }

    #[test]
    fn identity_kernel_on_constant() {
        let w = GgcaWeights::new(1, 1, vec![1.0], vec![0.0], vec![1.0], vec![0.0]).unwrap();
        let c = 0.3f64;
        let x = Tensor4::full([1, 1, 3, 4], c as f32);
        let att = attention_weights(&directional_pool(&x).unwrap(), &w).unwrap();
        let expect = 1.0 / (1.0 + (-2.0 * c as f32 as f64).exp());
        for v in att.att_h.data().iter().chain(att.att_w.data()) {
            assert!((*v as f64 - expect).abs() < 1e-7);
        }
    }

    #[test]
    fn saturation_stays_open() {
        let w = GgcaWeights::new(1, 1, vec![1.0], vec![0.0], vec![1.0], vec![0.0]).unwrap();
        for c in [-1e4f32, 1e4] {
            let att = attention_weights(&directional_pool(&Tensor4::full([1, 1, 2, 2], c)).unwrap(), &w).unwrap();
            assert!(att.att_h.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn forward_simple_cases() {
        let r = Tensor4::from_fn([2, 4, 3, 5], |b, c, h, w| (b + c) as f32 - (h * w) as f32 * 0.1);
        let o = ggca_forward(&r, &GgcaWeights::zeros(4, 4).unwrap()).unwrap();
        let quarter: Vec<f32> = r.data().iter().map(|v| v / 4.0).collect();
        assert_eq!(o.data(), quarter.as_slice());

        let z = Tensor4::zeros([1, 4, 3, 3]);
        let o = ggca_forward(&z, &init_weights(4, 2, 1).unwrap()).unwrap();
        assert!(o.data().iter().all(|&v| v == 0.0));

        assert!(ggca_forward(&r, &GgcaWeights::zeros(8, 2).unwrap()).is_err());
    }

    #[test]
    fn weights_file_round_trip() {
        let w = init_weights(6, 3, 9).unwrap();
        let bytes = encode_weights(&w);
        assert_eq!(&bytes[..4], b"GCFW");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 5);
        assert_eq!(decode_weights(&bytes).unwrap(), w);
    }

    #[test]
    fn weights_file_errors() {
        let bytes = encode_weights(&init_weights(4, 2, 1).unwrap());
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(matches!(decode_weights(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_weights(&bytes[..bytes.len() - 2]), Err(Error::Truncated { .. })));
        let mut fewer = bytes.clone();
        fewer[4] = 4;
        assert!(decode_weights(&fewer).is_err());
        let mut corrupt = bytes;
        // first entry: u16 length 4, "meta", then its GCFT magic
        corrupt[14] = b'Q';
        assert!(matches!(decode_weights(&corrupt), Err(Error::BadMagic { offset: 14, .. })));
    }
}
