//! Sobel-based histogram-of-oriented-gradients features.
//!
//! Each channel is treated as its own image: reflection-padded Sobel responses give a
//! magnitude and a full-circle orientation per pixel, the magnitude goes into one of nine
//! orientation bins (hard binning), bins are summed over non-overlapping `pool x pool`
//! blocks and each block's 9-vector is L2-normalized.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_dims, Tensor4};

pub const BINS: usize = 9;
pub const DEFAULT_POOL: usize = 8;
const NORM_EPS: f64 = 1e-12;

/// Horizontal Sobel stencil, applied as a cross-correlation. The vertical one is its transpose.
pub const SOBEL_X: [[f32; 3]; 3] = [[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]];

#[derive(Clone, Debug, PartialEq)]
pub struct GradientPair {
    pub gx: Tensor4,
    pub gy: Tensor4,
}

/// Rank-5 `(B, C, 9, H, W)` orientation-binned map.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientationMap {
    dims: [usize; 5],
    data: Vec<f32>,
}

/// Pooled and normalized orientation histograms, `(B, C, 9, H/pool, W/pool)`.
pub type HogFeature = OrientationMap;

impl OrientationMap {
    fn zeros(b: usize, c: usize, h: usize, w: usize) -> Self {
        OrientationMap {
            dims: [b, c, BINS, h, w],
            data: vec![0.0; b * c * BINS * h * w],
        }
    }

    pub fn dims(&self) -> [usize; 5] {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, b: usize, c: usize, bin: usize, h: usize, w: usize) -> f32 {
        let [_, cc, k, hh, ww] = self.dims;
        self.data[(((b * cc + c) * k + bin) * hh + h) * ww + w]
    }

    /// The 9-vector of bins at one `(b, c, h, w)` position.
    pub fn bins_at(&self, b: usize, c: usize, h: usize, w: usize) -> [f32; BINS] {
        std::array::from_fn(|k| self.get(b, c, k, h, w))
    }

    /// Folds the bin axis into channels: `(B, C*9, H, W)` with channel index `c*9 + bin`.
    pub fn to_tensor(&self) -> Tensor4 {
        let [b, c, k, h, w] = self.dims;
        Tensor4::from_vec([b, c * k, h, w], self.data.clone()).expect("layout is contiguous")
    }

    pub fn from_tensor(t: Tensor4) -> Result<Self> {
        let d = t.dims();
        if !d.c.is_multiple_of(BINS) {
            return Err(Error::shape(format!("{d} does not fold into {BINS} bins")));
        }
        Ok(OrientationMap {
            dims: [d.b, d.c / BINS, BINS, d.h, d.w],
            data: t.into_data(),
        })
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

fn correlate_plane(src: &[f32], h: usize, w: usize, gx: &mut [f32], gy: &mut [f32]) {
    let at = |y: isize, x: isize| src[reflect(y, h) * w + reflect(x, w)] as f64;
    for y in 0..h {
        for x in 0..w {
            let (yi, xi) = (y as isize, x as isize);
            // SOBEL_X rows are (1, 2, 1) x (left - right); the transpose is (top - bottom)
            let (mut sx, mut sy) = (0f64, 0f64);
            for (d, k) in [(-1isize, 1.0), (0, 2.0), (1, 1.0)] {
                sx += k * (at(yi + d, xi - 1) - at(yi + d, xi + 1));
                sy += k * (at(yi - 1, xi + d) - at(yi + 1, xi + d));
            }
            gx[y * w + x] = sx as f32;
            gy[y * w + x] = sy as f32;
        }
    }
}

/// Per-channel Sobel responses with one pixel of reflection padding; output keeps `H x W`.
pub fn sobel_gradients(x: &Tensor4) -> Result<GradientPair> {
    let d = x.dims();
    if d.h < 3 || d.w < 3 {
        return Err(Error::param(format!("Sobel gradients need H, W >= 3, got {d}")));
    }
    let plane = d.plane();
    let mut gx = Tensor4::zeros(d);
    let mut gy = Tensor4::zeros(d);
    gx.data_mut()
        .par_chunks_mut(plane)
        .zip(gy.data_mut().par_chunks_mut(plane))
        .zip(x.data().par_chunks(plane))
        .for_each(|((ox, oy), src)| correlate_plane(src, d.h, d.w, ox, oy));
    Ok(GradientPair { gx, gy })
}

/// Angle of `(gx, gy)` in `(-pi, pi]`, with `0` for the zero vector.
pub fn phase_of(gx: f32, gy: f32) -> f32 {
    if gx == 0.0 && gy == 0.0 {
        return 0.0;
    }
    let a = (gy as f64).atan2(gx as f64);
    // atan2(-0.0, x<0) yields -pi; the half-open range keeps +pi
    let a = if a <= -PI { PI } else { a };
    a as f32
}

/// Orientation bin for a phase in `(-pi, pi]`: `floor((phase + pi) / 2pi * 9) mod 9`.
pub fn bin_of(phase: f32) -> usize {
    let t = (phase as f64 + PI) / (2.0 * PI) * BINS as f64;
    (t.floor().max(0.0) as usize) % BINS
}

pub fn magnitude_phase(gp: &GradientPair) -> Result<(Tensor4, Tensor4)> {
    ensure_same_dims(gp.gx.dims(), gp.gy.dims(), "gradient pair")?;
    let d = gp.gx.dims();
    let (norm, phase): (Vec<f32>, Vec<f32>) = gp
        .gx
        .data()
        .iter()
        .zip(gp.gy.data())
        .map(|(&x, &y)| ((x * x + y * y).sqrt(), phase_of(x, y)))
        .unzip();
    Ok((Tensor4::from_vec(d, norm)?, Tensor4::from_vec(d, phase)?))
}

/// Scatter-adds each pixel's magnitude into the bin its phase selects.
pub fn orientation_histogram(norm: &Tensor4, phase: &Tensor4) -> Result<OrientationMap> {
    ensure_same_dims(norm.dims(), phase.dims(), "magnitude/phase")?;
    let d = norm.dims();
    let plane = d.plane();
    let mut out = OrientationMap::zeros(d.b, d.c, d.h, d.w);
    if plane == 0 {
        return Ok(out);
    }
    out.data
        .par_chunks_mut(BINS * plane)
        .zip(norm.data().par_chunks(plane))
        .zip(phase.data().par_chunks(plane))
        .for_each(|((hist, n), p)| {
            for i in 0..plane {
                hist[bin_of(p[i]) * plane + i] += n[i];
            }
        });
    Ok(out)
}

/// Sums bins over `pool x pool` blocks, then divides each 9-vector by `max(||v||, 1e-12)`.
pub fn pool_normalize(hist: &OrientationMap, pool: usize) -> Result<HogFeature> {
    let [b, c, _, h, w] = hist.dims;
    if pool < 1 {
        return Err(Error::param("pool size must be >= 1"));
    }
    if h % pool != 0 || w % pool != 0 {
        return Err(Error::param(format!("pool {pool} does not divide {h}x{w}")));
    }
    let (ph, pw) = (h / pool, w / pool);
    let mut out = OrientationMap::zeros(b, c, ph, pw);
    let (src_img, dst_img) = (BINS * h * w, BINS * ph * pw);
    if dst_img == 0 {
        return Ok(out);
    }
    out.data
        .par_chunks_mut(dst_img)
        .zip(hist.data.par_chunks(src_img.max(1)))
        .for_each(|(dst, src)| {
            for by in 0..ph {
                for bx in 0..pw {
                    let mut acc = [0f64; BINS];
                    for (k, a) in acc.iter_mut().enumerate() {
                        let bin = &src[k * h * w..][..h * w];
                        for y in by * pool..(by + 1) * pool {
                            for x in bx * pool..(bx + 1) * pool {
                                *a += bin[y * w + x] as f64;
                            }
                        }
                    }
                    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
                    for (k, a) in acc.iter().enumerate() {
                        dst[(k * ph + by) * pw + bx] = (a / norm) as f32;
                    }
                }
            }
        });
    Ok(out)
}

/// Full feature: gradients, binning, pooling and normalization.
pub fn hog(x: &Tensor4, pool: usize) -> Result<HogFeature> {
    let gp = sobel_gradients(x)?;
    let (norm, phase) = magnitude_phase(&gp)?;
    let hist = orientation_histogram(&norm, &phase)?;
    pool_normalize(&hist, pool)
}
