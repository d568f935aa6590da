//! Straight-line scalar reference implementations used as test oracles.
//!
//! Nothing here calls into the library's kernels; each function re-derives its result from
//! the defining formulas with plain loops in `f64`.

#![allow(dead_code)]

use std::f64::consts::PI;

use consflow_core::Tensor4;

/// Small deterministic generator for test data (SplitMix64).
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn size(&mut self, lo: usize, hi_inclusive: usize) -> usize {
        lo + (self.next_u64() % (hi_inclusive - lo + 1) as u64) as usize
    }

    pub fn tensor(&mut self, dims: [usize; 4], lo: f64, hi: f64) -> Tensor4 {
        Tensor4::from_fn(dims, |_, _, _, _| self.range(lo, hi) as f32)
    }
}

/// Per-pixel backward warp evaluated directly from the grid/offset/denormalize/bilinear formulas.
pub fn warp_oracle(frame: &Tensor4, flow: &Tensor4) -> Vec<f64> {
    let d = frame.dims();
    let (hh, ww) = (d.h, d.w);
    let mut out = Vec::with_capacity(d.len());
    for b in 0..d.b {
        for c in 0..d.c {
            for h in 0..hh {
                for w in 0..ww {
                    let gx = 2.0 * w as f64 / (ww - 1) as f64 - 1.0;
                    let gy = 2.0 * h as f64 / (hh - 1) as f64 - 1.0;
                    let u = flow.get(b, 0, h, w) as f64;
                    let v = flow.get(b, 1, h, w) as f64;
                    let xn = (gx + 2.0 * u / (ww - 1) as f64).clamp(-1.0, 1.0);
                    let yn = (gy + 2.0 * v / (hh - 1) as f64).clamp(-1.0, 1.0);
                    let xr = (xn + 1.0) * (ww - 1) as f64 / 2.0;
                    let yr = (yn + 1.0) * (hh - 1) as f64 / 2.0;
                    let (x0, y0) = (xr.floor(), yr.floor());
                    let (fx, fy) = (xr - x0, yr - y0);
                    let px = |yy: f64, xx: f64| {
                        let yy = (yy as isize).clamp(0, hh as isize - 1) as usize;
                        let xx = (xx as isize).clamp(0, ww as isize - 1) as usize;
                        frame.get(b, c, yy, xx) as f64
                    };
                    out.push(
                        (1.0 - fx) * (1.0 - fy) * px(y0, x0)
                            + fx * (1.0 - fy) * px(y0, x0 + 1.0)
                            + (1.0 - fx) * fy * px(y0 + 1.0, x0)
                            + fx * fy * px(y0 + 1.0, x0 + 1.0),
                    );
                }
            }
        }
    }
    out
}

/// Reference HOG: explicit reflection-padded copy, full 3x3 correlation, hard binning,
/// block sums and L2 normalization. Layout `(B, C, 9, H/pool, W/pool)` flattened.
pub struct HogReference {
    pub norm: Vec<f64>,
    pub hist: Vec<f64>,
    pub feature: Vec<f64>,
}

pub fn hog_oracle(x: &Tensor4, pool: usize) -> HogReference {
    let d = x.dims();
    let (hh, ww) = (d.h, d.w);
    let wx = [[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]];
    let (ph, pw) = (hh / pool, ww / pool);
    let mut norm = Vec::new();
    let mut hist = Vec::new();
    let mut feature = Vec::new();
    for b in 0..d.b {
        for c in 0..d.c {
            let mut padded = vec![vec![0f64; ww + 2]; hh + 2];
            for (py, row) in padded.iter_mut().enumerate() {
                for (px, v) in row.iter_mut().enumerate() {
                    let refl = |i: isize, n: usize| -> usize {
                        if i < 0 {
                            (-i) as usize
                        } else if i >= n as isize {
                            2 * n - 2 - i as usize
                        } else {
                            i as usize
                        }
                    };
                    let sy = refl(py as isize - 1, hh);
                    let sx = refl(px as isize - 1, ww);
                    *v = x.get(b, c, sy, sx) as f64;
                }
            }
            let mut bins = vec![vec![vec![0f64; ww]; hh]; 9];
            for h in 0..hh {
                for w in 0..ww {
                    let (mut gx, mut gy) = (0.0, 0.0);
                    for i in 0..3 {
                        for j in 0..3 {
                            gx += wx[i][j] * padded[h + i][w + j];
                            gy += wx[j][i] * padded[h + i][w + j];
                        }
                    }
                    let n = (gx * gx + gy * gy).sqrt();
                    let mut phase = if gx == 0.0 && gy == 0.0 { 0.0 } else { gy.atan2(gx) };
                    if phase <= -PI {
                        phase = PI;
                    }
                    let k = (((phase + PI) / (2.0 * PI) * 9.0).floor() as usize) % 9;
                    bins[k][h][w] += n;
                    norm.push(n);
                }
            }
            for plane in &bins {
                for row in plane {
                    hist.extend_from_slice(row);
                }
            }
            let mut blocks = vec![vec![vec![0f64; pw]; ph]; 9];
            for (k, plane) in bins.iter().enumerate() {
                for h in 0..hh {
                    for w in 0..ww {
                        blocks[k][h / pool][w / pool] += plane[h][w];
                    }
                }
            }
            let mut normed = vec![vec![vec![0f64; pw]; ph]; 9];
            for by in 0..ph {
                for bx in 0..pw {
                    let l2 = (0..9).map(|k| blocks[k][by][bx].powi(2)).sum::<f64>().sqrt();
                    for k in 0..9 {
                        normed[k][by][bx] = blocks[k][by][bx] / l2.max(1e-12);
                    }
                }
            }
            for plane in &normed {
                for row in plane {
                    feature.extend_from_slice(row);
                }
            }
        }
    }
    HogReference { norm, hist, feature }
}

/// Direct evaluation of the grouped attention forward pass on `R` with explicit kernels
/// (`[out][in]`, shared across groups). Output in storage order.
pub fn ggca_oracle(
    r: &Tensor4,
    groups: usize,
    kernel_h: &[f32],
    bias_h: &[f32],
    kernel_w: &[f32],
    bias_w: &[f32],
) -> Vec<f64> {
    let d = r.dims();
    let cg = d.c / groups;
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let mut out = vec![0f64; d.len()];
    for b in 0..d.b {
        for g in 0..groups {
            // pooled[i][pos] for channel i of the group
            let mut h_avg = vec![vec![0f64; d.h]; cg];
            let mut h_max = vec![vec![f64::NEG_INFINITY; d.h]; cg];
            let mut w_avg = vec![vec![0f64; d.w]; cg];
            let mut w_max = vec![vec![f64::NEG_INFINITY; d.w]; cg];
            for i in 0..cg {
                let c = g * cg + i;
                for h in 0..d.h {
                    for w in 0..d.w {
                        let v = r.get(b, c, h, w) as f64;
                        h_avg[i][h] += v / d.w as f64;
                        w_avg[i][w] += v / d.h as f64;
                        h_max[i][h] = h_max[i][h].max(v);
                        w_max[i][w] = w_max[i][w].max(v);
                    }
                }
            }
            for o in 0..cg {
                let c = g * cg + o;
                let conv = |k: &[f32], bias: &[f32], pooled: &Vec<Vec<f64>>, pos: usize| {
                    bias[o] as f64 + (0..cg).map(|i| k[o * cg + i] as f64 * pooled[i][pos]).sum::<f64>()
                };
                for h in 0..d.h {
                    let ah = sig(conv(kernel_h, bias_h, &h_avg, h) + conv(kernel_h, bias_h, &h_max, h));
                    for w in 0..d.w {
                        let aw = sig(conv(kernel_w, bias_w, &w_avg, w) + conv(kernel_w, bias_w, &w_max, w));
                        let idx = ((b * d.c + c) * d.h + h) * d.w + w;
                        out[idx] = r.get(b, c, h, w) as f64 * ah * aw;
                    }
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y).abs())
        .fold(0.0, f64::max)
}
