//! Backward warping of a frame along a flow field and the absolute prediction residual.
//!
//! Sampling goes through normalized coordinates: every target pixel gets a grid point in
//! `[-1, 1]^2`, the flow displaces it (clamped to the square), the point is mapped back to
//! pixel units and the source frame is read with bilinear weights. Neighbour indices are
//! clamped to the last row/column, so samples on the border replicate it.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_dims, FlowField, Tensor4};

/// Distances below this from an integer lattice position are treated as exact hits.
const LATTICE_SNAP: f64 = 1e-9;

/// Normalized sampling coordinates, layout `(B, H, W, 2)` with components `(x', y')`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid {
    b: usize,
    h: usize,
    w: usize,
    coords: Vec<f64>,
}

impl SampleGrid {
    pub fn batch(&self) -> usize {
        self.b
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    /// `(x', y')` for one target pixel.
    pub fn at(&self, b: usize, h: usize, w: usize) -> (f64, f64) {
        let i = 2 * ((b * self.h + h) * self.w + w);
        (self.coords[i], self.coords[i + 1])
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// Identity grid: `x' = 2w/(W-1) - 1`, `y' = 2h/(H-1) - 1`, repeated over the batch.
pub fn make_grid(height: usize, width: usize, batch: usize) -> Result<SampleGrid> {
    if height < 2 || width < 2 {
        return Err(Error::param(format!(
            "sampling grid needs H, W >= 2, got {height}x{width}"
        )));
    }
    let sx = 2.0 / (width - 1) as f64;
    let sy = 2.0 / (height - 1) as f64;
    let mut coords = Vec::with_capacity(batch * height * width * 2);
    for _ in 0..batch {
        for h in 0..height {
            for w in 0..width {
                coords.push(w as f64 * sx - 1.0);
                coords.push(h as f64 * sy - 1.0);
            }
        }
    }
    Ok(SampleGrid {
        b: batch,
        h: height,
        w: width,
        coords,
    })
}

/// Displaces each grid point by the flow, `2u/(W-1)` and `2v/(H-1)` in normalized units,
/// then clamps both components to `[-1, 1]`.
pub fn offset_grid(grid: &SampleGrid, flow: &FlowField) -> Result<SampleGrid> {
    let d = flow.dims();
    if (d.b, d.h, d.w) != (grid.b, grid.h, grid.w) {
        return Err(Error::shape(format!(
            "grid is {}x{}x{}, flow is {d}",
            grid.b, grid.h, grid.w
        )));
    }
    let sx = 2.0 / (grid.w - 1) as f64;
    let sy = 2.0 / (grid.h - 1) as f64;
    let mut coords = grid.coords.clone();
    for b in 0..grid.b {
        for h in 0..grid.h {
            for w in 0..grid.w {
                let i = 2 * ((b * grid.h + h) * grid.w + w);
                coords[i] = (coords[i] + flow.u(b, h, w) as f64 * sx).clamp(-1.0, 1.0);
                coords[i + 1] = (coords[i + 1] + flow.v(b, h, w) as f64 * sy).clamp(-1.0, 1.0);
            }
        }
    }
    Ok(SampleGrid {
        b: grid.b,
        h: grid.h,
        w: grid.w,
        coords,
    })
}

/// Maps normalized coordinates back to pixel units: `((x'+1)(W-1)/2, (y'+1)(H-1)/2)`.
pub fn denormalize(xn: f64, yn: f64, width: usize, height: usize) -> (f64, f64) {
    let x = (xn + 1.0) * (width - 1) as f64 / 2.0;
    let y = (yn + 1.0) * (height - 1) as f64 / 2.0;
    (x, y)
}

/// Bilinear weights of the four lattice neighbours around a sample point.
///
/// `w00` is the top-left neighbour `(floor x, floor y)`, `w10` the one to its right,
/// `w01` the one below, `w11` the diagonal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BilinearWeights {
    pub w00: f64,
    pub w10: f64,
    pub w01: f64,
    pub w11: f64,
}

impl BilinearWeights {
    pub fn sum(&self) -> f64 {
        self.w00 + self.w10 + self.w01 + self.w11
    }
}

pub fn bilinear_weights(x: f64, y: f64) -> BilinearWeights {
    let fx = x - x.floor();
    let fy = y - y.floor();
    BilinearWeights {
        w00: (1.0 - fx) * (1.0 - fy),
        w10: fx * (1.0 - fy),
        w01: (1.0 - fx) * fy,
        w11: fx * fy,
    }
}

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < LATTICE_SNAP {
        r
    } else {
        x
    }
}

/// Precomputed source taps for one target pixel.
#[derive(Clone, Copy)]
struct Tap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    wt: BilinearWeights,
}

fn taps_for(grid: &SampleGrid, b: usize) -> Vec<Tap> {
    let (hh, ww) = (grid.h, grid.w);
    let mut taps = Vec::with_capacity(hh * ww);
    for h in 0..hh {
        for w in 0..ww {
            let (xn, yn) = grid.at(b, h, w);
            let (x, y) = denormalize(xn, yn, ww, hh);
            let (x, y) = (snap(x), snap(y));
            let x0 = (x.floor().max(0.0) as usize).min(ww - 1);
            let y0 = (y.floor().max(0.0) as usize).min(hh - 1);
            taps.push(Tap {
                x0,
                x1: (x0 + 1).min(ww - 1),
                y0,
                y1: (y0 + 1).min(hh - 1),
                wt: bilinear_weights(x, y),
            });
        }
    }
    taps
}

/// Reconstructs the next frame by sampling `frame` at the flow-displaced grid.
///
/// `frame` is `(B, C, H, W)` and `flow` is `(B, 2, H, W)`; the result has the shape of `frame`.
pub fn reconstruct_frame(frame: &Tensor4, flow: &FlowField) -> Result<Tensor4> {
    let d = frame.dims();
    let fd = flow.dims();
    if (d.b, d.h, d.w) != (fd.b, fd.h, fd.w) {
        return Err(Error::shape(format!("frame is {d}, flow is {fd}")));
    }
    let grid = offset_grid(&make_grid(d.h, d.w, d.b)?, flow)?;
    let plane = d.plane();
    let mut out = Tensor4::zeros(d);
    if d.is_empty() {
        return Ok(out);
    }
    let src = frame.data();
    out.data_mut()
        .par_chunks_mut(d.c * plane)
        .enumerate()
        .for_each(|(b, item)| {
            let taps = taps_for(&grid, b);
            for (c, dst) in item.chunks_mut(plane).enumerate() {
                let p = &src[(b * d.c + c) * plane..][..plane];
                for (o, t) in dst.iter_mut().zip(&taps) {
                    let v = t.wt.w00 * p[t.y0 * d.w + t.x0] as f64
                        + t.wt.w10 * p[t.y0 * d.w + t.x1] as f64
                        + t.wt.w01 * p[t.y1 * d.w + t.x0] as f64
                        + t.wt.w11 * p[t.y1 * d.w + t.x1] as f64;
                    *o = v as f32;
                }
            }
        });
    Ok(out)
}

/// Elementwise `|recon - next|`.
pub fn residual(recon: &Tensor4, next: &Tensor4) -> Result<Tensor4> {
    ensure_same_dims(recon.dims(), next.dims(), "residual operands differ")?;
    let data = recon
        .data()
        .iter()
        .zip(next.data())
        .map(|(a, b)| (a - b).abs())
        .collect();
    Tensor4::from_vec(recon.dims(), data)
}
