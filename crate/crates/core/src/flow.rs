//! Single-scale Horn–Schunck optical flow.
//!
//! The returned field follows the sampling convention used by [`crate::warp`]: for each pixel
//! of `next` it points at the matching location in `prev`, so `next(x) ≈ prev(x + F(x))`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{FlowField, Tensor4};

/// Luminance weights for RGB input.
const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Intensities are rescaled to 8-bit range before estimation so `alpha` keeps its usual meaning.
const INTENSITY_SCALE: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowParams {
    /// Smoothness weight.
    pub alpha: f64,
    pub iterations: usize,
    /// 3x3 Gaussian (sigma 1) smoothing of both frames before differentiation.
    pub prefilter: bool,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            alpha: 15.0,
            iterations: 200,
            prefilter: true,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::param(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.iterations == 0 {
            return Err(Error::param("iterations must be >= 1"));
        }
        Ok(())
    }
}

/// Row-major single-channel image used internally.
#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    px: Vec<f64>,
}

impl Plane {
    #[inline]
    fn at(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.px[y * self.w + x]
    }
}

fn luminance(frame: &Tensor4, b: usize) -> Result<Plane> {
    let d = frame.dims();
    let px: Vec<f64> = match d.c {
        1 => frame.plane(b, 0).iter().map(|&v| v as f64).collect(),
        3 => {
            let (r, g, bl) = (frame.plane(b, 0), frame.plane(b, 1), frame.plane(b, 2));
            (0..d.plane())
                .map(|i| (LUMA[0] * r[i] + LUMA[1] * g[i] + LUMA[2] * bl[i]) as f64)
                .collect()
        }
        c => return Err(Error::shape(format!("flow needs 1 or 3 channels, got {c}"))),
    };
    Ok(Plane {
        h: d.h,
        w: d.w,
        px: px.into_iter().map(|v| v * INTENSITY_SCALE).collect(),
    })
}

fn gaussian3(p: &Plane) -> Plane {
    let side = (-0.5f64).exp();
    let k = [side / (1.0 + 2.0 * side), 1.0 / (1.0 + 2.0 * side), side / (1.0 + 2.0 * side)];
    let mut tmp = p.clone();
    for y in 0..p.h {
        for x in 0..p.w {
            let (yi, xi) = (y as isize, x as isize);
            tmp.px[y * p.w + x] = k[0] * p.at(yi, xi - 1) + k[1] * p.at(yi, xi) + k[2] * p.at(yi, xi + 1);
        }
    }
    let mut out = tmp.clone();
    for y in 0..p.h {
        for x in 0..p.w {
            let (yi, xi) = (y as isize, x as isize);
            out.px[y * p.w + x] = k[0] * tmp.at(yi - 1, xi) + k[1] * tmp.at(yi, xi) + k[2] * tmp.at(yi + 1, xi);
        }
    }
    out
}

/// Spatial derivatives by central differences averaged over both frames, temporal by forward difference.
fn derivatives(prev: &Plane, next: &Plane) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = prev.h * prev.w;
    let (mut ix, mut iy, mut it) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for y in 0..prev.h {
        for x in 0..prev.w {
            let (yi, xi) = (y as isize, x as isize);
            let i = y * prev.w + x;
            let dx = |p: &Plane| (p.at(yi, xi + 1) - p.at(yi, xi - 1)) / 2.0;
            let dy = |p: &Plane| (p.at(yi + 1, xi) - p.at(yi - 1, xi)) / 2.0;
            ix[i] = 0.5 * (dx(prev) + dx(next));
            iy[i] = 0.5 * (dy(prev) + dy(next));
            it[i] = next.px[i] - prev.px[i];
        }
    }
    (ix, iy, it)
}

/// Weighted neighbourhood mean: 1/6 for edge neighbours, 1/12 for diagonals.
#[inline]
fn local_mean(f: &Plane, y: isize, x: isize) -> f64 {
    (f.at(y - 1, x) + f.at(y + 1, x) + f.at(y, x - 1) + f.at(y, x + 1)) / 6.0
        + (f.at(y - 1, x - 1) + f.at(y - 1, x + 1) + f.at(y + 1, x - 1) + f.at(y + 1, x + 1)) / 12.0
}

fn solve(prev: &Plane, next: &Plane, params: &FlowParams) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (prev.h, prev.w);
    let (ix, iy, it) = derivatives(prev, next);
    let a2 = params.alpha * params.alpha;
    let mut u = Plane { h, w, px: vec![0.0; h * w] };
    let mut v = u.clone();
    let mut u_next = u.clone();
    let mut v_next = u.clone();
    for _ in 0..params.iterations {
        u_next
            .px
            .par_chunks_mut(w)
            .zip(v_next.px.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (urow, vrow))| {
                for x in 0..w {
                    let i = y * w + x;
                    let ub = local_mean(&u, y as isize, x as isize);
                    let vb = local_mean(&v, y as isize, x as isize);
                    let t = (ix[i] * ub + iy[i] * vb + it[i]) / (a2 + ix[i] * ix[i] + iy[i] * iy[i]);
                    urow[x] = ub - ix[i] * t;
                    vrow[x] = vb - iy[i] * t;
                }
            });
        std::mem::swap(&mut u, &mut u_next);
        std::mem::swap(&mut v, &mut v_next);
    }
    (u.px, v.px)
}

/// Estimates the flow between two frames of equal shape (`C` of 1 or 3, `H, W >= 1`).
pub fn horn_schunck(prev: &Tensor4, next: &Tensor4, params: &FlowParams) -> Result<FlowField> {
    params.validate()?;
    let d = prev.dims();
    if d != next.dims() {
        return Err(Error::shape(format!("frames differ: {d} vs {}", next.dims())));
    }
    let mut out = Tensor4::zeros([d.b, 2, d.h, d.w]);
    if d.plane() == 0 {
        return FlowField::new(out);
    }
    for b in 0..d.b {
        let (mut p, mut n) = (luminance(prev, b)?, luminance(next, b)?);
        if params.prefilter {
            p = gaussian3(&p);
            n = gaussian3(&n);
        }
        let (du, dv) = solve(&p, &n, params);
        // the iteration yields where content moved to; the sampling field points back.
        // Adding 0.0 folds -0.0 so identical inputs write identical bytes.
        for y in 0..d.h {
            for x in 0..d.w {
                let i = y * d.w + x;
                out.set(b, 0, y, x, (-du[i]) as f32 + 0.0);
                out.set(b, 1, y, x, (-dv[i]) as f32 + 0.0);
            }
        }
    }
    FlowField::new(out)
}
