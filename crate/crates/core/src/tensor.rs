use std::fmt;

use crate::error::{Error, Result};

/// Shape of a rank-4 tensor, `(batch, channels, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(b: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { b, c, h, w }
    }

    /// Total element count, or `None` on overflow.
    pub fn checked_len(&self) -> Option<usize> {
        self.b
            .checked_mul(self.c)?
            .checked_mul(self.h)?
            .checked_mul(self.w)
    }

    pub fn len(&self) -> usize {
        self.b * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.b, self.c, self.h, self.w]
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.b, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Dims {
    fn from(d: [usize; 4]) -> Self {
        Dims::new(d[0], d[1], d[2], d[3])
    }
}

/// Dense `B x C x H x W` grid of `f32`, width fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    dims: Dims,
    data: Vec<f32>,
}

impl Tensor4 {
    pub fn zeros(dims: impl Into<Dims>) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: impl Into<Dims>, value: f32) -> Self {
        let dims = dims.into();
        Tensor4 {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: impl Into<Dims>, data: Vec<f32>) -> Result<Self> {
        let dims = dims.into();
        let len = dims
            .checked_len()
            .ok_or_else(|| Error::shape(format!("dims {dims} overflow")))?;
        if len != data.len() {
            return Err(Error::shape(format!(
                "dims {dims} need {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor4 { dims, data })
    }

    /// Builds a tensor by evaluating `f(b, c, h, w)` in storage order.
    pub fn from_fn(dims: impl Into<Dims>, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let dims = dims.into();
        let mut data = Vec::with_capacity(dims.len());
        for b in 0..dims.b {
            for c in 0..dims.c {
                for h in 0..dims.h {
                    for w in 0..dims.w {
                        data.push(f(b, c, h, w));
                    }
                }
            }
        }
        Tensor4 { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(b < self.dims.b && c < self.dims.c && h < self.dims.h && w < self.dims.w);
        ((b * self.dims.c + c) * self.dims.h + h) * self.dims.w + w
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.index(b, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, h: usize, w: usize, value: f32) {
        let i = self.index(b, c, h, w);
        self.data[i] = value;
    }

    /// The `H x W` plane for one `(b, c)` pair.
    pub fn plane(&self, b: usize, c: usize) -> &[f32] {
        let start = self.index(b, c, 0, 0);
        &self.data[start..start + self.dims.plane()]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    /// Concatenates tensors along the channel axis. All inputs must agree on B, H, W.
    pub fn concat_channels(parts: &[&Tensor4]) -> Result<Tensor4> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("nothing to concatenate"))?
            .dims;
        for p in parts {
            let d = p.dims;
            if (d.b, d.h, d.w) != (first.b, first.h, first.w) {
                return Err(Error::shape(format!(
                    "cannot concatenate {d} with {first} along channels"
                )));
            }
        }
        let c: usize = parts.iter().map(|p| p.dims.c).sum();
        let dims = Dims::new(first.b, c, first.h, first.w);
        let mut data = Vec::with_capacity(dims.len());
        for b in 0..first.b {
            for p in parts {
                let stride = p.dims.c * p.dims.plane();
                data.extend_from_slice(&p.data[b * stride..(b + 1) * stride]);
            }
        }
        Ok(Tensor4 { dims, data })
    }
}

/// Dense displacement field with two channels: `u` (rightward) then `v` (downward), in pixels.
///
/// The displacement at a pixel points at the location in the *source* frame that the
/// pixel is sampled from, i.e. `next(x, y) ≈ prev(x + u, y + v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField(Tensor4);

impl FlowField {
    pub fn new(t: Tensor4) -> Result<Self> {
        if t.dims().c != 2 {
            return Err(Error::shape(format!(
                "flow field needs 2 channels, got dims {}",
                t.dims()
            )));
        }
        t.ensure_finite("flow field")?;
        Ok(FlowField(t))
    }

    pub fn zeros(b: usize, h: usize, w: usize) -> Self {
        FlowField(Tensor4::zeros([b, 2, h, w]))
    }

    pub fn uniform(b: usize, h: usize, w: usize, u: f32, v: f32) -> Self {
        FlowField(Tensor4::from_fn([b, 2, h, w], |_, c, _, _| if c == 0 { u } else { v }))
    }

    pub fn dims(&self) -> Dims {
        self.0.dims()
    }

    pub fn u(&self, b: usize, h: usize, w: usize) -> f32 {
        self.0.get(b, 0, h, w)
    }

    pub fn v(&self, b: usize, h: usize, w: usize) -> f32 {
        self.0.get(b, 1, h, w)
    }

    pub fn tensor(&self) -> &Tensor4 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor4 {
        self.0
    }
}

impl AsRef<Tensor4> for FlowField {
    fn as_ref(&self) -> &Tensor4 {
        &self.0
    }
}

pub(crate) fn ensure_same_dims(a: Dims, b: Dims, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor4::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        let t = Tensor4::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.get(0, 0, 1, 0), 3.0);
    }

    #[test]
    fn flow_requires_two_channels() {
        assert!(FlowField::new(Tensor4::zeros([1, 3, 2, 2])).is_err());
        let mut t = Tensor4::zeros([1, 2, 2, 2]);
        t.set(0, 1, 0, 0, f32::NAN);
        assert!(FlowField::new(t).is_err());
    }

    #[test]
    fn concat_interleaves_batches() {
        let a = Tensor4::full([2, 1, 1, 2], 1.0);
        let b = Tensor4::full([2, 2, 1, 2], 2.0);
        let c = Tensor4::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.dims(), Dims::new(2, 3, 1, 2));
        assert_eq!(c.data(), &[1., 1., 2., 2., 2., 2., 1., 1., 2., 2., 2., 2.]);
    }
}
