//! Numerical kernels for flow-residual video forensics.
//!
//! * [`warp`]: motion-compensated reconstruction of the next frame and its absolute residual.
//! * [`flow`]: a Horn–Schunck estimator producing the displacement field the warp consumes.
//! * [`hog`]: Sobel orientation histograms pooled into L2-normalized blocks.
//! * [`ggca`]: grouped dual-axis pooling attention (forward pass only).
//! * [`synthetic`]: translating test sequences and the residual-energy comparison.
//! * [`pipeline`]: the frames → flow → reconstruction → residual chain plus HOG/attention outputs.
//!
//! Everything is carried by [`Tensor4`] (`B x C x H x W`, `f32`) and read/written via [`io`].

pub mod error;
pub mod flow;
pub mod ggca;
pub mod hog;
pub mod io;
pub mod pipeline;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod warp;

pub use error::{Error, Result};
pub use tensor::{Dims, FlowField, Tensor4};
