//! Desk-scale visual projector built from low-rank delta projections,
//! attention/convolution specialization blocks, and windowed cross-attention
//! over a compact memory, plus an analytic FLOPs/throughput cost model.
//!
//! Everything here is pure f64 math over heap tensors: no files, no threads,
//! no floating-point behavior that depends on the host (`libm` supplies the
//! transcendentals). The crate is `no_std` + `alloc`; file and CLI concerns
//! live in the companion `deltaproj-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod blocks;
pub mod cost;
pub mod delta;
pub mod error;
pub mod fixture;
pub(crate) mod math;
pub mod ops;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
