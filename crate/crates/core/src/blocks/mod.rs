//! Projector building blocks: reduced self-attention, local convolutional
//! mixing, gated MLP refinement, and windowed cross-attention over a compact
//! memory. Every block exposes `forward_cached` returning `(out, cache)` and
//! a `backward` that consumes the cache and an upstream gradient.

pub mod emhsa;
pub mod ffn;
pub mod mhca;
pub mod ntb;
pub mod window;

pub use emhsa::{Emhsa, EmhsaCache, EmhsaGrads};
pub use ffn::{Ffn, FfnCache, FfnGrads};
pub use mhca::{Mhca, MhcaCache, MhcaGrads};
pub use ntb::{Ntb, NtbCache, NtbGrads};
pub use window::{WindowAssignment, WindowAttn, WindowCache};

/// LayerNorm epsilon used by every block.
pub const LN_EPS: f64 = 1e-5;

use crate::tensor::Tensor;

/// Copy a column band `[start, start+width)` of a 2D tensor into its own
/// `[rows × width]` tensor.
pub(crate) fn take_cols(x: &Tensor, start: usize, width: usize) -> Tensor {
    let (rows, cols) = (x.dim(0), x.dim(1));
    let mut out = Tensor::zeros(&[rows, width]);
    let (xd, od) = (x.data(), out.data_mut());
    for r in 0..rows {
        od[r * width..(r + 1) * width]
            .copy_from_slice(&xd[r * cols + start..r * cols + start + width]);
    }
    out
}

/// Accumulate `src` `[rows × width]` into the column band of `dst` starting
/// at `start`.
pub(crate) fn add_cols(dst: &mut Tensor, start: usize, src: &Tensor) {
    let (rows, cols) = (dst.dim(0), dst.dim(1));
    let width = src.dim(1);
    debug_assert_eq!(rows, src.dim(0));
    let sd = src.data();
    let dd = dst.data_mut();
    for r in 0..rows {
        for c in 0..width {
            dd[r * cols + start + c] += sd[r * width + c];
        }
    }
}
