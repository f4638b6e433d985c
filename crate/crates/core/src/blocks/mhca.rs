//! Local convolutional mixing: a depthwise 3×3 over the token grid, channel
//! LayerNorm per position, ReLU, then a dense 1×1 merge, added residually.

use super::LN_EPS;
use crate::error::{Error, Result};
use crate::math;
use crate::ops;
use crate::rng::Rng;
use crate::tensor::Tensor;
use alloc::format;

#[derive(Debug, Clone)]
pub struct Mhca {
    pub dim: usize,
    pub kernel: Tensor,
    pub ln_g: Tensor,
    pub ln_b: Tensor,
    pub merge: Tensor,
}

#[derive(Debug)]
pub struct MhcaCache {
    x_grid: Tensor,
    conv_tokens: Tensor,
    normed: Tensor,
    act: Tensor,
    dy_shape: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct MhcaGrads {
    pub kernel: Tensor,
    pub ln_g: Tensor,
    pub ln_b: Tensor,
    pub merge: Tensor,
}

impl Mhca {
    pub fn init(rng: &mut Rng, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("mhca dim must be positive".into()));
        }
        Ok(Self {
            dim,
            kernel: rng.fill_symmetric(&[dim, 3, 3], 1.0 / 3.0),
            ln_g: Tensor::filled(&[dim], 1.0),
            ln_b: Tensor::zeros(&[dim]),
            merge: rng.fill_symmetric(&[dim, dim], 1.0 / math::sqrt(dim as f64)),
        })
    }

    pub fn forward_cached(&self, x: &Tensor, grid: (usize, usize)) -> Result<(Tensor, MhcaCache)> {
        let (gh, gw) = grid;
        if x.rank() != 2 || x.dim(0) != gh * gw || x.dim(1) != self.dim {
            return Err(Error::Dim(format!(
                "mhca input {:?} vs grid {gh}x{gw} at dim {}",
                x.shape(),
                self.dim
            )));
        }
        let x_grid = ops::tokens_to_grid(x, gh, gw)?;
        let conv = ops::depthwise_conv3x3(&x_grid, &self.kernel)?;
        let conv_tokens = ops::grid_to_tokens(&conv)?;
        let normed = ops::layer_norm(&conv_tokens, &self.ln_g, &self.ln_b, LN_EPS)?;
        let act = ops::relu(&normed);
        let out = x.add(&ops::linear(&act, &self.merge)?)?;
        Ok((
            out,
            MhcaCache {
                x_grid,
                conv_tokens,
                normed,
                act,
                dy_shape: grid,
            },
        ))
    }

    pub fn forward(&self, x: &Tensor, grid: (usize, usize)) -> Result<Tensor> {
        Ok(self.forward_cached(x, grid)?.0)
    }

    pub fn backward(&self, cache: &MhcaCache, dy: &Tensor) -> Result<(Tensor, MhcaGrads)> {
        let (gh, gw) = cache.dy_shape;
        let (dact, dmerge) = ops::linear_backward(&cache.act, &self.merge, dy)?;
        let dnormed = ops::relu_backward(&cache.normed, &dact)?;
        let (dconv_tokens, dg, db) =
            ops::layer_norm_backward(&cache.conv_tokens, &self.ln_g, LN_EPS, &dnormed)?;
        let dconv_grid = ops::tokens_to_grid(&dconv_tokens, gh, gw)?;
        let (dx_grid, dkernel) =
            ops::depthwise_conv3x3_backward(&cache.x_grid, &self.kernel, &dconv_grid)?;
        let dx = dy.add(&ops::grid_to_tokens(&dx_grid)?)?;
        Ok((
            dx,
            MhcaGrads {
                kernel: dkernel,
                ln_g: dg,
                ln_b: db,
                merge: dmerge,
            },
        ))
    }
}
