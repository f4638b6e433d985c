//! Pre-norm feed-forward refinement: `x + W2 · gelu(W1 · LN(x))`.

use super::LN_EPS;
use crate::error::{Error, Result};
use crate::math;
use crate::ops;
use crate::rng::Rng;
use crate::tensor::Tensor;
use alloc::format;

#[derive(Debug, Clone)]
pub struct Ffn {
    pub dim: usize,
    pub hidden: usize,
    pub ln_g: Tensor,
    pub ln_b: Tensor,
    pub w1: Tensor,
    pub w2: Tensor,
}

#[derive(Debug)]
pub struct FfnCache {
    x: Tensor,
    xn: Tensor,
    pre_act: Tensor,
    act: Tensor,
}

#[derive(Debug, Clone)]
pub struct FfnGrads {
    pub ln_g: Tensor,
    pub ln_b: Tensor,
    pub w1: Tensor,
    pub w2: Tensor,
}

impl Ffn {
    pub fn init(rng: &mut Rng, dim: usize, hidden: usize) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::Config(format!(
                "ffn dims must be positive: dim {dim}, hidden {hidden}"
            )));
        }
        Ok(Self {
            dim,
            hidden,
            ln_g: Tensor::filled(&[dim], 1.0),
            ln_b: Tensor::zeros(&[dim]),
            w1: rng.fill_symmetric(&[hidden, dim], 1.0 / math::sqrt(dim as f64)),
            w2: rng.fill_symmetric(&[dim, hidden], 1.0 / math::sqrt(hidden as f64)),
        })
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, FfnCache)> {
        if x.rank() != 2 || x.dim(1) != self.dim {
            return Err(Error::Dim(format!(
                "ffn input {:?} at dim {}",
                x.shape(),
                self.dim
            )));
        }
        let xn = ops::layer_norm(x, &self.ln_g, &self.ln_b, LN_EPS)?;
        let pre_act = ops::linear(&xn, &self.w1)?;
        let act = ops::gelu(&pre_act);
        let out = x.add(&ops::linear(&act, &self.w2)?)?;
        Ok((
            out,
            FfnCache {
                x: x.clone(),
                xn,
                pre_act,
                act,
            },
        ))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn backward(&self, cache: &FfnCache, dy: &Tensor) -> Result<(Tensor, FfnGrads)> {
        let (dact, dw2) = ops::linear_backward(&cache.act, &self.w2, dy)?;
        let dpre = ops::gelu_backward(&cache.pre_act, &dact)?;
        let (dxn, dw1) = ops::linear_backward(&cache.xn, &self.w1, &dpre)?;
        let (dx_ln, dg, db) = ops::layer_norm_backward(&cache.x, &self.ln_g, LN_EPS, &dxn)?;
        let dx = dy.add(&dx_ln)?;
        Ok((
            dx,
            FfnGrads {
                ln_g: dg,
                ln_b: db,
                w1: dw1,
                w2: dw2,
            },
        ))
    }
}
