//! Pre-norm multi-head self-attention with spatially reduced keys/values.
//! K and V are projected at full length, then bilinearly pooled on the token
//! grid by the reduction factor, so attention scores span `N × M` with
//! `M = (gh/s)·(gw/s)`.

use super::{add_cols, take_cols, LN_EPS};
use crate::error::{Error, Result};
use crate::math;
use crate::ops;
use crate::rng::Rng;
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec::Vec;

#[derive(Debug, Clone)]
pub struct Emhsa {
    pub dim: usize,
    pub heads: usize,
    /// Spatial reduction factor for K/V; 1 disables pooling.
    pub reduce: usize,
    pub ln_g: Tensor,
    pub ln_b: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

#[derive(Debug)]
pub struct EmhsaCache {
    x: Tensor,
    xn: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Per-head attention weights, each `[N × M]`.
    attn: Vec<Tensor>,
    ctx: Tensor,
    grid: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct EmhsaGrads {
    pub ln_g: Tensor,
    pub ln_b: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

impl Emhsa {
    pub fn init(rng: &mut Rng, dim: usize, heads: usize, reduce: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "attention dim {dim} not divisible by heads {heads}"
            )));
        }
        if reduce == 0 {
            return Err(Error::Config("reduce factor must be >= 1".into()));
        }
        let a = 1.0 / math::sqrt(dim as f64);
        Ok(Self {
            dim,
            heads,
            reduce,
            ln_g: Tensor::filled(&[dim], 1.0),
            ln_b: Tensor::zeros(&[dim]),
            wq: rng.fill_symmetric(&[dim, dim], a),
            wk: rng.fill_symmetric(&[dim, dim], a),
            wv: rng.fill_symmetric(&[dim, dim], a),
            wo: rng.fill_symmetric(&[dim, dim], a),
        })
    }

    /// Pool `[N × d]` tokens on their grid down by the reduce factor.
    fn pool(&self, t: &Tensor, grid: (usize, usize)) -> Result<Tensor> {
        let (gh, gw) = grid;
        let g = ops::tokens_to_grid(t, gh, gw)?;
        let small = ops::bilinear_resize(&g, gh / self.reduce, gw / self.reduce)?;
        ops::grid_to_tokens(&small)
    }

    pub fn forward_cached(&self, x: &Tensor, grid: (usize, usize)) -> Result<(Tensor, EmhsaCache)> {
        let (gh, gw) = grid;
        if x.rank() != 2 || x.dim(0) != gh * gw || x.dim(1) != self.dim {
            return Err(Error::Dim(format!(
                "emhsa input {:?} vs grid {gh}x{gw} at dim {}",
                x.shape(),
                self.dim
            )));
        }
        if gh % self.reduce != 0 || gw % self.reduce != 0 {
            return Err(Error::Dim(format!(
                "reduce {} does not divide grid {gh}x{gw}",
                self.reduce
            )));
        }
        let n = gh * gw;
        let hd = self.dim / self.heads;
        let scale = 1.0 / math::sqrt(hd as f64);

        let xn = ops::layer_norm(x, &self.ln_g, &self.ln_b, LN_EPS)?;
        let q = ops::linear(&xn, &self.wq)?;
        let k_full = ops::linear(&xn, &self.wk)?;
        let v_full = ops::linear(&xn, &self.wv)?;
        let (k, v) = if self.reduce > 1 {
            (self.pool(&k_full, grid)?, self.pool(&v_full, grid)?)
        } else {
            (k_full, v_full)
        };

        let mut ctx = Tensor::zeros(&[n, self.dim]);
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = take_cols(&q, h * hd, hd);
            let kh = take_cols(&k, h * hd, hd);
            let vh = take_cols(&v, h * hd, hd);
            let scores = ops::matmul(&qh, &kh.transpose2())?.scale(scale);
            let a = ops::softmax_lastdim(&scores)?;
            let ctxh = ops::matmul(&a, &vh)?;
            add_cols(&mut ctx, h * hd, &ctxh);
            attn.push(a);
        }
        let out = x.add(&ops::linear(&ctx, &self.wo)?)?;
        Ok((
            out,
            EmhsaCache {
                x: x.clone(),
                xn,
                q,
                k,
                v,
                attn,
                ctx,
                grid,
            },
        ))
    }

    pub fn forward(&self, x: &Tensor, grid: (usize, usize)) -> Result<Tensor> {
        Ok(self.forward_cached(x, grid)?.0)
    }

    pub fn backward(&self, cache: &EmhsaCache, dy: &Tensor) -> Result<(Tensor, EmhsaGrads)> {
        let (gh, gw) = cache.grid;
        let hd = self.dim / self.heads;
        let scale = 1.0 / math::sqrt(hd as f64);

        let (dctx, dwo) = ops::linear_backward(&cache.ctx, &self.wo, dy)?;
        let n = cache.x.dim(0);
        let m = cache.k.dim(0);
        let mut dq = Tensor::zeros(&[n, self.dim]);
        let mut dk = Tensor::zeros(&[m, self.dim]);
        let mut dv = Tensor::zeros(&[m, self.dim]);
        for h in 0..self.heads {
            let a = &cache.attn[h];
            let kh = take_cols(&cache.k, h * hd, hd);
            let vh = take_cols(&cache.v, h * hd, hd);
            let qh = take_cols(&cache.q, h * hd, hd);
            let dctxh = take_cols(&dctx, h * hd, hd);

            let da = ops::matmul(&dctxh, &vh.transpose2())?;
            let dvh = ops::matmul(&a.transpose2(), &dctxh)?;
            let dscores = ops::softmax_backward(a, &da)?.scale(scale);
            let dqh = ops::matmul(&dscores, &kh)?;
            let dkh = ops::matmul(&dscores.transpose2(), &qh)?;
            add_cols(&mut dq, h * hd, &dqh);
            add_cols(&mut dk, h * hd, &dkh);
            add_cols(&mut dv, h * hd, &dvh);
        }

        // Undo the pooling: adjoint scatters reduced-grid grads to full length.
        let (dk_full, dv_full) = if self.reduce > 1 {
            let unpool = |g: &Tensor| -> Result<Tensor> {
                let small = ops::tokens_to_grid(g, gh / self.reduce, gw / self.reduce)?;
                let big = ops::bilinear_resize_backward(gh, gw, &small)?;
                ops::grid_to_tokens(&big)
            };
            (unpool(&dk)?, unpool(&dv)?)
        } else {
            (dk, dv)
        };

        let (mut dxn, dwq) = ops::linear_backward(&cache.xn, &self.wq, &dq)?;
        let (dxn_k, dwk) = ops::linear_backward(&cache.xn, &self.wk, &dk_full)?;
        let (dxn_v, dwv) = ops::linear_backward(&cache.xn, &self.wv, &dv_full)?;
        dxn.add_assign(&dxn_k)?;
        dxn.add_assign(&dxn_v)?;

        let (dx_ln, dg, db) = ops::layer_norm_backward(&cache.x, &self.ln_g, LN_EPS, &dxn)?;
        let dx = dy.add(&dx_ln)?;
        Ok((
            dx,
            EmhsaGrads {
                ln_g: dg,
                ln_b: db,
                wq: dwq,
                wk: dwk,
                wv: dwv,
                wo: dwo,
            },
        ))
    }

    /// Token count of the pooled K/V sequence for an input grid.
    pub fn kv_tokens(&self, grid: (usize, usize)) -> usize {
        (grid.0 / self.reduce) * (grid.1 / self.reduce)
    }
}
