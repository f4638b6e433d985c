//! Token-refinement cascade: each stage runs reduced self-attention, local
//! convolutional mixing, then an MLP, all residual at a fixed width.

use super::{Emhsa, EmhsaCache, EmhsaGrads, Ffn, FfnCache, FfnGrads, Mhca, MhcaCache, MhcaGrads};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use alloc::string::ToString;
use alloc::vec::Vec;

#[derive(Debug, Clone)]
pub struct NtbStage {
    pub attn: Emhsa,
    pub local: Mhca,
    pub mlp: Ffn,
}

#[derive(Debug, Clone)]
pub struct Ntb {
    pub stages: Vec<NtbStage>,
}

pub struct NtbStageCache {
    attn: EmhsaCache,
    local: MhcaCache,
    mlp: FfnCache,
}

pub struct NtbCache {
    stages: Vec<NtbStageCache>,
}

#[derive(Debug, Clone)]
pub struct NtbStageGrads {
    pub attn: EmhsaGrads,
    pub local: MhcaGrads,
    pub mlp: FfnGrads,
}

#[derive(Debug, Clone)]
pub struct NtbGrads {
    pub stages: Vec<NtbStageGrads>,
}

impl Ntb {
    pub fn init(
        rng: &mut Rng,
        depth: usize,
        dim: usize,
        heads: usize,
        reduce: usize,
        hidden: usize,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("cascade depth must be >= 1".to_string()));
        }
        let stages = (0..depth)
            .map(|_| {
                Ok(NtbStage {
                    attn: Emhsa::init(rng, dim, heads, reduce)?,
                    local: Mhca::init(rng, dim)?,
                    mlp: Ffn::init(rng, dim, hidden)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stages })
    }

    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    pub fn forward_cached(&self, x: &Tensor, grid: (usize, usize)) -> Result<(Tensor, NtbCache)> {
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let (a, attn_cache) = stage.attn.forward_cached(&cur, grid)?;
            let (l, local_cache) = stage.local.forward_cached(&a, grid)?;
            let (m, mlp_cache) = stage.mlp.forward_cached(&l)?;
            cur = m;
            caches.push(NtbStageCache {
                attn: attn_cache,
                local: local_cache,
                mlp: mlp_cache,
            });
        }
        Ok((cur, NtbCache { stages: caches }))
    }

    pub fn forward(&self, x: &Tensor, grid: (usize, usize)) -> Result<Tensor> {
        Ok(self.forward_cached(x, grid)?.0)
    }

    pub fn backward(&self, cache: &NtbCache, dy: &Tensor) -> Result<(Tensor, NtbGrads)> {
        if cache.stages.len() != self.stages.len() {
            return Err(Error::Dim("cascade cache depth mismatch".to_string()));
        }
        let mut grad = dy.clone();
        let mut out: Vec<Option<NtbStageGrads>> = (0..self.stages.len()).map(|_| None).collect();
        for (i, (stage, sc)) in self.stages.iter().zip(&cache.stages).enumerate().rev() {
            let (dl, mlp_g) = stage.mlp.backward(&sc.mlp, &grad)?;
            let (da, local_g) = stage.local.backward(&sc.local, &dl)?;
            let (dx, attn_g) = stage.attn.backward(&sc.attn, &da)?;
            grad = dx;
            out[i] = Some(NtbStageGrads {
                attn: attn_g,
                local: local_g,
                mlp: mlp_g,
            });
        }
        Ok((
            grad,
            NtbGrads {
                stages: out.into_iter().map(|g| g.unwrap()).collect(),
            },
        ))
    }
}
