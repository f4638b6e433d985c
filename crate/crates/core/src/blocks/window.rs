//! Windowed cross-attention: each query token attends only to the memory
//! entries assigned to its window. There is no output projection; the
//! attended context is added residually in original query order.

use super::{add_cols, take_cols};
use crate::error::{Error, Result};
use crate::math;
use crate::ops;
use crate::tensor::Tensor;
use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

/// Maps query tokens to windows and windows to memory index sets. Memory
/// indices may repeat across windows; every set must be nonempty.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowAssignment {
    /// Window id per query token.
    pub query_window: Vec<usize>,
    /// Memory indices visible from each window.
    pub memory_sets: Vec<Vec<usize>>,
}

impl WindowAssignment {
    pub fn n_windows(&self) -> usize {
        self.memory_sets.len()
    }

    pub fn validate(&self, n_queries: usize, n_memory: usize) -> Result<()> {
        if self.memory_sets.is_empty() {
            return Err(Error::Config("assignment has no windows".to_string()));
        }
        if self.query_window.len() != n_queries {
            return Err(Error::Config(format!(
                "assignment covers {} queries, input has {n_queries}",
                self.query_window.len()
            )));
        }
        for (q, &w) in self.query_window.iter().enumerate() {
            if w >= self.memory_sets.len() {
                return Err(Error::Config(format!(
                    "query {q} maps to window {w}, only {} windows",
                    self.memory_sets.len()
                )));
            }
        }
        for (w, set) in self.memory_sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Config(format!("window {w} has an empty memory set")));
            }
            for &ix in set {
                if ix >= n_memory {
                    return Err(Error::Config(format!(
                        "window {w} references memory {ix}, only {n_memory} entries"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Total MACs for attention under this assignment (scores + weighted sum).
    pub fn attention_macs(&self, dim: usize) -> u64 {
        self.query_window
            .iter()
            .map(|&w| 2 * self.memory_sets[w].len() as u64 * dim as u64)
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct WindowAttn {
    pub dim: usize,
    pub heads: usize,
}

struct WindowSlice {
    queries: Vec<usize>,
    /// Attention weights per head, `[nq × ns]`.
    attn: Vec<Tensor>,
}

pub struct WindowCache {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    assignment: WindowAssignment,
    slices: Vec<WindowSlice>,
}

impl WindowAttn {
    pub fn new(dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "window attention dim {dim} not divisible by heads {heads}"
            )));
        }
        Ok(Self { dim, heads })
    }

    pub fn forward_cached(
        &self,
        x: &Tensor,
        mem_k: &Tensor,
        mem_v: &Tensor,
        assignment: &WindowAssignment,
    ) -> Result<(Tensor, WindowCache)> {
        if x.rank() != 2 || x.dim(1) != self.dim {
            return Err(Error::Dim(format!("window queries {:?}", x.shape())));
        }
        if mem_k.shape() != mem_v.shape() || mem_k.rank() != 2 || mem_k.dim(1) != self.dim {
            return Err(Error::Dim(format!(
                "window memory k {:?} vs v {:?} at dim {}",
                mem_k.shape(),
                mem_v.shape(),
                self.dim
            )));
        }
        let n = x.dim(0);
        let m = mem_k.dim(0);
        assignment.validate(n, m)?;

        let hd = self.dim / self.heads;
        let scale = 1.0 / math::sqrt(hd as f64);
        let mut out = x.clone();
        let mut slices = Vec::with_capacity(assignment.n_windows());

        for (w, set) in assignment.memory_sets.iter().enumerate() {
            let queries: Vec<usize> = (0..n)
                .filter(|&q| assignment.query_window[q] == w)
                .collect();
            if queries.is_empty() {
                slices.push(WindowSlice {
                    queries,
                    attn: Vec::new(),
                });
                continue;
            }
            let qs = gather_rows(x, &queries);
            let ks = gather_rows(mem_k, set);
            let vs = gather_rows(mem_v, set);
            let mut attn = Vec::with_capacity(self.heads);
            let mut ctx = Tensor::zeros(&[queries.len(), self.dim]);
            for h in 0..self.heads {
                let qh = take_cols(&qs, h * hd, hd);
                let kh = take_cols(&ks, h * hd, hd);
                let vh = take_cols(&vs, h * hd, hd);
                let scores = ops::matmul(&qh, &kh.transpose2())?.scale(scale);
                let a = ops::softmax_lastdim(&scores)?;
                let ctxh = ops::matmul(&a, &vh)?;
                add_cols(&mut ctx, h * hd, &ctxh);
                attn.push(a);
            }
            for (local, &q) in queries.iter().enumerate() {
                for c in 0..self.dim {
                    out.data_mut()[q * self.dim + c] += ctx.at2(local, c);
                }
            }
            slices.push(WindowSlice { queries, attn });
        }

        Ok((
            out,
            WindowCache {
                q: x.clone(),
                k: mem_k.clone(),
                v: mem_v.clone(),
                assignment: assignment.clone(),
                slices,
            },
        ))
    }

    pub fn forward(
        &self,
        x: &Tensor,
        mem_k: &Tensor,
        mem_v: &Tensor,
        assignment: &WindowAssignment,
    ) -> Result<Tensor> {
        Ok(self.forward_cached(x, mem_k, mem_v, assignment)?.0)
    }

    /// Returns `(dx, dmem_k, dmem_v)`.
    pub fn backward(
        &self,
        cache: &WindowCache,
        dy: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let hd = self.dim / self.heads;
        let scale = 1.0 / math::sqrt(hd as f64);
        let mut dx = dy.clone();
        let mut dk = Tensor::zeros(cache.k.shape());
        let mut dv = Tensor::zeros(cache.v.shape());

        for (w, slice) in cache.slices.iter().enumerate() {
            if slice.queries.is_empty() {
                continue;
            }
            let set = &cache.assignment.memory_sets[w];
            let qs = gather_rows(&cache.q, &slice.queries);
            let ks = gather_rows(&cache.k, set);
            let vs = gather_rows(&cache.v, set);
            let dctx = gather_rows(dy, &slice.queries);
            let mut dqs = Tensor::zeros(&[slice.queries.len(), self.dim]);
            let mut dks = Tensor::zeros(&[set.len(), self.dim]);
            let mut dvs = Tensor::zeros(&[set.len(), self.dim]);
            for h in 0..self.heads {
                let a = &slice.attn[h];
                let qh = take_cols(&qs, h * hd, hd);
                let kh = take_cols(&ks, h * hd, hd);
                let vh = take_cols(&vs, h * hd, hd);
                let dctxh = take_cols(&dctx, h * hd, hd);

                let da = ops::matmul(&dctxh, &vh.transpose2())?;
                let dvh = ops::matmul(&a.transpose2(), &dctxh)?;
                let dscores = ops::softmax_backward(a, &da)?.scale(scale);
                let dqh = ops::matmul(&dscores, &kh)?;
                let dkh = ops::matmul(&dscores.transpose2(), &qh)?;
                add_cols(&mut dqs, h * hd, &dqh);
                add_cols(&mut dks, h * hd, &dkh);
                add_cols(&mut dvs, h * hd, &dvh);
            }
            scatter_rows_add(&mut dx, &slice.queries, &dqs);
            scatter_rows_add(&mut dk, set, &dks);
            scatter_rows_add(&mut dv, set, &dvs);
        }
        Ok((dx, dk, dv))
    }
}

fn gather_rows(x: &Tensor, rows: &[usize]) -> Tensor {
    let cols = x.dim(1);
    let mut out = Tensor::zeros(&[rows.len(), cols]);
    for (i, &r) in rows.iter().enumerate() {
        out.data_mut()[i * cols..(i + 1) * cols].copy_from_slice(x.row(r));
    }
    out
}

fn scatter_rows_add(dst: &mut Tensor, rows: &[usize], src: &Tensor) {
    let cols = dst.dim(1);
    for (i, &r) in rows.iter().enumerate() {
        for c in 0..cols {
            dst.data_mut()[r * cols + c] += src.at2(i, c);
        }
    }
}
