//! Low-rank delta projections: a dense base map plus a rank-r update
//! `W = base + u·v`, applied factored so the `d_out × d_in` update matrix is
//! never formed. A family shares one base across several pathways that each
//! carry their own `(u, v)` factors.

use crate::error::{Error, Result};
use crate::math;
use crate::ops;
use crate::rng::Rng;
use crate::tensor::Tensor;
use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

/// Relative singular-value threshold: σ counts toward the numerical rank
/// when σ > REL_SIGMA · σ_max.
pub const REL_SIGMA: f64 = 1e-9;

fn check_factors(base: &Tensor, u: &Tensor, v: &Tensor) -> Result<(usize, usize, usize)> {
    if base.rank() != 2 || u.rank() != 2 || v.rank() != 2 {
        return Err(Error::Dim("delta factors must be 2D".to_string()));
    }
    let (d_out, d_in) = (base.dim(0), base.dim(1));
    let r = u.dim(1);
    if u.dim(0) != d_out || v.dim(0) != r || v.dim(1) != d_in {
        return Err(Error::Dim(format!(
            "delta factor shapes: base {:?}, u {:?}, v {:?}",
            base.shape(),
            u.shape(),
            v.shape()
        )));
    }
    if r == 0 || r > d_out.min(d_in) {
        return Err(Error::Dim(format!(
            "delta rank {r} outside 1..={}",
            d_out.min(d_in)
        )));
    }
    Ok((d_out, d_in, r))
}

/// `x · (base + u·v)ᵀ` computed as `x·baseᵀ + (x·vᵀ)·uᵀ`.
pub fn delta_apply(x: &Tensor, base: &Tensor, u: &Tensor, v: &Tensor) -> Result<Tensor> {
    check_factors(base, u, v)?;
    let mut y = ops::linear(x, base)?;
    let t = ops::linear(x, v)?;
    let y2 = ops::linear(&t, u)?;
    y.add_assign(&y2)?;
    Ok(y)
}

/// Parameter gradients of one delta projection.
#[derive(Debug, Clone)]
pub struct DeltaGrads {
    pub base: Tensor,
    pub u: Tensor,
    pub v: Tensor,
}

/// Backward of `delta_apply`: returns `(dx, grads)`.
pub fn delta_backward(
    x: &Tensor,
    base: &Tensor,
    u: &Tensor,
    v: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, DeltaGrads)> {
    check_factors(base, u, v)?;
    // Dense path: y1 = x·baseᵀ.
    let (mut dx, dbase) = ops::linear_backward(x, base, dy)?;
    // Factored path: t = x·vᵀ, y2 = t·uᵀ.
    let t = ops::linear(x, v)?;
    let (dt, du) = ops::linear_backward(&t, u, dy)?;
    let (dx2, dv) = ops::linear_backward(x, v, &dt)?;
    dx.add_assign(&dx2)?;
    Ok((
        dx,
        DeltaGrads {
            base: dbase,
            u: du,
            v: dv,
        },
    ))
}

/// Dense `base + u·v`, for oracles and diagnostics only.
pub fn delta_materialize(base: &Tensor, u: &Tensor, v: &Tensor) -> Result<Tensor> {
    check_factors(base, u, v)?;
    let mut w = base.clone();
    let uv = ops::matmul(u, v)?;
    w.add_assign(&uv)?;
    Ok(w)
}

/// Singular values of a 2D matrix by one-sided Jacobi, sorted descending.
/// Jacobi keeps small singular values accurate near σ_max·1e-15, well below
/// the REL_SIGMA rank threshold.
pub fn singular_values(m: &Tensor) -> Result<Vec<f64>> {
    if m.rank() != 2 {
        return Err(Error::Dim("singular_values expects a 2D matrix".to_string()));
    }
    // Orient so columns are the short side; σ is transpose-invariant.
    let a = if m.dim(0) >= m.dim(1) {
        m.clone()
    } else {
        m.transpose2()
    };
    let (rows, cols) = (a.dim(0), a.dim(1));
    let mut a = a.data().to_vec();
    let col = |a: &Vec<f64>, j: usize, i: usize| a[i * cols + j];

    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    let ap = col(&a, p, i);
                    let aq = col(&a, q, i);
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if math::abs(gamma) <= 1e-14 * math::sqrt(alpha * beta) {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + math::sqrt(1.0 + zeta * zeta))
                } else {
                    -1.0 / (-zeta + math::sqrt(1.0 + zeta * zeta))
                };
                let c = 1.0 / math::sqrt(1.0 + t * t);
                let s = c * t;
                for i in 0..rows {
                    let ap = a[i * cols + p];
                    let aq = a[i * cols + q];
                    a[i * cols + p] = c * ap - s * aq;
                    a[i * cols + q] = s * ap + c * aq;
                }
                rotated = true;
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<f64> = (0..cols)
        .map(|j| {
            let mut s = 0.0;
            for i in 0..rows {
                let v = a[i * cols + j];
                s += v * v;
            }
            math::sqrt(s)
        })
        .collect();
    sigma.sort_by(|x, y| y.partial_cmp(x).unwrap());
    Ok(sigma)
}

/// Numerical rank of the update `u·v`: count of σ > REL_SIGMA · σ_max.
pub fn update_rank(u: &Tensor, v: &Tensor) -> Result<usize> {
    if u.rank() != 2 || v.rank() != 2 || u.dim(1) != v.dim(0) {
        return Err(Error::Dim(format!(
            "update factors u {:?} vs v {:?}",
            u.shape(),
            v.shape()
        )));
    }
    let uv = ops::matmul(u, v)?;
    let sigma = singular_values(&uv)?;
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    if sigma_max == 0.0 {
        return Ok(0);
    }
    Ok(sigma.iter().filter(|&&s| s > REL_SIGMA * sigma_max).count())
}

/// One dense base with a rank-r update, `W = base + u·v`.
#[derive(Debug, Clone)]
pub struct DeltaLinear {
    pub base: Tensor,
    pub u: Tensor,
    pub v: Tensor,
}

impl DeltaLinear {
    pub fn new(base: Tensor, u: Tensor, v: Tensor) -> Result<Self> {
        check_factors(&base, &u, &v)?;
        Ok(Self { base, u, v })
    }

    /// Random base (±1/√d_in) and u (±1/√r); v starts at zero so the initial
    /// map equals the base exactly.
    pub fn init(rng: &mut Rng, d_out: usize, d_in: usize, r: usize) -> Result<Self> {
        if r == 0 || r >= d_out.min(d_in) {
            return Err(Error::Config(format!(
                "delta rank {r} must satisfy 0 < r < min({d_out}, {d_in})"
            )));
        }
        let base = rng.fill_symmetric(&[d_out, d_in], 1.0 / math::sqrt(d_in as f64));
        let u = rng.fill_symmetric(&[d_out, r], 1.0 / math::sqrt(r as f64));
        let v = Tensor::zeros(&[r, d_in]);
        Ok(Self { base, u, v })
    }

    pub fn d_out(&self) -> usize {
        self.base.dim(0)
    }

    pub fn d_in(&self) -> usize {
        self.base.dim(1)
    }

    pub fn rank(&self) -> usize {
        self.u.dim(1)
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        delta_apply(x, &self.base, &self.u, &self.v)
    }

    /// Base path only, ignoring the update factors.
    pub fn apply_base(&self, x: &Tensor) -> Result<Tensor> {
        ops::linear(x, &self.base)
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> Result<(Tensor, DeltaGrads)> {
        delta_backward(x, &self.base, &self.u, &self.v, dy)
    }

    pub fn materialize(&self) -> Result<Tensor> {
        delta_materialize(&self.base, &self.u, &self.v)
    }

    pub fn update_rank(&self) -> Result<usize> {
        update_rank(&self.u, &self.v)
    }
}

/// Per-pathway update factors over a shared base.
#[derive(Debug, Clone)]
pub struct DeltaFactors {
    pub u: Tensor,
    pub v: Tensor,
}

/// One shared base map with several low-rank pathways hanging off it.
#[derive(Debug, Clone)]
pub struct DeltaFamily {
    pub base: Tensor,
    pub factors: Vec<DeltaFactors>,
}

impl DeltaFamily {
    pub fn init(
        rng: &mut Rng,
        d_out: usize,
        d_in: usize,
        r: usize,
        n_pathways: usize,
    ) -> Result<Self> {
        if n_pathways == 0 {
            return Err(Error::Config("delta family needs >= 1 pathway".to_string()));
        }
        if r == 0 || r >= d_out.min(d_in) {
            return Err(Error::Config(format!(
                "delta rank {r} must satisfy 0 < r < min({d_out}, {d_in})"
            )));
        }
        let base = rng.fill_symmetric(&[d_out, d_in], 1.0 / math::sqrt(d_in as f64));
        let factors = (0..n_pathways)
            .map(|_| DeltaFactors {
                u: rng.fill_symmetric(&[d_out, r], 1.0 / math::sqrt(r as f64)),
                v: Tensor::zeros(&[r, d_in]),
            })
            .collect();
        Ok(Self { base, factors })
    }

    pub fn n_pathways(&self) -> usize {
        self.factors.len()
    }

    fn pathway(&self, i: usize) -> Result<&DeltaFactors> {
        self.factors.get(i).ok_or_else(|| {
            Error::Config(format!(
                "pathway {i} out of range (family has {})",
                self.factors.len()
            ))
        })
    }

    pub fn apply(&self, i: usize, x: &Tensor) -> Result<Tensor> {
        let f = self.pathway(i)?;
        delta_apply(x, &self.base, &f.u, &f.v)
    }

    pub fn apply_base(&self, x: &Tensor) -> Result<Tensor> {
        ops::linear(x, &self.base)
    }

    pub fn backward(&self, i: usize, x: &Tensor, dy: &Tensor) -> Result<(Tensor, DeltaGrads)> {
        let f = self.pathway(i)?;
        delta_backward(x, &self.base, &f.u, &f.v, dy)
    }

    pub fn materialize(&self, i: usize) -> Result<Tensor> {
        let f = self.pathway(i)?;
        delta_materialize(&self.base, &f.u, &f.v)
    }

    pub fn update_rank(&self, i: usize) -> Result<usize> {
        let f = self.pathway(i)?;
        update_rank(&f.u, &f.v)
    }
}
