//! Tensor operations and their analytic backward passes.
//!
//! Conventions: 2D tensors are row-major `[rows × cols]`; linear maps are
//! stored `[d_out × d_in]` and applied as `x · Wᵀ`; grids are `[C × H × W]`.
//! Softmax always subtracts the row max before exponentiating. Backward
//! passes are exact transposes/adjoints of the forward computation and are
//! checked against `finite_diff_grad` in the test suite.

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

// ---------------------------------------------------------------------------
// matmul

/// `a · b` for 2D operands; leading dims of `a` broadcast over a 2D `b`,
/// or batch elementwise when both carry identical leading dims.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() < 2 || b.rank() < 2 {
        return Err(Error::Dim("matmul needs rank >= 2 operands".to_string()));
    }
    let (am, ak) = (a.dim(a.rank() - 2), a.dim(a.rank() - 1));
    let (bk, bn) = (b.dim(b.rank() - 2), b.dim(b.rank() - 1));
    if ak != bk {
        return Err(Error::Dim(format!(
            "matmul inner dims {ak} vs {bk} (shapes {:?} x {:?})",
            a.shape(),
            b.shape()
        )));
    }
    let a_lead: usize = a.shape()[..a.rank() - 2].iter().product();
    let b_lead: usize = b.shape()[..b.rank() - 2].iter().product();
    let broadcast_b = b.rank() == 2;
    if !broadcast_b && a.shape()[..a.rank() - 2] != b.shape()[..b.rank() - 2] {
        return Err(Error::Dim(format!(
            "matmul leading dims {:?} vs {:?}",
            &a.shape()[..a.rank() - 2],
            &b.shape()[..b.rank() - 2]
        )));
    }
    let _ = b_lead;

    let mut out_shape: Vec<usize> = a.shape()[..a.rank() - 2].to_vec();
    out_shape.push(am);
    out_shape.push(bn);
    let mut out = Tensor::zeros(&out_shape);

    let (ad, bd, od) = (a.data(), b.data(), out.data_mut());
    for batch in 0..a_lead {
        let ao = batch * am * ak;
        let bo = if broadcast_b { 0 } else { batch * bk * bn };
        let oo = batch * am * bn;
        for i in 0..am {
            for kk in 0..ak {
                let av = ad[ao + i * ak + kk];
                if av == 0.0 {
                    continue;
                }
                let brow = bo + kk * bn;
                let orow = oo + i * bn;
                for j in 0..bn {
                    od[orow + j] += av * bd[brow + j];
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `c = a · b` (2D): `da = dc · bᵀ`, `db = aᵀ · dc`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> Result<(Tensor, Tensor)> {
    let da = matmul(dc, &b.transpose2())?;
    let db = matmul(&a.transpose2(), dc)?;
    Ok((da, db))
}

/// `x · wᵀ` where `w` is `[d_out × d_in]` and `x` is `[n × d_in]`.
pub fn linear(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || w.rank() != 2 {
        return Err(Error::Dim("linear expects 2D x and w".to_string()));
    }
    let (n, d_in) = (x.dim(0), x.dim(1));
    let (d_out, wk) = (w.dim(0), w.dim(1));
    if d_in != wk {
        return Err(Error::Dim(format!(
            "linear dims: x {:?} vs w {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let mut out = Tensor::zeros(&[n, d_out]);
    let (xd, wd, od) = (x.data(), w.data(), out.data_mut());
    for i in 0..n {
        for o in 0..d_out {
            let mut acc = 0.0;
            let xrow = i * d_in;
            let wrow = o * d_in;
            for k in 0..d_in {
                acc += xd[xrow + k] * wd[wrow + k];
            }
            od[i * d_out + o] = acc;
        }
    }
    Ok(out)
}

/// Gradients of `y = x · wᵀ`: `dx = dy · w`, `dw = dyᵀ · x`.
pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let dx = matmul(dy, w)?;
    let dw = matmul(&dy.transpose2(), x)?;
    Ok((dx, dw))
}

// ---------------------------------------------------------------------------
// softmax

/// Softmax over the last dim with max subtraction.
pub fn softmax_lastdim(x: &Tensor) -> Result<Tensor> {
    if x.rank() == 0 || x.dim(x.rank() - 1) == 0 {
        return Err(Error::Dim("softmax over empty last dim".to_string()));
    }
    let d = x.dim(x.rank() - 1);
    let rows = x.len() / d;
    let mut out = Tensor::zeros(x.shape());
    let (xd, od) = (x.data(), out.data_mut());
    for r in 0..rows {
        let s = r * d;
        let mut m = f64::NEG_INFINITY;
        for k in 0..d {
            if xd[s + k] > m {
                m = xd[s + k];
            }
        }
        let mut sum = 0.0;
        for k in 0..d {
            let e = math::exp(xd[s + k] - m);
            od[s + k] = e;
            sum += e;
        }
        for k in 0..d {
            od[s + k] /= sum;
        }
    }
    Ok(out)
}

/// Backward from the softmax *output* `y`: `dx_i = y_i (dy_i - Σ_j dy_j y_j)`.
pub fn softmax_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if y.shape() != dy.shape() {
        return Err(Error::Dim("softmax_backward shape mismatch".to_string()));
    }
    let d = y.dim(y.rank() - 1);
    let rows = y.len() / d;
    let mut dx = Tensor::zeros(y.shape());
    let (yd, gd, od) = (y.data(), dy.data(), dx.data_mut());
    for r in 0..rows {
        let s = r * d;
        let mut dot = 0.0;
        for k in 0..d {
            dot += gd[s + k] * yd[s + k];
        }
        for k in 0..d {
            od[s + k] = yd[s + k] * (gd[s + k] - dot);
        }
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// layer norm

/// LayerNorm over the last dim: `(x - μ)/√(σ² + eps) · γ + β`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let d = x.dim(x.rank() - 1);
    if gamma.len() != d || beta.len() != d {
        return Err(Error::Dim(format!(
            "layer_norm feature dim {d} vs gamma {} / beta {}",
            gamma.len(),
            beta.len()
        )));
    }
    let rows = x.len() / d;
    let mut out = Tensor::zeros(x.shape());
    let (xd, gd, bd, od) = (x.data(), gamma.data(), beta.data(), out.data_mut());
    for r in 0..rows {
        let s = r * d;
        let mut mean = 0.0;
        for k in 0..d {
            mean += xd[s + k];
        }
        mean /= d as f64;
        let mut var = 0.0;
        for k in 0..d {
            let c = xd[s + k] - mean;
            var += c * c;
        }
        var /= d as f64;
        let inv = 1.0 / math::sqrt(var + eps);
        for k in 0..d {
            od[s + k] = (xd[s + k] - mean) * inv * gd[k] + bd[k];
        }
    }
    Ok(out)
}

/// Gradients of layer_norm w.r.t. input, gamma, beta (stats recomputed).
pub fn layer_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    eps: f64,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    if x.shape() != dy.shape() {
        return Err(Error::Dim("layer_norm_backward shape mismatch".to_string()));
    }
    let d = x.dim(x.rank() - 1);
    let rows = x.len() / d;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(&[d]);
    let mut dbeta = Tensor::zeros(&[d]);
    let (xd, gd, dyd) = (x.data(), gamma.data(), dy.data());
    for r in 0..rows {
        let s = r * d;
        let mut mean = 0.0;
        for k in 0..d {
            mean += xd[s + k];
        }
        mean /= d as f64;
        let mut var = 0.0;
        for k in 0..d {
            let c = xd[s + k] - mean;
            var += c * c;
        }
        var /= d as f64;
        let inv = 1.0 / math::sqrt(var + eps);

        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for k in 0..d {
            let xhat = (xd[s + k] - mean) * inv;
            let dxhat = dyd[s + k] * gd[k];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dgamma.data_mut()[k] += dyd[s + k] * xhat;
            dbeta.data_mut()[k] += dyd[s + k];
        }
        let inv_d = 1.0 / d as f64;
        for k in 0..d {
            let xhat = (xd[s + k] - mean) * inv;
            let dxhat = dyd[s + k] * gd[k];
            dx.data_mut()[s + k] =
                inv * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
        }
    }
    Ok((dx, dgamma, dbeta))
}

// ---------------------------------------------------------------------------
// activations

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// ReLU subgradient at 0 is taken as 0.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if x.shape() != dy.shape() {
        return Err(Error::Dim("relu_backward shape mismatch".to_string()));
    }
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data)
}

/// Exact GELU: `0.5 x (1 + erf(x/√2))`.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

pub fn gelu_scalar(v: f64) -> f64 {
    0.5 * v * (1.0 + math::erf(v * core::f64::consts::FRAC_1_SQRT_2))
}

/// d/dx GELU = Φ(x) + x·φ(x).
pub fn gelu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if x.shape() != dy.shape() {
        return Err(Error::Dim("gelu_backward shape mismatch".to_string()));
    }
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| {
            let phi_cdf = 0.5 * (1.0 + math::erf(v * core::f64::consts::FRAC_1_SQRT_2));
            g * (phi_cdf + v * math::norm_pdf(v))
        })
        .collect();
    Tensor::new(x.shape(), data)
}

// ---------------------------------------------------------------------------
// depthwise 3x3 convolution

/// Per-channel 3×3 convolution, zero padding, stride 1.
/// `x` is `[C × H × W]`, `k` is `[C × 3 × 3]`.
pub fn depthwise_conv3x3(x: &Tensor, k: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::Dim(format!(
            "depthwise_conv3x3 input rank {} != 3",
            x.rank()
        )));
    }
    let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
    if k.shape() != [c, 3, 3] {
        return Err(Error::Dim(format!(
            "kernel shape {:?}, want [{c}, 3, 3]",
            k.shape()
        )));
    }
    let mut out = Tensor::zeros(&[c, h, w]);
    let (xd, kd, od) = (x.data(), k.data(), out.data_mut());
    for ch in 0..c {
        let xo = ch * h * w;
        let ko = ch * 9;
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for di in 0..3usize {
                    let ii = i as isize + di as isize - 1;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for dj in 0..3usize {
                        let jj = j as isize + dj as isize - 1;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        acc += kd[ko + di * 3 + dj] * xd[xo + ii as usize * w + jj as usize];
                    }
                }
                od[xo + i * w + j] = acc;
            }
        }
    }
    Ok(out)
}

/// Gradients of the depthwise conv w.r.t. input and kernels.
pub fn depthwise_conv3x3_backward(
    x: &Tensor,
    k: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor)> {
    if dy.shape() != x.shape() {
        return Err(Error::Dim("conv backward shape mismatch".to_string()));
    }
    let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
    let mut dx = Tensor::zeros(&[c, h, w]);
    let mut dk = Tensor::zeros(&[c, 3, 3]);
    let (xd, kd, gd) = (x.data(), k.data(), dy.data());
    for ch in 0..c {
        let xo = ch * h * w;
        let ko = ch * 9;
        for i in 0..h {
            for j in 0..w {
                let g = gd[xo + i * w + j];
                if g == 0.0 {
                    continue;
                }
                for di in 0..3usize {
                    let ii = i as isize + di as isize - 1;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for dj in 0..3usize {
                        let jj = j as isize + dj as isize - 1;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        let xi = xo + ii as usize * w + jj as usize;
                        dk.data_mut()[ko + di * 3 + dj] += g * xd[xi];
                        dx.data_mut()[xi] += g * kd[ko + di * 3 + dj];
                    }
                }
            }
        }
    }
    Ok((dx, dk))
}

// ---------------------------------------------------------------------------
// bilinear resize

#[derive(Debug, Clone, Copy)]
struct Lerp {
    i0: usize,
    i1: usize,
    frac: f64,
}

/// Half-pixel-center source coordinate, clamped to the valid range.
fn lerp_axis(out_len: usize, in_len: usize) -> Vec<Lerp> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let mut src = (i as f64 + 0.5) * scale - 0.5;
            if src < 0.0 {
                src = 0.0;
            }
            let max = (in_len - 1) as f64;
            if src > max {
                src = max;
            }
            let i0 = math::floor(src) as usize;
            let i1 = if i0 + 1 < in_len { i0 + 1 } else { i0 };
            Lerp {
                i0,
                i1,
                frac: src - i0 as f64,
            }
        })
        .collect()
}

/// Bilinear interpolation of a `[C × H × W]` grid to `[C × out_h × out_w]`.
/// Computed in lerp form, so constant fields survive bit-exactly and a
/// same-size resize is the identity.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::Dim(format!(
            "bilinear_resize input rank {} != 3",
            x.rank()
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Dim("bilinear_resize to empty grid".to_string()));
    }
    let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
    let ys = lerp_axis(out_h, h);
    let xs = lerp_axis(out_w, w);
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    let (xd, od) = (x.data(), out.data_mut());
    for ch in 0..c {
        let xo = ch * h * w;
        let oo = ch * out_h * out_w;
        for (i, ly) in ys.iter().enumerate() {
            for (j, lx) in xs.iter().enumerate() {
                let v00 = xd[xo + ly.i0 * w + lx.i0];
                let v01 = xd[xo + ly.i0 * w + lx.i1];
                let v10 = xd[xo + ly.i1 * w + lx.i0];
                let v11 = xd[xo + ly.i1 * w + lx.i1];
                let top = v00 + lx.frac * (v01 - v00);
                let bot = v10 + lx.frac * (v11 - v10);
                od[oo + i * out_w + j] = top + ly.frac * (bot - top);
            }
        }
    }
    Ok(out)
}

/// Adjoint of `bilinear_resize`: scatters `dy` `[C × oh × ow]` back to
/// `[C × in_h × in_w]` with the transposed lerp weights.
pub fn bilinear_resize_backward(
    in_h: usize,
    in_w: usize,
    dy: &Tensor,
) -> Result<Tensor> {
    if dy.rank() != 3 {
        return Err(Error::Dim("bilinear backward rank != 3".to_string()));
    }
    let (c, oh, ow) = (dy.dim(0), dy.dim(1), dy.dim(2));
    let ys = lerp_axis(oh, in_h);
    let xs = lerp_axis(ow, in_w);
    let mut dx = Tensor::zeros(&[c, in_h, in_w]);
    let gd = dy.data();
    for ch in 0..c {
        let xo = ch * in_h * in_w;
        let oo = ch * oh * ow;
        for (i, ly) in ys.iter().enumerate() {
            for (j, lx) in xs.iter().enumerate() {
                let g = gd[oo + i * ow + j];
                let dtop = g * (1.0 - ly.frac);
                let dbot = g * ly.frac;
                let d = dx.data_mut();
                d[xo + ly.i0 * in_w + lx.i0] += dtop * (1.0 - lx.frac);
                d[xo + ly.i0 * in_w + lx.i1] += dtop * lx.frac;
                d[xo + ly.i1 * in_w + lx.i0] += dbot * (1.0 - lx.frac);
                d[xo + ly.i1 * in_w + lx.i1] += dbot * lx.frac;
            }
        }
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// token/grid layout

/// `[N × C]` tokens (row-major over grid rows) to a `[C × h × w]` grid.
pub fn tokens_to_grid(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    if x.rank() != 2 || x.dim(0) != h * w {
        return Err(Error::Dim(format!(
            "tokens_to_grid: {:?} does not tile {h}x{w}",
            x.shape()
        )));
    }
    let c = x.dim(1);
    let mut out = Tensor::zeros(&[c, h, w]);
    let (xd, od) = (x.data(), out.data_mut());
    for n in 0..h * w {
        for ch in 0..c {
            od[ch * h * w + n] = xd[n * c + ch];
        }
    }
    Ok(out)
}

/// Inverse of `tokens_to_grid`; exact for all values.
pub fn grid_to_tokens(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::Dim("grid_to_tokens rank != 3".to_string()));
    }
    let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
    let mut out = Tensor::zeros(&[h * w, c]);
    let (xd, od) = (x.data(), out.data_mut());
    for n in 0..h * w {
        for ch in 0..c {
            od[n * c + ch] = xd[ch * h * w + n];
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// 2D sinusoidal positional embedding

/// Fixed 2D sin/cos embedding on an `h × w` grid, `[(h·w) × dim]`.
/// First half encodes the row index, second half the column; each half is
/// (sin, cos) pairs over a geometric frequency ladder. `dim % 4 == 0`.
pub fn sinusoidal_pos2d(h: usize, w: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 4 != 0 {
        return Err(Error::Config(format!(
            "pos2d dim {dim} must be a positive multiple of 4"
        )));
    }
    let quarter = dim / 4;
    let freqs: Vec<f64> = (0..quarter)
        .map(|k| math::pow(10000.0, -(k as f64) / quarter as f64))
        .collect();
    let mut out = Tensor::zeros(&[h * w, dim]);
    let od = out.data_mut();
    for r in 0..h {
        for c in 0..w {
            let base = (r * w + c) * dim;
            for (k, &f) in freqs.iter().enumerate() {
                let ra = r as f64 * f;
                let ca = c as f64 * f;
                od[base + 2 * k] = math::sin(ra);
                od[base + 2 * k + 1] = math::cos(ra);
                od[base + dim / 2 + 2 * k] = math::sin(ca);
                od[base + dim / 2 + 2 * k + 1] = math::cos(ca);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// finite differences

/// Central-difference gradient `(f(x+h·e_i) - f(x-h·e_i)) / 2h`.
/// Every probe evaluation must be finite.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Eval(format!("step h={h} must be positive finite")));
    }
    let mut buf = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = buf[i];
        buf[i] = orig + h;
        let fp = f(&buf);
        buf[i] = orig - h;
        let fm = f(&buf);
        buf[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Eval(format!(
                "non-finite probe at coordinate {i}: f(+h)={fp}, f(-h)={fm}"
            )));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
        rng.fill_symmetric(shape, 1.0)
    }

    // -- matmul ------------------------------------------------------------

    #[test]
    fn matmul_permutation_example() {
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = Tensor::new(&[2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let c = matmul(&a, &p).unwrap();
        assert_eq!(c.data(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn matmul_identity_is_exact() {
        let mut rng = Rng::new(1);
        let a = rand_tensor(&mut rng, &[4, 4]);
        let mut eye = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 4 + i] = 1.0;
        }
        let c = matmul(&a, &eye).unwrap();
        assert_eq!(c.data(), a.data());
    }

    // Independent oracle: plain triple loop with its own accumulation order.
    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.dim(0), a.dim(1));
        let n = b.dim(1);
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..k {
                    acc += a.at2(i, l) * b.at2(l, j);
                }
                out.data_mut()[i * n + j] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = Rng::new(2);
        let a = rand_tensor(&mut rng, &[5, 7]);
        let b = rand_tensor(&mut rng, &[7, 3]);
        let c = matmul(&a, &b).unwrap();
        let oracle = naive_matmul(&a, &b);
        assert!(c.max_abs_diff(&oracle).unwrap() < 1e-12);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(matches!(matmul(&a, &b), Err(Error::Dim(_))));
    }

    #[test]
    fn matmul_broadcasts_2d_rhs_over_batch() {
        let mut rng = Rng::new(3);
        let a = rand_tensor(&mut rng, &[2, 3, 4]);
        let b = rand_tensor(&mut rng, &[4, 5]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 5]);
        for batch in 0..2 {
            let slice = Tensor::new(
                &[3, 4],
                a.data()[batch * 12..(batch + 1) * 12].to_vec(),
            )
            .unwrap();
            let expect = naive_matmul(&slice, &b);
            for i in 0..3 {
                for j in 0..5 {
                    assert!((c.at3(batch, i, j) - expect.at2(i, j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn matmul_associativity_within_tolerance() {
        let mut rng = Rng::new(4);
        let a = rand_tensor(&mut rng, &[6, 5]);
        let b = rand_tensor(&mut rng, &[5, 7]);
        let c = rand_tensor(&mut rng, &[7, 4]);
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        assert!(left.max_abs_diff(&right).unwrap() < 1e-9);
    }

    // -- softmax -----------------------------------------------------------

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(5);
        let x = rand_tensor(&mut rng, &[9, 13]).scale(40.0);
        let y = softmax_lastdim(&x).unwrap();
        for r in 0..9 {
            let s: f64 = y.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row {r} sums to {s}");
        }
    }

    #[test]
    fn softmax_extreme_logits_saturate_without_nan() {
        let x = Tensor::new(&[1, 2], vec![1000.0, 0.0]).unwrap();
        let y = softmax_lastdim(&x).unwrap();
        assert_eq!(y.data()[0], 1.0);
        assert_eq!(y.data()[1], 0.0);
    }

    #[test]
    fn softmax_constant_shift_invariance() {
        let mut rng = Rng::new(6);
        let x = rand_tensor(&mut rng, &[4, 8]);
        let shifted = x.map(|v| v + 123.456);
        let a = softmax_lastdim(&x).unwrap();
        let b = softmax_lastdim(&shifted).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    // Formula oracle: direct exp/sum with no max subtraction (safe range).
    #[test]
    fn softmax_matches_formula_oracle() {
        let x = Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = softmax_lastdim(&x).unwrap();
        let z: f64 = x.data().iter().map(|&v| math::exp(v)).sum();
        for k in 0..3 {
            assert!((y.data()[k] - math::exp(x.data()[k]) / z).abs() < 1e-14);
        }
    }

    // -- layer norm ----------------------------------------------------------

    #[test]
    fn layer_norm_constant_row_maps_to_beta() {
        let x = Tensor::new(&[1, 3], vec![5.0, 5.0, 5.0]).unwrap();
        let gamma = Tensor::filled(&[3], 1.0);
        let beta = Tensor::zeros(&[3]);
        let y = layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_norm_normalizes_then_applies_affine() {
        let mut rng = Rng::new(7);
        let x = rand_tensor(&mut rng, &[6, 16]).scale(3.0);
        let gamma = Tensor::filled(&[16], 1.0);
        let beta = Tensor::zeros(&[16]);
        let y = layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        for r in 0..6 {
            let row = y.row(r);
            let mean: f64 = row.iter().sum::<f64>() / 16.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4); // eps shrinks variance slightly
        }
        let gamma2 = Tensor::filled(&[16], 2.0);
        let beta2 = Tensor::filled(&[16], -1.0);
        let y2 = layer_norm(&x, &gamma2, &beta2, 1e-5).unwrap();
        let recon = y.map(|v| 2.0 * v - 1.0);
        assert!(y2.max_abs_diff(&recon).unwrap() < 1e-12);
    }

    // -- conv ----------------------------------------------------------------

    #[test]
    fn conv_identity_kernel_is_bit_exact() {
        let mut rng = Rng::new(8);
        let x = rand_tensor(&mut rng, &[3, 5, 4]);
        let mut k = Tensor::zeros(&[3, 3, 3]);
        for c in 0..3 {
            k.data_mut()[c * 9 + 4] = 1.0;
        }
        let y = depthwise_conv3x3(&x, &k).unwrap();
        assert_eq!(y.data(), x.data());
    }

    // Oracle pads explicitly into a (H+2)x(W+2) buffer, then convolves.
    fn conv_oracle(x: &Tensor, k: &Tensor) -> Tensor {
        let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
        let mut out = Tensor::zeros(&[c, h, w]);
        for ch in 0..c {
            let mut padded = vec![0.0; (h + 2) * (w + 2)];
            for i in 0..h {
                for j in 0..w {
                    padded[(i + 1) * (w + 2) + (j + 1)] = x.at3(ch, i, j);
                }
            }
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for di in 0..3 {
                        for dj in 0..3 {
                            acc += k.at3(ch, di, dj) * padded[(i + di) * (w + 2) + (j + dj)];
                        }
                    }
                    out.data_mut()[ch * h * w + i * w + j] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_padded_oracle() {
        let mut rng = Rng::new(9);
        let x = rand_tensor(&mut rng, &[2, 6, 5]);
        let k = rand_tensor(&mut rng, &[2, 3, 3]);
        let y = depthwise_conv3x3(&x, &k).unwrap();
        let o = conv_oracle(&x, &k);
        assert!(y.max_abs_diff(&o).unwrap() < 1e-12);
    }

    #[test]
    fn conv_rejects_wrong_kernel_count() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[3, 3, 3]);
        assert!(matches!(depthwise_conv3x3(&x, &k), Err(Error::Dim(_))));
    }

    // -- bilinear ------------------------------------------------------------

    #[test]
    fn bilinear_constant_field_bit_exact() {
        let x = Tensor::filled(&[2, 7, 5], 3.715);
        for (oh, ow) in [(3, 2), (7, 5), (14, 10), (1, 1)] {
            let y = bilinear_resize(&x, oh, ow).unwrap();
            assert!(y.data().iter().all(|&v| v == 3.715), "{oh}x{ow}");
        }
    }

    #[test]
    fn bilinear_same_size_is_identity() {
        let mut rng = Rng::new(10);
        let x = rand_tensor(&mut rng, &[3, 6, 9]);
        let y = bilinear_resize(&x, 6, 9).unwrap();
        assert_eq!(x.data(), y.data());
    }

    // Frozen by hand: 2x downsample with half-pixel centers averages each
    // 2x2 block. Ramp 0..15 -> [[2.5, 4.5], [10.5, 12.5]].
    #[test]
    fn bilinear_ramp_4x4_to_2x2_frozen() {
        let x = Tensor::new(&[1, 4, 4], (0..16).map(|i| i as f64).collect()).unwrap();
        let y = bilinear_resize(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn bilinear_downsample_upsample_constant_exact() {
        let x = Tensor::filled(&[1, 8, 8], -2.5);
        let down = bilinear_resize(&x, 4, 4).unwrap();
        let up = bilinear_resize(&down, 8, 8).unwrap();
        assert_eq!(up.data(), x.data());
    }

    // Direct-weight oracle with product weights (vs lerp form in the impl).
    #[test]
    fn bilinear_matches_weight_oracle() {
        let mut rng = Rng::new(11);
        let x = rand_tensor(&mut rng, &[2, 5, 3]);
        let (oh, ow) = (3, 2);
        let y = bilinear_resize(&x, oh, ow).unwrap();
        for ch in 0..2 {
            for i in 0..oh {
                for j in 0..ow {
                    let sy = ((i as f64 + 0.5) * (5.0 / oh as f64) - 0.5).clamp(0.0, 4.0);
                    let sx = ((j as f64 + 0.5) * (3.0 / ow as f64) - 0.5).clamp(0.0, 2.0);
                    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(4), (x0 + 1).min(2));
                    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                    let o = (1.0 - fy) * (1.0 - fx) * x.at3(ch, y0, x0)
                        + (1.0 - fy) * fx * x.at3(ch, y0, x1)
                        + fy * (1.0 - fx) * x.at3(ch, y1, x0)
                        + fy * fx * x.at3(ch, y1, x1);
                    assert!((y.at3(ch, i, j) - o).abs() < 1e-12);
                }
            }
        }
    }

    // -- layout --------------------------------------------------------------

    #[test]
    fn tokens_grid_roundtrip_exact() {
        let mut rng = Rng::new(12);
        let x = rand_tensor(&mut rng, &[12, 5]);
        let g = tokens_to_grid(&x, 3, 4).unwrap();
        assert_eq!(g.shape(), &[5, 3, 4]);
        let back = grid_to_tokens(&g).unwrap();
        assert_eq!(back.data(), x.data());
    }

    // -- pos2d ---------------------------------------------------------------

    #[test]
    fn pos2d_origin_row_alternates_zero_one() {
        let e = sinusoidal_pos2d(3, 3, 8).unwrap();
        assert_eq!(e.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn pos2d_bounded_and_distinct_on_12x12() {
        let e = sinusoidal_pos2d(12, 12, 64).unwrap();
        assert!(e.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
        for a in 0..144 {
            for b in (a + 1)..144 {
                let diff: f64 = e
                    .row(a)
                    .iter()
                    .zip(e.row(b))
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                assert!(diff > 1e-9, "rows {a} and {b} collide");
            }
        }
    }

    #[test]
    fn pos2d_rejects_dim_not_multiple_of_4() {
        assert!(matches!(sinusoidal_pos2d(2, 2, 6), Err(Error::Config(_))));
    }

    // -- finite differences ---------------------------------------------------

    #[test]
    fn finite_diff_quadratic_matches_2x() {
        let x = [0.3, -1.2, 2.0, 0.0];
        let g = finite_diff_grad(|v| v.iter().map(|&t| t * t).sum(), &x, 1e-5).unwrap();
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - 2.0 * xi).abs() < 1e-6);
        }
    }

    #[test]
    fn finite_diff_constant_function_is_exactly_zero() {
        let g = finite_diff_grad(|_| 7.5, &[1.0, 2.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn finite_diff_rejects_non_finite_probe() {
        let r = finite_diff_grad(|v| 1.0 / (v[0] - v[0]), &[1.0], 1e-5);
        assert!(matches!(r, Err(Error::Eval(_))));
    }
}
