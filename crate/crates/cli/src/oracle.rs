//! Reference implementations written as direct loops, sharing nothing with
//! the core's kernels beyond the weight values. Verification compares the
//! two sides; a bug in either shows up as disagreement.

use deltaproj_core::blocks::{Emhsa, LN_EPS};
use deltaproj_core::Tensor;

pub fn matmul(a: &[f64], n: usize, k: usize, b: &[f64], m: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * k);
    assert_eq!(b.len(), k * m);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i * k + t] * b[t * m + j];
            }
            out[i * m + j] = acc;
        }
    }
    out
}

pub fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn layer_norm_row(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(v, (g, b))| (v - mean) * inv * g + b)
        .collect()
}

/// Half-pixel-center bilinear resampling of a `[c][h][w]` volume, written in
/// the four-corner weight form.
pub fn bilinear(src: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    assert_eq!(src.len(), c * h * w);
    let mut out = vec![0.0; c * oh * ow];
    for i in 0..oh {
        let sy = ((i as f64 + 0.5) * h as f64 / oh as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for j in 0..ow {
            let sx = ((j as f64 + 0.5) * w as f64 / ow as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let p = |y: usize, x: usize| src[(ch * h + y) * w + x];
                out[(ch * oh + i) * ow + j] = (1.0 - fy) * (1.0 - fx) * p(y0, x0)
                    + (1.0 - fy) * fx * p(y0, x1)
                    + fy * (1.0 - fx) * p(y1, x0)
                    + fy * fx * p(y1, x1);
            }
        }
    }
    out
}

/// `x · w^T` for a `[d_out x d_in]` weight, the projection convention used
/// throughout the core.
fn apply_weight(x: &[f64], n: usize, d_in: usize, w: &Tensor) -> Vec<f64> {
    let (d_out, wk) = (w.dim(0), w.dim(1));
    assert_eq!(wk, d_in);
    let mut wt = vec![0.0; d_in * d_out];
    for o in 0..d_out {
        for i in 0..d_in {
            wt[i * d_out + o] = w.data()[o * d_in + i];
        }
    }
    matmul(x, n, d_in, &wt, d_out)
}

/// Pre-norm multi-head self-attention with optional grid pooling of the
/// projected K/V, recomputed end to end: the reference for the efficient
/// block at any reduction factor.
pub fn reduced_mhsa(block: &Emhsa, x: &Tensor, grid: (usize, usize)) -> Tensor {
    let (n, d) = (x.dim(0), x.dim(1));
    let (gh, gw) = grid;
    assert_eq!(n, gh * gw);
    assert_eq!(d, block.dim);
    let heads = block.heads;
    let hd = d / heads;
    let s = block.reduce;
    assert!(gh % s == 0 && gw % s == 0);

    let mut xn = Vec::with_capacity(n * d);
    for r in 0..n {
        xn.extend(layer_norm_row(x.row(r), block.ln_g.data(), block.ln_b.data(), LN_EPS));
    }
    let q = apply_weight(&xn, n, d, &block.wq);
    let k = apply_weight(&xn, n, d, &block.wk);
    let v = apply_weight(&xn, n, d, &block.wv);

    // Tokens -> [d][gh][gw] grid -> pooled grid -> tokens, per projection.
    let pool = |tokens: &[f64]| -> (Vec<f64>, usize) {
        if s == 1 {
            return (tokens.to_vec(), n);
        }
        let mut vol = vec![0.0; d * n];
        for t in 0..n {
            for ch in 0..d {
                vol[ch * n + t] = tokens[t * d + ch];
            }
        }
        let (ph, pw) = (gh / s, gw / s);
        let small = bilinear(&vol, d, gh, gw, ph, pw);
        let m = ph * pw;
        let mut out = vec![0.0; m * d];
        for t in 0..m {
            for ch in 0..d {
                out[t * d + ch] = small[ch * m + t];
            }
        }
        (out, m)
    };
    let (kp, m) = pool(&k);
    let (vp, _) = pool(&v);

    let scale = 1.0 / (hd as f64).sqrt();
    let mut ctx = vec![0.0; n * d];
    for h in 0..heads {
        for i in 0..n {
            let mut scores: Vec<f64> = (0..m)
                .map(|j| {
                    let mut acc = 0.0;
                    for t in 0..hd {
                        acc += q[i * d + h * hd + t] * kp[j * d + h * hd + t];
                    }
                    acc * scale
                })
                .collect();
            softmax_inplace(&mut scores);
            for t in 0..hd {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += scores[j] * vp[j * d + h * hd + t];
                }
                ctx[i * d + h * hd + t] = acc;
            }
        }
    }
    let proj = apply_weight(&ctx, n, d, &block.wo);
    let out: Vec<f64> = x.data().iter().zip(proj).map(|(a, b)| a + b).collect();
    Tensor::new(&[n, d], out).unwrap()
}

/// Global cross-attention with residual: every query sees every memory row.
pub fn global_cross_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Tensor {
    let (n, d) = (q.dim(0), q.dim(1));
    let m = k.dim(0);
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = q.data().to_vec();
    for h in 0..heads {
        for i in 0..n {
            let mut scores: Vec<f64> = (0..m)
                .map(|j| {
                    let mut acc = 0.0;
                    for t in 0..hd {
                        acc += q.data()[i * d + h * hd + t] * k.data()[j * d + h * hd + t];
                    }
                    acc * scale
                })
                .collect();
            softmax_inplace(&mut scores);
            for t in 0..hd {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += scores[j] * v.data()[j * d + h * hd + t];
                }
                out[i * d + h * hd + t] += acc;
            }
        }
    }
    Tensor::new(&[n, d], out).unwrap()
}

/// One query row attending to an explicit memory subset, with residual.
pub fn single_query_attention(
    q_row: &[f64],
    k: &Tensor,
    v: &Tensor,
    set: &[usize],
    heads: usize,
) -> Vec<f64> {
    let d = q_row.len();
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = q_row.to_vec();
    for h in 0..heads {
        let mut scores: Vec<f64> = set
            .iter()
            .map(|&j| {
                let mut acc = 0.0;
                for t in 0..hd {
                    acc += q_row[h * hd + t] * k.data()[j * d + h * hd + t];
                }
                acc * scale
            })
            .collect();
        softmax_inplace(&mut scores);
        for t in 0..hd {
            let mut acc = 0.0;
            for (ix, &j) in set.iter().enumerate() {
                acc += scores[ix] * v.data()[j * d + h * hd + t];
            }
            out[h * hd + t] += acc;
        }
    }
    out
}

pub fn mean_of_rows(t: &Tensor, rows: &[usize]) -> Vec<f64> {
    let c = t.dim(1);
    let mut out = vec![0.0; c];
    for &r in rows {
        for k in 0..c {
            out[k] += t.data()[r * c + k];
        }
    }
    for v in &mut out {
        *v /= rows.len() as f64;
    }
    out
}
