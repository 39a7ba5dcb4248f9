//! Pure dense kernels shared by the forward and backward passes.
//!
//! Every kernel is deterministic: accumulation order over reduction axes is
//! fixed, and the `parallel` feature only ever splits work so that each
//! output element is still produced by the same sequence of operations
//! (owner-computes partitioning). Statistics (means, variances, loss terms,
//! the grouped-deviation scale) accumulate in `f64` to keep the engine's
//! `f32` results close to the reference oracles.

use crate::math;
use alloc::vec;
use alloc::vec::Vec;

/// Work below this many output elements is never worth a thread handoff.
#[cfg(feature = "parallel")]
const PAR_MIN_ELEMS: usize = 1 << 14;

/// Applies `body(row_index, out_row)` to every `width`-sized row of `out`,
/// in parallel when the `parallel` feature is enabled and the buffer is
/// large enough. Each row is written by exactly one invocation, so the
/// result is identical to the serial loop.
fn for_each_row<F>(out: &mut [f32], width: usize, body: F)
where
    F: Fn(usize, &mut [f32]) + Sync + Send,
{
    debug_assert!(width > 0 && out.len() % width == 0);
    #[cfg(feature = "parallel")]
    {
        if out.len() >= PAR_MIN_ELEMS {
            use rayon::prelude::*;
            out.par_chunks_mut(width)
                .enumerate()
                .for_each(|(r, row)| body(r, row));
            return;
        }
    }
    for (r, row) in out.chunks_mut(width).enumerate() {
        body(r, row);
    }
}

/// `out[r, o] += sum_i a[r, i] * b[i, o]` for `a: [rows, m]`, `b: [m, n]`.
///
/// The caller provides `out` zeroed (or holding a partial sum to extend).
pub fn matmul_accum(out: &mut [f32], a: &[f32], b: &[f32], rows: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), rows * m);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), rows * n);
    if rows == 0 || n == 0 {
        return;
    }
    for_each_row(out, n, |r, out_row| {
        let a_row = &a[r * m..(r + 1) * m];
        for (i, &av) in a_row.iter().enumerate() {
            let b_row = &b[i * n..(i + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * *bv;
            }
        }
    });
}

/// Returns the transpose of a `rows x cols` row-major matrix.
pub fn transpose(src: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    debug_assert_eq!(src.len(), rows * cols);
    let mut dst = vec![0.0f32; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
    dst
}

/// `dw[i, o] += sum_r x[r, i] * dy[r, o]` for `x: [rows, m]`, `dy: [rows, n]`.
///
/// Gradient of a matrix product with respect to its right operand. Each
/// `dw` element accumulates over `r` in ascending order regardless of the
/// partitioning, so serial and parallel runs agree bitwise.
pub fn matmul_grad_rhs(dw: &mut [f32], x: &[f32], dy: &[f32], rows: usize, m: usize, n: usize) {
    debug_assert_eq!(x.len(), rows * m);
    debug_assert_eq!(dy.len(), rows * n);
    debug_assert_eq!(dw.len(), m * n);
    #[cfg(feature = "parallel")]
    {
        if dw.len() >= PAR_MIN_ELEMS {
            use rayon::prelude::*;
            dw.par_chunks_mut(n).enumerate().for_each(|(i, w_row)| {
                for r in 0..rows {
                    let av = x[r * m + i];
                    let dy_row = &dy[r * n..(r + 1) * n];
                    for (w, g) in w_row.iter_mut().zip(dy_row) {
                        *w += av * *g;
                    }
                }
            });
            return;
        }
    }
    for r in 0..rows {
        let x_row = &x[r * m..(r + 1) * m];
        let dy_row = &dy[r * n..(r + 1) * n];
        for (i, &av) in x_row.iter().enumerate() {
            let w_row = &mut dw[i * n..(i + 1) * n];
            for (w, g) in w_row.iter_mut().zip(dy_row) {
                *w += av * *g;
            }
        }
    }
}

/// Adds `bias` (`[n]`) to every row of `out` (`[rows, n]`).
pub fn add_bias(out: &mut [f32], bias: &[f32], n: usize) {
    for row in out.chunks_mut(n) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

/// `db[o] += sum_r dy[r, o]`.
pub fn bias_grad(db: &mut [f32], dy: &[f32], n: usize) {
    for row in dy.chunks(n) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
}

/// Per-channel batch statistics of `x: [rows, c]`, accumulated in `f64`.
///
/// Returns `(mean, biased_variance)`; the biased (population) estimator is
/// used for normalization and for running-average updates alike.
pub fn batch_stats(x: &[f32], rows: usize, c: usize) -> (Vec<f32>, Vec<f32>) {
    debug_assert_eq!(x.len(), rows * c);
    let mut mean = vec![0.0f64; c];
    for row in x.chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let mut var = vec![0.0f64; c];
    for row in x.chunks_exact(c) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
    for s in &mut var {
        *s /= rows as f64;
    }
    (
        mean.iter().map(|&m| m as f32).collect(),
        var.iter().map(|&v| v as f32).collect(),
    )
}

/// Normalizes `x: [rows, c]` with the given per-channel statistics:
/// `out = gamma * (x - mean) / sqrt(var + eps) + beta`.
///
/// Returns `(out, xhat, invstd)`; `xhat` is the pre-scale normalized value
/// saved for the backward pass.
pub fn batch_norm_apply(
    x: &[f32],
    rows: usize,
    c: usize,
    mean: &[f32],
    var: &[f32],
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let invstd: Vec<f32> = var
        .iter()
        .map(|&v| (1.0 / math::sqrt_f64((v as f64) + (eps as f64))) as f32)
        .collect();
    let mut out = vec![0.0f32; rows * c];
    let mut xhat = vec![0.0f32; rows * c];
    for r in 0..rows {
        for ch in 0..c {
            let h = (x[r * c + ch] - mean[ch]) * invstd[ch];
            xhat[r * c + ch] = h;
            out[r * c + ch] = gamma[ch] * h + beta[ch];
        }
    }
    (out, xhat, invstd)
}

/// Backward pass of training-mode batch normalization.
///
/// With `xhat` and `invstd` saved from the forward pass, computes
/// `dx = gamma * invstd / rows * (rows * dy - sum(dy) - xhat * sum(dy * xhat))`
/// plus `dgamma = sum(dy * xhat)` and `dbeta = sum(dy)` (sums over rows,
/// accumulated in `f64`).
pub fn batch_norm_backward(
    dy: &[f32],
    xhat: &[f32],
    invstd: &[f32],
    gamma: &[f32],
    rows: usize,
    c: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut sum_dy = vec![0.0f64; c];
    let mut sum_dy_xhat = vec![0.0f64; c];
    for r in 0..rows {
        for ch in 0..c {
            let g = dy[r * c + ch] as f64;
            sum_dy[ch] += g;
            sum_dy_xhat[ch] += g * xhat[r * c + ch] as f64;
        }
    }
    let mut dx = vec![0.0f32; rows * c];
    let inv_rows = 1.0 / rows as f64;
    for r in 0..rows {
        for ch in 0..c {
            let g = dy[r * c + ch] as f64;
            let h = xhat[r * c + ch] as f64;
            let scale = gamma[ch] as f64 * invstd[ch] as f64 * inv_rows;
            dx[r * c + ch] =
                (scale * (rows as f64 * g - sum_dy[ch] - h * sum_dy_xhat[ch])) as f32;
        }
    }
    (
        dx,
        sum_dy_xhat.iter().map(|&v| v as f32).collect(),
        sum_dy.iter().map(|&v| v as f32).collect(),
    )
}

/// Max over the neighbor axis of `x: [groups, k, d]`, returning the pooled
/// `[groups, d]` values and the argmax neighbor per output element.
///
/// Ties resolve to the lowest neighbor index (strict `>` while scanning in
/// ascending order), which is where the gradient flows.
pub fn max_neighbors(x: &[f32], groups: usize, k: usize, d: usize) -> (Vec<f32>, Vec<u32>) {
    debug_assert_eq!(x.len(), groups * k * d);
    let mut out = vec![0.0f32; groups * d];
    let mut argmax = vec![0u32; groups * d];
    for g in 0..groups {
        let base = g * k * d;
        out[g * d..(g + 1) * d].copy_from_slice(&x[base..base + d]);
        for nk in 1..k {
            let row = &x[base + nk * d..base + (nk + 1) * d];
            for (c, &v) in row.iter().enumerate() {
                if v > out[g * d + c] {
                    out[g * d + c] = v;
                    argmax[g * d + c] = nk as u32;
                }
            }
        }
    }
    (out, argmax)
}

/// Fused softmax + mean cross-entropy over `logits: [rows, c]`.
///
/// Returns `(mean_loss, probabilities)`; row sums, log-sum-exp, and the loss
/// mean are computed in `f64` with the max-subtraction trick.
pub fn softmax_cross_entropy(logits: &[f32], rows: usize, c: usize, labels: &[u32]) -> (f32, Vec<f32>) {
    debug_assert_eq!(logits.len(), rows * c);
    debug_assert_eq!(labels.len(), rows);
    let mut probs = vec![0.0f32; rows * c];
    let mut total = 0.0f64;
    for r in 0..rows {
        let row = &logits[r * c..(r + 1) * c];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut denom = 0.0f64;
        for &l in row {
            denom += math::exp_f64(l as f64 - max);
        }
        for (p, &l) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
            *p = (math::exp_f64(l as f64 - max) / denom) as f32;
        }
        let label = labels[r] as usize;
        total += math::ln_f64(denom) - (row[label] as f64 - max);
    }
    ((total / rows as f64) as f32, probs)
}

/// Geometric affine normalization of grouped features, over `b` independent
/// cloud slices.
///
/// Each slice holds `grouped: [n, k, d]` neighbor features and `centers:
/// [n, d]` group-own features. With deviations `dev = grouped - centers`
/// (broadcast over `k`) and one scalar scale per slice,
/// `sigma_b = sqrt(sum_b(dev^2) / (n*k*d))`, the output is
/// `alpha * dev / (sigma_b + eps) + beta` per channel. Normalizing per slice
/// rather than over the whole buffer keeps the statistic a property of a
/// single cloud even when a training batch is packed into one tensor.
///
/// Returns `(out, sigmas)`; deviation sums accumulate in `f64`.
#[allow(clippy::too_many_arguments)]
pub fn geometric_affine(
    grouped: &[f32],
    centers: &[f32],
    alpha: &[f32],
    beta: &[f32],
    b: usize,
    n: usize,
    k: usize,
    d: usize,
    eps: f32,
) -> (Vec<f32>, Vec<f64>) {
    debug_assert_eq!(grouped.len(), b * n * k * d);
    debug_assert_eq!(centers.len(), b * n * d);
    let mut out = vec![0.0f32; b * n * k * d];
    let mut sigmas = Vec::with_capacity(b);
    for bi in 0..b {
        let grouped = &grouped[bi * n * k * d..(bi + 1) * n * k * d];
        let centers = &centers[bi * n * d..(bi + 1) * n * d];
        let out = &mut out[bi * n * k * d..(bi + 1) * n * k * d];
        let mut sq_sum = 0.0f64;
        for g in 0..n {
            let center = &centers[g * d..(g + 1) * d];
            for nk in 0..k {
                let row = &grouped[(g * k + nk) * d..(g * k + nk + 1) * d];
                for (c, &v) in row.iter().enumerate() {
                    let dev = (v - center[c]) as f64;
                    sq_sum += dev * dev;
                }
            }
        }
        let sigma = math::sqrt_f64(sq_sum / (n * k * d) as f64);
        let scale = 1.0 / (sigma + eps as f64);
        for g in 0..n {
            let center = &centers[g * d..(g + 1) * d];
            for nk in 0..k {
                let base = (g * k + nk) * d;
                for c in 0..d {
                    let dev = grouped[base + c] - center[c];
                    out[base + c] = alpha[c] * (dev as f64 * scale) as f32 + beta[c];
                }
            }
        }
        sigmas.push(sigma);
    }
    (out, sigmas)
}

/// Backward pass of [`geometric_affine`]; `sigmas` holds the per-slice
/// scales saved by the forward pass.
///
/// Recomputes deviations from the saved inputs. Each slice's scale is itself
/// a function of that slice's deviations; when `sigma == 0` (all neighbors
/// equal their centers) its contribution is treated as zero, matching the
/// subgradient convention used throughout. `alpha`/`beta` are shared across
/// slices, so their gradients accumulate over all of them.
#[allow(clippy::too_many_arguments)]
pub fn geometric_affine_backward(
    dy: &[f32],
    grouped: &[f32],
    centers: &[f32],
    alpha: &[f32],
    sigmas: &[f64],
    n: usize,
    k: usize,
    d: usize,
    eps: f32,
) -> (Vec<f32>, Vec<f32>, Vec<f32>, Vec<f32>) {
    let b = sigmas.len();
    debug_assert_eq!(grouped.len(), b * n * k * d);
    let m = (n * k * d) as f64;
    let mut dgrouped = vec![0.0f32; b * n * k * d];
    let mut dcenters = vec![0.0f32; b * n * d];
    let mut dalpha = vec![0.0f64; d];
    let mut dbeta = vec![0.0f64; d];
    for (bi, &sigma) in sigmas.iter().enumerate() {
        let dy = &dy[bi * n * k * d..(bi + 1) * n * k * d];
        let grouped = &grouped[bi * n * k * d..(bi + 1) * n * k * d];
        let centers = &centers[bi * n * d..(bi + 1) * n * d];
        let dgrouped = &mut dgrouped[bi * n * k * d..(bi + 1) * n * k * d];
        let dcenters = &mut dcenters[bi * n * d..(bi + 1) * n * d];
        let a = sigma + eps as f64;
        let inv_a = 1.0 / a;

        // d(loss)/d(sigma) = -1/a^2 * sum(dy * alpha * dev)
        let mut dsigma = 0.0f64;
        for g in 0..n {
            let center = &centers[g * d..(g + 1) * d];
            for nk in 0..k {
                let base = (g * k + nk) * d;
                for c in 0..d {
                    let dev = (grouped[base + c] - center[c]) as f64;
                    let gout = dy[base + c] as f64;
                    dsigma -= gout * alpha[c] as f64 * dev;
                    dalpha[c] += gout * dev * inv_a;
                    dbeta[c] += gout;
                }
            }
        }
        dsigma *= inv_a * inv_a;

        // Each deviation receives a direct path through the normalization and
        // an indirect path through sigma: d(sigma)/d(dev) = dev / (sigma * m).
        let sigma_term = if sigma > 0.0 { dsigma / (sigma * m) } else { 0.0 };
        for g in 0..n {
            let center = &centers[g * d..(g + 1) * d];
            for nk in 0..k {
                let base = (g * k + nk) * d;
                for c in 0..d {
                    let dev = (grouped[base + c] - center[c]) as f64;
                    let gout = dy[base + c] as f64;
                    let ddev = gout * alpha[c] as f64 * inv_a + sigma_term * dev;
                    dgrouped[base + c] = ddev as f32;
                    dcenters[g * d + c] -= ddev as f32;
                }
            }
        }
    }
    (
        dgrouped,
        dcenters,
        dalpha.iter().map(|&v| v as f32).collect(),
        dbeta.iter().map(|&v| v as f32).collect(),
    )
}
