//! Double-precision re-implementations of every tensor kernel, written as
//! plain nested loops with no fused arithmetic. These are the value oracles:
//! the production f32 kernels must agree with them to a few ulps-worth of
//! single-precision rounding.

/// `[rows, d_in] x [d_in, d_out] + bias`, the fully-connected forward.
/// The inner loop runs along contiguous weight rows so the oracle stays fast
/// enough for differencing harnesses that call it thousands of times.
#[must_use]
pub fn fc(x: &[f64], w: &[f64], bias: &[f64], rows: usize, d_in: usize, d_out: usize) -> Vec<f64> {
    assert_eq!(x.len(), rows * d_in);
    assert_eq!(w.len(), d_in * d_out);
    assert_eq!(bias.len(), d_out);
    let mut out = vec![0.0; rows * d_out];
    for i in 0..rows {
        let row = &mut out[i * d_out..(i + 1) * d_out];
        row.copy_from_slice(bias);
        for l in 0..d_in {
            let xv = x[i * d_in + l];
            let wrow = &w[l * d_out..(l + 1) * d_out];
            for (o, &wv) in row.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    out
}

/// Elementwise `max(x, 0)`.
#[must_use]
pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Per-channel batch statistics from a training-mode normalization.
#[derive(Clone, Debug)]
pub struct BnStats {
    /// Per-channel mean over the rows.
    pub mean: Vec<f64>,
    /// Per-channel biased variance over the rows.
    pub var: Vec<f64>,
}

/// Training-mode batch norm: two-pass per-channel mean and biased variance
/// over the rows, then `gamma * (x - mean) / sqrt(var + eps) + beta`.
#[must_use]
pub fn batch_norm_train(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    rows: usize,
    d: usize,
    eps: f64,
) -> (Vec<f64>, BnStats) {
    assert_eq!(x.len(), rows * d);
    assert!(rows > 0, "batch norm needs at least one row");
    let mut mean = vec![0.0; d];
    for i in 0..rows {
        for c in 0..d {
            mean[c] += x[i * d + c];
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let mut var = vec![0.0; d];
    for i in 0..rows {
        for c in 0..d {
            let dev = x[i * d + c] - mean[c];
            var[c] += dev * dev;
        }
    }
    for v in &mut var {
        *v /= rows as f64;
    }
    let out = normalize(x, gamma, beta, &mean, &var, rows, d, eps);
    (out, BnStats { mean, var })
}

/// Inference-mode batch norm with caller-supplied running statistics.
#[must_use]
pub fn batch_norm_frozen(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    rows: usize,
    d: usize,
    eps: f64,
) -> Vec<f64> {
    normalize(x, gamma, beta, mean, var, rows, d, eps)
}

fn normalize(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    rows: usize,
    d: usize,
    eps: f64,
) -> Vec<f64> {
    assert_eq!(gamma.len(), d);
    assert_eq!(beta.len(), d);
    assert_eq!(mean.len(), d);
    assert_eq!(var.len(), d);
    let mut out = vec![0.0; rows * d];
    for i in 0..rows {
        for c in 0..d {
            let xhat = (x[i * d + c] - mean[c]) / (var[c] + eps).sqrt();
            out[i * d + c] = gamma[c] * xhat + beta[c];
        }
    }
    out
}

/// Channelwise max over the middle axis: `[n, k, d] -> [n, d]`.
#[must_use]
pub fn max_over_neighbors(x: &[f64], n: usize, k: usize, d: usize) -> Vec<f64> {
    assert_eq!(x.len(), n * k * d);
    assert!(k > 0);
    let mut out = vec![f64::NEG_INFINITY; n * d];
    for i in 0..n {
        for j in 0..k {
            for c in 0..d {
                let v = x[(i * k + j) * d + c];
                if v > out[i * d + c] {
                    out[i * d + c] = v;
                }
            }
        }
    }
    out
}

/// Row gather: output row `t` is row `idx[t]` of the `[_, d]` input.
#[must_use]
pub fn gather_rows(x: &[f64], idx: &[u32], d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        let r = i as usize;
        out.extend_from_slice(&x[r * d..(r + 1) * d]);
    }
    out
}

/// Numerically-stable softmax of one row.
#[must_use]
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Mean cross-entropy over the rows of a `[rows, c]` logit matrix:
/// `mean_i(logsumexp(row_i) - row_i[label_i])`.
#[must_use]
pub fn softmax_cross_entropy(logits: &[f64], labels: &[u32], rows: usize, c: usize) -> f64 {
    assert_eq!(logits.len(), rows * c);
    assert_eq!(labels.len(), rows);
    let mut total = 0.0;
    for i in 0..rows {
        let row = &logits[i * c..(i + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[labels[i] as usize];
    }
    total / rows as f64
}

/// Deviation normalization of one cloud's grouped features.
///
/// `grouped` is `[n, k, d]`, `centers` is `[n, d]`; a single scale
/// `sigma = sqrt(mean of squared deviations over all n*k*d entries)` is
/// shared by the whole cloud, and the output is
/// `alpha * (grouped - center) / (sigma + eps) + beta` with channelwise
/// `alpha`/`beta`. Returns the output and `sigma`.
#[must_use]
pub fn geometric_affine(
    grouped: &[f64],
    centers: &[f64],
    alpha: &[f64],
    beta: &[f64],
    n: usize,
    k: usize,
    d: usize,
    eps: f64,
) -> (Vec<f64>, f64) {
    assert_eq!(grouped.len(), n * k * d);
    assert_eq!(centers.len(), n * d);
    assert_eq!(alpha.len(), d);
    assert_eq!(beta.len(), d);
    let mut sq_sum = 0.0;
    for g in 0..n {
        for j in 0..k {
            for c in 0..d {
                let dev = grouped[(g * k + j) * d + c] - centers[g * d + c];
                sq_sum += dev * dev;
            }
        }
    }
    let sigma = (sq_sum / (n * k * d) as f64).sqrt();
    let mut out = vec![0.0; n * k * d];
    for g in 0..n {
        for j in 0..k {
            for c in 0..d {
                let dev = grouped[(g * k + j) * d + c] - centers[g * d + c];
                out[(g * k + j) * d + c] = alpha[c] * dev / (sigma + eps) + beta[c];
            }
        }
    }
    (out, sigma)
}
