//! Seed-parameterized gradient checks for every primitive operation.
//!
//! Each check builds one op (composed with a cross-entropy head so the
//! scalar has informative gradients everywhere), backpropagates through the
//! tape, and compares every input coordinate against central differences of
//! the double-precision replay in [`crate::reference`]. Dimensions are drawn
//! from the seed so a sweep over many seeds also sweeps shapes.
//!
//! Inputs to the two piecewise ops are constructed away from their selection
//! boundaries (rectifier magnitudes bounded below, pooled values separated
//! by fixed gaps) so the finite-difference step can never cross one; the
//! comparison then runs at full strictness everywhere.

use pointmlp_core::autodiff::{check_gradient, Graph, DEFAULT_STEP};
use pointmlp_core::rng::Xoshiro256StarStar;
use pointmlp_core::Tensor;

use crate::reference;

const EPS: f32 = 1e-5;

/// Worst relative error one primitive produced at one seed.
#[derive(Clone, Debug)]
pub struct OpReport {
    /// Which primitive (and which of its inputs) was checked.
    pub op: &'static str,
    /// `|analytic - numeric| / max(1, |numeric|)`, maximized over every
    /// coordinate of that input.
    pub max_rel_err: f64,
}

fn rand_vec(rng: &mut Xoshiro256StarStar, n: usize, lo: f64, hi: f64) -> Vec<f32> {
    (0..n).map(|_| rng.uniform_in(lo, hi) as f32).collect()
}

fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

fn cycle_labels(rows: usize, classes: usize) -> Vec<u32> {
    (0..rows as u32).map(|i| i % classes as u32).collect()
}

fn dim(rng: &mut Xoshiro256StarStar, lo: u64, hi: u64) -> usize {
    (lo + rng.rand_below(hi - lo + 1)) as usize
}

/// Runs every primitive-op gradient check at one seed and reports the worst
/// relative error per checked input.
pub fn sweep_primitive_ops(seed: u64) -> Vec<OpReport> {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut out = Vec::new();

    // Fully connected: all three inputs.
    {
        let (rows, d_in, d_out) = (dim(&mut rng, 3, 8), dim(&mut rng, 2, 6), dim(&mut rng, 2, 5));
        let x = rand_vec(&mut rng, rows * d_in, -1.0, 1.0);
        let w = rand_vec(&mut rng, d_in * d_out, -1.0, 1.0);
        let b = rand_vec(&mut rng, d_out, -1.0, 1.0);
        let labels = cycle_labels(rows, d_out);
        let mut g = Graph::new();
        let xv = g.leaf(Tensor::from_vec(&[rows, d_in], x.clone()).unwrap().tracked());
        let wv = g.leaf(Tensor::from_vec(&[d_in, d_out], w.clone()).unwrap().tracked());
        let bv = g.leaf(Tensor::from_vec(&[d_out], b.clone()).unwrap().tracked());
        let fc = g.fc(xv, wv, bv).unwrap();
        let loss = g.softmax_cross_entropy(fc, &labels).unwrap();
        g.backward(loss).unwrap();
        let replay = |x: &[f32], w: &[f32], b: &[f32]| {
            let o = reference::fc(&widen(x), &widen(w), &widen(b), rows, d_in, d_out);
            reference::softmax_cross_entropy(&o, &labels, rows, d_out)
        };
        for (name, buf, var) in [
            ("fc/x", &x, xv),
            ("fc/weight", &w, wv),
            ("fc/bias", &b, bv),
        ] {
            let r = check_gradient(
                |p| match name {
                    "fc/x" => replay(p, &w, &b),
                    "fc/weight" => replay(&x, p, &b),
                    _ => replay(&x, &w, p),
                },
                buf,
                g.grad(var).unwrap(),
                0..buf.len(),
                DEFAULT_STEP,
            );
            out.push(OpReport {
                op: name,
                max_rel_err: r.max_rel_err,
            });
        }
    }

    // Batch norm, training statistics: input, gain, shift.
    {
        let (rows, c) = (dim(&mut rng, 6, 14), dim(&mut rng, 2, 6));
        let x = rand_vec(&mut rng, rows * c, -2.0, 2.0);
        let gamma = rand_vec(&mut rng, c, 0.5, 1.5);
        let beta = rand_vec(&mut rng, c, -0.5, 0.5);
        let labels = cycle_labels(rows, c);
        let mut g = Graph::new();
        let xv = g.leaf(Tensor::from_vec(&[rows, c], x.clone()).unwrap().tracked());
        let gv = g.leaf(Tensor::from_vec(&[c], gamma.clone()).unwrap().tracked());
        let bv = g.leaf(Tensor::from_vec(&[c], beta.clone()).unwrap().tracked());
        let bn = g.batch_norm_train(xv, gv, bv, EPS).unwrap();
        let loss = g.softmax_cross_entropy(bn.out, &labels).unwrap();
        g.backward(loss).unwrap();
        let replay = |x: &[f32], gamma: &[f32], beta: &[f32]| {
            let (o, _) = reference::batch_norm_train(
                &widen(x),
                &widen(gamma),
                &widen(beta),
                rows,
                c,
                EPS as f64,
            );
            reference::softmax_cross_entropy(&o, &labels, rows, c)
        };
        let r = check_gradient(|p| replay(p, &gamma, &beta), &x, g.grad(xv).unwrap(), 0..x.len(), DEFAULT_STEP);
        out.push(OpReport { op: "batch_norm_train/x", max_rel_err: r.max_rel_err });
        let r = check_gradient(|p| replay(&x, p, &beta), &gamma, g.grad(gv).unwrap(), 0..c, DEFAULT_STEP);
        out.push(OpReport { op: "batch_norm_train/gamma", max_rel_err: r.max_rel_err });
        let r = check_gradient(|p| replay(&x, &gamma, p), &beta, g.grad(bv).unwrap(), 0..c, DEFAULT_STEP);
        out.push(OpReport { op: "batch_norm_train/beta", max_rel_err: r.max_rel_err });
    }

    // Batch norm, frozen statistics.
    {
        let (rows, c) = (dim(&mut rng, 4, 9), dim(&mut rng, 2, 6));
        let x = rand_vec(&mut rng, rows * c, -2.0, 2.0);
        let gamma = rand_vec(&mut rng, c, 0.5, 1.5);
        let beta = rand_vec(&mut rng, c, -0.5, 0.5);
        let mean = rand_vec(&mut rng, c, -0.5, 0.5);
        let var = rand_vec(&mut rng, c, 0.5, 2.0);
        let labels = cycle_labels(rows, c);
        let mut g = Graph::new();
        let xv = g.leaf(Tensor::from_vec(&[rows, c], x.clone()).unwrap().tracked());
        let gv = g.leaf(Tensor::from_vec(&[c], gamma.clone()).unwrap().tracked());
        let bv = g.leaf(Tensor::from_vec(&[c], beta.clone()).unwrap().tracked());
        let bn = g.batch_norm_frozen(xv, gv, bv, &mean, &var, EPS).unwrap();
        let loss = g.softmax_cross_entropy(bn, &labels).unwrap();
        g.backward(loss).unwrap();
        let replay = |x: &[f32], gamma: &[f32], beta: &[f32]| {
            let o = reference::batch_norm_frozen(
                &widen(x),
                &widen(gamma),
                &widen(beta),
                &widen(&mean),
                &widen(&var),
                rows,
                c,
                EPS as f64,
            );
            reference::softmax_cross_entropy(&o, &labels, rows, c)
        };
        let r = check_gradient(|p| replay(p, &gamma, &beta), &x, g.grad(xv).unwrap(), 0..x.len(), DEFAULT_STEP);
        out.push(OpReport { op: "batch_norm_frozen/x", max_rel_err: r.max_rel_err });
        let r = check_gradient(|p| replay(&x, p, &beta), &gamma, g.grad(gv).unwrap(), 0..c, DEFAULT_STEP);
        out.push(OpReport { op: "batch_norm_frozen/gamma", max_rel_err: r.max_rel_err });
        let r = check_gradient(|p| replay(&x, &gamma, p), &beta, g.grad(bv).unwrap(), 0..c, DEFAULT_STEP);
        out.push(OpReport { op: "batch_norm_frozen/beta", max_rel_err: r.max_rel_err });
    }

    // Rectifier, inputs bounded away from the kink.
    {
        let (rows, c) = (dim(&mut rng, 4, 10), dim(&mut rng, 3, 7));
        let x: Vec<f32> = (0..rows * c)
            .map(|_| {
                let mag = rng.uniform_in(0.1, 1.0);
                let sign = if rng.uniform_f64() < 0.5 { -1.0 } else { 1.0 };
                (mag * sign) as f32
            })
            .collect();
        let labels = cycle_labels(rows, c);
        let mut g = Graph::new();
        let xv = g.leaf(Tensor::from_vec(&[rows, c], x.clone()).unwrap().tracked());
        let o = g.relu(xv);
        let loss = g.softmax_cross_entropy(o, &labels).unwrap();
        g.backward(loss).unwrap();
        let r = check_gradient(
            |p| {
                let o = reference::relu(&widen(p));
                reference::softmax_cross_entropy(&o, &labels, rows, c)
            },
            &x,
            g.grad(xv).unwrap(),
            0..x.len(),
            DEFAULT_STEP,
        );
        out.push(OpReport { op: "relu/x", max_rel_err: r.max_rel_err });
    }

    // Elementwise add feeding a reshape.
    {
        let (p, q, r_) = (dim(&mut rng, 2, 4), dim(&mut rng, 2, 4), dim(&mut rng, 2, 4));
        let rows = p * q;
        let a = rand_vec(&mut rng, p * q * r_, -1.0, 1.0);
        let b = rand_vec(&mut rng, p * q * r_, -1.0, 1.0);
        let labels = cycle_labels(rows, r_);
        let mut g = Graph::new();
        let av = g.leaf(Tensor::from_vec(&[p, q, r_], a.clone()).unwrap().tracked());
        let bv = g.leaf(Tensor::from_vec(&[p, q, r_], b.clone()).unwrap().tracked());
        let sum = g.add(av, bv).unwrap();
        let flat = g.reshape(sum, &[rows, r_]).unwrap();
        let loss = g.softmax_cross_entropy(flat, &labels).unwrap();
        g.backward(loss).unwrap();
        let replay = |a: &[f32], b: &[f32]| {
            let s: Vec<f64> = widen(a).iter().zip(widen(b)).map(|(x, y)| x + y).collect();
            reference::softmax_cross_entropy(&s, &labels, rows, r_)
        };
        let r = check_gradient(|pp| replay(pp, &b), &a, g.grad(av).unwrap(), 0..a.len(), DEFAULT_STEP);
        out.push(OpReport { op: "add_reshape/a", max_rel_err: r.max_rel_err });
        let r = check_gradient(|pp| replay(&a, pp), &b, g.grad(bv).unwrap(), 0..b.len(), DEFAULT_STEP);
        out.push(OpReport { op: "add_reshape/b", max_rel_err: r.max_rel_err });
    }

    // Row gather with repeated indices (backward is a scatter-add).
    {
        let (rows, d) = (dim(&mut rng, 5, 10), dim(&mut rng, 3, 5));
        let picks = dim(&mut rng, 8, 16);
        let x = rand_vec(&mut rng, rows * d, -1.0, 1.0);
        let idx: Vec<u32> = (0..picks)
            .map(|_| rng.rand_below(rows as u64) as u32)
            .collect();
        let labels = cycle_labels(picks, d);
        let mut g = Graph::new();
        let xv = g.leaf(Tensor::from_vec(&[rows, d], x.clone()).unwrap().tracked());
        let o = g.gather_rows(xv, &idx, &[picks]).unwrap();
        let loss = g.softmax_cross_entropy(o, &labels).unwrap();
        g.backward(loss).unwrap();
        let r = check_gradient(
            |p| {
                let o = reference::gather_rows(&widen(p), &idx, d);
                reference::softmax_cross_entropy(&o, &labels, picks, d)
            },
            &x,
            g.grad(xv).unwrap(),
            0..x.len(),
            DEFAULT_STEP,
        );
        out.push(OpReport { op: "gather_rows/x", max_rel_err: r.max_rel_err });
    }

    // Neighbor max-pool; per-column values sit on shuffled 0.05-spaced
    // levels so no finite-difference step can flip a winner.
    {
        let (n, k, d) = (dim(&mut rng, 3, 6), dim(&mut rng, 3, 6), dim(&mut rng, 2, 4));
        let mut x = vec![0.0f32; n * k * d];
        for i in 0..n {
            for c in 0..d {
                let mut levels: Vec<usize> = (0..k).collect();
                rng.shuffle(&mut levels);
                let base = rng.uniform_in(-0.5, 0.5) as f32;
                for j in 0..k {
                    x[(i * k + j) * d + c] = base + 0.05 * levels[j] as f32;
                }
            }
        }
        let labels = cycle_labels(n, d);
        let mut g = Graph::new();
        let xv = g.leaf(Tensor::from_vec(&[n, k, d], x.clone()).unwrap().tracked());
        let o = g.max_over_neighbors(xv).unwrap();
        let loss = g.softmax_cross_entropy(o, &labels).unwrap();
        g.backward(loss).unwrap();
        let r = check_gradient(
            |p| {
                let o = reference::max_over_neighbors(&widen(p), n, k, d);
                reference::softmax_cross_entropy(&o, &labels, n, d)
            },
            &x,
            g.grad(xv).unwrap(),
            0..x.len(),
            DEFAULT_STEP,
        );
        out.push(OpReport { op: "max_over_neighbors/x", max_rel_err: r.max_rel_err });
    }

    // Softmax cross-entropy head by itself.
    {
        let (rows, c) = (dim(&mut rng, 4, 9), dim(&mut rng, 3, 6));
        let logits = rand_vec(&mut rng, rows * c, -3.0, 3.0);
        let labels: Vec<u32> = (0..rows).map(|_| rng.rand_below(c as u64) as u32).collect();
        let mut g = Graph::new();
        let lv = g.leaf(Tensor::from_vec(&[rows, c], logits.clone()).unwrap().tracked());
        let loss = g.softmax_cross_entropy(lv, &labels).unwrap();
        g.backward(loss).unwrap();
        let r = check_gradient(
            |p| reference::softmax_cross_entropy(&widen(p), &labels, rows, c),
            &logits,
            g.grad(lv).unwrap(),
            0..logits.len(),
            DEFAULT_STEP,
        );
        out.push(OpReport { op: "softmax_cross_entropy/logits", max_rel_err: r.max_rel_err });
    }

    // Geometric affine over grouped neighborhoods: all four inputs.
    {
        let (n, k, d) = (dim(&mut rng, 3, 5), dim(&mut rng, 2, 4), dim(&mut rng, 2, 3));
        let grouped = rand_vec(&mut rng, n * k * d, -1.0, 1.0);
        let centers = rand_vec(&mut rng, n * d, -1.0, 1.0);
        let alpha = rand_vec(&mut rng, d, 0.5, 2.0);
        let beta = rand_vec(&mut rng, d, -0.5, 0.5);
        let rows = n * k;
        let labels = cycle_labels(rows, d);
        let mut g = Graph::new();
        let gv = g.leaf(Tensor::from_vec(&[n, k, d], grouped.clone()).unwrap().tracked());
        let cv = g.leaf(Tensor::from_vec(&[n, d], centers.clone()).unwrap().tracked());
        let av = g.leaf(Tensor::from_vec(&[d], alpha.clone()).unwrap().tracked());
        let bv = g.leaf(Tensor::from_vec(&[d], beta.clone()).unwrap().tracked());
        let o = g.geometric_affine(gv, cv, av, bv, EPS).unwrap();
        let flat = g.reshape(o, &[rows, d]).unwrap();
        let loss = g.softmax_cross_entropy(flat, &labels).unwrap();
        g.backward(loss).unwrap();
        let replay = |gr: &[f32], ce: &[f32], al: &[f32], be: &[f32]| {
            let (o, _) = reference::geometric_affine(
                &widen(gr),
                &widen(ce),
                &widen(al),
                &widen(be),
                n,
                k,
                d,
                EPS as f64,
            );
            reference::softmax_cross_entropy(&o, &labels, rows, d)
        };
        let r = check_gradient(|p| replay(p, &centers, &alpha, &beta), &grouped, g.grad(gv).unwrap(), 0..grouped.len(), DEFAULT_STEP);
        out.push(OpReport { op: "geometric_affine/grouped", max_rel_err: r.max_rel_err });
        let r = check_gradient(|p| replay(&grouped, p, &alpha, &beta), &centers, g.grad(cv).unwrap(), 0..centers.len(), DEFAULT_STEP);
        out.push(OpReport { op: "geometric_affine/centers", max_rel_err: r.max_rel_err });
        let r = check_gradient(|p| replay(&grouped, &centers, p, &beta), &alpha, g.grad(av).unwrap(), 0..d, DEFAULT_STEP);
        out.push(OpReport { op: "geometric_affine/alpha", max_rel_err: r.max_rel_err });
        let r = check_gradient(|p| replay(&grouped, &centers, &alpha, p), &beta, g.grad(bv).unwrap(), 0..d, DEFAULT_STEP);
        out.push(OpReport { op: "geometric_affine/beta", max_rel_err: r.max_rel_err });
    }

    // Dropout through a fixed mask (recovered by replaying the draw
    // sequence over all-ones).
    {
        let (rows, c) = (dim(&mut rng, 4, 8), dim(&mut rng, 3, 6));
        let x = rand_vec(&mut rng, rows * c, -1.0, 1.0);
        let labels = cycle_labels(rows, c);
        let p = 0.5;
        let mask_seed = rng.next_u64();

        let mut probe_rng = Xoshiro256StarStar::seed_from_u64(mask_seed);
        let mut probe = Graph::new();
        let ones = probe.leaf(Tensor::full(&[rows, c], 1.0));
        let masked = probe.dropout(ones, p, &mut probe_rng);
        let mask: Vec<f64> = probe.value(masked).as_slice().iter().map(|&v| v as f64).collect();

        let mut mask_rng = Xoshiro256StarStar::seed_from_u64(mask_seed);
        let mut g = Graph::new();
        let xv = g.leaf(Tensor::from_vec(&[rows, c], x.clone()).unwrap().tracked());
        let o = g.dropout(xv, p, &mut mask_rng);
        let loss = g.softmax_cross_entropy(o, &labels).unwrap();
        g.backward(loss).unwrap();
        let r = check_gradient(
            |buf| {
                let o: Vec<f64> = widen(buf).iter().zip(&mask).map(|(v, m)| v * m).collect();
                reference::softmax_cross_entropy(&o, &labels, rows, c)
            },
            &x,
            g.grad(xv).unwrap(),
            0..x.len(),
            DEFAULT_STEP,
        );
        out.push(OpReport { op: "dropout/x", max_rel_err: r.max_rel_err });
    }

    out
}
