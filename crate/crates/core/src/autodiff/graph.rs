//! The recording graph: value arena, node tape, and backward pass.

use super::kernels;
use super::OpError;
use crate::rng::Xoshiro256StarStar;
use crate::tensor::Tensor;
use alloc::vec;
use alloc::vec::Vec;

/// Handle to a tensor owned by a [`Graph`]. Plain index, cheap to copy;
/// only valid for the graph that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Result of a training-mode batch normalization: the output handle plus
/// the batch statistics the caller folds into its running averages.
#[derive(Clone, Debug)]
pub struct BnTrainOut {
    /// Normalized output.
    pub out: Var,
    /// Per-channel batch mean.
    pub batch_mean: Vec<f32>,
    /// Per-channel biased (population) batch variance.
    pub batch_var: Vec<f32>,
}

/// One recorded operation. Input handles are stored as raw indices; saved
/// context is whatever the backward rule cannot cheaply recompute from the
/// value arena.
enum Op {
    Fc {
        x: usize,
        w: usize,
        b: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f32>,
        invstd: Vec<f32>,
    },
    BatchNormFrozen {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f32>,
        invstd: Vec<f32>,
    },
    Relu {
        x: usize,
    },
    MaxNeighbors {
        x: usize,
        argmax: Vec<u32>,
    },
    GatherRows {
        x: usize,
        idx: Vec<u32>,
    },
    Add {
        a: usize,
        b: usize,
    },
    Reshape {
        x: usize,
    },
    Dropout {
        x: usize,
        mask: Vec<f32>,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<u32>,
        probs: Vec<f32>,
    },
    GeometricAffine {
        grouped: usize,
        centers: usize,
        alpha: usize,
        beta: usize,
        sigmas: Vec<f64>,
        eps: f32,
    },
}

struct Node {
    out: usize,
    op: Op,
}

/// A define-by-run reverse-mode tape.
///
/// The graph owns every tensor created during a forward pass. Each operation
/// validates shapes, computes its output eagerly, and — only when at least
/// one input is tracked — records a node. [`Graph::backward`] then replays
/// the node list in exact reverse insertion order, accumulating gradients by
/// addition, so a value consumed by several operations receives the sum of
/// all its downstream contributions.
///
/// A graph describes one forward pass: build, call `backward` once, read
/// leaf gradients, drop. Nothing is retained across iterations.
#[derive(Default)]
pub struct Graph {
    vals: Vec<Tensor>,
    tracked: Vec<bool>,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
}

impl Graph {
    /// Creates an empty graph.
    #[must_use]
    pub fn new() -> Self {
        Self::default()
    }

    /// Moves a tensor into the graph. It is tracked (participates in
    /// backward) when `tensor.requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let tracked = tensor.requires_grad;
        self.push(tensor, tracked)
    }

    /// The value behind a handle.
    #[must_use]
    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.0]
    }

    /// Gradient of the last `backward` target with respect to `v`, if any
    /// was accumulated (leaves keep theirs; interior gradients are released
    /// as the backward sweep passes them).
    #[must_use]
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Number of recorded nodes (zero for a pass over untracked leaves).
    #[must_use]
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, tensor: Tensor, tracked: bool) -> Var {
        self.vals.push(tensor);
        self.tracked.push(tracked);
        Var(self.vals.len() - 1)
    }

    fn record(&mut self, out: Var, tracked: bool, op: Op) -> Var {
        if tracked {
            self.nodes.push(Node { out: out.0, op });
        }
        out
    }

    fn is_tracked(&self, v: Var) -> bool {
        self.tracked[v.0]
    }

    // ------------------------------------------------------------------
    // Operations
    // ------------------------------------------------------------------

    /// Fully-connected layer: `y = x @ w + b` with `w: [d_in, d_out]`,
    /// `b: [d_out]`, applied to the trailing dimension of `x`.
    pub fn fc(&mut self, x: Var, w: Var, b: Var) -> Result<Var, OpError> {
        let (xs, ws, bs) = (&self.vals[x.0], &self.vals[w.0], &self.vals[b.0]);
        if xs.shape().is_empty() {
            return Err(OpError::RankTooLow {
                op: "fc",
                min_rank: 1,
                got: xs.shape().to_vec(),
            });
        }
        if ws.shape().len() != 2 || xs.last_dim() != ws.dim(0) {
            return Err(OpError::ShapeMismatch {
                op: "fc",
                left: xs.shape().to_vec(),
                right: ws.shape().to_vec(),
            });
        }
        let (d_in, d_out) = (ws.dim(0), ws.dim(1));
        if bs.shape() != [d_out] {
            return Err(OpError::ShapeMismatch {
                op: "fc",
                left: ws.shape().to_vec(),
                right: bs.shape().to_vec(),
            });
        }
        let rows = xs.leading();
        let mut out = vec![0.0f32; rows * d_out];
        kernels::matmul_accum(&mut out, xs.as_slice(), ws.as_slice(), rows, d_in, d_out);
        kernels::add_bias(&mut out, bs.as_slice(), d_out);
        let mut shape = xs.shape().to_vec();
        *shape.last_mut().expect("rank checked above") = d_out;
        let tracked = self.is_tracked(x) || self.is_tracked(w) || self.is_tracked(b);
        let tensor = Tensor::from_vec(&shape, out).expect("shape computed from buffer");
        let v = self.push(tensor, tracked);
        Ok(self.record(v, tracked, Op::Fc { x: x.0, w: w.0, b: b.0 }))
    }

    /// Training-mode batch normalization over all leading axes, per trailing
    /// channel. Returns the batch statistics (biased variance) so the caller
    /// can update running averages.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f32,
    ) -> Result<BnTrainOut, OpError> {
        let (rows, c) = self.check_norm_shapes("batch_norm", x, gamma, beta)?;
        let (mean, var) = kernels::batch_stats(self.vals[x.0].as_slice(), rows, c);
        let (out, xhat, invstd) = kernels::batch_norm_apply(
            self.vals[x.0].as_slice(),
            rows,
            c,
            &mean,
            &var,
            self.vals[gamma.0].as_slice(),
            self.vals[beta.0].as_slice(),
            eps,
        );
        let shape = self.vals[x.0].shape().to_vec();
        let tracked = self.is_tracked(x) || self.is_tracked(gamma) || self.is_tracked(beta);
        let tensor = Tensor::from_vec(&shape, out).expect("same shape as input");
        let v = self.push(tensor, tracked);
        self.record(
            v,
            tracked,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                invstd,
            },
        );
        Ok(BnTrainOut {
            out: v,
            batch_mean: mean,
            batch_var: var,
        })
    }

    /// Inference-mode batch normalization using frozen (running) statistics.
    pub fn batch_norm_frozen(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f32],
        var: &[f32],
        eps: f32,
    ) -> Result<Var, OpError> {
        let (rows, c) = self.check_norm_shapes("batch_norm", x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(OpError::ShapeMismatch {
                op: "batch_norm",
                left: vec![c],
                right: vec![mean.len(), var.len()],
            });
        }
        let (out, xhat, invstd) = kernels::batch_norm_apply(
            self.vals[x.0].as_slice(),
            rows,
            c,
            mean,
            var,
            self.vals[gamma.0].as_slice(),
            self.vals[beta.0].as_slice(),
            eps,
        );
        let shape = self.vals[x.0].shape().to_vec();
        let tracked = self.is_tracked(x) || self.is_tracked(gamma) || self.is_tracked(beta);
        let tensor = Tensor::from_vec(&shape, out).expect("same shape as input");
        let v = self.push(tensor, tracked);
        Ok(self.record(
            v,
            tracked,
            Op::BatchNormFrozen {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                invstd,
            },
        ))
    }

    fn check_norm_shapes(
        &self,
        op: &'static str,
        x: Var,
        gamma: Var,
        beta: Var,
    ) -> Result<(usize, usize), OpError> {
        let xs = &self.vals[x.0];
        if xs.shape().is_empty() {
            return Err(OpError::RankTooLow {
                op,
                min_rank: 1,
                got: xs.shape().to_vec(),
            });
        }
        let c = xs.last_dim();
        let rows = xs.leading();
        if rows == 0 {
            return Err(OpError::EmptyReduction { op });
        }
        let gs = &self.vals[gamma.0];
        let bs = &self.vals[beta.0];
        if gs.shape() != [c] || bs.shape() != [c] {
            return Err(OpError::ShapeMismatch {
                op,
                left: xs.shape().to_vec(),
                right: gs.shape().to_vec(),
            });
        }
        Ok((rows, c))
    }

    /// Elementwise rectified linear unit; the derivative at exactly zero is
    /// taken as zero.
    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<f32> = self.vals[x.0]
            .as_slice()
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        let shape = self.vals[x.0].shape().to_vec();
        let tracked = self.is_tracked(x);
        let tensor = Tensor::from_vec(&shape, out).expect("same shape as input");
        let v = self.push(tensor, tracked);
        self.record(v, tracked, Op::Relu { x: x.0 })
    }

    /// Elementwise sum of two tensors of identical shape (residual join).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, OpError> {
        if self.vals[a.0].shape() != self.vals[b.0].shape() {
            return Err(OpError::ShapeMismatch {
                op: "add",
                left: self.vals[a.0].shape().to_vec(),
                right: self.vals[b.0].shape().to_vec(),
            });
        }
        let out: Vec<f32> = self.vals[a.0]
            .as_slice()
            .iter()
            .zip(self.vals[b.0].as_slice())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.vals[a.0].shape().to_vec();
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        let tensor = Tensor::from_vec(&shape, out).expect("same shape as operands");
        let v = self.push(tensor, tracked);
        Ok(self.record(v, tracked, Op::Add { a: a.0, b: b.0 }))
    }

    /// Same data, new shape with an identical element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, OpError> {
        let tensor = self.vals[x.0].reshaped(shape).map_err(|_| OpError::ShapeMismatch {
            op: "reshape",
            left: self.vals[x.0].shape().to_vec(),
            right: shape.to_vec(),
        })?;
        let tracked = self.is_tracked(x);
        let v = self.push(tensor, tracked);
        Ok(self.record(v, tracked, Op::Reshape { x: x.0 }))
    }

    /// Gathers rows of a `[rows, d]` tensor. The output has shape
    /// `idx_shape + [d]`; a repeated index receives the sum of its output
    /// gradients in backward.
    pub fn gather_rows(
        &mut self,
        x: Var,
        idx: &[u32],
        idx_shape: &[usize],
    ) -> Result<Var, OpError> {
        let xs = &self.vals[x.0];
        if xs.shape().len() != 2 {
            return Err(OpError::RankTooLow {
                op: "gather_rows",
                min_rank: 2,
                got: xs.shape().to_vec(),
            });
        }
        let expected: usize = idx_shape.iter().product();
        if expected != idx.len() {
            return Err(OpError::ShapeMismatch {
                op: "gather_rows",
                left: idx_shape.to_vec(),
                right: vec![idx.len()],
            });
        }
        let rows = xs.dim(0);
        let d = xs.dim(1);
        if let Some(&bad) = idx.iter().find(|&&i| (i as usize) >= rows) {
            return Err(OpError::IndexOutOfRange { index: bad, rows });
        }
        let src = xs.as_slice();
        let mut out = vec![0.0f32; idx.len() * d];
        for (m, &i) in idx.iter().enumerate() {
            out[m * d..(m + 1) * d].copy_from_slice(&src[i as usize * d..(i as usize + 1) * d]);
        }
        let mut shape = idx_shape.to_vec();
        shape.push(d);
        let tracked = self.is_tracked(x);
        let tensor = Tensor::from_vec(&shape, out).expect("shape computed from buffer");
        let v = self.push(tensor, tracked);
        Ok(self.record(
            v,
            tracked,
            Op::GatherRows {
                x: x.0,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Max over the next-to-last axis: `[..., k, d] -> [..., d]`. Gradient
    /// flows only to each maximum element; ties break toward the lowest
    /// neighbor index.
    pub fn max_over_neighbors(&mut self, x: Var) -> Result<Var, OpError> {
        let xs = &self.vals[x.0];
        let rank = xs.shape().len();
        if rank < 2 {
            return Err(OpError::RankTooLow {
                op: "max_over_neighbors",
                min_rank: 2,
                got: xs.shape().to_vec(),
            });
        }
        let k = xs.dim(rank - 2);
        let d = xs.dim(rank - 1);
        if k == 0 {
            return Err(OpError::EmptyReduction {
                op: "max_over_neighbors",
            });
        }
        let groups = xs.shape()[..rank - 2].iter().product::<usize>();
        let (out, argmax) = kernels::max_neighbors(xs.as_slice(), groups, k, d);
        let mut shape = xs.shape().to_vec();
        shape.remove(rank - 2);
        let tracked = self.is_tracked(x);
        let tensor = Tensor::from_vec(&shape, out).expect("shape computed from buffer");
        let v = self.push(tensor, tracked);
        Ok(self.record(v, tracked, Op::MaxNeighbors { x: x.0, argmax }))
    }

    /// Inverted dropout: each element is zeroed with probability `p`,
    /// survivors are scaled by `1/(1-p)` so expectations match inference.
    /// Consumes exactly one uniform draw per element.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Xoshiro256StarStar) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
        let scale = (1.0 / (1.0 - p)) as f32;
        let mask: Vec<f32> = (0..self.vals[x.0].numel())
            .map(|_| if rng.uniform_f64() < p { 0.0 } else { scale })
            .collect();
        let out: Vec<f32> = self.vals[x.0]
            .as_slice()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let shape = self.vals[x.0].shape().to_vec();
        let tracked = self.is_tracked(x);
        let tensor = Tensor::from_vec(&shape, out).expect("same shape as input");
        let v = self.push(tensor, tracked);
        self.record(v, tracked, Op::Dropout { x: x.0, mask })
    }

    /// Fused softmax + cross-entropy, averaged over rows. `logits` must be
    /// `[rows, classes]`; the output is a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[u32]) -> Result<Var, OpError> {
        let ls = &self.vals[logits.0];
        if ls.shape().len() != 2 {
            return Err(OpError::RankTooLow {
                op: "softmax_cross_entropy",
                min_rank: 2,
                got: ls.shape().to_vec(),
            });
        }
        let rows = ls.dim(0);
        let classes = ls.dim(1);
        if rows == 0 || classes == 0 {
            return Err(OpError::EmptyReduction {
                op: "softmax_cross_entropy",
            });
        }
        if labels.len() != rows {
            return Err(OpError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: ls.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= classes) {
            return Err(OpError::LabelOutOfRange { label: bad, classes });
        }
        let (loss, probs) = kernels::softmax_cross_entropy(ls.as_slice(), rows, classes, labels);
        let tracked = self.is_tracked(logits);
        let tensor = Tensor::from_vec(&[], vec![loss]).expect("scalar");
        let v = self.push(tensor, tracked);
        Ok(self.record(
            v,
            tracked,
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Geometric affine normalization of grouped features: with deviations
    /// `dev = grouped - centers` (broadcast over the neighbor axis) and one
    /// scalar scale `sigma` per cloud (root mean square of that cloud's
    /// deviations), computes `alpha * dev / (sigma + eps) + beta` per
    /// channel. Fully differentiable, including through `sigma`.
    ///
    /// `grouped` is either `[n, k, d]` with `centers [n, d]` (a single
    /// cloud) or `[b, n, k, d]` with `centers [b, n, d]` (a batch packed
    /// into one tensor, normalized per leading slice so the statistic never
    /// mixes clouds).
    pub fn geometric_affine(
        &mut self,
        grouped: Var,
        centers: Var,
        alpha: Var,
        beta: Var,
        eps: f32,
    ) -> Result<Var, OpError> {
        let gs = &self.vals[grouped.0];
        let (b, n, k, d) = match gs.shape() {
            &[n, k, d] => (1, n, k, d),
            &[b, n, k, d] => (b, n, k, d),
            _ => {
                return Err(OpError::RankTooLow {
                    op: "geometric_affine",
                    min_rank: 3,
                    got: gs.shape().to_vec(),
                })
            }
        };
        if b * n * k * d == 0 {
            return Err(OpError::EmptyReduction {
                op: "geometric_affine",
            });
        }
        let cs = &self.vals[centers.0];
        let centers_ok = if gs.shape().len() == 3 {
            cs.shape() == [n, d]
        } else {
            cs.shape() == [b, n, d]
        };
        if !centers_ok {
            return Err(OpError::ShapeMismatch {
                op: "geometric_affine",
                left: gs.shape().to_vec(),
                right: cs.shape().to_vec(),
            });
        }
        let als = &self.vals[alpha.0];
        let bes = &self.vals[beta.0];
        if als.shape() != [d] || bes.shape() != [d] {
            return Err(OpError::ShapeMismatch {
                op: "geometric_affine",
                left: als.shape().to_vec(),
                right: bes.shape().to_vec(),
            });
        }
        let (out, sigmas) = kernels::geometric_affine(
            gs.as_slice(),
            cs.as_slice(),
            als.as_slice(),
            bes.as_slice(),
            b,
            n,
            k,
            d,
            eps,
        );
        let tracked = self.is_tracked(grouped)
            || self.is_tracked(centers)
            || self.is_tracked(alpha)
            || self.is_tracked(beta);
        let shape = gs.shape().to_vec();
        let tensor = Tensor::from_vec(&shape, out).expect("same shape as grouped input");
        let v = self.push(tensor, tracked);
        Ok(self.record(
            v,
            tracked,
            Op::GeometricAffine {
                grouped: grouped.0,
                centers: centers.0,
                alpha: alpha.0,
                beta: beta.0,
                sigmas,
                eps,
            },
        ))
    }

    // ------------------------------------------------------------------
    // Backward
    // ------------------------------------------------------------------

    /// Reverse sweep from a scalar `loss`, visiting recorded nodes in exact
    /// reverse insertion order. Gradients accumulate by addition; leaf
    /// gradients remain readable via [`Graph::grad`] afterwards. The node
    /// tape is consumed: a graph supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<(), OpError> {
        if self.vals[loss.0].numel() != 1 {
            return Err(OpError::NonScalarLoss {
                numel: self.vals[loss.0].numel(),
            });
        }
        if !self.tracked[loss.0] {
            return Err(OpError::UntrackedLoss);
        }
        self.grads = vec![None; self.vals.len()];
        self.grads[loss.0] = Some(vec![1.0]);

        let nodes = core::mem::take(&mut self.nodes);
        for node in nodes.iter().rev() {
            // An interior gradient is complete once the sweep reaches its
            // producer (all consumers were recorded later), so take it and
            // free the buffer.
            let Some(gout) = self.grads[node.out].take() else {
                continue;
            };
            self.step(&node.op, &gout);
        }
        Ok(())
    }

    fn add_grad(&mut self, target: usize, delta: Vec<f32>) {
        if !self.tracked[target] {
            return;
        }
        match &mut self.grads[target] {
            slot @ None => *slot = Some(delta),
            Some(existing) => {
                for (g, d) in existing.iter_mut().zip(&delta) {
                    *g += d;
                }
            }
        }
    }

    fn step(&mut self, op: &Op, gout: &[f32]) {
        match op {
            Op::Fc { x, w, b } => {
                let rows = self.vals[*x].leading();
                let d_in = self.vals[*w].dim(0);
                let d_out = self.vals[*w].dim(1);
                if self.tracked[*x] {
                    let wt = kernels::transpose(self.vals[*w].as_slice(), d_in, d_out);
                    let mut dx = vec![0.0f32; rows * d_in];
                    kernels::matmul_accum(&mut dx, gout, &wt, rows, d_out, d_in);
                    self.add_grad(*x, dx);
                }
                if self.tracked[*w] {
                    let mut dw = vec![0.0f32; d_in * d_out];
                    kernels::matmul_grad_rhs(
                        &mut dw,
                        self.vals[*x].as_slice(),
                        gout,
                        rows,
                        d_in,
                        d_out,
                    );
                    self.add_grad(*w, dw);
                }
                if self.tracked[*b] {
                    let mut db = vec![0.0f32; d_out];
                    kernels::bias_grad(&mut db, gout, d_out);
                    self.add_grad(*b, db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                invstd,
            } => {
                let c = invstd.len();
                let rows = xhat.len() / c;
                let (dx, dgamma, dbeta) = kernels::batch_norm_backward(
                    gout,
                    xhat,
                    invstd,
                    self.vals[*gamma].as_slice(),
                    rows,
                    c,
                );
                self.add_grad(*x, dx);
                self.add_grad(*gamma, dgamma);
                self.add_grad(*beta, dbeta);
            }
            Op::BatchNormFrozen {
                x,
                gamma,
                beta,
                xhat,
                invstd,
            } => {
                // Statistics are constants here, so the input path is a
                // plain per-channel scaling.
                let c = invstd.len();
                let gamma_v = self.vals[*gamma].as_slice();
                if self.tracked[*x] {
                    let dx: Vec<f32> = gout
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| g * gamma_v[i % c] * invstd[i % c])
                        .collect();
                    self.add_grad(*x, dx);
                }
                let mut dgamma = vec![0.0f32; c];
                let mut dbeta = vec![0.0f32; c];
                for (i, &g) in gout.iter().enumerate() {
                    dgamma[i % c] += g * xhat[i];
                    dbeta[i % c] += g;
                }
                self.add_grad(*gamma, dgamma);
                self.add_grad(*beta, dbeta);
            }
            Op::Relu { x } => {
                let dx: Vec<f32> = self.vals[*x]
                    .as_slice()
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                self.add_grad(*x, dx);
            }
            Op::MaxNeighbors { x, argmax } => {
                let xs = &self.vals[*x];
                let rank = xs.shape().len();
                let k = xs.dim(rank - 2);
                let d = xs.dim(rank - 1);
                let groups = argmax.len() / d;
                let mut dx = vec![0.0f32; xs.numel()];
                for g in 0..groups {
                    for c in 0..d {
                        let winner = argmax[g * d + c] as usize;
                        dx[(g * k + winner) * d + c] += gout[g * d + c];
                    }
                }
                self.add_grad(*x, dx);
            }
            Op::GatherRows { x, idx } => {
                let d = self.vals[*x].dim(1);
                let mut dx = vec![0.0f32; self.vals[*x].numel()];
                for (m, &i) in idx.iter().enumerate() {
                    let dst = &mut dx[i as usize * d..(i as usize + 1) * d];
                    for (t, &g) in dst.iter_mut().zip(&gout[m * d..(m + 1) * d]) {
                        *t += g;
                    }
                }
                self.add_grad(*x, dx);
            }
            Op::Add { a, b } => {
                self.add_grad(*a, gout.to_vec());
                self.add_grad(*b, gout.to_vec());
            }
            Op::Reshape { x } => {
                self.add_grad(*x, gout.to_vec());
            }
            Op::Dropout { x, mask } => {
                let dx: Vec<f32> = gout.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                self.add_grad(*x, dx);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let rows = labels.len();
                let c = probs.len() / rows;
                let g = gout[0] / rows as f32;
                let mut dl = probs.iter().map(|&p| p * g).collect::<Vec<f32>>();
                for (r, &label) in labels.iter().enumerate() {
                    dl[r * c + label as usize] -= g;
                }
                self.add_grad(*logits, dl);
            }
            Op::GeometricAffine {
                grouped,
                centers,
                alpha,
                beta,
                sigmas,
                eps,
            } => {
                let gs = &self.vals[*grouped];
                let rank = gs.shape().len();
                let (n, k, d) = (gs.dim(rank - 3), gs.dim(rank - 2), gs.dim(rank - 1));
                let (dgrouped, dcenters, dalpha, dbeta) = kernels::geometric_affine_backward(
                    gout,
                    gs.as_slice(),
                    self.vals[*centers].as_slice(),
                    self.vals[*alpha].as_slice(),
                    sigmas,
                    n,
                    k,
                    d,
                    *eps,
                );
                self.add_grad(*grouped, dgrouped);
                self.add_grad(*centers, dcenters);
                self.add_grad(*alpha, dalpha);
                self.add_grad(*beta, dbeta);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tracked(shape: &[usize], data: Vec<f32>) -> Tensor {
        Tensor::from_vec(shape, data).unwrap().tracked()
    }

    #[test]
    fn fc_with_identity_weight_is_identity() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.25, -0.125]).unwrap());
        let w = g.leaf(
            Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let b = g.leaf(Tensor::zeros(&[3]));
        let y = g.fc(x, w, b).unwrap();
        assert_eq!(g.value(y).as_slice(), g.value(x).as_slice());
        // Nothing was tracked, so no backward program exists.
        assert_eq!(g.node_count(), 0);
    }

    #[test]
    fn fc_rejects_mismatched_inner_dimension() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 3]));
        let w = g.leaf(Tensor::zeros(&[4, 5]));
        let b = g.leaf(Tensor::zeros(&[5]));
        let err = g.fc(x, w, b).unwrap_err();
        assert!(matches!(err, OpError::ShapeMismatch { op: "fc", .. }));
    }

    #[test]
    fn value_reused_by_two_paths_accumulates_both_gradients() {
        // loss = CE(x + x); d(loss)/dx must be twice the single-path grad.
        let logits_data = vec![0.3, -0.7];
        let mut g = Graph::new();
        let x = g.leaf(tracked(&[1, 2], logits_data.clone()));
        let s = g.add(x, x).unwrap();
        let loss = g.softmax_cross_entropy(s, &[0]).unwrap();
        g.backward(loss).unwrap();
        let dx = g.grad(x).unwrap().to_vec();

        let mut g2 = Graph::new();
        let x2 = g2.leaf(tracked(&[1, 2], vec![0.6, -1.4]));
        let loss2 = g2.softmax_cross_entropy(x2, &[0]).unwrap();
        g2.backward(loss2).unwrap();
        let single = g2.grad(x2).unwrap();

        for (two_path, one_path) in dx.iter().zip(single) {
            assert!((two_path - 2.0 * one_path).abs() < 1e-6);
        }
    }

    #[test]
    fn gather_of_full_index_range_is_identity_and_repeats_sum_gradients() {
        let mut g = Graph::new();
        let x = g.leaf(tracked(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let all = g.gather_rows(x, &[0, 1, 2], &[3]).unwrap();
        assert_eq!(g.value(all).as_slice(), g.value(x).as_slice());

        let repeated = g.gather_rows(x, &[1, 1, 1], &[3]).unwrap();
        let pooled = g.reshape(repeated, &[1, 3, 2]).unwrap();
        let top = g.max_over_neighbors(pooled).unwrap();
        let loss = g.softmax_cross_entropy(top, &[0]).unwrap();
        g.backward(loss).unwrap();
        let dx = g.grad(x).unwrap();
        // Row 1 was gathered three times; rows 0 and 2 never reach the loss.
        assert_eq!(&dx[0..2], &[0.0, 0.0]);
        assert_eq!(&dx[4..6], &[0.0, 0.0]);
        assert!(dx[2..4].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn gather_rejects_out_of_range_index() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[3, 2]));
        let err = g.gather_rows(x, &[0, 3], &[2]).unwrap_err();
        assert_eq!(err, OpError::IndexOutOfRange { index: 3, rows: 3 });
    }

    #[test]
    fn backward_rejects_non_scalar_and_untracked_targets() {
        let mut g = Graph::new();
        let x = g.leaf(tracked(&[2, 2], vec![1.0; 4]));
        let y = g.relu(x);
        assert_eq!(g.backward(y).unwrap_err(), OpError::NonScalarLoss { numel: 4 });

        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[1, 2], vec![0.1, 0.2]).unwrap());
        let loss = g.softmax_cross_entropy(x, &[0]).unwrap();
        assert_eq!(g.backward(loss).unwrap_err(), OpError::UntrackedLoss);
    }

    #[test]
    fn softmax_cross_entropy_of_uniform_logits_is_ln_class_count() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[1, 40]));
        let loss = g.softmax_cross_entropy(x, &[17]).unwrap();
        let expected = (40.0f64).ln() as f32;
        assert!((g.value(loss).as_slice()[0] - expected).abs() < 1e-4);
    }

    #[test]
    fn max_over_neighbors_reduces_expected_axis() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[2, 2, 2], vec![1.0, 8.0, 3.0, 4.0, -1.0, -2.0, -3.0, -0.5]).unwrap());
        let m = g.max_over_neighbors(x).unwrap();
        assert_eq!(g.value(m).shape(), &[2, 2]);
        assert_eq!(g.value(m).as_slice(), &[3.0, 8.0, -1.0, -0.5]);
    }

    #[test]
    fn empty_reductions_are_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 0, 3]));
        assert_eq!(
            g.max_over_neighbors(x).unwrap_err(),
            OpError::EmptyReduction { op: "max_over_neighbors" }
        );
        let logits = g.leaf(Tensor::zeros(&[0, 4]));
        assert_eq!(
            g.softmax_cross_entropy(logits, &[]).unwrap_err(),
            OpError::EmptyReduction { op: "softmax_cross_entropy" }
        );
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::zeros(&[1, 3]));
        assert_eq!(
            g.softmax_cross_entropy(logits, &[3]).unwrap_err(),
            OpError::LabelOutOfRange { label: 3, classes: 3 }
        );
    }

    #[test]
    fn inference_pass_records_no_nodes() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[4, 3]));
        let w = g.leaf(Tensor::zeros(&[3, 8]));
        let b = g.leaf(Tensor::zeros(&[8]));
        let h = g.fc(x, w, b).unwrap();
        let _ = g.relu(h);
        assert_eq!(g.node_count(), 0);
    }
}
