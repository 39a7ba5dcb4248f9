//! The point-cloud classification network.
//!
//! A model is four grouping stages between a per-point embedding and a
//! global-max classifier. Each stage samples centroids by farthest-point
//! sampling, gathers k-nearest-neighbor features, optionally normalizes the
//! grouped deviations (geometric affine), lifts channels with a bare FC,
//! refines per-neighbor features with residual blocks, max-pools each
//! neighborhood, and refines the pooled features with more residual blocks.
//!
//! # Parameter storage
//!
//! All learnable tensors live in one flat `Vec<Param>` whose order is fixed
//! at construction: embedding, then each stage (affine, lift, pre blocks,
//! pos blocks), then the classifier head. Initialization draws from the RNG
//! in exactly this order, so a seed pins every weight. Optimizer state,
//! gradient accumulation, and checkpoint serialization all iterate this one
//! vector, which keeps their orderings trivially consistent. Batch-norm
//! running statistics are buffers, not parameters: they are stored apart and
//! excluded from [`Model::count_params`].
//!
//! # Training vs. inference
//!
//! Both modes run the same forward code. Training binds parameters as
//! tracked graph leaves (so the tape records nodes), normalizes with batch
//! statistics, and applies dropout in the head; inference binds untracked
//! leaves (the tape stays empty), uses running statistics, and skips
//! dropout. A whole batch of clouds is packed into one graph in training so
//! normalization statistics span the batch; the affine module still computes
//! its scale per cloud.

mod config;

pub use config::{ConfigError, ModelConfig, StageSpec, Variant, STAGE_COUNT};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::autodiff::{Graph, OpError, Var};
use crate::geometry::{self, GeomError, Grouping};
use crate::math;
use crate::rng::Xoshiro256StarStar;
use crate::tensor::Tensor;

/// Epsilon added to batch-norm denominators.
pub const BN_EPS: f32 = 1e-5;
/// Epsilon added to the geometric-affine scale.
pub const AFFINE_EPS: f32 = 1e-5;
/// Momentum of the batch-norm running-statistic update:
/// `running = (1 - m) * running + m * batch`.
pub const BN_MOMENTUM: f32 = 0.1;
/// Dropout probability between classifier layers (training only).
pub const HEAD_DROPOUT: f64 = 0.5;

/// What a learnable tensor is; decides weight-decay eligibility.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// FC weight matrix.
    Weight,
    /// FC bias vector.
    Bias,
    /// Batch-norm scale.
    BnGamma,
    /// Batch-norm shift.
    BnBeta,
    /// Geometric-affine scale.
    AffineAlpha,
    /// Geometric-affine shift.
    AffineBeta,
}

impl ParamKind {
    /// Whether weight decay applies. Normalization parameters (batch-norm
    /// gamma/beta and affine alpha/beta) are exempt.
    #[must_use]
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Bias)
    }
}

/// One learnable tensor with its canonical name (e.g.
/// `stages.0.pre.1.fc2.weight`).
#[derive(Clone, Debug)]
pub struct Param {
    /// Dotted path identifying the tensor inside the model.
    pub name: String,
    /// Role of the tensor.
    pub kind: ParamKind,
    /// The value; `grad` doubles as the optimizer's gradient slot.
    pub value: Tensor,
}

/// Batch-norm running statistics (buffers, not parameters).
#[derive(Clone, Debug)]
struct BnRunning {
    prefix: String,
    mean: Vec<f32>,
    var: Vec<f32>,
}

#[derive(Clone, Copy, Debug)]
struct LinearIdx {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct BnIdx {
    gamma: usize,
    beta: usize,
    run: usize,
}

#[derive(Clone, Copy, Debug)]
struct AffineIdx {
    alpha: usize,
    beta: usize,
}

#[derive(Clone, Copy, Debug)]
struct BlockIdx {
    fc1: LinearIdx,
    bn1: BnIdx,
    fc2: LinearIdx,
    bn2: BnIdx,
}

#[derive(Clone, Debug)]
struct StageIdx {
    affine: Option<AffineIdx>,
    lift: LinearIdx,
    pre: Vec<BlockIdx>,
    pos: Vec<BlockIdx>,
}

#[derive(Clone, Debug)]
struct HeadIdx {
    fc1: LinearIdx,
    bn1: BnIdx,
    fc2: LinearIdx,
    bn2: BnIdx,
    fc3: LinearIdx,
}

#[derive(Clone, Debug)]
struct Layout {
    embed: LinearIdx,
    embed_bn: BnIdx,
    stages: Vec<StageIdx>,
    head: HeadIdx,
}

/// How the first farthest-point-sampling index is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FpsSeed {
    /// Seed with index 0: cheapest, deterministic for a fixed input order.
    First,
    /// Seed with the point nearest the cloud centroid: invariant to input
    /// point order, used when permutation-stable predictions matter.
    NearestCentroid,
}

/// Failures while building or running a model.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelError {
    /// The configuration failed validation.
    Config(ConfigError),
    /// A tensor operation failed (shape or index mismatch).
    Op(OpError),
    /// A geometry routine failed (sampling or neighbor search).
    Geometry(GeomError),
    /// The cloud is smaller than the first stage's sampling/neighbor budget.
    TooFewPoints {
        /// Minimum usable cloud size for this configuration.
        needed: usize,
        /// Points actually supplied.
        got: usize,
    },
    /// A forward pass was asked to run on zero clouds.
    EmptyBatch,
    /// Cloud and label counts disagree.
    BatchMismatch {
        /// Number of clouds supplied.
        clouds: usize,
        /// Number of labels supplied.
        labels: usize,
    },
    /// A stage index was out of range.
    StageOutOfRange {
        /// Requested stage.
        stage: usize,
        /// Number of stages in the model.
        stages: usize,
    },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Config(e) => write!(f, "invalid configuration: {e}"),
            ModelError::Op(e) => write!(f, "tensor operation failed: {e}"),
            ModelError::Geometry(e) => write!(f, "geometry routine failed: {e}"),
            ModelError::TooFewPoints { needed, got } => {
                write!(f, "cloud has {got} points but the model needs at least {needed}")
            }
            ModelError::EmptyBatch => write!(f, "empty batch"),
            ModelError::BatchMismatch { clouds, labels } => {
                write!(f, "{clouds} clouds but {labels} labels")
            }
            ModelError::StageOutOfRange { stage, stages } => {
                write!(f, "stage {stage} out of range for a {stages}-stage model")
            }
        }
    }
}

impl core::error::Error for ModelError {}

impl From<ConfigError> for ModelError {
    fn from(e: ConfigError) -> Self {
        ModelError::Config(e)
    }
}

impl From<OpError> for ModelError {
    fn from(e: OpError) -> Self {
        ModelError::Op(e)
    }
}

impl From<GeomError> for ModelError {
    fn from(e: GeomError) -> Self {
        ModelError::Geometry(e)
    }
}

/// Deferred running-statistic update recorded during a training forward.
struct BnUpdate {
    slot: usize,
    mean: Vec<f32>,
    var: Vec<f32>,
}

/// Per-forward mode switches threaded through the stage pipeline.
struct Pass<'a> {
    /// Batch statistics + dropout when true; running statistics otherwise.
    train: bool,
    /// Bind parameters as tracked leaves (records tape nodes).
    track: bool,
    /// FPS seeding policy.
    fps: FpsSeed,
    /// Dropout RNG; `None` disables dropout even in training (used by the
    /// deterministic gradient-check path).
    dropout_rng: Option<&'a mut Xoshiro256StarStar>,
    /// Sink for running-statistic updates; `None` discards them.
    updates: Option<&'a mut Vec<BnUpdate>>,
}

impl Pass<'_> {
    fn eval(fps: FpsSeed) -> Self {
        Pass {
            train: false,
            track: false,
            fps,
            dropout_rng: None,
            updates: None,
        }
    }
}

/// Incrementally appends parameters in canonical order during construction.
struct Builder<'r> {
    params: Vec<Param>,
    running: Vec<BnRunning>,
    rng: &'r mut Xoshiro256StarStar,
}

impl Builder<'_> {
    fn push(&mut self, name: String, kind: ParamKind, value: Tensor) -> usize {
        let mut value = value;
        value.requires_grad = true;
        self.params.push(Param { name, kind, value });
        self.params.len() - 1
    }

    /// FC layer: weight `[d_in, d_out]` and bias `[d_out]`, both uniform in
    /// `±sqrt(1/d_in)`; weight elements drawn row-major, bias after.
    fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize) -> LinearIdx {
        let bound = 1.0 / math::sqrt_f64(d_in as f64);
        let w: Vec<f32> = (0..d_in * d_out)
            .map(|_| self.rng.uniform_in(-bound, bound) as f32)
            .collect();
        let b: Vec<f32> = (0..d_out)
            .map(|_| self.rng.uniform_in(-bound, bound) as f32)
            .collect();
        let w = self.push(
            format!("{prefix}.weight"),
            ParamKind::Weight,
            Tensor::from_vec(&[d_in, d_out], w).expect("sized by construction"),
        );
        let b = self.push(
            format!("{prefix}.bias"),
            ParamKind::Bias,
            Tensor::from_vec(&[d_out], b).expect("sized by construction"),
        );
        LinearIdx { w, b }
    }

    /// Batch norm: gamma 1, beta 0, running mean 0, running variance 1.
    fn batch_norm(&mut self, prefix: &str, c: usize) -> BnIdx {
        let gamma = self.push(
            format!("{prefix}.gamma"),
            ParamKind::BnGamma,
            Tensor::full(&[c], 1.0),
        );
        let beta = self.push(
            format!("{prefix}.beta"),
            ParamKind::BnBeta,
            Tensor::zeros(&[c]),
        );
        self.running.push(BnRunning {
            prefix: String::from(prefix),
            mean: vec![0.0; c],
            var: vec![1.0; c],
        });
        BnIdx {
            gamma,
            beta,
            run: self.running.len() - 1,
        }
    }

    /// Geometric affine: alpha 1, beta 0.
    fn affine(&mut self, prefix: &str, d: usize) -> AffineIdx {
        let alpha = self.push(
            format!("{prefix}.alpha"),
            ParamKind::AffineAlpha,
            Tensor::full(&[d], 1.0),
        );
        let beta = self.push(
            format!("{prefix}.beta"),
            ParamKind::AffineBeta,
            Tensor::zeros(&[d]),
        );
        AffineIdx { alpha, beta }
    }

    /// Residual block of width `d` with bottleneck factor `r`:
    /// FC(d -> d/r), BN, ReLU, FC(d/r -> d), BN, ReLU, then `+ x`.
    fn block(&mut self, prefix: &str, d: usize, r: usize) -> BlockIdx {
        let mid = d / r;
        BlockIdx {
            fc1: self.linear(&format!("{prefix}.fc1"), d, mid),
            bn1: self.batch_norm(&format!("{prefix}.bn1"), mid),
            fc2: self.linear(&format!("{prefix}.fc2"), mid, d),
            bn2: self.batch_norm(&format!("{prefix}.bn2"), d),
        }
    }
}

/// A built network: configuration, flat parameter list, running statistics,
/// and the index layout tying them to pipeline positions.
#[derive(Clone)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Param>,
    running: Vec<BnRunning>,
    layout: Layout,
}

impl Model {
    /// Validates `config` and builds a freshly initialized model, drawing
    /// weights from `rng` in canonical parameter order.
    pub fn new(config: ModelConfig, rng: &mut Xoshiro256StarStar) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut b = Builder {
            params: Vec::new(),
            running: Vec::new(),
            rng,
        };
        let embed = b.linear("embed.fc", 3, config.embed_dim);
        let embed_bn = b.batch_norm("embed.bn", config.embed_dim);
        let mut stages = Vec::with_capacity(config.stages.len());
        for (s, spec) in config.stages.iter().enumerate() {
            let affine = spec
                .affine_enabled
                .then(|| b.affine(&format!("stages.{s}.affine"), spec.d_in));
            let lift = b.linear(&format!("stages.{s}.lift"), spec.d_in, spec.d_out);
            let pre = (0..spec.pre_repeats)
                .map(|i| b.block(&format!("stages.{s}.pre.{i}"), spec.d_out, config.bottleneck_r))
                .collect();
            let pos = (0..spec.pos_repeats)
                .map(|i| b.block(&format!("stages.{s}.pos.{i}"), spec.d_out, config.bottleneck_r))
                .collect();
            stages.push(StageIdx {
                affine,
                lift,
                pre,
                pos,
            });
        }
        let d_last = config.last_width();
        let [h1, h2] = config.head_dims;
        let head = HeadIdx {
            fc1: b.linear("head.fc1", d_last, h1),
            bn1: b.batch_norm("head.bn1", h1),
            fc2: b.linear("head.fc2", h1, h2),
            bn2: b.batch_norm("head.bn2", h2),
            fc3: b.linear("head.fc3", h2, config.num_classes),
        };
        Ok(Model {
            config,
            params: b.params,
            running: b.running,
            layout: Layout {
                embed,
                embed_bn,
                stages,
                head,
            },
        })
    }

    /// The architectural configuration this model was built from.
    #[must_use]
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Exact number of learnable scalars (running statistics excluded).
    #[must_use]
    pub fn count_params(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Number of FC layers found by walking the built parameter list;
    /// matches [`ModelConfig::count_layers`] by construction.
    #[must_use]
    pub fn count_fc_layers(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Weight)
            .count()
    }

    /// The flat parameter list in canonical order.
    #[must_use]
    pub fn params(&self) -> &[Param] {
        &self.params
    }

    /// Mutable access for optimizers (same canonical order).
    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    /// Clears every parameter's gradient slot.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.value.zero_grad();
        }
    }

    /// Every persistent tensor (parameters, then running statistics) as
    /// `(name, shape, data)` — the checkpoint content, in canonical order.
    #[must_use]
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut out: Vec<(String, Vec<usize>, &[f32])> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec(), p.value.as_slice()))
            .collect();
        for r in &self.running {
            out.push((
                format!("{}.running_mean", r.prefix),
                vec![r.mean.len()],
                &r.mean,
            ));
            out.push((
                format!("{}.running_var", r.prefix),
                vec![r.var.len()],
                &r.var,
            ));
        }
        out
    }

    /// Mutable view of the same tensors, for loading a checkpoint into a
    /// freshly built model of the identical configuration.
    pub fn tensors_mut(&mut self) -> Vec<(String, Vec<usize>, &mut [f32])> {
        let mut out: Vec<(String, Vec<usize>, &mut [f32])> = Vec::new();
        for p in &mut self.params {
            let shape = p.value.shape().to_vec();
            out.push((p.name.clone(), shape, p.value.as_mut_slice()));
        }
        for r in &mut self.running {
            out.push((
                format!("{}.running_mean", r.prefix),
                vec![r.mean.len()],
                &mut r.mean,
            ));
            out.push((
                format!("{}.running_var", r.prefix),
                vec![r.var.len()],
                &mut r.var,
            ));
        }
        out
    }

    // ------------------------------------------------------------------
    // Forward passes
    // ------------------------------------------------------------------

    /// Inference: logits (length `num_classes`) for one cloud. Uses running
    /// statistics, no dropout, and records nothing on the tape, so repeated
    /// calls on the same input are bit-identical.
    pub fn classify(&self, coords: &[[f32; 3]], fps: FpsSeed) -> Result<Tensor, ModelError> {
        let mut graph = Graph::new();
        let mut pass = Pass::eval(fps);
        let (logits, _) = self.forward_batch(&mut graph, &[coords], &mut pass)?;
        let data = graph.value(logits).as_slice().to_vec();
        Ok(Tensor::from_vec(&[self.config.num_classes], data).expect("logits row"))
    }

    /// Training loss (mean cross-entropy over the batch) without side
    /// effects: batch statistics are used but not folded into running
    /// averages, and dropout is skipped so the value is a deterministic
    /// function of parameters and inputs. This is the function the gradient
    /// check differentiates.
    pub fn train_loss(&self, clouds: &[&[[f32; 3]]], labels: &[u32]) -> Result<f32, ModelError> {
        let mut graph = Graph::new();
        let mut pass = Pass {
            train: true,
            track: false,
            fps: FpsSeed::First,
            dropout_rng: None,
            updates: None,
        };
        let loss = self.batch_loss(&mut graph, clouds, labels, &mut pass)?;
        Ok(graph.value(loss).as_slice()[0])
    }

    /// Training loss plus analytic gradients for every parameter, in
    /// canonical parameter order. Dropout is skipped (see
    /// [`Model::train_loss`]); running statistics are untouched.
    pub fn train_gradients(
        &self,
        clouds: &[&[[f32; 3]]],
        labels: &[u32],
    ) -> Result<(f32, Vec<Vec<f32>>), ModelError> {
        let mut graph = Graph::new();
        let mut pass = Pass {
            train: true,
            track: true,
            fps: FpsSeed::First,
            dropout_rng: None,
            updates: None,
        };
        let (loss, vars) = self.batch_loss_vars(&mut graph, clouds, labels, &mut pass)?;
        graph.backward(loss)?;
        let grads = self
            .params
            .iter()
            .zip(&vars)
            .map(|(p, &v)| {
                graph
                    .grad(v)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; p.value.numel()])
            })
            .collect();
        Ok((graph.value(loss).as_slice()[0], grads))
    }

    /// One full training forward/backward on a batch: dropout active,
    /// batch-norm running statistics updated, gradients accumulated into
    /// each parameter's `grad` slot (call [`Model::zero_grads`] first for a
    /// fresh batch). Returns the batch's mean loss.
    pub fn train_step_gradients(
        &mut self,
        clouds: &[&[[f32; 3]]],
        labels: &[u32],
        rng: &mut Xoshiro256StarStar,
    ) -> Result<f32, ModelError> {
        let mut graph = Graph::new();
        let mut updates = Vec::new();
        let mut pass = Pass {
            train: true,
            track: true,
            fps: FpsSeed::First,
            dropout_rng: Some(rng),
            updates: Some(&mut updates),
        };
        let (loss, vars) = self.batch_loss_vars(&mut graph, clouds, labels, &mut pass)?;
        graph.backward(loss)?;
        for (p, &v) in self.params.iter_mut().zip(&vars) {
            if let Some(g) = graph.grad(v) {
                p.value.accumulate_grad(g);
            }
        }
        for u in updates {
            let r = &mut self.running[u.slot];
            for (rm, &bm) in r.mean.iter_mut().zip(&u.mean) {
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * bm;
            }
            for (rv, &bv) in r.var.iter_mut().zip(&u.var) {
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * bv;
            }
        }
        Ok(graph.value(loss).as_slice()[0])
    }

    /// Runs a single stage in inference mode on caller-supplied features and
    /// an explicit grouping (so tests can inject permuted neighborhoods).
    /// `feats` must be a `[n, d_in]` value in `graph`; the grouping indexes
    /// into its rows. Returns the `[m, d_out]` stage output.
    pub fn eval_stage(
        &self,
        graph: &mut Graph,
        stage: usize,
        feats: Var,
        grouping: &Grouping,
    ) -> Result<Var, ModelError> {
        if stage >= self.layout.stages.len() {
            return Err(ModelError::StageOutOfRange {
                stage,
                stages: self.layout.stages.len(),
            });
        }
        let vars = self.bind(graph, false);
        let mut pass = Pass::eval(FpsSeed::First);
        self.stage_body(
            graph,
            stage,
            feats,
            1,
            grouping.centroids.len(),
            grouping.k,
            &grouping.neighbors,
            &grouping.centroids,
            &vars,
            &mut pass,
        )
    }

    /// Binds every parameter as a graph leaf (tracked or not), in canonical
    /// order; the returned vector parallels [`Model::params`].
    fn bind(&self, graph: &mut Graph, track: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                let mut t = p.value.clone();
                t.requires_grad = track;
                t.grad = None;
                graph.leaf(t)
            })
            .collect()
    }

    fn batch_loss(
        &self,
        graph: &mut Graph,
        clouds: &[&[[f32; 3]]],
        labels: &[u32],
        pass: &mut Pass<'_>,
    ) -> Result<Var, ModelError> {
        let (loss, _) = self.batch_loss_vars(graph, clouds, labels, pass)?;
        Ok(loss)
    }

    fn batch_loss_vars(
        &self,
        graph: &mut Graph,
        clouds: &[&[[f32; 3]]],
        labels: &[u32],
        pass: &mut Pass<'_>,
    ) -> Result<(Var, Vec<Var>), ModelError> {
        if clouds.len() != labels.len() {
            return Err(ModelError::BatchMismatch {
                clouds: clouds.len(),
                labels: labels.len(),
            });
        }
        let (logits, vars) = self.forward_batch(graph, clouds, pass)?;
        let loss = graph.softmax_cross_entropy(logits, labels)?;
        Ok((loss, vars))
    }

    /// The shared pipeline: packs `clouds` into one graph and returns
    /// `[batch, num_classes]` logits plus the bound parameter vars.
    fn forward_batch(
        &self,
        graph: &mut Graph,
        clouds: &[&[[f32; 3]]],
        pass: &mut Pass<'_>,
    ) -> Result<(Var, Vec<Var>), ModelError> {
        if clouds.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let needed = self.config.min_points();
        for c in clouds {
            if c.len() < needed {
                return Err(ModelError::TooFewPoints {
                    needed,
                    got: c.len(),
                });
            }
        }
        let bsz = clouds.len();
        let total: usize = clouds.iter().map(|c| c.len()).sum();
        let mut data = Vec::with_capacity(total * 3);
        for c in clouds {
            for p in c.iter() {
                data.extend_from_slice(p);
            }
        }
        let x = graph.leaf(Tensor::from_vec(&[total, 3], data).expect("packed coordinates"));
        let vars = self.bind(graph, pass.track);

        // Per-point embedding.
        let mut feats = graph.fc(x, vars[self.layout.embed.w], vars[self.layout.embed.b])?;
        feats = self.apply_bn(graph, feats, &self.layout.embed_bn, &vars, pass)?;
        feats = graph.relu(feats);

        // Stage pipeline. `cur` tracks each cloud's surviving coordinates;
        // feature rows for all clouds stay packed in one [rows, d] tensor,
        // so grouping indices are offset by each cloud's row start.
        let mut cur: Vec<Vec<[f32; 3]>> = clouds.iter().map(|c| c.to_vec()).collect();
        for (s, spec) in self.config.stages.iter().enumerate() {
            let m = spec.n_points_out;
            let mut neighbor_idx = Vec::with_capacity(bsz * m * spec.k);
            let mut center_idx = Vec::with_capacity(bsz * m);
            let mut next = Vec::with_capacity(bsz);
            let mut offset = 0u32;
            for c in &cur {
                let seed = match pass.fps {
                    FpsSeed::First => 0,
                    FpsSeed::NearestCentroid => geometry::geometric_seed(c),
                };
                let grouping = geometry::group(c, m, spec.k, seed)?;
                for &ci in &grouping.centroids {
                    center_idx.push(offset + ci);
                }
                for &ni in &grouping.neighbors {
                    neighbor_idx.push(offset + ni);
                }
                next.push(
                    grouping
                        .centroids
                        .iter()
                        .map(|&i| c[i as usize])
                        .collect::<Vec<_>>(),
                );
                offset += c.len() as u32;
            }
            feats = self.stage_body(
                graph,
                s,
                feats,
                bsz,
                m,
                spec.k,
                &neighbor_idx,
                &center_idx,
                &vars,
                pass,
            )?;
            cur = next;
        }

        // Global max over each cloud's remaining points, then the head.
        let last = self.config.stages.last().expect("validated: 4 stages");
        let pooled3 = graph.reshape(feats, &[bsz, last.n_points_out, last.d_out])?;
        let mut h = graph.max_over_neighbors(pooled3)?;
        let head = &self.layout.head;
        h = graph.fc(h, vars[head.fc1.w], vars[head.fc1.b])?;
        h = self.apply_bn(graph, h, &head.bn1, &vars, pass)?;
        h = graph.relu(h);
        h = self.maybe_dropout(graph, h, pass);
        h = graph.fc(h, vars[head.fc2.w], vars[head.fc2.b])?;
        h = self.apply_bn(graph, h, &head.bn2, &vars, pass)?;
        h = graph.relu(h);
        h = self.maybe_dropout(graph, h, pass);
        let logits = graph.fc(h, vars[head.fc3.w], vars[head.fc3.b])?;
        Ok((logits, vars))
    }

    /// One stage on already-grouped indices: gather -> affine -> lift ->
    /// pre blocks -> neighborhood max -> pos blocks. `feats` is `[rows,
    /// d_in]`; `neighbor_idx` is `bsz*m*k` offsets into its rows and
    /// `center_idx` the matching `bsz*m` centroid rows.
    #[allow(clippy::too_many_arguments)]
    fn stage_body(
        &self,
        graph: &mut Graph,
        s: usize,
        feats: Var,
        bsz: usize,
        m: usize,
        k: usize,
        neighbor_idx: &[u32],
        center_idx: &[u32],
        vars: &[Var],
        pass: &mut Pass<'_>,
    ) -> Result<Var, ModelError> {
        let spec = &self.config.stages[s];
        let idx = &self.layout.stages[s];
        let grouped = graph.gather_rows(feats, neighbor_idx, &[bsz * m, k])?;
        let x = if let Some(aff) = &idx.affine {
            let centers = graph.gather_rows(feats, center_idx, &[bsz * m])?;
            if bsz == 1 {
                graph.geometric_affine(grouped, centers, vars[aff.alpha], vars[aff.beta], AFFINE_EPS)?
            } else {
                // The affine scale is a per-cloud statistic: reshape so each
                // cloud is one leading slice of the batched op.
                let g4 = graph.reshape(grouped, &[bsz, m, k, spec.d_in])?;
                let c3 = graph.reshape(centers, &[bsz, m, spec.d_in])?;
                let a4 =
                    graph.geometric_affine(g4, c3, vars[aff.alpha], vars[aff.beta], AFFINE_EPS)?;
                graph.reshape(a4, &[bsz * m, k, spec.d_in])?
            }
        } else {
            grouped
        };
        let mut h = graph.fc(x, vars[idx.lift.w], vars[idx.lift.b])?;
        for blk in &idx.pre {
            h = self.apply_block(graph, h, blk, vars, pass)?;
        }
        let mut h = graph.max_over_neighbors(h)?;
        for blk in &idx.pos {
            h = self.apply_block(graph, h, blk, vars, pass)?;
        }
        Ok(h)
    }

    /// Residual block: `x + relu(bn(fc(relu(bn(fc(x))))))`.
    fn apply_block(
        &self,
        graph: &mut Graph,
        x: Var,
        blk: &BlockIdx,
        vars: &[Var],
        pass: &mut Pass<'_>,
    ) -> Result<Var, ModelError> {
        let h = graph.fc(x, vars[blk.fc1.w], vars[blk.fc1.b])?;
        let h = self.apply_bn(graph, h, &blk.bn1, vars, pass)?;
        let h = graph.relu(h);
        let h = graph.fc(h, vars[blk.fc2.w], vars[blk.fc2.b])?;
        let h = self.apply_bn(graph, h, &blk.bn2, vars, pass)?;
        let h = graph.relu(h);
        Ok(graph.add(h, x)?)
    }

    /// Batch norm with mode dispatch: batch statistics in training (pushing
    /// a running-average update if a sink is present), running statistics in
    /// inference.
    fn apply_bn(
        &self,
        graph: &mut Graph,
        x: Var,
        bn: &BnIdx,
        vars: &[Var],
        pass: &mut Pass<'_>,
    ) -> Result<Var, ModelError> {
        if pass.train {
            let out = graph.batch_norm_train(x, vars[bn.gamma], vars[bn.beta], BN_EPS)?;
            if let Some(updates) = pass.updates.as_mut() {
                updates.push(BnUpdate {
                    slot: bn.run,
                    mean: out.batch_mean,
                    var: out.batch_var,
                });
            }
            Ok(out.out)
        } else {
            let run = &self.running[bn.run];
            Ok(graph.batch_norm_frozen(x, vars[bn.gamma], vars[bn.beta], &run.mean, &run.var, BN_EPS)?)
        }
    }

    /// Dropout between head layers, active only when training with an RNG.
    fn maybe_dropout(&self, graph: &mut Graph, x: Var, pass: &mut Pass<'_>) -> Var {
        if pass.train {
            if let Some(rng) = pass.dropout_rng.as_mut() {
                return graph.dropout(x, HEAD_DROPOUT, rng);
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro_config() -> ModelConfig {
        ModelConfig::full(4).scaled_dims(8).with_input_points(32).with_k(4)
    }

    fn cloud(rng: &mut Xoshiro256StarStar, n: usize) -> Vec<[f32; 3]> {
        (0..n)
            .map(|_| {
                [
                    rng.uniform_in(-1.0, 1.0) as f32,
                    rng.uniform_in(-1.0, 1.0) as f32,
                    rng.uniform_in(-1.0, 1.0) as f32,
                ]
            })
            .collect()
    }

    #[test]
    fn parameter_order_and_names_are_canonical() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(7);
        let model = Model::new(micro_config(), &mut rng).unwrap();
        let names: Vec<&str> = model.params().iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names[0], "embed.fc.weight");
        assert_eq!(names[1], "embed.fc.bias");
        assert_eq!(names[2], "embed.bn.gamma");
        assert_eq!(names[3], "embed.bn.beta");
        assert_eq!(names[4], "stages.0.affine.alpha");
        assert!(names.contains(&"stages.3.pos.1.fc2.weight"));
        assert_eq!(names.last().unwrap(), &"head.fc3.bias");
        // Every name unique.
        let mut sorted: Vec<&str> = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }

    #[test]
    fn layer_walk_matches_formula() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(7);
        let cfg = micro_config();
        let model = Model::new(cfg.clone(), &mut rng).unwrap();
        assert_eq!(model.count_fc_layers(), cfg.count_layers());
        assert_eq!(model.count_fc_layers(), 40);
    }

    #[test]
    fn single_fc_parameter_count_closed_form() {
        // Embedding alone maps 3 -> embed_dim with bias: 3*d + d scalars.
        let mut rng = Xoshiro256StarStar::seed_from_u64(7);
        let model = Model::new(ModelConfig::full(40), &mut rng).unwrap();
        let w = &model.params()[0];
        let b = &model.params()[1];
        assert_eq!(w.value.numel() + b.value.numel(), 3 * 64 + 64);
    }

    #[test]
    fn classify_shape_and_determinism() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(3);
        let model = Model::new(micro_config(), &mut rng).unwrap();
        let pts = cloud(&mut rng, 32);
        let a = model.classify(&pts, FpsSeed::First).unwrap();
        let b = model.classify(&pts, FpsSeed::First).unwrap();
        assert_eq!(a.shape(), &[4]);
        assert_eq!(a.as_slice(), b.as_slice(), "eval must be bit-identical");
    }

    #[test]
    fn classify_rejects_small_clouds() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(3);
        let model = Model::new(micro_config(), &mut rng).unwrap();
        let pts = cloud(&mut rng, 5);
        let err = model.classify(&pts, FpsSeed::First).unwrap_err();
        assert_eq!(err, ModelError::TooFewPoints { needed: 16, got: 5 });
    }

    #[test]
    fn train_step_populates_every_gradient() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(3);
        let mut model = Model::new(micro_config(), &mut rng).unwrap();
        let a = cloud(&mut rng, 32);
        let b = cloud(&mut rng, 32);
        let loss = model
            .train_step_gradients(&[&a, &b], &[0, 2], &mut rng)
            .unwrap();
        assert!(loss.is_finite());
        for p in model.params() {
            let g = p.value.grad.as_ref().expect("gradient populated");
            assert_eq!(g.len(), p.value.numel(), "{}", p.name);
        }
    }

    #[test]
    fn batch_label_mismatch_is_rejected() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(3);
        let model = Model::new(micro_config(), &mut rng).unwrap();
        let a = cloud(&mut rng, 32);
        let err = model.train_loss(&[&a], &[0, 1]).unwrap_err();
        assert_eq!(err, ModelError::BatchMismatch { clouds: 1, labels: 2 });
    }

    #[test]
    fn checkpoint_tensor_listing_round_trips() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(9);
        let cfg = micro_config();
        let src = Model::new(cfg.clone(), &mut rng).unwrap();
        let mut rng2 = Xoshiro256StarStar::seed_from_u64(1234);
        let mut dst = Model::new(cfg, &mut rng2).unwrap();

        let snapshot: Vec<(String, Vec<usize>, Vec<f32>)> = src
            .tensors()
            .into_iter()
            .map(|(n, s, d)| (n, s, d.to_vec()))
            .collect();
        for (name, shape, data) in dst.tensors_mut() {
            let (sn, ss, sd) = snapshot
                .iter()
                .find(|(n, _, _)| *n == name)
                .expect("same architecture lists same tensors");
            assert_eq!(&shape, ss, "{sn}");
            data.copy_from_slice(sd);
        }
        let mut rng3 = Xoshiro256StarStar::seed_from_u64(5);
        let pts = cloud(&mut rng3, 32);
        let a = src.classify(&pts, FpsSeed::First).unwrap();
        let b = dst.classify(&pts, FpsSeed::First).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }
}
