//! Straight-line double-precision replay of the full network, driven only by
//! a model's checkpoint tensor listing and its configuration. The replay
//! shares no kernel code with the production crate: features flow through
//! the plain-loop oracles in [`crate::reference`], and grouping comes from
//! the brute-force searches in [`crate::brute`].

use std::collections::BTreeMap;

use pointmlp_core::geometry::Grouping;
use pointmlp_core::model::{FpsSeed, Model, ModelConfig, AFFINE_EPS, BN_EPS};

use crate::brute::{fps_brute, geometric_seed_brute, knn_brute};
use crate::reference;

/// Which statistics normalization layers use during a replay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Running statistics from the checkpoint (inference).
    Frozen,
    /// Per-channel statistics of the fed batch (training, no side effects).
    Batch,
}

/// A model's persistent tensors widened to `f64`, keyed by checkpoint name.
pub struct TensorMap {
    entries: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl TensorMap {
    /// Snapshots every parameter and running statistic of `model`.
    #[must_use]
    pub fn from_model(model: &Model) -> Self {
        let entries = model
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| {
                let wide = data.iter().map(|&v| v as f64).collect();
                (name, (shape, wide))
            })
            .collect();
        TensorMap { entries }
    }

    /// Shape of a named tensor; panics if absent.
    #[must_use]
    pub fn shape(&self, name: &str) -> &[usize] {
        &self.entries.get(name).unwrap_or_else(|| panic!("no tensor named {name}")).0
    }

    /// Values of a named tensor; panics if absent.
    #[must_use]
    pub fn values(&self, name: &str) -> &[f64] {
        &self.entries.get(name).unwrap_or_else(|| panic!("no tensor named {name}")).1
    }

    /// Overwrites a named tensor's values (for perturbation harnesses);
    /// panics if absent or if the length differs.
    pub fn set(&mut self, name: &str, data: &[f32]) {
        let entry = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("no tensor named {name}"));
        assert_eq!(entry.1.len(), data.len(), "length mismatch for {name}");
        for (dst, &src) in entry.1.iter_mut().zip(data) {
            *dst = src as f64;
        }
    }

    /// Mutable view of a named tensor's values (for coordinate-wise
    /// perturbation); panics if absent.
    pub fn values_mut(&mut self, name: &str) -> &mut [f64] {
        &mut self.entries.get_mut(name).unwrap_or_else(|| panic!("no tensor named {name}")).1
    }
}

fn apply_fc(map: &TensorMap, prefix: &str, x: &[f64], rows: usize) -> Vec<f64> {
    let w = map.values(&format!("{prefix}.weight"));
    let b = map.values(&format!("{prefix}.bias"));
    let shape = map.shape(&format!("{prefix}.weight"));
    reference::fc(x, w, b, rows, shape[0], shape[1])
}

fn apply_bn(map: &TensorMap, prefix: &str, x: &[f64], rows: usize, mode: BnMode) -> Vec<f64> {
    let gamma = map.values(&format!("{prefix}.gamma"));
    let beta = map.values(&format!("{prefix}.beta"));
    let d = gamma.len();
    match mode {
        BnMode::Frozen => {
            let mean = map.values(&format!("{prefix}.running_mean"));
            let var = map.values(&format!("{prefix}.running_var"));
            reference::batch_norm_frozen(x, gamma, beta, mean, var, rows, d, BN_EPS as f64)
        }
        BnMode::Batch => reference::batch_norm_train(x, gamma, beta, rows, d, BN_EPS as f64).0,
    }
}

/// One residual block `x + relu(bn2(fc2(relu(bn1(fc1(x))))))` replayed from
/// the tensors under `prefix`.
#[must_use]
pub fn residual_block(
    map: &TensorMap,
    prefix: &str,
    x: &[f64],
    rows: usize,
    mode: BnMode,
) -> Vec<f64> {
    let h = apply_fc(map, &format!("{prefix}.fc1"), x, rows);
    let h = apply_bn(map, &format!("{prefix}.bn1"), &h, rows, mode);
    let h = reference::relu(&h);
    let h = apply_fc(map, &format!("{prefix}.fc2"), &h, rows);
    let h = apply_bn(map, &format!("{prefix}.bn2"), &h, rows, mode);
    let h = reference::relu(&h);
    h.iter().zip(x).map(|(&a, &b)| a + b).collect()
}

/// One stage on pre-grouped indices: gather, per-cloud affine, channel lift,
/// pre blocks, neighborhood max, pos blocks. `feats` is `[rows, d_in]`
/// packed over `bsz` clouds; `neighbor_idx` holds `bsz*m*k` row offsets and
/// `center_idx` the matching `bsz*m` centroid rows.
#[allow(clippy::too_many_arguments)]
fn stage_on_indices(
    map: &TensorMap,
    config: &ModelConfig,
    s: usize,
    feats: &[f64],
    bsz: usize,
    m: usize,
    k: usize,
    neighbor_idx: &[u32],
    center_idx: &[u32],
    mode: BnMode,
) -> Vec<f64> {
    let spec = &config.stages[s];
    let d_in = spec.d_in;
    let grouped = reference::gather_rows(feats, neighbor_idx, d_in);
    let x = if spec.affine_enabled {
        let centers = reference::gather_rows(feats, center_idx, d_in);
        let alpha = map.values(&format!("stages.{s}.affine.alpha"));
        let beta = map.values(&format!("stages.{s}.affine.beta"));
        let mut out = Vec::with_capacity(grouped.len());
        for bi in 0..bsz {
            let gs = &grouped[bi * m * k * d_in..(bi + 1) * m * k * d_in];
            let cs = &centers[bi * m * d_in..(bi + 1) * m * d_in];
            let (o, _sigma) =
                reference::geometric_affine(gs, cs, alpha, beta, m, k, d_in, AFFINE_EPS as f64);
            out.extend(o);
        }
        out
    } else {
        grouped
    };
    let mut h = apply_fc(map, &format!("stages.{s}.lift"), &x, bsz * m * k);
    for i in 0..spec.pre_repeats {
        h = residual_block(map, &format!("stages.{s}.pre.{i}"), &h, bsz * m * k, mode);
    }
    let mut h = reference::max_over_neighbors(&h, bsz * m, k, spec.d_out);
    for i in 0..spec.pos_repeats {
        h = residual_block(map, &format!("stages.{s}.pos.{i}"), &h, bsz * m, mode);
    }
    h
}

/// Replays a single stage in inference mode on caller-supplied features and
/// an explicit grouping; the oracle twin of the production per-stage entry
/// point. `feats` is `[n, d_in]` for one cloud.
#[must_use]
pub fn stage_reference(
    map: &TensorMap,
    config: &ModelConfig,
    s: usize,
    feats: &[f64],
    grouping: &Grouping,
) -> Vec<f64> {
    stage_on_indices(
        map,
        config,
        s,
        feats,
        1,
        grouping.centroids.len(),
        grouping.k,
        &grouping.neighbors,
        &grouping.centroids,
        BnMode::Frozen,
    )
}

/// Grouping indices for one replay stage, packed over a whole batch:
/// `neighbor_idx` holds `bsz*m*k` row offsets into the running feature
/// matrix and `center_idx` the matching `bsz*m` centroid rows.
pub struct StageIndices {
    /// Centroids per cloud at this stage.
    pub m: usize,
    /// Neighbors per centroid at this stage.
    pub k: usize,
    /// Packed neighbor row offsets, `bsz*m*k` long.
    pub neighbor_idx: Vec<u32>,
    /// Packed centroid row offsets, `bsz*m` long.
    pub center_idx: Vec<u32>,
}

/// Sampling and neighbor-search results for every stage of a batch replay.
/// Grouping depends only on the input coordinates, never on the parameters,
/// so a perturbation harness can build this once and replay many times.
pub struct BatchGroupings {
    /// One entry per stage, in order.
    pub stages: Vec<StageIndices>,
}

impl BatchGroupings {
    /// Runs brute-force sampling and neighbor search for every stage.
    #[must_use]
    pub fn build(config: &ModelConfig, clouds: &[&[[f32; 3]]], fps: FpsSeed) -> Self {
        let bsz = clouds.len();
        let mut cur: Vec<Vec<[f32; 3]>> = clouds.iter().map(|c| c.to_vec()).collect();
        let mut stages = Vec::with_capacity(config.stages.len());
        for spec in &config.stages {
            let m = spec.n_points_out;
            let mut neighbor_idx = Vec::with_capacity(bsz * m * spec.k);
            let mut center_idx = Vec::with_capacity(bsz * m);
            let mut next = Vec::with_capacity(bsz);
            let mut offset = 0u32;
            for c in &cur {
                let seed = match fps {
                    FpsSeed::First => 0,
                    FpsSeed::NearestCentroid => geometric_seed_brute(c),
                };
                let centroids = fps_brute(c, m, seed);
                let neighbors = knn_brute(c, &centroids, spec.k);
                center_idx.extend(centroids.iter().map(|&i| offset + i));
                neighbor_idx.extend(neighbors.iter().map(|&i| offset + i));
                next.push(centroids.iter().map(|&i| c[i as usize]).collect::<Vec<_>>());
                offset += c.len() as u32;
            }
            stages.push(StageIndices { m, k: spec.k, neighbor_idx, center_idx });
            cur = next;
        }
        BatchGroupings { stages }
    }
}

/// Full-pipeline replay on a batch of clouds: embedding, four grouping
/// stages with brute-force sampling and neighbor search, global max, and the
/// classifier head (dropout never applied). Returns `[batch, num_classes]`
/// logits row-major.
#[must_use]
pub fn batch_logits_reference(
    map: &TensorMap,
    config: &ModelConfig,
    clouds: &[&[[f32; 3]]],
    fps: FpsSeed,
    mode: BnMode,
) -> Vec<f64> {
    let groupings = BatchGroupings::build(config, clouds, fps);
    batch_logits_grouped(map, config, clouds, &groupings, mode)
}

/// [`batch_logits_reference`] with the grouping precomputed by the caller.
#[must_use]
pub fn batch_logits_grouped(
    map: &TensorMap,
    config: &ModelConfig,
    clouds: &[&[[f32; 3]]],
    groupings: &BatchGroupings,
    mode: BnMode,
) -> Vec<f64> {
    assert!(!clouds.is_empty());
    let bsz = clouds.len();
    let total: usize = clouds.iter().map(|c| c.len()).sum();
    let mut feats = Vec::with_capacity(total * 3);
    for c in clouds {
        for p in c.iter() {
            feats.extend_from_slice(&[p[0] as f64, p[1] as f64, p[2] as f64]);
        }
    }

    let mut feats = apply_fc(map, "embed.fc", &feats, total);
    feats = apply_bn(map, "embed.bn", &feats, total, mode);
    feats = reference::relu(&feats);

    for (s, stage) in groupings.stages.iter().enumerate() {
        feats = stage_on_indices(
            map,
            config,
            s,
            &feats,
            bsz,
            stage.m,
            stage.k,
            &stage.neighbor_idx,
            &stage.center_idx,
            mode,
        );
    }

    let last = config.stages.last().expect("stage plan is nonempty");
    let mut h = reference::max_over_neighbors(&feats, bsz, last.n_points_out, last.d_out);
    h = apply_fc(map, "head.fc1", &h, bsz);
    h = apply_bn(map, "head.bn1", &h, bsz, mode);
    h = reference::relu(&h);
    h = apply_fc(map, "head.fc2", &h, bsz);
    h = apply_bn(map, "head.bn2", &h, bsz, mode);
    h = reference::relu(&h);
    apply_fc(map, "head.fc3", &h, bsz)
}

/// Inference replay for one cloud: logits of length `num_classes`.
#[must_use]
pub fn classify_reference(
    map: &TensorMap,
    config: &ModelConfig,
    coords: &[[f32; 3]],
    fps: FpsSeed,
) -> Vec<f64> {
    batch_logits_reference(map, config, &[coords], fps, BnMode::Frozen)
}

/// Training-forward replay: batch-statistic normalization, no dropout, mean
/// cross-entropy over the batch — the oracle twin of the deterministic
/// training loss.
#[must_use]
pub fn train_loss_reference(
    map: &TensorMap,
    config: &ModelConfig,
    clouds: &[&[[f32; 3]]],
    labels: &[u32],
) -> f64 {
    let groupings = BatchGroupings::build(config, clouds, FpsSeed::First);
    train_loss_grouped(map, config, clouds, &groupings, labels)
}

/// [`train_loss_reference`] with the grouping precomputed by the caller.
#[must_use]
pub fn train_loss_grouped(
    map: &TensorMap,
    config: &ModelConfig,
    clouds: &[&[[f32; 3]]],
    groupings: &BatchGroupings,
    labels: &[u32],
) -> f64 {
    let logits = batch_logits_grouped(map, config, clouds, groupings, BnMode::Batch);
    reference::softmax_cross_entropy(&logits, labels, clouds.len(), config.num_classes)
}
