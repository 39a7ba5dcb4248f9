//! End-to-end gradient verification on a micro network: tape gradients of
//! the deterministic training loss versus refined central differences of the
//! double-precision replay.

use pointmlp_core::model::{Model, ModelConfig};
use pointmlp_core::rng::Xoshiro256StarStar;

use pointmlp_core::model::FpsSeed;

use crate::fd::central_difference_refined;
use crate::replay::{train_loss_grouped, BatchGroupings, TensorMap};

/// Acceptance threshold for the end-to-end comparison: largest tolerated
/// `|analytic - numeric| / max(1, |numeric|)`.
pub const MODEL_GRAD_TOL: f64 = 1e-3;

/// Outcome of one seed's end-to-end gradient comparison.
#[derive(Debug)]
pub struct ModelGradReport {
    /// Largest `|analytic - numeric| / max(1, |numeric|)` over all probes.
    pub max_rel_err: f64,
    /// Checkpoint name of the tensor holding the worst probe.
    pub worst_tensor: String,
    /// Flat index of the worst probe inside that tensor.
    pub worst_index: usize,
    /// Tape gradient at the worst probe.
    pub analytic_at_worst: f64,
    /// Refined central difference at the worst probe.
    pub numeric_at_worst: f64,
    /// Probes that produced a trustworthy difference and were compared.
    pub compared: usize,
    /// Probes skipped because they sat on a selection boundary.
    pub skipped: usize,
}

/// Input points per cloud fed to the micro network.
pub const MICRO_POINTS: usize = 32;

/// The four-stage configuration shrunk for differencing: every width divided
/// by eight, a 32-point sampling plan, four neighbors per group.
#[must_use]
pub fn micro_config() -> ModelConfig {
    ModelConfig::full(4).scaled_dims(8).with_input_points(MICRO_POINTS).with_k(4)
}

/// Picks the coordinate of tensor `tensor_idx` probed at `seed`: a mixed
/// hash so that successive seeds walk scattered coordinates and, over many
/// seeds, cover every region of every tensor.
fn probe_coordinate(seed: u64, tensor_idx: usize, len: usize) -> usize {
    let mut z = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(tensor_idx as u64)
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z % len as u64) as usize
}

/// Draws a micro model and an eight-cloud batch from `seed`, takes tape
/// gradients of the training loss, and compares them against central
/// differences of the replay at one seed-rotated coordinate per tensor.
///
/// Each probe first tries a single step: an estimate that already matches
/// the tape gradient within half of [`MODEL_GRAD_TOL`] settles the probe,
/// since a boundary artifact would have to cancel against a matching tape
/// error to fake that agreement. Only a probe that disagrees walks the full
/// refinement ladder to decide whether the disagreement is real or a
/// boundary artifact.
#[must_use]
pub fn micro_model_gradient_report(seed: u64) -> ModelGradReport {
    let cfg = micro_config();
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let model = Model::new(cfg.clone(), &mut rng).expect("valid micro config");
    // Batch statistics need enough rows to be well-conditioned: with only
    // two clouds the head normalization saturates within sqrt(eps) of the
    // mean. Eight clouds matches the documented minimum batch.
    let batch: Vec<Vec<[f32; 3]>> = (0..8)
        .map(|_| {
            (0..MICRO_POINTS)
                .map(|_| {
                    [
                        rng.uniform_in(-1.0, 1.0) as f32,
                        rng.uniform_in(-1.0, 1.0) as f32,
                        rng.uniform_in(-1.0, 1.0) as f32,
                    ]
                })
                .collect()
        })
        .collect();
    let clouds: Vec<&[[f32; 3]]> = batch.iter().map(|c| c.as_slice()).collect();
    let labels: Vec<u32> = (0..8).map(|i| i % 4).collect();
    let (_, grads) = model.train_gradients(&clouds, &labels).expect("well-formed batch");

    let groupings = BatchGroupings::build(&cfg, &clouds, FpsSeed::First);
    let mut map = TensorMap::from_model(&model);
    let mut report = ModelGradReport {
        max_rel_err: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        compared: 0,
        skipped: 0,
    };
    for (i, p) in model.params().iter().enumerate() {
        let n = p.value.as_slice().len();
        let idx = probe_coordinate(seed, i, n);
        let analytic = grads[i][idx] as f64;
        let x0 = map.values(&p.name)[idx];
        let mut eval = |delta: f64| {
            map.values_mut(&p.name)[idx] = x0 + delta;
            train_loss_grouped(&map, &cfg, &clouds, &groupings, &labels)
        };
        let h = 1e-6;
        let quick = (eval(h) - eval(-h)) / (2.0 * h);
        let numeric = if (quick - analytic).abs() <= 0.5 * MODEL_GRAD_TOL * quick.abs().max(1.0) {
            Some(quick)
        } else {
            central_difference_refined(&mut eval)
        };
        map.values_mut(&p.name)[idx] = x0;
        let Some(numeric) = numeric else {
            report.skipped += 1;
            continue;
        };
        report.compared += 1;
        let rel = (analytic - numeric).abs() / numeric.abs().max(1.0);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_tensor = p.name.clone();
            report.worst_index = idx;
            report.analytic_at_worst = analytic;
            report.numeric_at_worst = numeric;
        }
    }
    report
}
