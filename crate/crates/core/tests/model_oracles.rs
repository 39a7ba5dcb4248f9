//! Whole-model and stage-level checks against the independent
//! double-precision replay, structural count pins, order-invariance, and the
//! closed-form behavior of the deviation-normalization module.

use pointmlp_core::autodiff::Graph;
use pointmlp_core::geometry::{group, Grouping};
use pointmlp_core::model::{FpsSeed, Model, ModelConfig, AFFINE_EPS, BN_EPS};
use pointmlp_core::rng::Xoshiro256StarStar;
use pointmlp_core::Tensor;
use pointmlp_testkit::params::closed_form_param_count;
use pointmlp_testkit::replay::{
    classify_reference, stage_reference, train_loss_reference, TensorMap,
};
use pointmlp_testkit::{max_abs_diff, reference};

fn random_cloud(rng: &mut Xoshiro256StarStar, n: usize) -> Vec<[f32; 3]> {
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

fn micro_config() -> ModelConfig {
    ModelConfig::full(4).scaled_dims(8).with_input_points(32).with_k(4)
}

/// Gives every persistent tensor (including running statistics) a random
/// value so oracle comparisons exercise nontrivial normalization paths.
fn randomize_tensors(model: &mut Model, rng: &mut Xoshiro256StarStar) {
    for (name, _, data) in model.tensors_mut() {
        let positive = name.ends_with("running_var");
        for v in data {
            *v = if positive {
                rng.uniform_in(0.5, 2.0) as f32
            } else {
                rng.uniform_in(-0.5, 0.5) as f32
            };
        }
    }
}

#[test]
fn classify_matches_the_double_precision_replay() {
    let cfg = micro_config();
    let mut rng = Xoshiro256StarStar::seed_from_u64(21);
    let mut model = Model::new(cfg.clone(), &mut rng).unwrap();
    randomize_tensors(&mut model, &mut rng);
    let map = TensorMap::from_model(&model);
    for fps in [FpsSeed::First, FpsSeed::NearestCentroid] {
        for _ in 0..5 {
            let cloud = random_cloud(&mut rng, 32);
            let logits = model.classify(&cloud, fps).unwrap();
            let oracle = classify_reference(&map, &cfg, &cloud, fps);
            let diff = max_abs_diff(logits.as_slice(), &oracle);
            assert!(diff < 1e-3, "fps {fps:?}: max abs diff {diff}");
        }
    }
}

#[test]
fn train_loss_matches_the_double_precision_replay() {
    let cfg = micro_config();
    let mut rng = Xoshiro256StarStar::seed_from_u64(22);
    let model = Model::new(cfg.clone(), &mut rng).unwrap();
    let batch: Vec<Vec<[f32; 3]>> = (0..8).map(|_| random_cloud(&mut rng, 32)).collect();
    let clouds: Vec<&[[f32; 3]]> = batch.iter().map(|c| c.as_slice()).collect();
    let labels: Vec<u32> = (0..8).map(|i| i % 4).collect();
    let map = TensorMap::from_model(&model);
    let engine = model.train_loss(&clouds, &labels).unwrap() as f64;
    let oracle = train_loss_reference(&map, &cfg, &clouds, &labels);
    assert!(
        (engine - oracle).abs() < 1e-3,
        "engine {engine} vs replay {oracle}"
    );
}

#[test]
fn eval_stage_matches_the_double_precision_replay() {
    let cfg = micro_config();
    let mut rng = Xoshiro256StarStar::seed_from_u64(23);
    let mut model = Model::new(cfg.clone(), &mut rng).unwrap();
    randomize_tensors(&mut model, &mut rng);
    let map = TensorMap::from_model(&model);
    let mut n = 32usize;
    for s in 0..cfg.stages.len() {
        let spec = &cfg.stages[s];
        let cloud = random_cloud(&mut rng, n);
        let grouping = group(&cloud, spec.n_points_out, spec.k, 0).unwrap();
        let feats: Vec<f32> = (0..n * spec.d_in)
            .map(|_| rng.uniform_in(-1.0, 1.0) as f32)
            .collect();
        let mut graph = Graph::new();
        let leaf = graph.leaf(Tensor::from_vec(&[n, spec.d_in], feats.clone()).unwrap());
        let out = model.eval_stage(&mut graph, s, leaf, &grouping).unwrap();
        let engine = graph.value(out).as_slice();
        let wide: Vec<f64> = feats.iter().map(|&v| v as f64).collect();
        let oracle = stage_reference(&map, &cfg, s, &wide, &grouping);
        let diff = max_abs_diff(engine, &oracle);
        assert!(diff < 1e-4, "stage {s}: max abs diff {diff}");
        n = spec.n_points_out;
    }
}

#[test]
fn stage_outputs_ignore_neighbor_order() {
    let cfg = micro_config();
    let mut rng = Xoshiro256StarStar::seed_from_u64(24);
    let mut model = Model::new(cfg.clone(), &mut rng).unwrap();
    randomize_tensors(&mut model, &mut rng);
    let spec = &cfg.stages[0];
    let n = 32usize;
    let cloud = random_cloud(&mut rng, n);
    let grouping = group(&cloud, spec.n_points_out, spec.k, 0).unwrap();
    let feats: Vec<f32> = (0..n * spec.d_in)
        .map(|_| rng.uniform_in(-1.0, 1.0) as f32)
        .collect();

    let run = |g: &Grouping, model: &Model| -> Vec<f32> {
        let mut graph = Graph::new();
        let leaf = graph.leaf(Tensor::from_vec(&[n, spec.d_in], feats.clone()).unwrap());
        let out = model.eval_stage(&mut graph, 0, leaf, g).unwrap();
        graph.value(out).as_slice().to_vec()
    };
    let base = run(&grouping, &model);

    // Rotate and reverse each neighborhood row: same set, new order.
    let mut shuffled = grouping.clone();
    for row in shuffled.neighbors.chunks_mut(spec.k) {
        row.reverse();
        row.rotate_left(1);
    }
    let permuted = run(&shuffled, &model);
    let diff = base
        .iter()
        .zip(&permuted)
        .map(|(a, b)| (a - b).abs() as f64)
        .fold(0.0, f64::max);
    assert!(diff < 1e-5, "neighbor order leaked into stage output: {diff}");
}

#[test]
fn eval_logits_ignore_input_point_order() {
    let cfg = micro_config();
    let mut rng = Xoshiro256StarStar::seed_from_u64(25);
    let mut model = Model::new(cfg.clone(), &mut rng).unwrap();
    randomize_tensors(&mut model, &mut rng);
    for _ in 0..5 {
        let cloud = random_cloud(&mut rng, 32);
        let base = model.classify(&cloud, FpsSeed::NearestCentroid).unwrap();
        let mut permuted = cloud.clone();
        permuted.reverse();
        permuted.rotate_left(7);
        let moved = model.classify(&permuted, FpsSeed::NearestCentroid).unwrap();
        let diff = base
            .as_slice()
            .iter()
            .zip(moved.as_slice())
            .map(|(a, b)| (a - b).abs() as f64)
            .fold(0.0, f64::max);
        assert!(diff < 1e-4, "input order leaked into logits: {diff}");
    }
}

#[test]
fn silenced_residual_branch_is_an_exact_identity() {
    // x + relu(bn2(fc2(...))) with fc2 weights, fc2 bias, and bn2 shift all
    // zero must return x bit-for-bit, whichever statistics bn2 uses.
    let mut rng = Xoshiro256StarStar::seed_from_u64(26);
    let (rows, d, hidden) = (6usize, 5usize, 7usize);
    let x: Vec<f32> = (0..rows * d).map(|_| rng.uniform_in(-2.0, 2.0) as f32).collect();
    let w1: Vec<f32> = (0..d * hidden).map(|_| rng.uniform_in(-1.0, 1.0) as f32).collect();
    let b1: Vec<f32> = (0..hidden).map(|_| rng.uniform_in(-1.0, 1.0) as f32).collect();
    let g1: Vec<f32> = (0..hidden).map(|_| rng.uniform_in(0.5, 1.5) as f32).collect();
    let beta1: Vec<f32> = (0..hidden).map(|_| rng.uniform_in(-1.0, 1.0) as f32).collect();
    let g2: Vec<f32> = (0..d).map(|_| rng.uniform_in(0.5, 1.5) as f32).collect();

    for train_mode in [true, false] {
        let mut graph = Graph::new();
        let xv = graph.leaf(Tensor::from_vec(&[rows, d], x.clone()).unwrap());
        let w1v = graph.leaf(Tensor::from_vec(&[d, hidden], w1.clone()).unwrap());
        let b1v = graph.leaf(Tensor::from_vec(&[hidden], b1.clone()).unwrap());
        let g1v = graph.leaf(Tensor::from_vec(&[hidden], g1.clone()).unwrap());
        let beta1v = graph.leaf(Tensor::from_vec(&[hidden], beta1.clone()).unwrap());
        let w2v = graph.leaf(Tensor::from_vec(&[hidden, d], vec![0.0; hidden * d]).unwrap());
        let b2v = graph.leaf(Tensor::from_vec(&[d], vec![0.0; d]).unwrap());
        let g2v = graph.leaf(Tensor::from_vec(&[d], g2.clone()).unwrap());
        let beta2v = graph.leaf(Tensor::from_vec(&[d], vec![0.0; d]).unwrap());

        let h = graph.fc(xv, w1v, b1v).unwrap();
        let h = if train_mode {
            graph.batch_norm_train(h, g1v, beta1v, BN_EPS).unwrap().out
        } else {
            graph
                .batch_norm_frozen(h, g1v, beta1v, &vec![0.0; hidden], &vec![1.0; hidden], BN_EPS)
                .unwrap()
        };
        let h = graph.relu(h);
        let h = graph.fc(h, w2v, b2v).unwrap();
        let h = if train_mode {
            graph.batch_norm_train(h, g2v, beta2v, BN_EPS).unwrap().out
        } else {
            graph
                .batch_norm_frozen(h, g2v, beta2v, &vec![0.0; d], &vec![1.0; d], BN_EPS)
                .unwrap()
        };
        let h = graph.relu(h);
        let out = graph.add(xv, h).unwrap();
        assert_eq!(
            graph.value(out).as_slice(),
            x.as_slice(),
            "silenced branch altered the input (train_mode={train_mode})"
        );
    }
}

#[test]
fn parameter_counts_hit_the_published_pins() {
    let mut rng = Xoshiro256StarStar::seed_from_u64(27);
    let full = Model::new(ModelConfig::full(40), &mut rng).unwrap();
    assert_eq!(full.count_params(), 12_555_688);
    assert_eq!(closed_form_param_count(full.config()), 12_555_688);
    let rel = (full.count_params() as f64 - 12.6e6).abs() / 12.6e6;
    assert!(rel < 0.05, "full deviates {rel:.3} from the published 12.6M");

    let elite = Model::new(ModelConfig::elite(40), &mut rng).unwrap();
    assert_eq!(elite.count_params(), 676_872);
    assert_eq!(closed_form_param_count(elite.config()), 676_872);
    let rel = (elite.count_params() as f64 - 0.68e6).abs() / 0.68e6;
    assert!(rel < 0.10, "elite deviates {rel:.3} from the published 0.68M");
}

#[test]
fn depth_pins_and_layer_walk_match_the_formula() {
    // Uniform block repeats of 1, 2, 3 give total depths 24, 40, 56.
    for (repeats, depth) in [(1usize, 24usize), (2, 40), (3, 56)] {
        let cfg = ModelConfig::full(10).with_uniform_repeats(repeats, repeats);
        assert_eq!(cfg.count_layers(), depth, "repeats {repeats}");
        let mut rng = Xoshiro256StarStar::seed_from_u64(repeats as u64);
        let model = Model::new(cfg.scaled_dims(16), &mut rng).unwrap();
        assert_eq!(model.count_fc_layers(), depth, "runtime walk, repeats {repeats}");
    }

    // Random configurations: the formula always matches a walk over the
    // built parameter list, and the closed-form parameter count matches the
    // instantiated total.
    let mut rng = Xoshiro256StarStar::seed_from_u64(28);
    for _ in 0..20 {
        let mut cfg = ModelConfig::full(2 + (rng.uniform_in(0.0, 38.0) as usize))
            .scaled_dims(8 << (rng.uniform_in(0.0, 2.0) as usize))
            .with_affine(rng.uniform_f64() < 0.5);
        for s in 0..cfg.stages.len() {
            cfg.stages[s].pre_repeats = 1 + (rng.uniform_in(0.0, 3.0) as usize).min(2);
            cfg.stages[s].pos_repeats = 1 + (rng.uniform_in(0.0, 3.0) as usize).min(2);
        }
        cfg.validate().unwrap();
        let model = Model::new(cfg.clone(), &mut rng).unwrap();
        assert_eq!(model.count_fc_layers(), cfg.count_layers());
        assert_eq!(model.count_params(), closed_form_param_count(&cfg));
    }
}

#[test]
fn affine_hand_instance_matches_the_derivation() {
    // One channel, two groups of two neighbors: grouped [0,2,0,2] around
    // centers [1,1]. Every deviation is +-1, so sigma = 1 and each output is
    // alpha * dev / (1 + eps) + beta.
    let mut graph = Graph::new();
    let grouped = graph.leaf(Tensor::from_vec(&[2, 2, 1], vec![0.0, 2.0, 0.0, 2.0]).unwrap());
    let centers = graph.leaf(Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap());
    let alpha = graph.leaf(Tensor::from_vec(&[1], vec![2.0]).unwrap());
    let beta = graph.leaf(Tensor::from_vec(&[1], vec![0.5]).unwrap());
    let out = graph.geometric_affine(grouped, centers, alpha, beta, AFFINE_EPS).unwrap();
    let eps = AFFINE_EPS as f64;
    let lo = 2.0 * (-1.0) / (1.0 + eps) + 0.5;
    let hi = 2.0 * 1.0 / (1.0 + eps) + 0.5;
    let expect = [lo, hi, lo, hi];
    for (got, want) in graph.value(out).as_slice().iter().zip(expect) {
        assert!(
            ((*got as f64) - want).abs() < 1e-5,
            "got {got}, derived {want}"
        );
    }
}

#[test]
fn zero_deviation_collapses_to_beta_exactly() {
    let mut rng = Xoshiro256StarStar::seed_from_u64(29);
    let (n, k, d) = (3usize, 4usize, 5usize);
    let centers: Vec<f32> = (0..n * d).map(|_| rng.uniform_in(-1.0, 1.0) as f32).collect();
    let mut grouped = Vec::with_capacity(n * k * d);
    for g in 0..n {
        for _ in 0..k {
            grouped.extend_from_slice(&centers[g * d..(g + 1) * d]);
        }
    }
    let alpha: Vec<f32> = (0..d).map(|_| rng.uniform_in(-2.0, 2.0) as f32).collect();
    let beta: Vec<f32> = (0..d).map(|_| rng.uniform_in(-2.0, 2.0) as f32).collect();

    let mut graph = Graph::new();
    let gv = graph.leaf(Tensor::from_vec(&[n, k, d], grouped).unwrap());
    let cv = graph.leaf(Tensor::from_vec(&[n, d], centers).unwrap());
    let av = graph.leaf(Tensor::from_vec(&[d], alpha).unwrap());
    let bv = graph.leaf(Tensor::from_vec(&[d], beta.clone()).unwrap());
    let out = graph.geometric_affine(gv, cv, av, bv, AFFINE_EPS).unwrap();
    for (i, &v) in graph.value(out).as_slice().iter().enumerate() {
        let want = beta[i % d];
        assert_eq!(
            v.to_bits(),
            want.to_bits(),
            "element {i}: {v} is not bitwise beta {want}"
        );
    }
}

#[test]
fn unit_affine_output_rms_tracks_the_deviation_scale() {
    let mut rng = Xoshiro256StarStar::seed_from_u64(30);
    for _ in 0..10 {
        let (n, k, d) = (4usize, 6usize, 3usize);
        let grouped: Vec<f32> =
            (0..n * k * d).map(|_| rng.uniform_in(-2.0, 2.0) as f32).collect();
        let centers: Vec<f32> = (0..n * d).map(|_| rng.uniform_in(-1.0, 1.0) as f32).collect();

        let wide_g: Vec<f64> = grouped.iter().map(|&v| v as f64).collect();
        let wide_c: Vec<f64> = centers.iter().map(|&v| v as f64).collect();
        let (_, sigma) = reference::geometric_affine(
            &wide_g,
            &wide_c,
            &[1.0; 3],
            &[0.0; 3],
            n,
            k,
            d,
            AFFINE_EPS as f64,
        );

        let mut graph = Graph::new();
        let gv = graph.leaf(Tensor::from_vec(&[n, k, d], grouped).unwrap());
        let cv = graph.leaf(Tensor::from_vec(&[n, d], centers).unwrap());
        let av = graph.leaf(Tensor::from_vec(&[d], vec![1.0; d]).unwrap());
        let bv = graph.leaf(Tensor::from_vec(&[d], vec![0.0; d]).unwrap());
        let out = graph.geometric_affine(gv, cv, av, bv, AFFINE_EPS).unwrap();
        let vals = graph.value(out).as_slice();
        let rms = (vals.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>()
            / vals.len() as f64)
            .sqrt();
        let want = sigma / (sigma + AFFINE_EPS as f64);
        assert!(
            (rms - want).abs() < 1e-3,
            "rms {rms} vs sigma/(sigma+eps) {want}"
        );
    }
}
