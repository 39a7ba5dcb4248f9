//! Optimizer arithmetic against hand-derived values, decay exemptions,
//! deterministic replay of whole epochs, an overfitting smoke test, and
//! voting/batching behavior.

use pointmlp_core::data::{batch_iter, generate_synthetic, ShapeClass, SynthSpec};
use pointmlp_core::geometry::AugmentConfig;
use pointmlp_core::model::{FpsSeed, Model, ModelConfig, Param, ParamKind};
use pointmlp_core::rng::Xoshiro256StarStar;
use pointmlp_core::train::{evaluate, train_epoch, SgdNesterov, TrainConfig, TrainError};
use pointmlp_core::Tensor;

fn scalar_param(kind: ParamKind, value: f32, grad: f32) -> Param {
    let mut t = Tensor::from_vec(&[1], vec![value]).unwrap();
    t.grad = Some(vec![grad]);
    Param { name: String::from("p"), kind, value: t }
}

#[test]
fn nesterov_steps_match_the_hand_derivation() {
    // p = 1, g = 1, lr = 0.1, momentum = 0.9, no decay:
    //   step 1: v = 1,   p <- 1 - 0.1 * (1 + 0.9 * 1)    = 0.81
    //   step 2: v = 1.9, p <- 0.81 - 0.1 * (1 + 0.9*1.9) = 0.539
    let mut params = vec![scalar_param(ParamKind::Weight, 1.0, 1.0)];
    let mut opt = SgdNesterov::from_params(&params, 0.9, 0.0);
    opt.step(&mut params, 0.1).unwrap();
    let p1 = params[0].value.as_slice()[0];
    assert!((p1 - 0.81).abs() < 1e-6, "after one step: {p1}");
    params[0].value.grad = Some(vec![1.0]);
    opt.step(&mut params, 0.1).unwrap();
    let p2 = params[0].value.as_slice()[0];
    assert!((p2 - 0.539).abs() < 1e-6, "after two steps: {p2}");
}

#[test]
fn first_step_with_zero_gradient_is_pure_decay_shrinkage() {
    // With g = 0 and fresh velocity, one step multiplies a decaying
    // parameter by exactly 1 - lr * wd * (1 + m).
    let (lr, m, wd) = (0.1f32, 0.9f32, 0.05f32);
    for value in [1.0f32, -2.5, 0.75] {
        let mut params = vec![scalar_param(ParamKind::Bias, value, 0.0)];
        let mut opt = SgdNesterov::from_params(&params, m, wd);
        opt.step(&mut params, lr).unwrap();
        let got = params[0].value.as_slice()[0];
        let want = value * (1.0 - lr * wd * (1.0 + m));
        assert!((got - want).abs() < 1e-7, "{value}: got {got}, want {want}");
    }
}

#[test]
fn decay_exempts_normalization_and_affine_parameters() {
    let cfg = ModelConfig::full(4).scaled_dims(16).with_k(4).with_input_points(16);
    let mut rng = Xoshiro256StarStar::seed_from_u64(31);
    let mut model = Model::new(cfg, &mut rng).unwrap();
    let before: Vec<(String, ParamKind, Vec<u32>)> = model
        .params()
        .iter()
        .map(|p| {
            (
                p.name.clone(),
                p.kind,
                p.value.as_slice().iter().map(|v| v.to_bits()).collect(),
            )
        })
        .collect();
    for p in model.params_mut() {
        let n = p.value.numel();
        p.value.grad = Some(vec![0.0; n]);
    }
    let mut opt = SgdNesterov::new(&model, 0.9, 0.1);
    opt.step(model.params_mut(), 0.1).unwrap();
    for (p, (name, kind, bits)) in model.params().iter().zip(&before) {
        let now: Vec<u32> = p.value.as_slice().iter().map(|v| v.to_bits()).collect();
        if kind.decays() {
            // Weight decay moved every nonzero element.
            let moved = p
                .value
                .as_slice()
                .iter()
                .zip(bits)
                .any(|(v, &b)| v.to_bits() != b && f32::from_bits(b) != 0.0);
            let all_zero = bits.iter().all(|&b| f32::from_bits(b) == 0.0);
            assert!(moved || all_zero, "{name}: decay did not apply");
        } else {
            assert_eq!(&now, bits, "{name}: exempt parameter changed");
        }
    }
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let cfg = ModelConfig::full(4).scaled_dims(16).with_k(4).with_input_points(16);
    let mut rng = Xoshiro256StarStar::seed_from_u64(32);
    let mut model = Model::new(cfg, &mut rng).unwrap();
    let before: Vec<Vec<u32>> = model
        .params()
        .iter()
        .map(|p| p.value.as_slice().iter().map(|v| v.to_bits()).collect())
        .collect();
    for p in model.params_mut() {
        let n = p.value.numel();
        p.value.grad = Some(vec![0.25; n]);
    }
    let mut opt = SgdNesterov::new(&model, 0.9, 2e-4);
    opt.step(model.params_mut(), 0.0).unwrap();
    for (p, bits) in model.params().iter().zip(&before) {
        let now: Vec<u32> = p.value.as_slice().iter().map(|v| v.to_bits()).collect();
        assert_eq!(&now, bits, "{}: moved at lr = 0", p.name);
    }
}

#[test]
fn stepping_without_gradients_reports_the_parameter() {
    let mut params = vec![scalar_param(ParamKind::Weight, 1.0, 1.0)];
    params[0].value.grad = None;
    let mut opt = SgdNesterov::from_params(&params, 0.9, 0.0);
    match opt.step(&mut params, 0.1) {
        Err(TrainError::MissingGradient { name }) => assert_eq!(name, "p"),
        other => panic!("expected MissingGradient, got {other:?}"),
    }
}

fn tiny_dataset(seed: u64) -> pointmlp_core::data::Dataset {
    generate_synthetic(&SynthSpec {
        classes: vec![
            ShapeClass::Sphere,
            ShapeClass::Cube,
            ShapeClass::Torus,
            ShapeClass::Plane,
        ],
        points_per_cloud: 32,
        samples_per_class: 6,
        noise_sigma: 0.02,
        seed,
    })
    .unwrap()
}

fn tiny_model(seed: u64) -> Model {
    let cfg = ModelConfig::full(4).scaled_dims(8).with_input_points(32).with_k(4);
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    Model::new(cfg, &mut rng).unwrap()
}

#[test]
fn identical_seeds_replay_identical_epochs() {
    let ds = tiny_dataset(7);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = || -> (Vec<f32>, Vec<Vec<u32>>) {
        let mut model = tiny_model(9);
        let mut opt = SgdNesterov::new(&model, cfg.momentum, cfg.weight_decay);
        let mut rng = Xoshiro256StarStar::seed_from_u64(cfg.seed);
        let losses: Vec<f32> = (0..cfg.epochs)
            .map(|e| train_epoch(&mut model, &mut opt, &ds, &cfg, e, &mut rng).unwrap())
            .collect();
        let params = model
            .params()
            .iter()
            .map(|p| p.value.as_slice().iter().map(|v| v.to_bits()).collect())
            .collect();
        (losses, params)
    };
    let (l1, p1) = run();
    let (l2, p2) = run();
    assert_eq!(
        l1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        l2.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        "loss traces diverged"
    );
    assert_eq!(p1, p2, "parameters diverged");
}

#[test]
fn a_few_epochs_overfit_a_tiny_dataset() {
    let ds = tiny_dataset(11);
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 8,
        lr_max: 0.05,
        seed: 3,
        augment: AugmentConfig::identity(),
        ..TrainConfig::default()
    };
    // A dims/4 model has enough capacity to genuinely overfit 24 clouds; the
    // dims/8 helper used elsewhere is too narrow to drive the loss down fast.
    let arch = ModelConfig::full(4)
        .scaled_dims(4)
        .with_input_points(32)
        .with_k(4);
    let mut model = Model::new(arch, &mut Xoshiro256StarStar::seed_from_u64(13)).unwrap();
    let mut opt = SgdNesterov::new(&model, cfg.momentum, cfg.weight_decay);
    let mut rng = Xoshiro256StarStar::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        losses.push(train_epoch(&mut model, &mut opt, &ds, &cfg, e, &mut rng).unwrap());
    }
    let first = losses[0];
    let last = *losses.last().unwrap();
    assert!(
        last < 0.5 * first,
        "loss failed to shrink: first {first}, last {last} ({losses:?})"
    );
}

#[test]
fn identity_augmentation_makes_voting_a_no_op() {
    let ds = tiny_dataset(17);
    let model = tiny_model(19);
    let identity = AugmentConfig::identity();
    let mut rng = Xoshiro256StarStar::seed_from_u64(0);
    let single = evaluate(&model, &ds, 1, &identity, &mut rng, FpsSeed::First).unwrap();
    let mut rng = Xoshiro256StarStar::seed_from_u64(0);
    let voted = evaluate(&model, &ds, 4, &identity, &mut rng, FpsSeed::First).unwrap();
    assert_eq!(single.confusion, voted.confusion);
    assert_eq!(single.overall_acc, voted.overall_acc);
}

#[test]
fn evaluating_an_empty_dataset_is_an_error() {
    let ds = pointmlp_core::data::Dataset {
        samples: Vec::new(),
        class_names: vec![String::from("a"), String::from("b")],
    };
    let model = tiny_model(23);
    let mut rng = Xoshiro256StarStar::seed_from_u64(0);
    match evaluate(&model, &ds, 1, &AugmentConfig::default(), &mut rng, FpsSeed::First) {
        Err(TrainError::EmptyDataset) => {}
        other => panic!("expected EmptyDataset, got {other:?}"),
    }
}

#[test]
fn shuffled_batches_partition_the_index_range() {
    let mut rng = Xoshiro256StarStar::seed_from_u64(37);
    for (n, bsz) in [(10usize, 3usize), (32, 8), (7, 16), (1, 1)] {
        let batches = batch_iter(n, bsz, true, &mut rng);
        for b in &batches[..batches.len() - 1] {
            assert_eq!(b.len(), bsz, "only the last batch may be short");
        }
        let mut seen: Vec<u32> = batches.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..n as u32).collect::<Vec<_>>(), "n={n} bsz={bsz}");
    }
}

#[test]
fn batch_shuffles_replay_by_seed() {
    let mut a = Xoshiro256StarStar::seed_from_u64(41);
    let mut b = Xoshiro256StarStar::seed_from_u64(41);
    assert_eq!(batch_iter(64, 8, true, &mut a), batch_iter(64, 8, true, &mut b));
    let mut c = Xoshiro256StarStar::seed_from_u64(42);
    let shuffled: Vec<u32> = batch_iter(64, 8, true, &mut c).into_iter().flatten().collect();
    assert_ne!(
        shuffled,
        (0..64).collect::<Vec<_>>(),
        "shuffle left the identity order"
    );
    let mut d = Xoshiro256StarStar::seed_from_u64(43);
    let plain: Vec<u32> = batch_iter(64, 8, false, &mut d).into_iter().flatten().collect();
    assert_eq!(plain, (0..64).collect::<Vec<_>>(), "unshuffled order must be stable");
}
