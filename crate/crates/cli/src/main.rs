//! `pointmlp` — command-line driver for the point-cloud MLP classifier.
//!
//! Subcommands: `gendata` (synthetic PCDS datasets), `train`, `eval`,
//! `inspect` (architecture facts), and `bench` (forward throughput).
//!
//! Exit codes are a stable scripting contract: 0 on success, 1 on runtime
//! failure (unreadable file, diverged training, mismatched checkpoint), 2 on
//! usage errors (bad flags, invalid architecture, bad `POINTMLP_THREADS`).
//! Every command is deterministic for a fixed `--seed` except wall-clock
//! fields. The `POINTMLP_THREADS` environment variable caps kernel
//! parallelism; `bench --single-thread` pins it to one worker.

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use pointmlp_core::data::{generate_synthetic, Dataset, ShapeClass, SynthSpec};
use pointmlp_core::geometry::AugmentConfig;
use pointmlp_core::model::{FpsSeed, Model, ModelConfig, Variant};
use pointmlp_core::rng::Xoshiro256StarStar;
use pointmlp_core::train::{
    cosine_lr, evaluate, train_epoch, vote_distributions, SgdNesterov, TrainConfig,
};

use pointmlp_cli::records::{EpochRecord, RecordWriter};
use pointmlp_cli::{bench, formats};

/// Offset XORed into the user seed for evaluation draws, keeping them on a
/// stream disjoint from training and re-seeded identically every epoch;
/// `eval --seed S` therefore reproduces any epoch's logged metrics.
const EVAL_STREAM: u64 = 0x6576_616c_7374_7265;

#[derive(Parser)]
#[command(
    name = "pointmlp",
    version,
    about = "Point-cloud MLP classifier: datasets, training, evaluation, benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset and write it as a PCDS file.
    Gendata(GendataArgs),
    /// Train a classifier on PCDS splits; writes a checkpoint and metrics log.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on a PCDS dataset, optionally with vote averaging.
    Eval(EvalArgs),
    /// Print architecture facts: layer counts, parameters, per-stage shapes.
    Inspect(InspectArgs),
    /// Measure eval-mode forward throughput.
    Bench(BenchArgs),
}

/// Architecture flags shared by `train`, `inspect`, and `bench`; they mirror
/// the model configuration one-to-one.
#[derive(Args, Clone)]
struct ArchArgs {
    /// Model variant preset.
    #[arg(long, default_value_t = Variant::Full, value_parser = parse_variant)]
    variant: Variant,

    /// Depth preset: 24, 40, or 56 total FC layers (uniform residual
    /// repeats of 1, 2, or 3 per stage).
    #[arg(long, value_parser = parse_depth)]
    depth: Option<u32>,

    /// Disable the per-group geometric normalization before each stage.
    #[arg(long)]
    no_affine: bool,

    /// Residual repeats before neighbor pooling, uniform across stages.
    #[arg(long)]
    pre_repeats: Option<usize>,

    /// Residual repeats after neighbor pooling, uniform across stages.
    #[arg(long)]
    pos_repeats: Option<usize>,

    /// Divide every channel width by this factor (reduced-dimension runs).
    #[arg(long, default_value_t = 1)]
    dims_div: usize,

    /// Points per input cloud the model is sized for (downsample plan
    /// halves from here; neighborhood sizes are clamped to fit).
    #[arg(long)]
    points: Option<usize>,

    /// Neighbors gathered per centroid, uniform across stages.
    #[arg(long)]
    k: Option<usize>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    match s {
        "full" => Ok(Variant::Full),
        "elite" => Ok(Variant::Elite),
        other => Err(format!("unknown variant '{other}' (expected full or elite)")),
    }
}

fn parse_depth(s: &str) -> Result<u32, String> {
    match s.parse::<u32>() {
        Ok(d @ (24 | 40 | 56)) => Ok(d),
        _ => Err(format!("depth must be 24, 40, or 56, got '{s}'")),
    }
}

impl ArchArgs {
    fn build(&self, num_classes: usize) -> Result<ModelConfig, AppError> {
        let mut cfg = ModelConfig::preset(self.variant, num_classes);
        if let Some(depth) = self.depth {
            let repeats = match depth {
                24 => 1,
                40 => 2,
                56 => 3,
                _ => unreachable!("parser restricts depth"),
            };
            cfg = cfg.with_uniform_repeats(repeats, repeats);
        }
        if self.pre_repeats.is_some() || self.pos_repeats.is_some() {
            for stage in &mut cfg.stages {
                if let Some(pre) = self.pre_repeats {
                    stage.pre_repeats = pre;
                }
                if let Some(pos) = self.pos_repeats {
                    stage.pos_repeats = pos;
                }
            }
        }
        if self.no_affine {
            cfg = cfg.with_affine(false);
        }
        if self.dims_div > 1 {
            cfg = cfg.scaled_dims(self.dims_div);
        }
        if let Some(k) = self.k {
            cfg = cfg.with_k(k);
        }
        if let Some(points) = self.points {
            cfg = cfg.with_input_points(points);
        }
        cfg.validate()
            .map_err(|e| AppError::Usage(format!("invalid architecture flags: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GendataArgs {
    /// Comma-separated class names from: sphere, cube, cylinder, torus,
    /// cone, plane.
    #[arg(long, value_delimiter = ',', required = true)]
    classes: Vec<String>,

    /// Samples generated per class.
    #[arg(long, default_value_t = 50)]
    per_class: usize,

    /// Points per cloud.
    #[arg(long, default_value_t = 1024)]
    points: usize,

    /// Standard deviation of the Gaussian coordinate noise.
    #[arg(long, default_value_t = 0.02)]
    noise: f32,

    /// Generator seed; identical flags produce byte-identical files.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output PCDS path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training-split PCDS file.
    #[arg(long)]
    train: PathBuf,

    /// Test-split PCDS file, evaluated after every epoch.
    #[arg(long)]
    test: PathBuf,

    /// Checkpoint output path; the architecture sidecar lands next to it
    /// with the extension swapped to `.toml`.
    #[arg(long)]
    out: PathBuf,

    /// JSONL metrics log path (one record per epoch).
    #[arg(long)]
    log: Option<PathBuf>,

    #[command(flatten)]
    arch: ArchArgs,

    /// Epochs to train; 0 writes an untrained checkpoint and exits.
    #[arg(long, default_value_t = 300)]
    epochs: usize,

    /// Clouds per optimizer step.
    #[arg(long, default_value_t = 32)]
    batch: usize,

    /// Peak learning rate of the per-epoch cosine schedule.
    #[arg(long, default_value_t = 0.1)]
    lr: f32,

    /// Nesterov momentum.
    #[arg(long, default_value_t = 0.9)]
    momentum: f32,

    /// L2 weight decay (normalization parameters exempt).
    #[arg(long, default_value_t = 2e-4)]
    weight_decay: f32,

    /// Seed for initialization, batching, augmentation, and dropout.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Softmax-vote repeats for the per-epoch test evaluation.
    #[arg(long, default_value_t = 1)]
    vote: usize,

    /// Disable augmentation (training and vote views use raw clouds).
    #[arg(long)]
    no_augment: bool,

    /// Independent repetitions seeded seed, seed+1, ...; reports the mean
    /// and standard deviation of the final test OA. The checkpoint holds
    /// the last run's model.
    #[arg(long, default_value_t = 1)]
    runs: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint path (reads the `.toml` sidecar next to it).
    #[arg(long)]
    checkpoint: PathBuf,

    /// PCDS dataset to evaluate.
    #[arg(long)]
    data: PathBuf,

    /// Softmax-vote repeats; 1 classifies the raw cloud only.
    #[arg(long, default_value_t = 1)]
    vote: usize,

    /// Seed for the vote-augmentation draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Use raw copies instead of augmented views for votes beyond the first.
    #[arg(long)]
    no_augment: bool,

    /// Write per-sample, per-vote softmax distributions as JSONL.
    #[arg(long)]
    dump_probs: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Read the architecture from a checkpoint's sidecar instead of flags.
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    #[command(flatten)]
    arch: ArchArgs,

    /// Output classes when building from flags.
    #[arg(long, default_value_t = 40)]
    classes: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    arch: ArchArgs,

    /// Output classes for the benchmarked model.
    #[arg(long, default_value_t = 40)]
    classes: usize,

    /// Clouds classified per timed pass.
    #[arg(long, default_value_t = 16)]
    batch: usize,

    /// Untimed passes before the clock starts.
    #[arg(long, default_value_t = 3)]
    warmup: usize,

    /// Timed passes; at least 10.
    #[arg(long, default_value_t = 10, value_parser = parse_iters)]
    iters: usize,

    /// Seed for the benchmarked model's initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Pin kernels to one worker thread for stable timing.
    #[arg(long)]
    single_thread: bool,
}

fn parse_iters(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 10 => Ok(n),
        _ => Err(format!("iters must be an integer >= 10, got '{s}'")),
    }
}

/// Failures split by exit code: usage problems exit 2, runtime problems 1.
enum AppError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for AppError {
    fn from(e: E) -> Self {
        AppError::Runtime(e.into())
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(AppError::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
        Err(AppError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    init_threads(&cli)?;
    match cli.cmd {
        Cmd::Gendata(args) => cmd_gendata(args),
        Cmd::Train(args) => cmd_train(*args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Inspect(args) => cmd_inspect(args),
        Cmd::Bench(args) => cmd_bench(args),
    }
}

/// Applies the thread cap: `bench --single-thread` wins, then
/// `POINTMLP_THREADS`, otherwise the default pool.
fn init_threads(cli: &Cli) -> Result<(), AppError> {
    let pinned = matches!(&cli.cmd, Cmd::Bench(b) if b.single_thread).then_some(1usize);
    let env_cap = match std::env::var("POINTMLP_THREADS") {
        Ok(raw) => Some(raw.parse::<usize>().ok().filter(|&n| n >= 1).ok_or_else(|| {
            AppError::Usage(format!(
                "POINTMLP_THREADS must be a positive integer, got '{raw}'"
            ))
        })?),
        Err(_) => None,
    };
    if let Some(n) = pinned.or(env_cap) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| AppError::Runtime(anyhow!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Evaluation RNG for a user seed: a stream disjoint from training so logged
/// metrics are reproducible by `eval` with the same seed.
fn eval_rng(seed: u64) -> Xoshiro256StarStar {
    Xoshiro256StarStar::seed_from_u64(seed ^ EVAL_STREAM)
}

fn cmd_gendata(args: GendataArgs) -> Result<(), AppError> {
    let mut classes = Vec::with_capacity(args.classes.len());
    for name in &args.classes {
        classes.push(
            ShapeClass::from_str(name)
                .map_err(|_| AppError::Usage(format!("unknown class '{name}'")))?,
        );
    }
    let spec = SynthSpec {
        classes,
        points_per_cloud: args.points,
        samples_per_class: args.per_class,
        noise_sigma: args.noise,
        seed: args.seed,
    };
    let ds = generate_synthetic(&spec).context("generating dataset")?;
    formats::write_dataset(&ds, &args.out).context("writing dataset")?;
    println!(
        "wrote {} samples ({} classes x {}, {} points each) -> {}",
        ds.samples.len(),
        ds.class_names.len(),
        args.per_class,
        args.points,
        args.out.display()
    );
    Ok(())
}

/// One full training run; returns the trained model and its final test OA
/// (None when `epochs == 0`).
fn train_one_run(
    args: &TrainArgs,
    seed: u64,
    train_ds: &Dataset,
    test_ds: &Dataset,
    writer: &mut RecordWriter,
) -> Result<(Model, Option<f64>), AppError> {
    let arch = args.arch.build(train_ds.class_names.len())?;
    let augment = if args.no_augment {
        AugmentConfig::identity()
    } else {
        AugmentConfig::default()
    };
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        lr_max: args.lr,
        momentum: args.momentum,
        weight_decay: args.weight_decay,
        seed,
        voting_repeats: args.vote.max(1),
        augment,
    };
    cfg.validate()
        .map_err(|e| AppError::Usage(format!("invalid training flags: {e}")))?;
    let mut model = Model::new(arch, &mut Xoshiro256StarStar::seed_from_u64(seed))
        .context("building model")?;
    let mut opt = SgdNesterov::new(&model, cfg.momentum, cfg.weight_decay);
    let mut train_rng = Xoshiro256StarStar::seed_from_u64(seed);
    let mut final_oa = None;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let train_loss = train_epoch(&mut model, &mut opt, train_ds, &cfg, epoch, &mut train_rng)
            .context("training epoch")?;
        let metrics = evaluate(
            &model,
            test_ds,
            cfg.voting_repeats,
            &augment,
            &mut eval_rng(seed),
            FpsSeed::First,
        )
        .context("evaluating test split")?;
        writer.append(&EpochRecord {
            epoch,
            lr: cosine_lr(epoch, cfg.epochs, cfg.lr_max),
            train_loss,
            test_oa: metrics.overall_acc,
            test_macc: metrics.class_mean_acc,
            wall_seconds: started.elapsed().as_secs_f64(),
        })?;
        final_oa = Some(metrics.overall_acc);
    }
    Ok((model, final_oa))
}

fn cmd_train(args: TrainArgs) -> Result<(), AppError> {
    let train_ds = formats::read_dataset(&args.train).context("reading training split")?;
    let test_ds = formats::read_dataset(&args.test).context("reading test split")?;
    if train_ds.class_names != test_ds.class_names {
        return Err(AppError::Runtime(anyhow!(
            "class tables differ: train {:?} vs test {:?}",
            train_ds.class_names,
            test_ds.class_names
        )));
    }
    let mut writer = RecordWriter::create(args.log.as_deref()).context("creating metrics log")?;
    let runs = args.runs.max(1);
    let mut model = None;
    let mut final_oas = Vec::new();
    for run in 0..runs as u64 {
        let seed = args.seed + run;
        if runs > 1 {
            println!("run {} of {runs} (seed {seed})", run + 1);
        }
        let (m, oa) = train_one_run(&args, seed, &train_ds, &test_ds, &mut writer)?;
        model = Some(m);
        if let Some(oa) = oa {
            final_oas.push(oa);
        }
    }
    formats::save_checkpoint(&model.expect("runs >= 1"), &args.out)
        .context("writing checkpoint")?;
    println!("checkpoint -> {}", args.out.display());
    if final_oas.len() > 1 {
        let n = final_oas.len() as f64;
        let mean = final_oas.iter().sum::<f64>() / n;
        let var = final_oas.iter().map(|o| (o - mean) * (o - mean)).sum::<f64>() / n;
        println!(
            "final test OA over {} runs: {:.4} +/- {:.4}",
            final_oas.len(),
            mean,
            var.sqrt()
        );
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), AppError> {
    let model = formats::load_checkpoint(&args.checkpoint).context("loading checkpoint")?;
    let ds = formats::read_dataset(&args.data).context("reading dataset")?;
    if model.config().num_classes != ds.class_names.len() {
        return Err(AppError::Runtime(anyhow!(
            "checkpoint expects {} classes, dataset has {}",
            model.config().num_classes,
            ds.class_names.len()
        )));
    }
    let vote = args.vote.max(1);
    let augment = if args.no_augment {
        AugmentConfig::identity()
    } else {
        AugmentConfig::default()
    };
    let metrics = evaluate(
        &model,
        &ds,
        vote,
        &augment,
        &mut eval_rng(args.seed),
        FpsSeed::First,
    )
    .context("evaluating")?;
    println!("samples: {}", ds.samples.len());
    println!("votes per sample: {vote}");
    println!("overall accuracy: {:.4}", metrics.overall_acc);
    println!("class-mean accuracy: {:.4}", metrics.class_mean_acc);
    for (c, recall) in metrics.per_class_recall().iter().enumerate() {
        let total: u32 = metrics.confusion[c * metrics.classes..(c + 1) * metrics.classes]
            .iter()
            .sum();
        println!(
            "  {:<10} recall {:.4} ({} samples)",
            ds.class_names[c], recall, total
        );
    }
    if let Some(path) = &args.dump_probs {
        dump_probs(&model, &ds, vote, &augment, args.seed, path)?;
        println!("per-vote distributions -> {}", path.display());
    }
    Ok(())
}

/// Writes the individual softmax votes behind an evaluation, one JSONL line
/// per sample: the `vote` distributions in order plus their mean. Uses the
/// same RNG stream as the evaluation itself, so the logged votes are exactly
/// the ones the metrics averaged.
fn dump_probs(
    model: &Model,
    ds: &Dataset,
    vote: usize,
    augment: &AugmentConfig,
    seed: u64,
    path: &std::path::Path,
) -> Result<(), AppError> {
    #[derive(serde::Serialize)]
    struct ProbRecord {
        sample: usize,
        label: u32,
        votes: Vec<Vec<f64>>,
        mean: Vec<f64>,
    }
    let mut rng = eval_rng(seed);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (i, s) in ds.samples.iter().enumerate() {
        let votes = vote_distributions(model, &s.coords, vote, augment, &mut rng, FpsSeed::First)
            .context("classifying")?;
        let classes = votes[0].len();
        let mut mean = vec![0.0f64; classes];
        for v in &votes {
            for (m, p) in mean.iter_mut().zip(v) {
                *m += p;
            }
        }
        for m in &mut mean {
            *m /= votes.len() as f64;
        }
        let rec = ProbRecord {
            sample: i,
            label: s.label.unwrap_or(u32::MAX),
            votes,
            mean,
        };
        serde_json::to_writer(&mut out, &rec).map_err(anyhow::Error::from)?;
        std::io::Write::write_all(&mut out, b"\n")?;
    }
    std::io::Write::flush(&mut out)?;
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<(), AppError> {
    let config = match &args.checkpoint {
        Some(path) => formats::load_config(path).context("reading architecture sidecar")?,
        None => args.arch.build(args.classes)?,
    };
    config
        .validate()
        .map_err(|e| AppError::Runtime(anyhow!("architecture invalid: {e}")))?;
    let model = Model::new(config.clone(), &mut Xoshiro256StarStar::seed_from_u64(0))
        .context("building model")?;
    let input_points = config.stages[0].n_points_out * 2;
    println!("variant: {}", config.variant);
    println!("classes: {}", config.num_classes);
    println!("input points: {input_points}");
    println!("layers (formula): {}", config.count_layers());
    println!("layers (runtime walk): {}", model.count_fc_layers());
    println!("parameters: {}", model.count_params());
    println!("embed: 3 -> {}", config.embed_dim);
    let mut points_in = input_points;
    for (i, s) in config.stages.iter().enumerate() {
        println!(
            "stage {}: {} -> {} points, k {}, channels {} -> {}, pre x{}, pos x{}, affine {}",
            i + 1,
            points_in,
            s.n_points_out,
            s.k,
            s.d_in,
            s.d_out,
            s.pre_repeats,
            s.pos_repeats,
            if s.affine_enabled { "on" } else { "off" }
        );
        points_in = s.n_points_out;
    }
    let head: Vec<String> = std::iter::once(config.last_width())
        .chain(config.head_dims.iter().copied())
        .chain(std::iter::once(config.num_classes))
        .map(|d| d.to_string())
        .collect();
    println!(
        "head: {} (dropout {} after each hidden layer)",
        head.join(" -> "),
        pointmlp_core::model::HEAD_DROPOUT
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), AppError> {
    let config = args.arch.build(args.classes)?;
    let model = Model::new(config, &mut Xoshiro256StarStar::seed_from_u64(args.seed))
        .context("building model")?;
    let report = bench::bench_throughput(&model, args.batch, args.warmup, args.iters)
        .context("benchmarking")?;
    println!("{}", report.summary());
    println!(
        "{}",
        serde_json::json!({
            "variant": report.variant,
            "batch_size": report.batch_size,
            "warmup_iters": report.warmup_iters,
            "timed_iters": report.timed_iters,
            "points": report.points,
            "samples_per_second": report.samples_per_second,
            "params": report.params,
            "layers": report.layers,
        })
    );
    Ok(())
}
