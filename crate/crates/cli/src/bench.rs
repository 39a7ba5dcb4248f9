//! Forward-pass throughput measurement.
//!
//! The benchmark classifies a fixed batch of random clouds: `warmup` passes
//! untimed to stabilize caches, then `iters` timed passes. All inputs are
//! generated before the clock starts; inside the timed region the only
//! allocations are the per-pass activation buffers the forward pass itself
//! owns. Absolute numbers are hardware-bound — callers compare reports taken
//! on the same machine and batch size.

use std::hint::black_box;
use std::time::Instant;

use pointmlp_core::geometry::unit_normalize;
use pointmlp_core::model::FpsSeed;
use pointmlp_core::model::Model;
use pointmlp_core::rng::Xoshiro256StarStar;

/// Seed for the benchmark's fixed random inputs; constant so repeated runs
/// time identical work.
const BENCH_INPUT_SEED: u64 = 0x00BE_6C11;

/// Measured throughput plus the model facts needed to compare variants.
#[derive(Clone, Debug)]
pub struct BenchReport {
    /// Model variant name (`full` / `elite`).
    pub variant: String,
    /// Clouds classified per timed pass.
    pub batch_size: usize,
    /// Untimed passes before the clock starts.
    pub warmup_iters: usize,
    /// Timed passes; at least 10 so one scheduler hiccup cannot dominate.
    pub timed_iters: usize,
    /// Points per input cloud.
    pub points: usize,
    /// `batch_size * timed_iters / elapsed_seconds`.
    pub samples_per_second: f64,
    /// Total scalar parameters in the model.
    pub params: usize,
    /// Fully connected layer count (runtime walk).
    pub layers: usize,
}

impl BenchReport {
    /// One-line human summary.
    pub fn summary(&self) -> String {
        format!(
            "{}: {:.1} samples/s (batch {}, {} pts, {} warmup + {} timed, {} params, {} layers)",
            self.variant,
            self.samples_per_second,
            self.batch_size,
            self.points,
            self.warmup_iters,
            self.timed_iters,
            self.params,
            self.layers
        )
    }
}

/// Times eval-mode forward passes over a fixed random batch and reports
/// samples per second. Input clouds carry twice the first stage's centroid
/// count (the natural operating size, matching the halving downsample plan)
/// and are unit-normalized like real data.
///
/// # Panics
/// If `iters < 10`; the report contract requires at least 10 timed passes.
pub fn bench_throughput(
    model: &Model,
    batch_size: usize,
    warmup: usize,
    iters: usize,
) -> anyhow::Result<BenchReport> {
    assert!(iters >= 10, "need at least 10 timed iterations");
    let config = model.config();
    let points = config.stages[0].n_points_out * 2;
    let mut rng = Xoshiro256StarStar::seed_from_u64(BENCH_INPUT_SEED);
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let mut coords: Vec<[f32; 3]> = (0..points)
            .map(|_| {
                [
                    rng.uniform_in(-1.0, 1.0) as f32,
                    rng.uniform_in(-1.0, 1.0) as f32,
                    rng.uniform_in(-1.0, 1.0) as f32,
                ]
            })
            .collect();
        unit_normalize(&mut coords);
        batch.push(coords);
    }

    for _ in 0..warmup {
        for coords in &batch {
            black_box(model.classify(coords, FpsSeed::First)?);
        }
    }

    let start = Instant::now();
    for _ in 0..iters {
        for coords in &batch {
            black_box(model.classify(coords, FpsSeed::First)?);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();

    Ok(BenchReport {
        variant: config.variant.to_string(),
        batch_size,
        warmup_iters: warmup,
        timed_iters: iters,
        points,
        samples_per_second: (batch_size * iters) as f64 / elapsed,
        params: model.count_params(),
        layers: model.count_fc_layers(),
    })
}
