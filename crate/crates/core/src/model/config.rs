//! Architectural configuration: stage plans, presets, validation, and the
//! closed-form layer count.

use alloc::vec::Vec;
use core::fmt;

/// Which parameter regime a configuration describes. `Full` uses plain
/// residual blocks (`r = 1`); `Elite` uses bottleneck blocks and a slimmer
/// channel plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Variant {
    /// Standard model: residual blocks keep full width end to end.
    Full,
    /// Lightweight model: bottleneck blocks (intermediate width `d/r`),
    /// halved embedding, fewer blocks.
    Elite,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => write!(f, "full"),
            Variant::Elite => write!(f, "elite"),
        }
    }
}

/// One stage of the network: how many centroids survive, the neighborhood
/// size, channel widths, block repeats, and whether the grouped-feature
/// normalization is applied.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageSpec {
    /// Number of centroids sampled by FPS (the stage's output point count).
    pub n_points_out: usize,
    /// Neighborhood size for kNN grouping.
    pub k: usize,
    /// Incoming feature width.
    pub d_in: usize,
    /// Outgoing feature width (set by the channel-lift FC).
    pub d_out: usize,
    /// Residual blocks applied per neighbor before max-pooling.
    pub pre_repeats: usize,
    /// Residual blocks applied per centroid after max-pooling.
    pub pos_repeats: usize,
    /// Whether grouped features pass through the geometric affine module.
    pub affine_enabled: bool,
}

/// Complete architectural description of a model.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    /// Parameter regime this plan was derived from.
    pub variant: Variant,
    /// Width of the first per-point embedding (3 -> embed_dim).
    pub embed_dim: usize,
    /// Number of output classes.
    pub num_classes: usize,
    /// Bottleneck reduction factor for residual blocks (1 = no bottleneck).
    pub bottleneck_r: usize,
    /// The four stages, in order.
    pub stages: Vec<StageSpec>,
    /// Hidden widths of the two classifier layers before the logits.
    pub head_dims: [usize; 2],
}

/// Number of stages every configuration must have; the layer-count formula
/// and the presets are defined for exactly this depth of pipeline.
pub const STAGE_COUNT: usize = 4;

/// Configuration validation failures.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConfigError {
    /// Exactly [`STAGE_COUNT`] stages are required.
    StageCount {
        /// Number of stages supplied.
        got: usize,
    },
    /// The embedding width must equal the first stage's input width.
    EmbedMismatch {
        /// Configured embedding width.
        embed_dim: usize,
        /// First stage's `d_in`.
        first_d_in: usize,
    },
    /// Adjacent stages disagree about the channel width.
    ChannelChain {
        /// Index of the violating stage.
        stage: usize,
        /// Previous stage's `d_out`.
        expected: usize,
        /// This stage's `d_in`.
        got: usize,
    },
    /// A residual-block width is not divisible by the bottleneck factor.
    WidthNotDivisible {
        /// Index of the violating stage.
        stage: usize,
        /// The block width (`d_out` of that stage).
        width: usize,
        /// The bottleneck factor.
        r: usize,
    },
    /// A dimension that must be positive was zero.
    ZeroDimension {
        /// Which field was zero.
        what: &'static str,
    },
    /// Stage point counts must not increase.
    PointPlanGrows {
        /// Index of the violating stage.
        stage: usize,
    },
    /// A stage asks for more neighbors than its input can provide.
    NeighborsExceedPoints {
        /// Index of the violating stage.
        stage: usize,
        /// Requested `k`.
        k: usize,
        /// Points entering that stage (for stages after the first).
        available: usize,
    },
    /// Fewer than two classes.
    TooFewClasses {
        /// Configured class count.
        got: usize,
    },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::StageCount { got } => {
                write!(f, "model requires exactly {STAGE_COUNT} stages, got {got}")
            }
            ConfigError::EmbedMismatch {
                embed_dim,
                first_d_in,
            } => write!(
                f,
                "embedding width {embed_dim} must equal first stage d_in {first_d_in}"
            ),
            ConfigError::ChannelChain {
                stage,
                expected,
                got,
            } => write!(
                f,
                "stage {stage}: d_in {got} must equal previous stage d_out {expected}"
            ),
            ConfigError::WidthNotDivisible { stage, width, r } => {
                write!(f, "stage {stage}: width {width} not divisible by bottleneck r={r}")
            }
            ConfigError::ZeroDimension { what } => write!(f, "{what} must be positive"),
            ConfigError::PointPlanGrows { stage } => {
                write!(f, "stage {stage}: point count exceeds the previous stage's")
            }
            ConfigError::NeighborsExceedPoints { stage, k, available } => {
                write!(f, "stage {stage}: k={k} exceeds the {available} points entering it")
            }
            ConfigError::TooFewClasses { got } => {
                write!(f, "need at least 2 classes, got {got}")
            }
        }
    }
}

impl core::error::Error for ConfigError {}

impl ModelConfig {
    /// The standard full-width model for 1024-point clouds: embedding 64,
    /// stage widths 128/256/512/1024, two pre and two pos blocks per stage,
    /// k=24, affine enabled, classifier 512/256.
    #[must_use]
    pub fn full(num_classes: usize) -> Self {
        let widths = [128, 256, 512, 1024];
        let points = [512, 256, 128, 64];
        let mut d_in = 64;
        let stages = (0..STAGE_COUNT)
            .map(|s| {
                let spec = StageSpec {
                    n_points_out: points[s],
                    k: 24,
                    d_in,
                    d_out: widths[s],
                    pre_repeats: 2,
                    pos_repeats: 2,
                    affine_enabled: true,
                };
                d_in = widths[s];
                spec
            })
            .collect();
        Self {
            variant: Variant::Full,
            embed_dim: 64,
            num_classes,
            bottleneck_r: 1,
            stages,
            head_dims: [512, 256],
        }
    }

    /// The lightweight model: embedding 32, stage widths 64/128/256/256,
    /// bottleneck factor 4, block repeats 1/1/2/2, k=24.
    ///
    /// The stage widths and repeats are chosen so the parameter total lands
    /// on the published ~0.68M budget; the original figure-only appendix
    /// does not enumerate them (see README for the residual mismatch note).
    #[must_use]
    pub fn elite(num_classes: usize) -> Self {
        let widths = [64, 128, 256, 256];
        let points = [512, 256, 128, 64];
        let repeats = [1, 1, 2, 2];
        let mut d_in = 32;
        let stages = (0..STAGE_COUNT)
            .map(|s| {
                let spec = StageSpec {
                    n_points_out: points[s],
                    k: 24,
                    d_in,
                    d_out: widths[s],
                    pre_repeats: repeats[s],
                    pos_repeats: repeats[s],
                    affine_enabled: true,
                };
                d_in = widths[s];
                spec
            })
            .collect();
        Self {
            variant: Variant::Elite,
            embed_dim: 32,
            num_classes,
            bottleneck_r: 4,
            stages,
            head_dims: [512, 256],
        }
    }

    /// Preset lookup by variant.
    #[must_use]
    pub fn preset(variant: Variant, num_classes: usize) -> Self {
        match variant {
            Variant::Full => Self::full(num_classes),
            Variant::Elite => Self::elite(num_classes),
        }
    }

    /// Divides every channel width (embedding, stage widths, classifier)
    /// by `divisor`, keeping the point plan; used for desk-scale models.
    #[must_use]
    pub fn scaled_dims(mut self, divisor: usize) -> Self {
        assert!(divisor > 0, "divisor must be positive");
        let shrink = |d: usize| (d / divisor).max(1);
        self.embed_dim = shrink(self.embed_dim);
        for s in &mut self.stages {
            s.d_in = shrink(s.d_in);
            s.d_out = shrink(s.d_out);
        }
        self.head_dims = [shrink(self.head_dims[0]), shrink(self.head_dims[1])];
        self
    }

    /// Rebuilds the point plan for clouds of `n` points by halving at each
    /// stage (`n/2, n/4, n/8, n/16`), clamping each stage's `k` to the
    /// points entering it.
    #[must_use]
    pub fn with_input_points(mut self, n: usize) -> Self {
        let mut current = n;
        for s in &mut self.stages {
            s.n_points_out = (current / 2).max(1);
            s.k = s.k.min(current).max(1);
            current = s.n_points_out;
        }
        self
    }

    /// Sets every stage's neighborhood size (clamped at validation time).
    #[must_use]
    pub fn with_k(mut self, k: usize) -> Self {
        for s in &mut self.stages {
            s.k = k;
        }
        self
    }

    /// Sets every stage's pre/pos block repeats uniformly; repeats of
    /// 1, 2, and 3 yield total depths 24, 40, and 56.
    #[must_use]
    pub fn with_uniform_repeats(mut self, pre: usize, pos: usize) -> Self {
        for s in &mut self.stages {
            s.pre_repeats = pre;
            s.pos_repeats = pos;
        }
        self
    }

    /// Enables or disables the geometric affine module in every stage.
    #[must_use]
    pub fn with_affine(mut self, enabled: bool) -> Self {
        for s in &mut self.stages {
            s.affine_enabled = enabled;
        }
        self
    }

    /// Checks structural consistency; every constructor of a `Model` calls
    /// this first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.stages.len() != STAGE_COUNT {
            return Err(ConfigError::StageCount {
                got: self.stages.len(),
            });
        }
        if self.num_classes < 2 {
            return Err(ConfigError::TooFewClasses {
                got: self.num_classes,
            });
        }
        if self.embed_dim == 0 {
            return Err(ConfigError::ZeroDimension { what: "embed_dim" });
        }
        if self.bottleneck_r == 0 {
            return Err(ConfigError::ZeroDimension {
                what: "bottleneck_r",
            });
        }
        if self.head_dims.iter().any(|&d| d == 0) {
            return Err(ConfigError::ZeroDimension { what: "head_dims" });
        }
        if self.embed_dim != self.stages[0].d_in {
            return Err(ConfigError::EmbedMismatch {
                embed_dim: self.embed_dim,
                first_d_in: self.stages[0].d_in,
            });
        }
        let mut prev_out = self.stages[0].d_in;
        let mut prev_points: Option<usize> = None;
        for (i, s) in self.stages.iter().enumerate() {
            if s.d_in == 0 || s.d_out == 0 {
                return Err(ConfigError::ZeroDimension { what: "stage width" });
            }
            if s.n_points_out == 0 {
                return Err(ConfigError::ZeroDimension {
                    what: "stage point count",
                });
            }
            if s.k == 0 {
                return Err(ConfigError::ZeroDimension { what: "stage k" });
            }
            if i > 0 && s.d_in != prev_out {
                return Err(ConfigError::ChannelChain {
                    stage: i,
                    expected: prev_out,
                    got: s.d_in,
                });
            }
            if s.d_out % self.bottleneck_r != 0 {
                return Err(ConfigError::WidthNotDivisible {
                    stage: i,
                    width: s.d_out,
                    r: self.bottleneck_r,
                });
            }
            if let Some(pp) = prev_points {
                if s.n_points_out > pp {
                    return Err(ConfigError::PointPlanGrows { stage: i });
                }
                // Stage i>0 samples and searches within the previous
                // stage's output cloud, whose size is known here.
                if s.k > pp {
                    return Err(ConfigError::NeighborsExceedPoints {
                        stage: i,
                        k: s.k,
                        available: pp,
                    });
                }
            }
            prev_out = s.d_out;
            prev_points = Some(s.n_points_out);
        }
        Ok(())
    }

    /// Closed-form count of learnable (weighted) layers:
    /// `1 + sum over stages of (1 + 2*pre + 2*pos) + 3` — the embedding FC,
    /// then per stage the channel-lift FC plus two FCs per residual block,
    /// then the three classifier FCs.
    #[must_use]
    pub fn count_layers(&self) -> usize {
        1 + self
            .stages
            .iter()
            .map(|s| 1 + 2 * s.pre_repeats + 2 * s.pos_repeats)
            .sum::<usize>()
            + 3
    }

    /// Width of the final stage's features (input width of the classifier).
    #[must_use]
    pub fn last_width(&self) -> usize {
        self.stages.last().map(|s| s.d_out).unwrap_or(self.embed_dim)
    }

    /// The minimum cloud size this configuration can classify: the first
    /// stage must sample `n_points_out` centroids from the cloud and search
    /// `k` neighbors in it.
    #[must_use]
    pub fn min_points(&self) -> usize {
        self.stages
            .first()
            .map(|s| s.n_points_out.max(s.k))
            .unwrap_or(1)
    }
}
