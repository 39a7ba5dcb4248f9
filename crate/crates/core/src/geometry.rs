//! Point-cloud sampling, neighbor search, grouping, normalization, and
//! augmentation.
//!
//! These kernels are deterministic pure functions: farthest-point sampling
//! and k-nearest-neighbor search depend only on the coordinates, the seed
//! index, and the documented tie-breaking rule (lowest index). Distances are
//! squared Euclidean throughout — monotone-equivalent to Euclidean and free
//! of square roots.

use crate::autodiff::{Graph, OpError, Var};
use crate::rng::Xoshiro256StarStar;
use crate::tensor::Tensor;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Errors from geometry kernels and augmentation configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GeomError {
    /// An operation received a cloud with zero points.
    EmptyCloud,
    /// Farthest-point sampling asked for zero points or more than exist.
    SampleCountOutOfRange {
        /// Number of points requested.
        requested: usize,
        /// Number of points available.
        available: usize,
    },
    /// A seed or query index referred past the end of the cloud.
    IndexOutOfRange {
        /// Offending index.
        index: usize,
        /// Number of points in the cloud.
        points: usize,
    },
    /// Neighbor search asked for zero neighbors or more than exist.
    NeighborCountOutOfRange {
        /// Requested neighborhood size.
        k: usize,
        /// Number of points available.
        points: usize,
    },
    /// An augmentation configuration failed validation.
    InvalidAugment {
        /// What was wrong.
        reason: &'static str,
    },
}

impl fmt::Display for GeomError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeomError::EmptyCloud => write!(f, "point cloud is empty"),
            GeomError::SampleCountOutOfRange {
                requested,
                available,
            } => write!(f, "cannot sample {requested} points from {available}"),
            GeomError::IndexOutOfRange { index, points } => {
                write!(f, "point index {index} out of range for {points} points")
            }
            GeomError::NeighborCountOutOfRange { k, points } => {
                write!(f, "cannot take {k} neighbors from {points} points")
            }
            GeomError::InvalidAugment { reason } => {
                write!(f, "invalid augmentation config: {reason}")
            }
        }
    }
}

impl core::error::Error for GeomError {}

/// A point cloud: coordinates, optional per-point features, optional label.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    /// `N x 3` coordinates in unitless model space.
    pub coords: Vec<[f32; 3]>,
    /// Optional `N x d` per-point features.
    pub features: Option<Tensor>,
    /// Optional class index.
    pub label: Option<u32>,
}

impl PointCloud {
    /// Cloud from bare coordinates, no features or label.
    #[must_use]
    pub fn from_coords(coords: Vec<[f32; 3]>) -> Self {
        Self {
            coords,
            features: None,
            label: None,
        }
    }

    /// Number of points.
    #[must_use]
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    /// Whether the cloud has no points.
    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Coordinates flattened into an `[N, 3]` tensor.
    #[must_use]
    pub fn coords_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.coords.len() * 3);
        for p in &self.coords {
            data.extend_from_slice(p);
        }
        Tensor::from_vec(&[self.coords.len(), 3], data).expect("3 floats per point")
    }
}

/// Centroid indices plus the per-centroid neighbor index matrix produced by
/// sampling + kNN. Row `i` of `neighbors` holds `k` distinct indices sorted
/// by nondecreasing distance from centroid `i` (itself included).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grouping {
    /// Indices of the sampled centroids into the parent cloud.
    pub centroids: Vec<u32>,
    /// Neighborhood size.
    pub k: usize,
    /// Row-major `len(centroids) x k` neighbor index matrix.
    pub neighbors: Vec<u32>,
}

#[inline]
fn dist2(a: [f32; 3], b: [f32; 3]) -> f32 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Greedy max-min farthest-point sampling.
///
/// The first pick is `seed_idx`; every subsequent pick maximizes the minimum
/// squared distance to all points already selected, ties broken toward the
/// lowest index. Runs in `O(N·m)` with an incrementally maintained
/// min-distance array. An index is never selected twice, even on degenerate
/// clouds of duplicated points.
pub fn farthest_point_sample(
    coords: &[[f32; 3]],
    m: usize,
    seed_idx: usize,
) -> Result<Vec<u32>, GeomError> {
    let n = coords.len();
    if n == 0 {
        return Err(GeomError::EmptyCloud);
    }
    if m == 0 || m > n {
        return Err(GeomError::SampleCountOutOfRange {
            requested: m,
            available: n,
        });
    }
    if seed_idx >= n {
        return Err(GeomError::IndexOutOfRange {
            index: seed_idx,
            points: n,
        });
    }

    // min_d2[i] = squared distance from point i to the nearest selected
    // point; selected points are parked at -1 so they can never win argmax.
    const SELECTED: f32 = -1.0;
    let mut selection = Vec::with_capacity(m);
    let mut min_d2 = vec![0.0f32; n];
    let seed = coords[seed_idx];
    for (i, &p) in coords.iter().enumerate() {
        min_d2[i] = dist2(p, seed);
    }
    min_d2[seed_idx] = SELECTED;
    selection.push(seed_idx as u32);

    for _ in 1..m {
        let mut best = 0usize;
        let mut best_d = f32::NEG_INFINITY;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        selection.push(best as u32);
        let picked = coords[best];
        min_d2[best] = SELECTED;
        for (i, &p) in coords.iter().enumerate() {
            if min_d2[i] != SELECTED {
                let d = dist2(p, picked);
                if d < min_d2[i] {
                    min_d2[i] = d;
                }
            }
        }
    }
    Ok(selection)
}

/// Index of the point nearest the cloud centroid (ties toward the lowest
/// index); 0 for an empty cloud. Used as a geometry-derived FPS seed when
/// sampling must be invariant to input point order.
#[must_use]
pub fn geometric_seed(coords: &[[f32; 3]]) -> usize {
    if coords.is_empty() {
        return 0;
    }
    let mut centroid = [0.0f64; 3];
    for p in coords {
        centroid[0] += p[0] as f64;
        centroid[1] += p[1] as f64;
        centroid[2] += p[2] as f64;
    }
    let inv = 1.0 / coords.len() as f64;
    let c = [
        (centroid[0] * inv) as f32,
        (centroid[1] * inv) as f32,
        (centroid[2] * inv) as f32,
    ];
    let mut best = 0usize;
    let mut best_d = f32::INFINITY;
    for (i, &p) in coords.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Brute-force k-nearest-neighbor search with partial selection.
///
/// For each query index, returns the `k` indices with smallest squared
/// distance (the query itself included at distance 0), row-sorted by
/// nondecreasing distance, ties broken toward the lowest index. The result
/// is a row-major `queries.len() x k` matrix.
pub fn knn(coords: &[[f32; 3]], queries: &[u32], k: usize) -> Result<Vec<u32>, GeomError> {
    let n = coords.len();
    if n == 0 {
        return Err(GeomError::EmptyCloud);
    }
    if k == 0 || k > n {
        return Err(GeomError::NeighborCountOutOfRange { k, points: n });
    }
    if let Some(&bad) = queries.iter().find(|&&q| (q as usize) >= n) {
        return Err(GeomError::IndexOutOfRange {
            index: bad as usize,
            points: n,
        });
    }
    let mut out = Vec::with_capacity(queries.len() * k);
    let mut scratch: Vec<(f32, u32)> = Vec::with_capacity(n);
    for &q in queries {
        let qp = coords[q as usize];
        scratch.clear();
        scratch.extend(
            coords
                .iter()
                .enumerate()
                .map(|(i, &p)| (dist2(qp, p), i as u32)),
        );
        let cmp = |a: &(f32, u32), b: &(f32, u32)| {
            a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1))
        };
        // Partial selection: move the k smallest to the front, then order
        // just that prefix.
        if k < n {
            scratch.select_nth_unstable_by(k - 1, cmp);
        }
        scratch[..k].sort_unstable_by(cmp);
        out.extend(scratch[..k].iter().map(|&(_, i)| i));
    }
    Ok(out)
}

/// Samples `m` centroids by FPS and gathers each one's `k` nearest
/// neighbors; the standard grouping step of a stage.
pub fn group(
    coords: &[[f32; 3]],
    m: usize,
    k: usize,
    seed_idx: usize,
) -> Result<Grouping, GeomError> {
    let centroids = farthest_point_sample(coords, m, seed_idx)?;
    let neighbors = knn(coords, &centroids, k)?;
    Ok(Grouping {
        centroids,
        k,
        neighbors,
    })
}

/// Materializes grouped features on the autodiff graph:
/// `out[i, j, :] = features[grouping.neighbors[i, j], :]`. Gradients
/// scatter-add back through [`Graph::gather_rows`].
pub fn group_features(
    graph: &mut Graph,
    features: Var,
    grouping: &Grouping,
) -> Result<Var, OpError> {
    graph.gather_rows(
        features,
        &grouping.neighbors,
        &[grouping.centroids.len(), grouping.k],
    )
}

/// Translates the centroid to the origin and scales so the farthest point
/// sits at distance 1. A degenerate cloud (all points coincident) maps to
/// the origin with no scaling. Idempotent up to rounding.
pub fn unit_normalize(coords: &mut [[f32; 3]]) {
    if coords.is_empty() {
        return;
    }
    let mut centroid = [0.0f64; 3];
    for p in coords.iter() {
        centroid[0] += p[0] as f64;
        centroid[1] += p[1] as f64;
        centroid[2] += p[2] as f64;
    }
    let inv = 1.0 / coords.len() as f64;
    let c = [
        (centroid[0] * inv) as f32,
        (centroid[1] * inv) as f32,
        (centroid[2] * inv) as f32,
    ];
    let mut max_d2 = 0.0f32;
    for p in coords.iter_mut() {
        p[0] -= c[0];
        p[1] -= c[1];
        p[2] -= c[2];
        let d2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
        if d2 > max_d2 {
            max_d2 = d2;
        }
    }
    if max_d2 > 0.0 {
        let scale = 1.0 / crate::math::sqrt_f32(max_d2);
        for p in coords.iter_mut() {
            p[0] *= scale;
            p[1] *= scale;
            p[2] *= scale;
        }
    }
}

/// Random scale/shift augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugmentConfig {
    /// Lower bound of the per-axis scale factor (must be positive).
    pub scale_low: f64,
    /// Upper bound of the per-axis scale factor.
    pub scale_high: f64,
    /// Per-axis translation is drawn from `[-shift, +shift]`.
    pub shift: f64,
}

impl Default for AugmentConfig {
    /// The conventional point-cloud training augmentation: anisotropic
    /// scale in `[0.8, 1.25]` and shift within `±0.1`.
    fn default() -> Self {
        Self {
            scale_low: 0.8,
            scale_high: 1.25,
            shift: 0.1,
        }
    }
}

impl AugmentConfig {
    /// The identity augmentation (scale exactly 1, no shift).
    #[must_use]
    pub fn identity() -> Self {
        Self {
            scale_low: 1.0,
            scale_high: 1.0,
            shift: 0.0,
        }
    }

    /// Whether this configuration leaves every cloud unchanged.
    #[must_use]
    pub fn is_identity(&self) -> bool {
        self.scale_low == 1.0 && self.scale_high == 1.0 && self.shift == 0.0
    }

    /// Validates bounds: positive scales, ordered range, nonnegative shift.
    pub fn validate(&self) -> Result<(), GeomError> {
        if !(self.scale_low > 0.0) {
            return Err(GeomError::InvalidAugment {
                reason: "scale_low must be positive",
            });
        }
        if self.scale_high < self.scale_low {
            return Err(GeomError::InvalidAugment {
                reason: "scale_high must be >= scale_low",
            });
        }
        if !(self.shift >= 0.0) {
            return Err(GeomError::InvalidAugment {
                reason: "shift must be nonnegative",
            });
        }
        Ok(())
    }
}

/// Applies, in order: anisotropic per-axis scale drawn from
/// `[scale_low, scale_high]`, then per-axis translation drawn from
/// `[-shift, +shift]`.
///
/// Consumes exactly six uniform draws in the order
/// `sx, sy, sz, tx, ty, tz`, so a fixed seed reproduces bit-identical
/// output on every platform.
pub fn augment(
    coords: &mut [[f32; 3]],
    cfg: &AugmentConfig,
    rng: &mut Xoshiro256StarStar,
) -> Result<(), GeomError> {
    cfg.validate()?;
    let sx = rng.uniform_in(cfg.scale_low, cfg.scale_high) as f32;
    let sy = rng.uniform_in(cfg.scale_low, cfg.scale_high) as f32;
    let sz = rng.uniform_in(cfg.scale_low, cfg.scale_high) as f32;
    let tx = rng.uniform_in(-cfg.shift, cfg.shift) as f32;
    let ty = rng.uniform_in(-cfg.shift, cfg.shift) as f32;
    let tz = rng.uniform_in(-cfg.shift, cfg.shift) as f32;
    for p in coords.iter_mut() {
        p[0] = p[0] * sx + tx;
        p[1] = p[1] * sy + ty;
        p[2] = p[2] * sz + tz;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_cloud() -> Vec<[f32; 3]> {
        vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [3.0, 0.0, 0.0],
        ]
    }

    #[test]
    fn fps_on_colinear_points_picks_the_endpoints() {
        let sel = farthest_point_sample(&line_cloud(), 2, 0).unwrap();
        assert_eq!(sel, vec![0, 3]);
    }

    #[test]
    fn fps_exhaustive_selection_covers_every_index() {
        let sel = farthest_point_sample(&line_cloud(), 4, 1).unwrap();
        let mut sorted = sel.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fps_never_repeats_an_index_even_for_duplicate_points() {
        let coords = vec![[1.0, 2.0, 3.0]; 5];
        let sel = farthest_point_sample(&coords, 5, 2).unwrap();
        let mut sorted = sel.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        assert_eq!(sel[0], 2);
    }

    #[test]
    fn fps_validates_arguments() {
        let coords = line_cloud();
        assert_eq!(
            farthest_point_sample(&coords, 5, 0).unwrap_err(),
            GeomError::SampleCountOutOfRange { requested: 5, available: 4 }
        );
        assert_eq!(
            farthest_point_sample(&coords, 0, 0).unwrap_err(),
            GeomError::SampleCountOutOfRange { requested: 0, available: 4 }
        );
        assert_eq!(
            farthest_point_sample(&coords, 2, 4).unwrap_err(),
            GeomError::IndexOutOfRange { index: 4, points: 4 }
        );
        assert_eq!(
            farthest_point_sample(&[], 1, 0).unwrap_err(),
            GeomError::EmptyCloud
        );
    }

    #[test]
    fn knn_with_k_1_returns_each_query_itself() {
        let coords = line_cloud();
        let rows = knn(&coords, &[0, 2, 3], 1).unwrap();
        assert_eq!(rows, vec![0, 2, 3]);
    }

    #[test]
    fn knn_rows_are_distance_sorted_and_contain_the_query() {
        let coords = line_cloud();
        let rows = knn(&coords, &[1], 3).unwrap();
        // Distances from x=1: self 0, then x=0 and x=2 tie at 1 -> lowest
        // index first.
        assert_eq!(rows, vec![1, 0, 2]);
    }

    #[test]
    fn knn_validates_arguments() {
        let coords = line_cloud();
        assert_eq!(
            knn(&coords, &[0], 5).unwrap_err(),
            GeomError::NeighborCountOutOfRange { k: 5, points: 4 }
        );
        assert_eq!(
            knn(&coords, &[9], 2).unwrap_err(),
            GeomError::IndexOutOfRange { index: 9, points: 4 }
        );
    }

    #[test]
    fn geometric_seed_finds_the_central_point() {
        // Centroid of the line 0..3 is x=1.5; points 1 and 2 tie, lowest
        // index wins.
        assert_eq!(geometric_seed(&line_cloud()), 1);
    }

    #[test]
    fn unit_normalize_centers_and_scales() {
        let mut coords = vec![[5.0, 5.0, 5.0], [7.0, 5.0, 5.0], [5.0, 7.0, 5.0], [3.0, 5.0, 5.0]];
        unit_normalize(&mut coords);
        let mut centroid = [0.0f32; 3];
        let mut max_norm: f32 = 0.0;
        for p in &coords {
            centroid[0] += p[0];
            centroid[1] += p[1];
            centroid[2] += p[2];
            max_norm = max_norm.max((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
        }
        for c in centroid {
            assert!((c / coords.len() as f32).abs() < 1e-6);
        }
        assert!((max_norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn unit_normalize_is_idempotent() {
        let mut coords = vec![[0.3, -0.9, 2.4], [1.0, 0.1, -0.7], [-2.0, 0.4, 0.2]];
        unit_normalize(&mut coords);
        let once = coords.clone();
        unit_normalize(&mut coords);
        for (a, b) in once.iter().zip(&coords) {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn unit_normalize_maps_degenerate_cloud_to_origin() {
        let mut coords = vec![[4.0, -1.0, 2.0]; 3];
        unit_normalize(&mut coords);
        for p in &coords {
            assert_eq!(*p, [0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn augment_identity_config_is_identity() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(9);
        let orig = vec![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]];
        let mut coords = orig.clone();
        augment(&mut coords, &AugmentConfig::identity(), &mut rng).unwrap();
        assert_eq!(coords, orig);
    }

    #[test]
    fn augment_with_fixed_seed_is_reproducible() {
        let orig = vec![[0.1, -0.2, 0.9], [-0.4, 0.5, 0.6]];
        let mut a = orig.clone();
        let mut b = orig.clone();
        augment(&mut a, &AugmentConfig::default(), &mut Xoshiro256StarStar::seed_from_u64(4)).unwrap();
        augment(&mut b, &AugmentConfig::default(), &mut Xoshiro256StarStar::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, orig);
    }

    #[test]
    fn augment_rejects_bad_configs() {
        let bad = AugmentConfig {
            scale_low: 0.0,
            scale_high: 1.0,
            shift: 0.1,
        };
        assert!(matches!(
            bad.validate().unwrap_err(),
            GeomError::InvalidAugment { .. }
        ));
        let inverted = AugmentConfig {
            scale_low: 1.2,
            scale_high: 0.9,
            shift: 0.0,
        };
        assert!(inverted.validate().is_err());
    }

    #[test]
    fn augment_scale_mean_matches_the_distribution() {
        // Mean of U[0.8, 1.25] is 1.025; check the empirical per-axis mean
        // over 1000 draws to within 2%.
        let cfg = AugmentConfig::default();
        let mut rng = Xoshiro256StarStar::seed_from_u64(100);
        let mut sum = [0.0f64; 3];
        let trials = 1000;
        for _ in 0..trials {
            let mut coords = vec![[1.0, 1.0, 1.0]];
            let shiftless = AugmentConfig { shift: 0.0, ..cfg };
            augment(&mut coords, &shiftless, &mut rng).unwrap();
            for i in 0..3 {
                sum[i] += coords[0][i] as f64;
            }
        }
        for s in sum {
            let mean = s / trials as f64;
            assert!((mean - 1.025).abs() / 1.025 < 0.02, "mean {mean}");
        }
    }

    #[test]
    fn group_assembles_fps_and_knn() {
        let coords = line_cloud();
        let g = group(&coords, 2, 2, 0).unwrap();
        assert_eq!(g.centroids, vec![0, 3]);
        assert_eq!(g.k, 2);
        // Row 0: self then x=1; row 1: self then x=2.
        assert_eq!(g.neighbors, vec![0, 1, 3, 2]);
    }
}
