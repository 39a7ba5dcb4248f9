//! Procedural point-cloud datasets and batching.
//!
//! Six parametric surfaces provide a desk-scale classification task that is
//! generated in milliseconds, needs no downloads, and is bit-reproducible
//! from a seed. Each sample is drawn uniformly on its surface, spun by a
//! random rotation about the z axis (so raw coordinates alone don't betray
//! the class), perturbed with isotropic Gaussian noise, and normalized into
//! the unit sphere.
//!
//! # Reproducibility
//!
//! One RNG seeded from [`SynthSpec::seed`] drives everything, consumed in a
//! fixed order per sample: surface draws point by point, then one rotation
//! angle, then (only when `noise_sigma > 0`) three Gaussian draws per point.
//! Samples are generated class-major in the order of [`SynthSpec::classes`].

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::geometry::{unit_normalize, PointCloud};
use crate::math;
use crate::rng::Xoshiro256StarStar;

/// The parametric surfaces available to the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeClass {
    /// Unit sphere surface.
    Sphere,
    /// Cube surface, side 2.
    Cube,
    /// Closed cylinder, radius 1, height 2.
    Cylinder,
    /// Torus, major radius 1, minor radius 0.4.
    Torus,
    /// Closed cone, base radius 1, height 2.
    Cone,
    /// Flat square patch, side 2.
    Plane,
}

/// All classes in canonical order.
pub const ALL_CLASSES: [ShapeClass; 6] = [
    ShapeClass::Sphere,
    ShapeClass::Cube,
    ShapeClass::Cylinder,
    ShapeClass::Torus,
    ShapeClass::Cone,
    ShapeClass::Plane,
];

impl ShapeClass {
    /// Lower-case class name used in files and on the command line.
    #[must_use]
    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Torus => "torus",
            ShapeClass::Cone => "cone",
            ShapeClass::Plane => "plane",
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeClass {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        ALL_CLASSES
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| DataError::UnknownClass {
                name: String::from(s),
            })
    }
}

/// Dataset and generation failures.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataError {
    /// A class name did not match any known surface.
    UnknownClass {
        /// The offending name.
        name: String,
    },
    /// A generation parameter violated its bound.
    InvalidSpec {
        /// What was wrong.
        reason: &'static str,
    },
    /// A sample's label is outside the class-name table.
    LabelOutOfRange {
        /// The offending label.
        label: u32,
        /// Number of classes in the table.
        classes: usize,
    },
    /// A sample carries no label.
    MissingLabel {
        /// Index of the sample.
        sample: usize,
    },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::UnknownClass { name } => write!(f, "unknown class name {name:?}"),
            DataError::InvalidSpec { reason } => write!(f, "invalid generation spec: {reason}"),
            DataError::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            DataError::MissingLabel { sample } => write!(f, "sample {sample} has no label"),
        }
    }
}

impl core::error::Error for DataError {}

/// Recipe for a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    /// Surfaces to include; label `i` is `classes[i]`.
    pub classes: Vec<ShapeClass>,
    /// Points per generated cloud (≥ 8).
    pub points_per_cloud: usize,
    /// Samples generated for every class.
    pub samples_per_class: usize,
    /// Standard deviation of the isotropic coordinate noise (≥ 0), applied
    /// before normalization.
    pub noise_sigma: f32,
    /// RNG seed; equal specs yield bit-identical datasets.
    pub seed: u64,
}

impl SynthSpec {
    /// Checks the documented bounds.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.classes.is_empty() {
            return Err(DataError::InvalidSpec {
                reason: "at least one class required",
            });
        }
        if self.points_per_cloud < 8 {
            return Err(DataError::InvalidSpec {
                reason: "points_per_cloud must be at least 8",
            });
        }
        if self.samples_per_class == 0 {
            return Err(DataError::InvalidSpec {
                reason: "samples_per_class must be positive",
            });
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(DataError::InvalidSpec {
                reason: "noise_sigma must be nonnegative",
            });
        }
        Ok(())
    }
}

/// Labeled point clouds plus the label-index-to-name table.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// The samples; each carries a label indexing `class_names`.
    pub samples: Vec<PointCloud>,
    /// Class names, indexed by label.
    pub class_names: Vec<String>,
}

impl Dataset {
    /// Number of samples.
    #[must_use]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Whether the dataset holds no samples.
    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Verifies that every sample carries a label inside the name table.
    pub fn validate(&self) -> Result<(), DataError> {
        for (i, s) in self.samples.iter().enumerate() {
            match s.label {
                None => return Err(DataError::MissingLabel { sample: i }),
                Some(l) if (l as usize) >= self.class_names.len() => {
                    return Err(DataError::LabelOutOfRange {
                        label: l,
                        classes: self.class_names.len(),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Generates a dataset per `spec`: `samples_per_class` clouds per class, in
/// class order, each surface-sampled, z-rotated, noised, and normalized.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let mut rng = Xoshiro256StarStar::seed_from_u64(spec.seed);
    let mut samples = Vec::with_capacity(spec.classes.len() * spec.samples_per_class);
    for (label, &class) in spec.classes.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let mut coords = sample_surface(class, spec.points_per_cloud, &mut rng);
            rotate_z(&mut coords, rng.uniform_in(0.0, core::f64::consts::TAU));
            if spec.noise_sigma > 0.0 {
                for p in &mut coords {
                    for c in p.iter_mut() {
                        *c += spec.noise_sigma * rng.standard_normal() as f32;
                    }
                }
            }
            unit_normalize(&mut coords);
            let mut cloud = PointCloud::from_coords(coords);
            cloud.label = Some(label as u32);
            samples.push(cloud);
        }
    }
    Ok(Dataset {
        samples,
        class_names: spec.classes.iter().map(|c| String::from(c.name())).collect(),
    })
}

/// Splits `0..n` into `ceil(n / batch_size)` index batches covering every
/// index exactly once; the last batch may be short. With `shuffle`, the
/// order is a Fisher-Yates permutation drawn from `rng`; otherwise it is
/// ascending.
///
/// `batch_size` must be positive (caller contract).
pub fn batch_iter(
    n: usize,
    batch_size: usize,
    shuffle: bool,
    rng: &mut Xoshiro256StarStar,
) -> Vec<Vec<u32>> {
    assert!(batch_size > 0, "batch_size must be positive");
    let mut order: Vec<u32> = (0..n as u32).collect();
    if shuffle {
        rng.shuffle(&mut order);
    }
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

fn rotate_z(coords: &mut [[f32; 3]], angle: f64) {
    let (s, c) = (math::sin_f64(angle) as f32, math::cos_f64(angle) as f32);
    for p in coords {
        let (x, y) = (p[0], p[1]);
        p[0] = c * x - s * y;
        p[1] = s * x + c * y;
    }
}

fn sample_surface(class: ShapeClass, n: usize, rng: &mut Xoshiro256StarStar) -> Vec<[f32; 3]> {
    match class {
        ShapeClass::Sphere => sphere(n, rng),
        ShapeClass::Cube => cube(n, rng),
        ShapeClass::Cylinder => cylinder(n, rng),
        ShapeClass::Torus => torus(n, rng),
        ShapeClass::Cone => cone(n, rng),
        ShapeClass::Plane => plane(n, rng),
    }
}

/// Uniform points on the unit sphere, generated as antithetic pairs
/// `(p, -p)` so the sample centroid is exactly zero: normalization then
/// leaves the points on the (rescaled) sphere instead of shifting them off
/// it. Draws two uniforms per pair. An odd final point, if any, is a pole.
fn sphere(n: usize, rng: &mut Xoshiro256StarStar) -> Vec<[f32; 3]> {
    let mut out = Vec::with_capacity(n);
    while out.len() + 2 <= n {
        let z = rng.uniform_in(-1.0, 1.0);
        let phi = rng.uniform_in(0.0, core::f64::consts::TAU);
        let r = math::sqrt_f64((1.0 - z * z).max(0.0));
        let p = [
            (r * math::cos_f64(phi)) as f32,
            (r * math::sin_f64(phi)) as f32,
            z as f32,
        ];
        out.push(p);
        out.push([-p[0], -p[1], -p[2]]);
    }
    if out.len() < n {
        out.push([0.0, 0.0, 1.0]);
    }
    out
}

/// Uniform points on the surface of the axis-aligned cube `[-1, 1]^3`
/// (six equal-area faces). Three draws per point.
fn cube(n: usize, rng: &mut Xoshiro256StarStar) -> Vec<[f32; 3]> {
    (0..n)
        .map(|_| {
            let face = rng.rand_below(6);
            let u = rng.uniform_in(-1.0, 1.0) as f32;
            let v = rng.uniform_in(-1.0, 1.0) as f32;
            match face {
                0 => [1.0, u, v],
                1 => [-1.0, u, v],
                2 => [u, 1.0, v],
                3 => [u, -1.0, v],
                4 => [u, v, 1.0],
                _ => [u, v, -1.0],
            }
        })
        .collect()
}

/// Uniform points on a closed cylinder: radius 1, `z` in `[-1, 1]`.
/// Area-weighted between the lateral wall (probability 2/3) and the two
/// caps; three draws per point.
fn cylinder(n: usize, rng: &mut Xoshiro256StarStar) -> Vec<[f32; 3]> {
    (0..n)
        .map(|_| {
            let region = rng.uniform_f64();
            let phi = rng.uniform_in(0.0, core::f64::consts::TAU);
            if region < 2.0 / 3.0 {
                let z = rng.uniform_in(-1.0, 1.0);
                [math::cos_f64(phi) as f32, math::sin_f64(phi) as f32, z as f32]
            } else {
                let r = math::sqrt_f64(rng.uniform_f64());
                let z = if region < 5.0 / 6.0 { 1.0 } else { -1.0 };
                [
                    (r * math::cos_f64(phi)) as f32,
                    (r * math::sin_f64(phi)) as f32,
                    z,
                ]
            }
        })
        .collect()
}

/// Uniform points on a torus (major radius 1, minor radius 0.4) by
/// rejection on the tube angle, whose surface density is proportional to
/// `R + r cos(psi)`. At least two draws per point, more on rejection.
fn torus(n: usize, rng: &mut Xoshiro256StarStar) -> Vec<[f32; 3]> {
    const MAJOR: f64 = 1.0;
    const MINOR: f64 = 0.4;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let psi = rng.uniform_in(0.0, core::f64::consts::TAU);
        let accept = rng.uniform_f64();
        if accept * (MAJOR + MINOR) > MAJOR + MINOR * math::cos_f64(psi) {
            continue;
        }
        let theta = rng.uniform_in(0.0, core::f64::consts::TAU);
        let ring = MAJOR + MINOR * math::cos_f64(psi);
        out.push([
            (ring * math::cos_f64(theta)) as f32,
            (ring * math::sin_f64(theta)) as f32,
            (MINOR * math::sin_f64(psi)) as f32,
        ]);
    }
    out
}

/// Uniform points on a closed cone: apex `(0,0,1)`, unit-radius base at
/// `z = -1`. Area-weighted between the slanted wall and the base disk;
/// three draws per point.
fn cone(n: usize, rng: &mut Xoshiro256StarStar) -> Vec<[f32; 3]> {
    // Lateral area pi*r*sqrt(r^2+h^2) with r=1, h=2; base area pi.
    let lateral = math::sqrt_f64(5.0);
    let p_lateral = lateral / (lateral + 1.0);
    (0..n)
        .map(|_| {
            let region = rng.uniform_f64();
            let phi = rng.uniform_in(0.0, core::f64::consts::TAU);
            let t = math::sqrt_f64(rng.uniform_f64());
            if region < p_lateral {
                // t is the normalized distance from the apex along the wall.
                let radius = t;
                let z = 1.0 - 2.0 * t;
                [
                    (radius * math::cos_f64(phi)) as f32,
                    (radius * math::sin_f64(phi)) as f32,
                    z as f32,
                ]
            } else {
                [
                    (t * math::cos_f64(phi)) as f32,
                    (t * math::sin_f64(phi)) as f32,
                    -1.0,
                ]
            }
        })
        .collect()
}

/// Uniform points on the square patch `z = 0`, sides 2. Two draws per point.
fn plane(n: usize, rng: &mut Xoshiro256StarStar) -> Vec<[f32; 3]> {
    (0..n)
        .map(|_| {
            let u = rng.uniform_in(-1.0, 1.0) as f32;
            let v = rng.uniform_in(-1.0, 1.0) as f32;
            [u, v, 0.0]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn spec(classes: Vec<ShapeClass>, noise: f32) -> SynthSpec {
        SynthSpec {
            classes,
            points_per_cloud: 64,
            samples_per_class: 10,
            noise_sigma: noise,
            seed: 11,
        }
    }

    #[test]
    fn class_names_round_trip() {
        for c in ALL_CLASSES {
            assert_eq!(ShapeClass::from_str(c.name()).unwrap(), c);
        }
        assert_eq!(
            ShapeClass::from_str("pyramid").unwrap_err(),
            DataError::UnknownClass {
                name: "pyramid".to_string()
            }
        );
    }

    #[test]
    fn noiseless_sphere_stays_unit_after_normalization() {
        let ds = generate_synthetic(&spec(vec![ShapeClass::Sphere], 0.0)).unwrap();
        for s in &ds.samples {
            for p in &s.coords {
                let norm = (p[0] as f64).hypot(p[1] as f64).hypot(p[2] as f64);
                assert!((norm - 1.0).abs() < 1e-6, "norm {norm}");
            }
        }
    }

    #[test]
    fn counts_and_labels_are_balanced() {
        let four = vec![
            ShapeClass::Sphere,
            ShapeClass::Cube,
            ShapeClass::Cylinder,
            ShapeClass::Torus,
        ];
        let ds = generate_synthetic(&spec(four, 0.01)).unwrap();
        assert_eq!(ds.len(), 40);
        ds.validate().unwrap();
        let mut hist = [0usize; 4];
        for s in &ds.samples {
            hist[s.label.unwrap() as usize] += 1;
            assert_eq!(s.len(), 64);
        }
        assert_eq!(hist, [10, 10, 10, 10]);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let s = spec(vec![ShapeClass::Torus, ShapeClass::Cone], 0.02);
        let a = generate_synthetic(&s).unwrap();
        let b = generate_synthetic(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = spec(vec![ShapeClass::Sphere], 0.0);
        s.points_per_cloud = 4;
        assert!(matches!(
            generate_synthetic(&s).unwrap_err(),
            DataError::InvalidSpec { .. }
        ));
        let mut s = spec(vec![ShapeClass::Sphere], 0.0);
        s.noise_sigma = -0.5;
        assert!(matches!(
            generate_synthetic(&s).unwrap_err(),
            DataError::InvalidSpec { .. }
        ));
        let s = spec(vec![], 0.0);
        assert!(matches!(
            generate_synthetic(&s).unwrap_err(),
            DataError::InvalidSpec { .. }
        ));
    }

    #[test]
    fn batches_partition_the_index_range() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(5);
        let batches = batch_iter(10, 4, false, &mut rng);
        let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let flat: Vec<u32> = batches.concat();
        assert_eq!(flat, (0..10).collect::<Vec<u32>>());

        let shuffled = batch_iter(10, 4, true, &mut rng);
        let mut flat: Vec<u32> = shuffled.concat();
        flat.sort_unstable();
        assert_eq!(flat, (0..10).collect::<Vec<u32>>());

        let mut r1 = Xoshiro256StarStar::seed_from_u64(99);
        let mut r2 = Xoshiro256StarStar::seed_from_u64(99);
        assert_eq!(batch_iter(23, 5, true, &mut r1), batch_iter(23, 5, true, &mut r2));
    }
}
