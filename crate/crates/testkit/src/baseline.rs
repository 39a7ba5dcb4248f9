//! A deliberately crude classifier used to calibrate accuracy thresholds:
//! nearest class mean over flattened raw coordinates. Any pipeline that
//! claims to learn shape structure should beat it comfortably.

use pointmlp_core::data::Dataset;

fn flatten(coords: &[[f32; 3]]) -> Vec<f64> {
    let mut v = Vec::with_capacity(coords.len() * 3);
    for p in coords {
        v.extend_from_slice(&[p[0] as f64, p[1] as f64, p[2] as f64]);
    }
    v
}

/// Fits per-class mean vectors of flattened coordinates on `train`, then
/// reports overall accuracy of nearest-mean classification on `test`. All
/// clouds must share one point count and carry labels; panics otherwise.
#[must_use]
pub fn nearest_centroid_accuracy(train: &Dataset, test: &Dataset) -> f64 {
    assert!(!train.samples.is_empty() && !test.samples.is_empty());
    let num_classes = train.class_names.len();
    let dim = train.samples[0].coords.len() * 3;

    let mut sums = vec![vec![0.0f64; dim]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for s in &train.samples {
        let label = s.label.expect("training sample without a label") as usize;
        let v = flatten(&s.coords);
        assert_eq!(v.len(), dim, "clouds must share one point count");
        for (acc, x) in sums[label].iter_mut().zip(&v) {
            *acc += x;
        }
        counts[label] += 1;
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| {
            assert!(c > 0, "every class needs at least one training sample");
            s.into_iter().map(|x| x / c as f64).collect()
        })
        .collect();

    let mut correct = 0usize;
    for s in &test.samples {
        let label = s.label.expect("test sample without a label");
        let v = flatten(&s.coords);
        assert_eq!(v.len(), dim, "clouds must share one point count");
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (c, mean) in means.iter().enumerate() {
            let d: f64 = v.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        if best as u32 == label {
            correct += 1;
        }
    }
    correct as f64 / test.samples.len() as f64
}
