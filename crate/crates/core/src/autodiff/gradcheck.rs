//! Finite-difference gradient checking.
//!
//! The harness perturbs one coordinate at a time of a buffer and compares a
//! caller-supplied analytic gradient against central differences of a
//! caller-supplied scalar function. The function is expected to be an
//! independent high-precision replay of the computation under test (an `f64`
//! reference), so the finite-difference noise floor stays far below the
//! comparison tolerance.

use alloc::vec::Vec;

/// Default central-difference step; a good compromise between truncation
/// error (`O(h^2)`) and `f32` input-rounding error for unit-scale data.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Outcome of a gradient check over a set of coordinates.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    /// Largest relative error over the checked coordinates:
    /// `|analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_err: f64,
    /// Coordinate where the largest error occurred.
    pub worst_index: usize,
    /// Analytic gradient at that coordinate.
    pub analytic_at_worst: f64,
    /// Central-difference estimate at that coordinate.
    pub numeric_at_worst: f64,
}

/// Compares `analytic` against central differences of `f` at `x0` over the
/// given coordinates.
///
/// Perturbed inputs are rounded to `f32` before evaluation (that is the
/// precision the engine actually sees); the difference quotient divides by
/// the realized step `x_plus - x_minus` to absorb that rounding. Relative
/// error uses `max(1, |numeric|)` in the denominator so near-zero gradients
/// are compared absolutely.
pub fn check_gradient<F>(
    mut f: F,
    x0: &[f32],
    analytic: &[f32],
    coords: impl IntoIterator<Item = usize>,
    h: f64,
) -> GradCheckReport
where
    F: FnMut(&[f32]) -> f64,
{
    assert_eq!(
        x0.len(),
        analytic.len(),
        "analytic gradient must match input length"
    );
    let mut buf: Vec<f32> = x0.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    for i in coords {
        let orig = buf[i];
        let x_plus = (orig as f64 + h) as f32;
        let x_minus = (orig as f64 - h) as f32;
        buf[i] = x_plus;
        let f_plus = f(&buf);
        buf[i] = x_minus;
        let f_minus = f(&buf);
        buf[i] = orig;
        let numeric = (f_plus - f_minus) / (x_plus as f64 - x_minus as f64);
        let analytic_i = analytic[i] as f64;
        let rel = (analytic_i - numeric).abs() / numeric.abs().max(1.0);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = i;
            report.analytic_at_worst = analytic_i;
            report.numeric_at_worst = numeric;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_verifies() {
        // f(x) = sum(x^2), df/dx_i = 2 x_i.
        let x0 = [0.5f32, -1.25, 2.0];
        let analytic = [1.0f32, -2.5, 4.0];
        let report = check_gradient(
            |x| x.iter().map(|&v| (v as f64) * (v as f64)).sum(),
            &x0,
            &analytic,
            0..3,
            DEFAULT_STEP,
        );
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let x0 = [1.0f32];
        let wrong = [3.0f32]; // true gradient is 2.0
        let report = check_gradient(
            |x| (x[0] as f64) * (x[0] as f64),
            &x0,
            &wrong,
            0..1,
            DEFAULT_STEP,
        );
        assert!(report.max_rel_err > 0.4, "{report:?}");
        assert_eq!(report.worst_index, 0);
    }
}
