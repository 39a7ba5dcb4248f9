//! Independent reference implementations used as test oracles for the main
//! crates. Everything here favors obviousness over speed: double-precision
//! arithmetic, two-pass statistics, quadratic searches, and straight-line
//! compositions with no module boundaries. Helpers panic on shape misuse —
//! this crate is test support, not production code.

pub mod baseline;
pub mod brute;
pub mod fd;
pub mod modelgrad;
pub mod opgrad;
pub mod params;
pub mod reference;
pub mod replay;

/// Largest absolute difference between a single-precision result and its
/// double-precision oracle. Panics if the lengths differ.
#[must_use]
pub fn max_abs_diff(actual: &[f32], oracle: &[f64]) -> f64 {
    assert_eq!(actual.len(), oracle.len(), "length mismatch");
    actual
        .iter()
        .zip(oracle)
        .map(|(&a, &o)| (a as f64 - o).abs())
        .fold(0.0, f64::max)
}
