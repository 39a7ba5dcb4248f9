//! Central differences with automatic step refinement.
//!
//! A loss routed through rectifiers and max pools is only piecewise smooth:
//! along any single coordinate there are points where a rectifier input or a
//! pool winner flips, and a central difference whose interval straddles such
//! a boundary measures a blend of two different slopes rather than the
//! derivative. For an early-layer weight that feeds thousands of downstream
//! units, the nearest boundary often sits within 1e-4 of the starting point,
//! so no single fixed step is trustworthy.
//!
//! The remedy here is standard: walk a ladder of shrinking steps and accept
//! an estimate only once two adjacent rungs agree. A boundary inside the
//! larger interval makes adjacent rungs disagree (its contribution scales
//! with the step), while on a smooth stretch both rungs carry only curvature
//! and round-off terms and match closely. A point sitting essentially on a
//! boundary never stabilizes and yields `None` — there is no meaningful
//! two-sided derivative to compare against there.

/// Step ladder for [`central_difference_refined`]. The top rung sits below
/// typical boundary spacing (so most walks terminate at the first pair); the
/// bottom rung keeps double-precision round-off in the evaluated function
/// well below the agreement tolerance.
pub const STEP_LADDER: [f64; 4] = [3e-6, 1e-6, 3e-7, 1e-7];

/// Relative agreement required between adjacent rungs before an estimate is
/// accepted.
pub const AGREEMENT_TOL: f64 = 2e-4;

/// Estimates the derivative of `f` at displacement zero by central
/// differences, shrinking the step until two adjacent rungs of
/// [`STEP_LADDER`] agree to [`AGREEMENT_TOL`] (relative, floored at one).
/// Returns the mean of the first agreeing pair, or `None` if no pair
/// stabilizes (the point sits on a selection boundary).
pub fn central_difference_refined(mut f: impl FnMut(f64) -> f64) -> Option<f64> {
    let mut prev: Option<f64> = None;
    for &h in &STEP_LADDER {
        let est = (f(h) - f(-h)) / (2.0 * h);
        if let Some(p) = prev {
            if (p - est).abs() <= AGREEMENT_TOL * est.abs().max(1.0) {
                return Some(0.5 * (p + est));
            }
        }
        prev = Some(est);
    }
    None
}
