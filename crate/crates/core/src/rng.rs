//! Deterministic pseudo-random number generation.
//!
//! Every stochastic component in this workspace (dataset synthesis,
//! augmentation, parameter initialization, batch shuffling, dropout) draws
//! from [`Xoshiro256StarStar`], seeded through SplitMix64. The generator is
//! pure integer arithmetic, so identical seeds produce identical streams on
//! every platform; float conversions below are exact dyadic operations and
//! inherit that reproducibility.
//!
//! # Seeding policy
//!
//! A 64-bit seed is expanded by four successive SplitMix64 outputs into the
//! 256-bit xoshiro state. This matches the expansion recommended by the
//! xoshiro authors and never yields the all-zero state.
//!
//! # Draw order
//!
//! Each helper consumes a documented number of raw `next_u64` draws:
//!
//! * [`uniform_f64`](Xoshiro256StarStar::uniform_f64),
//!   [`uniform_in`](Xoshiro256StarStar::uniform_in): exactly one draw.
//! * [`rand_below`](Xoshiro256StarStar::rand_below): one draw, plus further
//!   draws only in the rejection case (probability < 2⁻⁶³ per retry for the
//!   bounds used here).
//! * [`standard_normal`](Xoshiro256StarStar::standard_normal): two draws on
//!   the first call of a pair (Box–Muller produces two values; the second is
//!   cached), zero draws when returning the cached value.
//! * [`shuffle`](Xoshiro256StarStar::shuffle): one `rand_below` per element
//!   from the last index down to index 1 (Fisher–Yates).
//!
//! # Reference outputs
//!
//! First raw outputs, frozen as regression vectors (also checked against an
//! independent implementation):
//!
//! | seed | first three `next_u64` values |
//! |------|-------------------------------|
//! | 0    | `0x99ec5f36cb75f2b4`, `0xbf6e1f784956452a`, `0x1a5f849d4933e6e0` |
//! | 42   | `0x15780b2e0c2ec716`, `0x6104d9866d113a7e`, `0xae17533239e499a1` |

use crate::math;

/// Multiplicative-scrambled xoshiro256 generator with SplitMix64 seeding.
///
/// Not cryptographically secure; intended for reproducible simulation.
#[derive(Clone, Debug)]
pub struct Xoshiro256StarStar {
    state: [u64; 4],
    /// Second Box–Muller output waiting to be returned by `standard_normal`.
    cached_normal: Option<f64>,
}

/// One step of the SplitMix64 sequence; advances `state` and returns the
/// scrambled output.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Xoshiro256StarStar {
    /// Creates a generator from a 64-bit seed via SplitMix64 expansion.
    #[must_use]
    pub fn seed_from_u64(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Self {
            state,
            cached_normal: None,
        }
    }

    /// Returns the next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform draw in `[0, 1)` using the top 53 bits (exact conversion).
    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `(0, 1]`; used where a logarithm of the draw is taken.
    fn uniform_open_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`. `lo > hi` is a caller bug and panics.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        assert!(lo <= hi, "uniform_in: empty interval [{lo}, {hi})");
        lo + (hi - lo) * self.uniform_f64()
    }

    /// Unbiased uniform draw in `[0, n)` by rejection. Panics if `n == 0`.
    pub fn rand_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "rand_below: n must be positive");
        // Reject draws below the smallest multiple-of-n threshold so every
        // residue class is equally likely.
        let threshold = n.wrapping_neg() % n;
        loop {
            let r = self.next_u64();
            if r >= threshold {
                return r % n;
            }
        }
    }

    /// Standard normal draw via Box–Muller (the paired value is cached).
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        let u1 = self.uniform_open_f64();
        let u2 = self.uniform_f64();
        let r = math::sqrt_f64(-2.0 * math::ln_f64(u1));
        let angle = 2.0 * core::f64::consts::PI * u2;
        self.cached_normal = Some(r * math::sin_f64(angle));
        r * math::cos_f64(angle)
    }

    /// In-place Fisher–Yates shuffle (uniform over permutations).
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.rand_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    /// First ten outputs for seed 0, frozen from an independent
    /// implementation of SplitMix64 seeding + xoshiro256**.
    const SEED0_VECTOR: [u64; 10] = [
        0x99ec5f36cb75f2b4,
        0xbf6e1f784956452a,
        0x1a5f849d4933e6e0,
        0x6aa594f1262d2d2c,
        0xbba5ad4a1f842e59,
        0xffef8375d9ebcaca,
        0x6c160deed2f54c98,
        0x8920ad648fc30a3f,
        0xdb032c0ba7539731,
        0xeb3a475a3e749a3d,
    ];

    /// First ten outputs for seed 42, same provenance as `SEED0_VECTOR`.
    const SEED42_VECTOR: [u64; 10] = [
        0x15780b2e0c2ec716,
        0x6104d9866d113a7e,
        0xae17533239e499a1,
        0xecb8ad4703b360a1,
        0xfde6dc7fe2ec5e64,
        0xc50da53101795238,
        0xb82154855a65ddb2,
        0xd99a2743ebe60087,
        0xc2e96e726e97647e,
        0x9556615f775fbc3d,
    ];

    #[test]
    fn matches_reference_vector_seed_0() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(0);
        for &expected in &SEED0_VECTOR {
            assert_eq!(rng.next_u64(), expected);
        }
    }

    #[test]
    fn matches_reference_vector_seed_42() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(42);
        for &expected in &SEED42_VECTOR {
            assert_eq!(rng.next_u64(), expected);
        }
    }

    #[test]
    fn uniform_is_exact_dyadic_conversion() {
        // (next_u64() >> 11) * 2^-53 is exact; cross-checked values from the
        // same independent implementation as the raw vectors.
        let mut rng = Xoshiro256StarStar::seed_from_u64(42);
        assert_eq!(rng.uniform_f64(), 0.08386297105988216);
        assert_eq!(rng.uniform_f64(), 0.3789802506626686);
        assert_eq!(rng.uniform_f64(), 0.6800434110281394);
    }

    #[test]
    fn uniform_stays_in_unit_interval() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(7);
        for _ in 0..10_000 {
            let u = rng.uniform_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn rand_below_covers_all_residues() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(3);
        let mut counts = [0u32; 5];
        for _ in 0..5_000 {
            counts[rng.rand_below(5) as usize] += 1;
        }
        for &c in &counts {
            // Loose uniformity check: expectation 1000, tolerate ±15%.
            assert!((850..=1150).contains(&c), "residue count {c} out of range");
        }
    }

    #[test]
    fn standard_normal_has_unit_moments() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(11);
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(5);
        let mut items: Vec<u32> = (0..100).collect();
        rng.shuffle(&mut items);
        let mut sorted = items.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<u32>>());
        assert_ne!(items, (0..100).collect::<Vec<u32>>());
    }

    #[test]
    fn identical_seeds_yield_identical_streams() {
        let mut a = Xoshiro256StarStar::seed_from_u64(123);
        let mut b = Xoshiro256StarStar::seed_from_u64(123);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
    }
}
