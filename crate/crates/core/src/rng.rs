//! Deterministic counter-based random streams.
//!
//! Every source of randomness in the crate is an explicit [`RngStream`]
//! value: a 64-bit seed plus a draw counter, hashed per draw with the
//! SplitMix64 finalizer. There is no global RNG. The raw `u64` sequence is
//! a pure integer function of `(seed, counter)`, so it is identical across
//! runs, platforms, and thread schedules; derived floating-point draws are
//! deterministic for a given build.
//!
//! Parallel work splits a stream into independent children keyed by index
//! (one per sampled candidate, trial, or trajectory), which makes results
//! independent of how work is distributed over threads.

use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const FORK_TAG: u64 = 0xA3EC_4E5B_9FBD_6E10;

/// SplitMix64 output function on an additive counter sequence.
#[inline]
fn mix(seed: u64, counter: u64) -> u64 {
    let mut z = seed.wrapping_add(counter.wrapping_mul(GOLDEN));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A seeded, counter-based random stream.
///
/// Identical seeds produce bit-identical draw sequences. Cloning a stream
/// clones its position; use [`RngStream::child`] to derive statistically
/// independent streams instead.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
    counter: u64,
}

impl RngStream {
    /// Stream starting at draw zero.
    pub fn new(seed: u64) -> Self {
        RngStream { seed, counter: 0 }
    }

    /// Independent child stream for the given index.
    ///
    /// Child derivation depends only on `(seed, index)`, not on the parent's
    /// counter, so the same child can be re-derived at any time.
    pub fn child(&self, index: u64) -> Self {
        RngStream::new(mix(self.seed ^ FORK_TAG, index))
    }

    /// Seed this stream was created with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of `u64` draws consumed so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Next raw 64-bit draw.
    pub fn next_u64(&mut self) -> u64 {
        let v = mix(self.seed, self.counter);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform draw strictly inside (0, 1); never returns 0 or 1, so it is
    /// safe to feed into logarithms.
    pub fn next_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw via the Box-Muller transform.
    ///
    /// Consumes exactly two `u64` draws and discards the paired variate, so
    /// the counter advances by a fixed amount per call regardless of values.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Entrywise `mean + stddev * z` with `z` standard normal from the stream.
///
/// A zero `stddev` entry returns the mean exactly while still consuming its
/// draw, keeping the stream position independent of parameter values.
///
/// Panics if the slices disagree in length or a stddev entry is negative;
/// both are programming errors at call sites.
pub fn draw_gaussian(rng: &mut RngStream, mean: &[f64], stddev: &[f64]) -> Vec<f64> {
    assert_eq!(mean.len(), stddev.len(), "mean/stddev length mismatch");
    mean.iter()
        .zip(stddev)
        .map(|(&m, &s)| {
            assert!(s >= 0.0, "negative stddev");
            m + s * rng.next_gaussian()
        })
        .collect()
}
