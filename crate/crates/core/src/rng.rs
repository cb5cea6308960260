//! Seeded, portable random streams.
//!
//! Every random draw in the crate comes from a [`Stream`], a PCG-64
//! (`Lcg128Xsl64`) generator seeded through `SeedableRng::seed_from_u64`.
//! Streams are never shared between independent consumers. Instead each
//! consumer derives its own seed:
//!
//! * `component_seed(global, name)` – FNV-1a 64 of the UTF-8 component name,
//!   mixed with the global seed through SplitMix64:
//!   `splitmix64(global ^ splitmix64(fnv1a64(name)))`.
//! * `derive_seed(base, index)` – `splitmix64(base ^ splitmix64(index + 1))`.
//!   Used for per-row, per-epoch and per-pass substreams so that any range of
//!   work can be regenerated independently of the others.
//!
//! Uniform reals use the top 53 bits of one `u64`. Normal deviates use the
//! basic Box–Muller transform (two uniforms in, one deviate out, the sine
//! branch is discarded) so the sequence is trivial to reproduce elsewhere.

use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64;

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed of a named component, derived from the global experiment seed.
pub fn component_seed(global: u64, name: &str) -> u64 {
    splitmix64(global ^ splitmix64(fnv1a64(name.as_bytes())))
}

/// Seed of the `index`-th substream of `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(1)))
}

/// A single deterministic random stream.
#[derive(Clone, Debug)]
pub struct Stream {
    inner: Pcg64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Pcg64::seed_from_u64(seed),
        }
    }

    /// Shorthand for `Stream::new(derive_seed(base, index))`.
    pub fn substream(base: u64, index: u64) -> Self {
        Self::new(derive_seed(base, index))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * TWO_POW_M53
    }

    /// Uniform on the open interval `(lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform_open()
    }

    /// Uniform on `(0, cap]`.
    pub fn uniform_up_to(&mut self, cap: f64) -> f64 {
        cap * (1.0 - self.uniform())
    }

    /// Uniform integer in `0..n`, `n > 0`.
    pub fn below(&mut self, n: usize) -> usize {
        // Lemire's multiply-shift; the bias is below 2^-64 * n.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal deviate (Box–Muller, cosine branch).
    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.gaussian()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
