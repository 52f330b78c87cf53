//! Seeded random numbers.
//!
//! The generator is ChaCha8 (`rand_chacha`), a counter-based stream cipher whose
//! output depends only on the 256-bit key, the 64-bit stream id and the word
//! position, so streams are identical across platforms. A seed is expanded to
//! a key with `SeedableRng::seed_from_u64`; `Rng::derive(seed, label)` keeps that
//! key and selects the stream id from a stable hash of the label, which gives
//! distinct labels disjoint keystreams.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent substream of `seed` named by `label`.
    pub fn derive(seed: u64, label: &str) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stable_hash64(label.as_bytes()));
        Self { inner }
    }

    /// Draws one word from `self` and uses it as the seed of a labelled substream.
    pub fn fork(&mut self, label: &str) -> Self {
        let seed = self.inner.next_u64();
        Self::derive(seed, label)
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    #[inline]
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// `true` with probability `p`; `p <= 0` never fires and `p >= 1` always does.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n as u64) as usize
    }

    /// Number of successes in `n` trials of probability `p`.
    pub fn binomial(&mut self, n: u64, p: f64) -> u64 {
        if p <= 0.0 {
            return 0;
        }
        if p >= 1.0 {
            return n;
        }
        Binomial::new(n, p)
            .expect("binomial probability checked to lie in (0, 1)")
            .sample(&mut self.inner)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// 64-bit FNV-1a followed by the SplitMix64 finalizer.
///
/// Used wherever a hash must be stable across runs, builds and platforms
/// (stream labels, sweep-cell seeds, artifact fingerprints).
pub fn stable_hash64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named child of `base`, e.g. one cell of a sweep.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut bytes = base.to_le_bytes().to_vec();
    bytes.extend_from_slice(label.as_bytes());
    stable_hash64(&bytes)
}
