//! Reproducible random-number streams.
//!
//! An [`RngStream`] is a `(seed, stream_id)` pair. Every sampling operation in
//! the crate takes one and materialises a PCG-64 generator from it, so a given
//! pair always yields the same sequence on every platform. Child streams are
//! derived by hashing a key path into the stream id, which is how per-particle
//! and per-iteration streams are addressed without any shared mutable state.
//!
//! The hash is a chained SplitMix64 finaliser:
//!
//! ```text
//! h0 = stream_id
//! h_{k+1} = mix(h_k ^ mix(key_k + 0x9E3779B97F4A7C15))
//! ```

use rand::SeedableRng;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

/// The concrete generator behind every stream.
pub type StreamRng = Pcg64;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Root stream for a seed.
    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0)
    }

    /// A child stream addressed by `key`, independent of the parent's own
    /// output sequence.
    pub fn derive(&self, key: &[u64]) -> Self {
        let mut h = self.stream_id;
        for &k in key {
            h = mix64(h ^ mix64(k.wrapping_add(GOLDEN)));
        }
        Self::new(self.seed, h)
    }

    pub fn child(&self, a: u64) -> Self {
        self.derive(&[a])
    }

    /// Stream for one particle at one time step of one filter run.
    pub fn particle(&self, particle: usize, time: usize) -> Self {
        self.derive(&[particle as u64, time as u64])
    }

    /// Materialise the generator.
    pub fn rng(&self) -> StreamRng {
        let hi = mix64(self.seed ^ GOLDEN);
        let state = ((mix64(hi ^ self.stream_id) as u128) << 64) | mix64(self.seed.rotate_left(17) ^ mix64(self.stream_id)) as u128;
        let stream = ((self.stream_id as u128) << 64) | mix64(self.stream_id ^ self.seed) as u128;
        Pcg64::new(state, stream)
    }

    /// A generator seeded from this stream through `SeedableRng`, for crates
    /// that want to own their RNG.
    pub fn seedable<R: SeedableRng>(&self) -> R {
        R::seed_from_u64(mix64(self.seed ^ mix64(self.stream_id)))
    }
}

// Stream-key tags used across the samplers so unrelated draws never share a
// stream.
pub(crate) mod tag {
    pub const INIT: u64 = 0x01;
    pub const RESAMPLE: u64 = 0x02;
    pub const FINAL: u64 = 0x03;
    pub const KERNEL: u64 = 0x04;
    pub const PROPOSAL: u64 = 0x10;
    pub const FILTER: u64 = 0x11;
    pub const ACCEPT: u64 = 0x12;
    pub const GIBBS: u64 = 0x13;
    pub const REFRESH: u64 = 0x14;
    pub const ORDER: u64 = 0x15;
}
