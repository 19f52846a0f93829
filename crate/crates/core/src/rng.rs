//! Splittable random streams.
//!
//! Every consumer of randomness (one noisy measurement, one synthetic
//! replicate) draws from its own ChaCha20 stream. ChaCha is counter based:
//! the 64-bit stream id selects an independent keystream under the same key,
//! so streams never overlap and the draws made on one stream do not depend on
//! how many draws were made on another.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// A named random stream derived from a master seed.
#[derive(Clone, Debug)]
pub struct StreamRng {
    inner: ChaCha20Rng,
}

impl StreamRng {
    pub fn new(master_seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(master_seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Stream keyed by a label such as `"measure/1way/sex"`.
    pub fn for_label(master_seed: u64, label: &str) -> Self {
        Self::new(master_seed, stream_id(label))
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }
}

impl RngCore for StreamRng {
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

/// FNV-1a over the label bytes. Stable across platforms and releases.
pub fn stream_id(label: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    label
        .bytes()
        .fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

pub fn replicate_label(index: usize) -> String {
    format!("replicate/{index}")
}
