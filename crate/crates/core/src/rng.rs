//! Seeded, splittable random streams.
//!
//! A [`RandomSource`] is a ChaCha8 generator keyed by a 64-bit master seed and
//! positioned on one of 2^64 independent streams. Child streams are derived
//! by hashing `(parent stream, purpose, index)`, so a trial's draws depend
//! only on the master seed and the trial index, never on which worker ran it.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream purposes used when deriving child sources.
pub mod purpose {
    pub const TRIAL: u64 = 0x7472_6961_6c00_0001;
    pub const INIT: u64 = 0x696e_6974_0000_0002;
    pub const DYNAMICS: u64 = 0x6479_6e61_0000_0003;
    pub const SAMPLES: u64 = 0x7361_6d70_0000_0004;
    pub const SNAPSHOT: u64 = 0x736e_6170_0000_0005;
    pub const PROBE: u64 = 0x7072_6f62_0000_0006;
    pub const LABELS: u64 = 0x6c61_6265_0000_0007;
    pub const SWEEP: u64 = 0x7377_6565_0000_0008;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix3(a: u64, b: u64, c: u64) -> u64 {
    let mut s = a;
    let x = splitmix64(&mut s);
    let mut s = x ^ b;
    let y = splitmix64(&mut s);
    let mut s = y ^ c.rotate_left(17);
    splitmix64(&mut s)
}

#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        let mut s = seed;
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    /// Master source for a seed (stream 0).
    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child stream for `(purpose, index)`. Does not consume draws
    /// from `self`.
    pub fn derive(&self, purpose: u64, index: u64) -> RandomSource {
        RandomSource::new(self.seed, mix3(self.stream, purpose, index))
    }

    /// Uniform draw on [0, 1) with 53 bits of precision. One rng event.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n` from a single 64-bit draw (multiply-shift; the
    /// bias is below n / 2^64). One rng event.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.rng.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
