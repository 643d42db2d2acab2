//! Deterministic random number generation.
//!
//! A single counter-based stream (ChaCha8) drives weight init, dropout and
//! shuffling. The stream position is exposed so checkpoints can resume a run
//! mid-stream and reproduce the uninterrupted trajectory bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// Seeded RNG with save/restore of the exact stream position.
#[derive(Debug, Clone)]
pub struct DetRng {
    seed: u64,
    rng: ChaCha8Rng,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent substream, e.g. one per (seed, epoch) shuffle.
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        DetRng { seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn restore(seed: u64, word_pos: u128) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_word_pos(word_pos);
        DetRng { seed, rng }
    }

    /// Uniform in [low, high).
    pub fn uniform<T: Scalar>(&mut self, low: T, high: T) -> T {
        let u: f64 = self.rng.gen::<f64>();
        low + (high - low) * T::from_f64_c(u)
    }

    /// Standard normal via Box-Muller on the deterministic stream.
    pub fn normal<T: Scalar>(&mut self) -> T {
        let u1: f64 = self.rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = self.rng.gen::<f64>();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        T::from_f64_c(z)
    }

    pub fn gen_f64(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn gen_range_usize(&mut self, upper: usize) -> usize {
        self.rng.gen_range(0..upper)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, data: &mut [T]) {
        for i in (1..data.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            data.swap(i, j);
        }
    }
}
