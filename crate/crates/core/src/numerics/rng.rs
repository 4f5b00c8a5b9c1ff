//! Counter-based, seedable random streams.
//!
//! Each [`RngState`] is a ChaCha12 keystream: the key is expanded from the
//! 64-bit master seed, the 64-bit ChaCha stream (nonce) is the stream id,
//! and the block counter is the position in the stream. Substreams get a new
//! stream id mixed from the parent id and an index, so they share the key
//! but never a keystream prefix.
//!
//! Normal deviates use the Box-Muller transform; both outputs of a pair are
//! used, the second one is cached in the state.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// Environment variable that overrides the configured master seed.
pub const SEED_ENV_VAR: &str = "QCNN_SEED";

#[derive(Clone, Debug)]
pub struct RngState {
    master_seed: u64,
    stream_id: u64,
    core: ChaCha12Rng,
    spare_normal: Option<f64>,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    /// Stream 0 of `master_seed`.
    pub fn new(master_seed: u64) -> Self {
        Self::with_stream(master_seed, 0)
    }

    pub fn with_stream(master_seed: u64, stream_id: u64) -> Self {
        let mut core = ChaCha12Rng::seed_from_u64(master_seed);
        core.set_stream(stream_id);
        Self {
            master_seed,
            stream_id,
            core,
            spare_normal: None,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 64-bit words consumed so far.
    pub fn counter(&self) -> u64 {
        (self.core.get_word_pos() / 2) as u64
    }

    /// Independent child stream; a pure function of `(self's seed and stream, index)`.
    ///
    /// Ignores how far `self` has advanced.
    pub fn derive_substream(&self, index: u64) -> RngState {
        let id = splitmix64(splitmix64(self.stream_id) ^ splitmix64(index ^ 0xA076_1D64_78BD_642F));
        RngState::with_stream(self.master_seed, id)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.core.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`.
    #[inline]
    pub fn uniform_open_closed(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    /// Uniform integer in `0..bound` (Lemire's multiply-and-reject).
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = (self.next_u64() as u128) * (bound as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Fair coin.
    #[inline]
    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Standard normal deviate (Box-Muller).
    pub fn std_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_open_closed();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare_normal = Some(r * s);
        r * c
    }

    #[inline]
    pub fn normal(&mut self, mu: f64, sigma: f64) -> f64 {
        mu + sigma * self.std_normal()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// `QCNN_SEED` if set, otherwise `configured`.
pub fn master_seed_from_env(configured: u64) -> Result<u64> {
    match std::env::var(SEED_ENV_VAR) {
        Ok(raw) => raw
            .trim()
            .parse::<u64>()
            .map_err(|e| Error::Config(format!("{SEED_ENV_VAR}={raw:?}: {e}"))),
        Err(std::env::VarError::NotPresent) => Ok(configured),
        Err(e) => Err(Error::Config(format!("{SEED_ENV_VAR}: {e}"))),
    }
}
