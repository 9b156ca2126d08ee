//! Keyed, reproducible random streams.
//!
//! Every random decision in the crate draws from a [`SeededStream`]: a
//! ChaCha12 generator whose 256-bit seed is the SHA-256 hash of
//! `(master seed, domain label, index tuple)`. The hash gives each
//! (domain, indices) pair its own statistically independent stream while
//! keeping the whole experiment a pure function of one `u64` master seed.
//!
//! Streams are keyed by *logical* coordinates — client id, round number,
//! latent cluster, class — never by loop position or thread id. That is what
//! makes results independent of scheduling: worker threads may pick up tasks
//! in any order, but each task re-derives the same stream from the same key.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// A deterministic random stream tied to a `(master, domain, indices)` key.
///
/// Identical keys yield identical output sequences on every platform,
/// build, and thread count. Distinct keys yield independent streams.
#[derive(Debug, Clone)]
pub struct SeededStream {
    rng: ChaCha12Rng,
}

impl SeededStream {
    /// Derive the stream for `(master, domain, indices)`.
    ///
    /// The key material is hashed with explicit length framing so that,
    /// e.g., `("ab", [1])` and `("a", [?])` cannot collide.
    pub fn new(master: u64, domain: &str, indices: &[u64]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(master.to_le_bytes());
        hasher.update((domain.len() as u64).to_le_bytes());
        hasher.update(domain.as_bytes());
        hasher.update((indices.len() as u64).to_le_bytes());
        for index in indices {
            hasher.update(index.to_le_bytes());
        }
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&hasher.finalize());
        SeededStream {
            rng: ChaCha12Rng::from_seed(seed),
        }
    }

    /// One `u64` from this stream, for deriving sub-seeds.
    pub fn derive(master: u64, domain: &str, indices: &[u64]) -> u64 {
        SeededStream::new(master, domain, indices).next_u64()
    }
}

impl RngCore for SeededStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}
