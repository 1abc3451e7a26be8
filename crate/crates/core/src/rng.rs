//! Deterministic seeding and parallel replication.
//!
//! Every experiment derives its randomness from a master seed plus a domain
//! tag; replica r runs on stream r of the resulting ChaCha cipher. Replicas
//! are therefore independent of how work is chunked across threads, and
//! reports are bit-identical for any worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Derives per-experiment, per-replica generators from one master seed.
#[derive(Debug, Clone, Copy)]
pub struct Seeder {
    master: u64,
}

impl Seeder {
    pub fn new(master: u64) -> Self {
        Seeder { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Generator for a named domain (hashed to a tag) and replica index.
    pub fn rng(&self, domain: &str, replica: u64) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.master.to_le_bytes());
        seed[8..16].copy_from_slice(&domain_tag(domain).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(replica);
        rng
    }
}

fn domain_tag(domain: &str) -> u64 {
    // FNV-1a; stable across platforms and releases.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in domain.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Runs `f` once per replica in parallel and returns results in replica
/// order. Each replica gets its own generator, so the output is independent
/// of thread scheduling.
pub fn replicate<T: Send>(
    seeder: &Seeder,
    domain: &str,
    replicas: u64,
    f: impl Fn(&mut ChaCha8Rng, u64) -> T + Sync,
) -> Vec<T> {
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = seeder.rng(domain, r);
            f(&mut rng, r)
        })
        .collect()
}
