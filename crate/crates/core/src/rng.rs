//! Seeded random streams.
//!
//! Every stochastic component of a replication draws from its own ChaCha
//! stream derived from one root seed, so changing how one component consumes
//! randomness never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent components of one simulated replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Positions = 1,
    Covariates = 2,
    LinkShocks = 3,
    Proxy1 = 4,
    Proxy2 = 5,
    Copula = 6,
    Treatment = 7,
    Idiosyncratic = 8,
}

pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// SplitMix64 finalizer.
fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of replication `rep` under `root`. Depends only on the pair, so the
/// first M replications are identical whatever the total count.
pub fn replication_seed(root: u64, rep: u64) -> u64 {
    mix64(mix64(root) ^ rep.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}
