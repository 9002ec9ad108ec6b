//! Deterministic seed derivation.
//!
//! Every stochastic component of the pipeline draws from a `ChaCha8` stream
//! seeded through this chain, so independently derived streams (weight init,
//! batch order, per-step point sampling) never alias each other and rerunning
//! a command reproduces every draw bit for bit.

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Fold a sequence of stream labels into a base seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &p in parts {
        s = splitmix64(s ^ p.wrapping_mul(0x2545f4914f6cdd1d));
    }
    s
}
