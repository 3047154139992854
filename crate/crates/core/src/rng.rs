//! Seeded random sub-streams.
//!
//! Every draw in a run comes from a ChaCha8 stream keyed by the master seed
//! and selected by a 64-bit stream id laid out as
//! `phase (8 bits) | source (16 bits) | outer step (40 bits)`. A source's
//! Langevin noise for one outer step is consumed sequentially across the
//! inner iterations, so results do not depend on the order in which sources
//! are updated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Phase {
    Init = 1,
    Langevin = 2,
    Renoise = 3,
    Synthesis = 4,
}

pub fn substream(seed: u64, phase: Phase, source: usize, outer: usize) -> ChaCha8Rng {
    debug_assert!(source < 1 << 16);
    debug_assert!((outer as u64) < 1 << 40);
    let id = ((phase as u64) << 56) | ((source as u64) << 40) | outer as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn fill_standard_normal<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out {
        *v = StandardNormal.sample(rng);
    }
}

pub fn standard_normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    fill_standard_normal(rng, &mut v);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = substream(5, Phase::Langevin, 1, 7).gen();
        let b: u64 = substream(5, Phase::Langevin, 1, 7).gen();
        let c: u64 = substream(5, Phase::Langevin, 2, 7).gen();
        let d: u64 = substream(5, Phase::Renoise, 1, 7).gen();
        let e: u64 = substream(6, Phase::Langevin, 1, 7).gen();
        assert_eq!(a, b);
        assert!(a != c && a != d && a != e);
    }
}
