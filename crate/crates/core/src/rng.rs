//! Counter-keyed random streams.
//!
//! Every random draw in the crate comes from a stream keyed by the run seed,
//! a purpose tag and a tuple of indices (path, particle, step, ...). Results
//! therefore never depend on the thread count or on scheduling order.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Stream = Xoshiro256PlusPlus;

pub const TAG_INIT: u64 = 1;
pub const TAG_STEP: u64 = 2;
pub const TAG_PATH: u64 = 3;
pub const TAG_Y_NOISE: u64 = 4;
pub const TAG_SPDE_NOISE: u64 = 5;
pub const TAG_SPECTRAL: u64 = 6;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a seed and an index tuple into a 64-bit stream key.
pub fn stream_key(seed: u64, tag: u64, ids: &[u64]) -> u64 {
    let mut h = splitmix(seed.wrapping_add(GOLDEN));
    h = splitmix(h ^ tag.wrapping_mul(GOLDEN));
    for &i in ids {
        h = splitmix(h.rotate_left(23) ^ splitmix(i.wrapping_add(GOLDEN)));
    }
    h
}

pub fn stream(seed: u64, tag: u64, ids: &[u64]) -> Stream {
    Stream::seed_from_u64(stream_key(seed, tag, ids))
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
