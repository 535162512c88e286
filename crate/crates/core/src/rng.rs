//! Named random streams.
//!
//! Every stream is a ChaCha8 generator keyed by `(master seed, rep, lane)` and
//! selected by its stream number, so two streams with different coordinates
//! never overlap and the same coordinates always replay the same draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Ground truths are drawn from the `Truth` lane so
/// that every strategy inside one repetition sees the same matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lane {
    Truth,
    Sampling { strategy: u32 },
    Test(u64),
}

impl Lane {
    fn code(self) -> u64 {
        match self {
            Lane::Truth => 0,
            Lane::Sampling { strategy } => 1 + u64::from(strategy),
            Lane::Test(x) => (1 << 40) ^ x,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(master: u64, rep: u64, lane: Lane, index: u64) -> StreamRng {
    let mut state = master;
    let a = splitmix64(&mut state);
    state ^= rep.wrapping_mul(0xd6e8_feb8_6659_fd93);
    let b = splitmix64(&mut state);
    state ^= lane.code().wrapping_mul(0xa076_1d64_78bd_642f);
    let mut seed = [0u8; 32];
    for (chunk, word) in seed
        .chunks_exact_mut(8)
        .zip([a, b, splitmix64(&mut state), splitmix64(&mut state)])
    {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(index);
    rng
}

/// Seed for a generator that only needs a single integer, e.g. ground-truth
/// generation.
pub fn derive_seed(master: u64, rep: u64, lane: Lane, index: u64) -> u64 {
    use rand::RngCore;
    stream(master, rep, lane, index).next_u64()
}
