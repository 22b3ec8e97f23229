//! Counter-based random streams.
//!
//! Every episode owns one master seed. Each consumer (truth simulation,
//! filter, solver) reads from its own ChaCha stream addressed by
//! `(purpose, step)`, so the draws used at step `k` never depend on how many
//! numbers were consumed elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags; the discriminant selects the ChaCha stream family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum Stream {
    TruthInitial = 1,
    TruthProcess = 2,
    TruthObservation = 3,
    FilterInitial = 4,
    FilterPredict = 5,
    FilterResample = 6,
    SolverNoise = 7,
}

pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `index` within a campaign seeded by `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut s = master ^ index.wrapping_mul(0xD134_2543_DE82_EF95);
    splitmix64(&mut s);
    splitmix64(&mut s)
}

/// Anything that hands out the per-step streams of an episode.
pub trait StreamSource: Sync {
    fn rng(&self, stream: Stream, step: u64) -> ChaCha8Rng;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedStreams {
    seed: u64,
    key: [u8; 32],
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        SeedStreams { seed, key }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&self, stream: Stream, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(((stream as u64) << 48) | (step & 0xFFFF_FFFF_FFFF));
        rng
    }
}

impl StreamSource for SeedStreams {
    fn rng(&self, stream: Stream, step: u64) -> ChaCha8Rng {
        SeedStreams::rng(self, stream, step)
    }
}
