//! Counter-based random substreams.
//!
//! Every random quantity in a run is drawn from a ChaCha8 stream whose key is
//! derived from `(master seed, domain, a, b)`. For training `a` is the round
//! and `b` the ED index; for Monte Carlo sweeps `a` is the sweep point and `b`
//! the trial. The key is built by feeding the four words through SplitMix64
//! in order and expanding the final state into 32 key bytes:
//!
//! ```text
//! s0 = mix(master); s1 = mix(s0 ^ domain); s2 = mix(s1 ^ a); s3 = mix(s2 ^ b)
//! key = mix(s3 + 1 * G) || mix(s3 + 2 * G) || mix(s3 + 3 * G) || mix(s3 + 4 * G)
//! ```
//!
//! where `mix` is the SplitMix64 finaliser and `G = 0x9E3779B97F4A7C15`.
//! Streams therefore never depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG type handed to every stochastic operation.
pub type SimRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Independent purposes a stream can serve. Keeping them apart lets two
/// schemes see identical channels and noise while differing elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Domain {
    Channel = 1,
    Timing = 2,
    Noise = 3,
    Encode = 4,
    Detector = 5,
    Batch = 6,
    Partition = 7,
    Data = 8,
    Placement = 9,
    Trial = 10,
    Model = 11,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the substream for `(master, domain, a, b)`.
pub fn substream(master: u64, domain: Domain, a: u64, b: u64) -> SimRng {
    let s = splitmix(master);
    let s = splitmix(s ^ domain as u64);
    let s = splitmix(s ^ a);
    let s = splitmix(s ^ b);
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        let word = splitmix(s.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1)));
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// A master seed with a convenience method for deriving substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    pub master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn stream(&self, domain: Domain, a: u64, b: u64) -> SimRng {
        substream(self.master, domain, a, b)
    }
}
