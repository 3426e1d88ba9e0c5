//! Reproducible stream-split randomness for parallel Monte Carlo.
//!
//! Every path index owns a fixed family of ChaCha streams derived from one
//! master seed, so path `i` consumes exactly the same random numbers no
//! matter which thread runs it, how many other paths run, or in what order
//! the scheduler interleaves them. This is the entire reproducibility story:
//! results depend on `(master seed, path index)` only.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Logical random channels consumed while building one path.
///
/// Keeping arrivals, claim marks, and environment noise on separate streams
/// makes paired-seed comparisons meaningful: changing the effort level (which
/// changes how many candidate arrivals are accepted) does not shift the
/// environment draws, and vice versa.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    /// Candidate arrival exponentials and thinning accept/reject uniforms.
    Arrivals = 0,
    /// Claim sizes, in acceptance order.
    Marks = 1,
    /// Exogenous shock interarrivals and shock sizes, interleaved.
    Shocks = 2,
    /// Markov-chain holding times and transition selectors, interleaved.
    Chain = 3,
}

/// Stream slots reserved per path; leaves room for future channels without
/// renumbering existing ones (which would silently change every result).
const CHANNELS_PER_PATH: u64 = 8;

/// Factory for per-path, per-channel generators keyed off one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomStream {
    master_seed: u64,
}

impl RandomStream {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Generator for `channel` of path `path`, fully determined by
    /// `(master seed, path, channel)`.
    pub fn channel(&self, path: u64, channel: Channel) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(path * CHANNELS_PER_PATH + channel as u64);
        rng
    }

    /// A derived factory whose streams are disjoint from this one's for any
    /// path index; used when an estimator needs an independent replication
    /// (e.g. a cross-check against a second Monte Carlo route).
    pub fn fork(&self, salt: u64) -> RandomStream {
        // SplitMix64 finalizer: decorrelates the forked seed from the parent.
        let mut z = self.master_seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RandomStream::new(z ^ (z >> 31))
    }
}
