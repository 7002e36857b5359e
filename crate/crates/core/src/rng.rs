//! Counter-based random streams.
//!
//! Every Monte Carlo sample draws from its own ChaCha8 stream keyed by
//! `(seed, lane)` with the sample index as the stream id, so sample `i` is
//! the same whatever the execution order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent families of streams sharing one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lane {
    /// Bridges of the interacting path ω₀ started at the origin.
    Bridge,
    /// Bridges sampled directly towards a shifted endpoint.
    Direct,
    /// Haar rotations and external-world configurations.
    World,
    /// Test and self-check draws.
    Aux,
}

impl Lane {
    fn tag(self) -> u64 {
        match self {
            Lane::Bridge => 0x6272_6964_6765,
            Lane::Direct => 0x6469_7265_6374,
            Lane::World => 0x77_6f72_6c64,
            Lane::Aux => 0x61_7578,
        }
    }
}

pub type Stream = ChaCha8Rng;

/// The stream for sample `index` in `lane`.
pub fn stream(seed: u64, lane: Lane, index: u64) -> Stream {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&lane.tag().to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
