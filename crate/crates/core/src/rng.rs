//! Deterministic random substreams.
//!
//! Every random draw is taken from a ChaCha8 stream keyed by the run seed,
//! a purpose tag, the step and a per-step index, so results do not depend on
//! evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

/// What a substream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Init,
    Coordinates,
    Branches,
    Sampling,
    Marginal,
    Simulation,
}

impl Purpose {
    fn tag(self) -> u8 {
        match self {
            Purpose::Init => 1,
            Purpose::Coordinates => 2,
            Purpose::Branches => 3,
            Purpose::Sampling => 4,
            Purpose::Marginal => 5,
            Purpose::Simulation => 6,
        }
    }
}

/// Independent generator for `(seed, purpose, step, index)`.
pub fn substream(seed: u64, purpose: Purpose, step: u64, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update([purpose.tag()]);
    h.update(step.to_le_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// `count` standard-normal draws.
pub fn normals<R: rand::Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<f64> {
    (0..count).map(|_| StandardNormal.sample(rng)).collect()
}
