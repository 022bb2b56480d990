//! Brute-force reference implementations. Everything here is written
//! directly from the defining formulas, with no code shared with the
//! implementations under test beyond plain data containers (`Tensor`, the
//! spiking network description).

pub mod fd;
pub mod loops;
pub mod snn;
pub mod stats;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
