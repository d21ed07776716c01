//! Deterministic random-number streams.
//!
//! Every stochastic component draws from its own ChaCha stream derived from
//! the master seed, so results are bit-reproducible regardless of how work is
//! scheduled across threads. Monte Carlo rollouts get an independent
//! sub-master seed each, derived with SplitMix64.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream ids for the fixed roles inside one scenario run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    /// Initial state draw.
    InitialState = 0,
    /// Process noise during simulation.
    ProcessNoise = 1,
    /// Random system generation.
    SystemGeneration = 2,
    /// System perturbations (scheduled changes).
    Perturbation = 3,
}

/// RNG for one role, derived from the master seed.
pub fn stream(master_seed: u64, id: StreamId) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(id as u64);
    rng
}

/// Independent sub-master seed for rollout `index`.
///
/// SplitMix64 over `master ^ (index + 1)`; the offset keeps rollout 0 from
/// reusing the master seed itself.
pub fn rollout_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(index.wrapping_add(1)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Vector of i.i.d. standard normal draws.
pub fn standard_normal_vector(dim: usize, rng: &mut ChaCha12Rng) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)))
}
