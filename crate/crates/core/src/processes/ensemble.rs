use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ForwardModel, SimulatedScenario, SimulationError};
use crate::measures::TimeGrid;

/// RNG for path `index` of a run seeded with `seed`: one ChaCha stream per
/// path, so paths do not depend on scheduling or on each other.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulates paths `0..n`, in parallel, returned in index order.
pub fn simulate_ensemble(
    model: &ForwardModel,
    base: &TimeGrid,
    seed: u64,
    n: usize,
) -> Result<Vec<SimulatedScenario>, SimulationError> {
    model.validate()?;
    (0..n as u64)
        .into_par_iter()
        .map(|index| {
            let mut rng = path_rng(seed, index);
            let mut sc = model.simulate(base, &mut rng)?;
            sc.seed = seed;
            sc.path_index = index;
            Ok(sc)
        })
        .collect()
}
