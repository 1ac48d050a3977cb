//! Fixtures shared by the benchmarks.

use prepinn_core::discretize::{Discretization, LinearizationState};
use prepinn_core::grid::make_grid;
use prepinn_core::{ProblemSpec, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Poisson operator (k = 5) on an `nx × ny` grid over `[−1, 1]²`.
pub fn poisson(nx: usize, ny: usize) -> Result<Discretization> {
    Discretization::new(make_grid(nx, ny, [-1.0, 1.0, -1.0, 1.0])?, ProblemSpec::poisson(5))
}

/// Re 100 cavity operator on an `n × n` grid, linearized about velocities
/// drawn uniformly from `[−1, 1]`.
pub fn cavity(n: usize, seed: u64) -> Result<Discretization> {
    let g = make_grid(n, n, [0.0, 1.0, 0.0, 1.0])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || (0..g.n_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let (u, v) = (draw(), draw());
    Discretization::new(g, ProblemSpec::cavity(100.0))?.with_linearization(LinearizationState::new(g, u, v)?)
}
