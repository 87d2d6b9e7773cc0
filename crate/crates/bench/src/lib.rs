//! Shared fixtures for the benchmarks.

use qbsde_core::numerics::Grid;
use qbsde_core::qbsde::{BilinearDriver, BsdeSpec};

/// Scalar problem with terminal `sin x` and driver `c |z|²`.
pub fn scalar_problem(steps: usize, nodes: usize, c: f64) -> BsdeSpec {
    let grid = Grid::with_resolution(1.0, steps, nodes).expect("valid grid");
    BsdeSpec::from_fn(grid, BilinearDriver::scalar(c).expect("finite coefficient"), |x, o| o[0] = x.sin())
        .expect("finite terminal")
}
