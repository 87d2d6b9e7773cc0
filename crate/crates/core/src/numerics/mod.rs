//! Grid calculus for the one-dimensional Brownian Markov setting.

pub mod field;
pub mod grid;
pub mod heat;
pub mod paths;
pub mod quad;

pub use field::{GridFunction, Source};
pub use grid::{Grid, Region, SpaceGrid, TimeGrid};
pub use heat::{gradient_slice, gradient_x, heat_step, HeatKernel, Scheme, TimeRule};
pub use paths::{mean_and_stderr, path_rng, sample_paths, sample_paths_with_budget, PathBundle};
pub use quad::{quad_expect, GaussianQuadrature};
