//! Grid solvers for quadratic BSDE systems in a one-dimensional Brownian
//! filtration, with BMO diagnostics, power-series expansions, stability
//! experiments and a price-impact model.

pub mod bmo;
pub mod counterexample;
pub mod error;
pub mod expr;
pub mod impact;
pub mod numerics;
pub mod qbsde;
pub mod stability;

pub use error::{DivergenceReport, Error, Result};
pub use expr::{Expr, ExprError};
pub use numerics::{Grid, GridFunction, PathBundle, Region, Scheme, Source, SpaceGrid, TimeGrid};
