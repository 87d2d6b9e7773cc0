use thiserror::Error;

/// Failure report of a fixed-point iteration that did not contract.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub iterations: usize,
    /// Sup-norm change between successive iterates, one entry per iteration.
    pub changes: Vec<f64>,
    /// Sup norm of each iterate on the core region.
    pub iterate_norms: Vec<f64>,
    /// `|a| * ||L||_bmo`, the smallness product governing local existence.
    pub smallness_product: f64,
}

impl std::fmt::Display for DivergenceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "no contraction after {} iterations (last change {:.3e}, |a|*||L||_bmo = {:.4})",
            self.iterations,
            self.changes.last().copied().unwrap_or(f64::NAN),
            self.smallness_product
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {what} at slice {slice}, node {node}, component {component}")]
    NonFinite {
        what: &'static str,
        slice: usize,
        node: usize,
        component: usize,
    },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("path bundle of {requested} bytes exceeds the memory budget of {budget} bytes")]
    MemoryBudget { requested: usize, budget: usize },
    #[error("Picard iteration diverged: {0}")]
    Divergence(Box<DivergenceReport>),
    #[error("exponential moment diverges on the grid: {0}")]
    ExponentialMoment(String),
    #[error("expression error: {0}")]
    Expr(#[from] crate::expr::ExprError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
