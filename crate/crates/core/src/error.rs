use thiserror::Error;

use crate::flow::Trajectory;
use crate::functionals::PhaseState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("right-hand side has non-zero mean {mean:e} (tolerance {tolerance:e})")]
    NonZeroMean { mean: f64, tolerance: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// The chemical potential is (numerically) constant, so the volume and
    /// area constraint gradients are linearly dependent.
    #[error("degenerate constraint direction: margin {margin:e} below {threshold:e}")]
    DegenerateDirection { margin: f64, threshold: f64 },

    #[error("beta = {beta} does not exceed the estimated minimal area {beta_alpha}")]
    InfeasibleBeta { beta: f64, beta_alpha: f64 },

    #[error("perturbation direction must be non-zero with zero mean")]
    ZeroDirection,

    #[error("point is outside the retraction trust region: {0}")]
    OutsideTrustRegion(String),

    /// The inner solve hit its iteration cap; the last iterate is attached.
    #[error(
        "proximal step not converged after {iterations} iterations (residual {el_residual:e})"
    )]
    StepNoConvergence {
        iterations: usize,
        el_residual: f64,
        partial: Box<PhaseState>,
    },

    #[error("line search stalled at step {sigma:e}")]
    LineSearchStall { sigma: f64 },

    #[error("initial datum is not feasible: {0}")]
    InfeasibleInitial(String),

    /// Terminal status of a run whose margin fell below the configured floor.
    /// Carries everything accepted before the collapse.
    #[error("margin collapsed to {margin:e} at step {step}")]
    MarginCollapse {
        step: usize,
        margin: f64,
        partial: Box<Trajectory>,
    },

    #[error("step {step} failed: {source}")]
    StepFailure {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}
