//! Phase-field Willmore flow with prescribed volume and area.
//!
//! The order parameter `v` evolves by the constrained gradient flow
//!
//! ```text
//! ∂ₜv = Δμ - W''(v) μ + A + B μ,    μ = -Δv + W'(v),
//! ```
//!
//! with homogeneous Neumann conditions, where the multipliers `A` and `B`
//! keep `mean(v)` and the Ginzburg–Landau area `F[v]` fixed. Time is
//! discretised by minimizing movements: each step minimises
//! `‖w - v_n‖²/2 + τ E[w]` over the constraint manifold.
//!
//! Modules, bottom-up:
//!
//! * [`grid`]: cell-centered grids, Neumann Laplacian, quadrature.
//! * [`functionals`]: `W`, `F`, `E`, `μ` and exact discrete gradients.
//! * [`neumann`]: the inverse Neumann Laplacian and cosine-basis symbols.
//! * [`constraints`]: minimal area, feasible points, retraction, degeneracy tests.
//! * [`stepper`]: one proximal step with multiplier extraction.
//! * [`flow`]: trajectories, estimate checks, continuous-dependence harness.
//! * [`io`]: configuration files, snapshots and CSV diagnostics.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints;
pub mod error;
pub mod flow;
pub mod functionals;
pub mod grid;
pub mod io;
pub mod neumann;
pub mod stepper;

pub use error::{Error, Result};
pub use functionals::{PhaseState, PotentialParams};
pub use grid::{Field, Grid};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/discretization.md")]
    mod discretization {}
    #[doc = include_str!("../../../book/src/functionals.md")]
    mod functionals {}
    #[doc = include_str!("../../../book/src/neumann.md")]
    mod neumann {}
    #[doc = include_str!("../../../book/src/constraints.md")]
    mod constraints {}
    #[doc = include_str!("../../../book/src/stepping.md")]
    mod stepping {}
    #[doc = include_str!("../../../book/src/flow.md")]
    mod flow {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
