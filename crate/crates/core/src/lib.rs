//! Discrete-time mean field games.
//!
//! The crate computes equilibria of finite-horizon mean field games whose
//! state evolves as
//!
//! ```text
//! X_{t_{i+1}} = X_{t_i} + (β(α_{t_i}(X_{t_i})) + b₀(X_{t_i}, m_{t_i})) δ + σ ΔZ_{i+1}
//! ```
//!
//! with cost `E[Σ_i (L₀(X, α) + F(X, m_{t_i})) δ + G(X_{t_k}, m_{t_k})]`. Three
//! solvers are provided:
//!
//! * [`single_period::solve_single_period`]: damped Picard iteration of the
//!   best-response map for one period.
//! * [`pasting::paste_equilibrium`]: backward value functions and forward
//!   concatenation of single-period equilibria.
//! * [`bsde::solve_mfg_bsde`]: the BSΔE backward sweep with regression Monte
//!   Carlo, alternated with forward measure updates.
//!
//! [`analytic`] holds closed-form linear-quadratic oracles and [`harness`]
//! runs discretization sweeps against a fine reference.
//!
//! All models are one dimensional in the state. [`measures`] is the exception
//! and works in any dimension.

pub mod analytic;
pub mod bsde;
pub mod error;
pub mod field;
pub mod harness;
pub mod measures;
pub mod model;
pub mod optimize;
pub mod pasting;
pub mod policy;
pub mod quadrature;
pub mod rng;
pub mod single_period;
pub mod stats;

pub use error::{MfgError, Result};
pub use field::{Field, MeasureField, StateFn};
pub use measures::{EmpiricalMeasure, MeasureFlow};
pub use model::{MfgProblem, PathBundle};
pub use policy::FeedbackPolicy;
pub use stats::Estimate;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/measures.md")]
    mod measures {}
    #[doc = include_str!("../../../book/src/single_period.md")]
    mod single_period {}
    #[doc = include_str!("../../../book/src/pasting.md")]
    mod pasting {}
    #[doc = include_str!("../../../book/src/bsde.md")]
    mod bsde {}
    #[doc = include_str!("../../../book/src/convergence.md")]
    mod convergence {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
