//! # aggdiff
//!
//! A one-dimensional laboratory for the aggregation-diffusion equation
//!
//! ```text
//! ∂ₜρ = ∂ₓₓ(ρᵐ) + β ∂ₓₓ(ρ²) − χ ∂ₓ(ρ ∂ₓ(K_s ∗ ρ)),    K_s(x) = c_{1,s} |x|^{2s−1}
//! ```
//!
//! with a diffusion exponent `m > 2`, a quadratic diffusion weight `β ≥ 0`,
//! an attraction strength `χ > 0` and a Riesz kernel of order `s ∈ (0, 1/2)`.
//!
//! ## Modules
//!
//! | Module | Content |
//! |--------|---------|
//! | [`special`] | Γ function, kernel normalization and HLS constants |
//! | [`grid`] | uniform mesh, cell-averaged densities, dilations, initial data |
//! | [`riesz`] | exact cell-integrated kernel weights, convolution, weak-form double integral |
//! | [`energy`] | free energy, limit energy, a-priori lower bound |
//! | [`steady`] | fixed-point computation of stationary states and their identities |
//! | [`evolution`] | positivity-preserving finite-volume gradient-flow scheme |
//! | [`jko`] | minimizing-movement scheme in quantile (Lagrangian) coordinates |
//!
//! Everything is `f64` and single-threaded; independent runs can be spread
//! over threads by the caller.

pub mod energy;
pub mod evolution;
pub mod grid;
pub mod jko;
pub mod riesz;
pub mod special;
pub mod steady;

pub use energy::{free_energy, limit_energy, lower_bound_check, BoundReport, EnergyBreakdown};
pub use evolution::{
    cfl_dt, evolve, local_limit_evolve, monotonicity_breach, step, velocity_potential,
    weak_residual, EvolveOptions, Trajectory, VelocityField,
};
pub use grid::{Density, Grid, Moments, Params};
pub use jko::{
    jko_run, jko_step, minimize_energy, w2_distance, JkoOptions, JkoRun, JkoStep, Minimized,
    NewtonOptions, Quantile, StepObjective,
};
pub use riesz::{convolve, interaction_energy, symmetric_form, KernelWeights, TestFunction};
pub use special::{gamma, hls_constant, riesz_constant, sds_constant, KernelConstants};
pub use steady::{
    ball_radius, ball_radius_general, f_inverse, fixed_point_solve, limit_profile, multiplier,
    refine, steady_diagnostics, RefinedState, SolverOptions, SteadyDiagnostics, SteadyState,
};

use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The result is not representable as a finite `f64`.
    #[error("overflow: {0}")]
    Overflow(String),

    /// Two objects live on different grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A dilated or translated density would leave the computational box.
    #[error("support overflow: {0}")]
    SupportOverflow(String),

    /// The operation needs a density with positive mass.
    #[error("density has zero mass")]
    ZeroMass,

    /// Two densities were expected to carry the same mass.
    #[error("mass mismatch: {0} vs {1}")]
    MassMismatch(f64, f64),

    /// Requested time step exceeds the stability restriction.
    #[error("time step {dt} exceeds the stability bound {bound}")]
    Cfl { dt: f64, bound: f64 },

    /// The solution grew beyond the blow-up guard.
    #[error("blow-up guard tripped at t = {0}: sup norm {1}")]
    BlowUp(f64, f64),

    /// Not enough recorded samples for a time integral.
    #[error("insufficient sampling: {0}")]
    Sampling(String),
}

pub type Result<T> = std::result::Result<T, Error>;
