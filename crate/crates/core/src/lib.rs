//! Numerical gradient flows of constrained-growth energies in the
//! optimal transport-growth (Wasserstein–Fisher–Rao / Hellinger–Kantorovich)
//! metric.
//!
//! The crate computes minimizing-movement (JKO-type) time discretizations of
//! the Hele-Shaw tumor-growth system
//!
//! ```text
//! d/dt rho - div(rho grad p) = 4 (lambda - p)_+ rho,   p (1 - rho) = 0,   rho <= 1
//! ```
//!
//! by solving, at every time step, a discrete optimal entropy-transport
//! problem with stabilized Sinkhorn-type scaling iterations. Exact spherical
//! solutions built from modified Bessel functions serve as the validation
//! oracle, and explicit transport-growth geodesics provide interpolation
//! between states.
//!
//! Module map:
//! - [`grid`] / [`measure`]: pointed partitions of the unit box and densities
//!   on them, including the density CSV format.
//! - [`cost`] / [`kernel`]: ground costs and the stabilized (truncated) Gibbs
//!   kernel.
//! - [`solver`]: generic scaling solver with pluggable marginal functionals.
//! - [`flow`]: the outer minimizing-movement loop, distance evaluation, the
//!   congestion projection and the projection/growth splitting scheme.
//! - [`sphere`]: modified Bessel series and the exact expanding-ball
//!   solution.
//! - [`geodesic`]: transport-growth geodesic interpolation from solver duals.

pub mod cost;
pub mod error;
pub mod flow;
pub mod geodesic;
pub mod grid;
pub mod kernel;
pub mod measure;
pub mod params;
pub mod solver;
pub mod sphere;

pub use cost::{cost_eval, CostSpec};
pub use error::{Result, WfrError};
pub use flow::{
    prox_step, run_flow, splitting_flow, wasserstein_projection, wfr_distance, FlowStepOutput,
    FlowTrajectory,
};
pub use geodesic::{geodesic_density, potential_from_duals, GeodesicField};
pub use grid::Grid;
pub use kernel::{KernelMode, StabilizedKernel};
pub use measure::{ball_indicator, discretize_indicator, relative_entropy, DiscreteMeasure};
pub use params::FlowParams;
pub use solver::{scaling_solve, scaling_solve_with, MarginalFunctional, SolveResult, SolverConfig};
pub use sphere::{bessel_h, bessel_i, bessel_k_growth, SphereSolution};
