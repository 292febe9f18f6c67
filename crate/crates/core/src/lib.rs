//! Positive ground states of `−Δu = u^{p(x)−1}` with a variable exponent
//! that is subcritical on a bounded region and critical elsewhere, computed
//! by Nehari-manifold minimisation on finite-difference grids, together with
//! the constants that bound the ground-state level: the Sobolev constant,
//! best embedding constants `S_q(U)`, the `g(q)` curve and `q̄`.

// `!(x > 0.0)` also rejects NaN; stencil loops index several per-axis arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod constants;
pub mod error;
pub mod exponent;
pub mod functional;
pub mod grid;
pub mod nehari;
pub mod snapshot;

pub use constants::{annulus_condition, ball_condition, g_value, qbar, s2, sq, BestConstant, QBarResult};
pub use error::{Error, Result};
pub use exponent::{build_constant_exponent, build_exponent, validate_h1, validate_h2, ExponentField, ValidationReport};
pub use functional::{
    apriori_constants, constraint, energy, instanton, pairing, residual, sobolev_constant, AprioriConstants,
    EnergyBreakdown,
};
pub use grid::{build_grid, build_grid_with, critical_exponent, BoundaryTreatment, DomainShape, Field, Grid, GridSpec};
pub use nehari::{
    concentration_profile, instanton_threshold_probe, minimize, project, verify_critical, GroundState,
    ProjectionResult, SolverOptions,
};
