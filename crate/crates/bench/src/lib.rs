//! Shared fixtures for the kernel benchmarks.

use critexp_core::constants::ball_grid;
use critexp_core::{build_exponent, DomainShape, ExponentField, Field, Grid};

/// Unit ball with `cells³` cells.
pub fn ball(cells: usize) -> Grid {
    ball_grid(3, 1.0, cells).expect("valid ball grid")
}

/// Exponent subcritical on a ball of radius 0.4, ramped over 0.3.
pub fn exponent(g: &Grid) -> ExponentField {
    build_exponent(g, DomainShape::centered_ball(3, 0.4), 0.3, 3.5, 1.0).expect("valid exponent")
}

/// Smooth positive field vanishing on the unit sphere.
pub fn bump(g: &Grid) -> Field {
    g.field_from_fn(|x| (1.0 - x.iter().map(|v| v * v).sum::<f64>()).max(0.0))
}
