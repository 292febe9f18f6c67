//! Uniform cell-centred grids on a box, the Dirichlet Laplacian stencil,
//! midpoint quadrature and a conjugate-gradient Poisson solver.
//!
//! Cells are stored row-major (last axis fastest). The outermost layer of
//! cells is never interior; it carries the homogeneous Dirichlet condition,
//! so every stencil neighbour of an interior cell is in bounds and every
//! non-interior cell holds the value zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SPACING_RTOL: f64 = 1e-12;

/// Box corners and resolution of a tensor-product grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells_per_axis: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, cells_per_axis: Vec<usize>) -> Result<Self> {
        let spec = Self {
            lower,
            upper,
            cells_per_axis,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The cube `[-half_width, half_width]^dim` with `cells` cells per axis.
    pub fn cube(dim: usize, half_width: f64, cells: usize) -> Result<Self> {
        Self::new(vec![-half_width; dim], vec![half_width; dim], vec![cells; dim])
    }

    /// A cube whose frame cell centres sit exactly on the faces of
    /// `[lower, upper]^dim`, so the Dirichlet condition is imposed on that
    /// closed cube and `intervals` is the number of mesh intervals per axis.
    pub fn dirichlet_cube(dim: usize, lower: f64, upper: f64, intervals: usize) -> Result<Self> {
        let h = (upper - lower) / intervals as f64;
        Self::uniform(dim, lower - 0.5 * h, upper + 0.5 * h, intervals + 1)
    }

    /// The cube `[lower, upper]^dim`.
    pub fn uniform(dim: usize, lower: f64, upper: f64, cells: usize) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim], vec![cells; dim])
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.lower.len();
        if dim < 2 {
            return Err(Error::InvalidGrid(format!("dimension {dim} < 2")));
        }
        if self.upper.len() != dim || self.cells_per_axis.len() != dim {
            return Err(Error::InvalidGrid("corner and cell-count lengths differ".into()));
        }
        for a in 0..dim {
            if !(self.upper[a] > self.lower[a]) {
                return Err(Error::InvalidGrid(format!("upper <= lower on axis {a}")));
            }
            if self.cells_per_axis[a] < 4 {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} has {} cells, need at least 4",
                    self.cells_per_axis[a]
                )));
            }
        }
        let h0 = self.axis_spacing(0);
        for a in 1..dim {
            let ha = self.axis_spacing(a);
            if ((ha - h0) / h0).abs() > SPACING_RTOL {
                return Err(Error::InvalidGrid(format!(
                    "non-uniform spacing: axis 0 has h = {h0}, axis {a} has h = {ha}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn axis_spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.cells_per_axis[axis] as f64
    }

    /// Uniform spacing `h`.
    pub fn spacing(&self) -> f64 {
        self.axis_spacing(0)
    }

    pub fn cell_count(&self) -> usize {
        self.cells_per_axis.iter().product()
    }

    /// The existence theory needs `N >= 3`; two-dimensional grids are only
    /// useful for fast checks of the linear machinery.
    pub fn below_existence_dimension(&self) -> bool {
        self.dim() < 3
    }
}

/// The computational domain `G` (or a subdomain such as `Ω` or `U`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainShape {
    /// The whole grid box.
    Box,
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    /// `B_R(outer_center) \ closure(B_r(inner_center))`.
    Annulus {
        outer_center: Vec<f64>,
        outer_radius: f64,
        inner_center: Vec<f64>,
        inner_radius: f64,
    },
    /// Cell mask over the full grid.
    Explicit { mask: Vec<bool> },
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl DomainShape {
    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        DomainShape::Ball { center, radius }
    }

    pub fn centered_ball(dim: usize, radius: f64) -> Self {
        DomainShape::Ball {
            center: vec![0.0; dim],
            radius,
        }
    }

    pub fn annulus(outer_center: Vec<f64>, outer_radius: f64, inner_center: Vec<f64>, inner_radius: f64) -> Self {
        DomainShape::Annulus {
            outer_center,
            outer_radius,
            inner_center,
            inner_radius,
        }
    }

    /// Membership of a point in the open domain. `Explicit` shapes are
    /// cell-based and answer `false` here; use [`Grid`] masks instead.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            DomainShape::Box => true,
            DomainShape::Ball { center, radius } => dist(x, center) < *radius,
            DomainShape::Annulus {
                outer_center,
                outer_radius,
                inner_center,
                inner_radius,
            } => dist(x, outer_center) < *outer_radius && dist(x, inner_center) > *inner_radius,
            DomainShape::Explicit { .. } => false,
        }
    }

    /// Euclidean distance from `x` to the closure of the shape, or `None`
    /// for shapes without an analytic description.
    pub fn distance_to_closure(&self, x: &[f64]) -> Option<f64> {
        match self {
            DomainShape::Box => Some(0.0),
            DomainShape::Ball { center, radius } => Some((dist(x, center) - radius).max(0.0)),
            DomainShape::Annulus {
                outer_center,
                outer_radius,
                inner_center,
                inner_radius,
            } => {
                let ro = dist(x, outer_center);
                let ri = dist(x, inner_center);
                if ro > *outer_radius {
                    Some(ro - outer_radius)
                } else if ri < *inner_radius {
                    // The inner ball is strictly inside the outer one, so the
                    // nearest point of the closure lies on the inner sphere.
                    Some(inner_radius - ri)
                } else {
                    Some(0.0)
                }
            }
            DomainShape::Explicit { .. } => None,
        }
    }

    /// Checks the shape's own invariants and that it fits inside the box.
    pub fn check_fits(&self, spec: &GridSpec) -> Result<()> {
        let dim = spec.dim();
        let ball_fits = |center: &[f64], radius: f64, what: &str| -> Result<()> {
            if center.len() != dim {
                return Err(Error::ShapeDoesNotFit(format!(
                    "{what} center has dimension {}, grid has {dim}",
                    center.len()
                )));
            }
            if !(radius > 0.0) {
                return Err(Error::ShapeDoesNotFit(format!("{what} radius {radius} is not positive")));
            }
            for a in 0..dim {
                if !(center[a] - radius > spec.lower[a] && center[a] + radius < spec.upper[a]) {
                    return Err(Error::ShapeDoesNotFit(format!(
                        "{what} of radius {radius} around {center:?} leaves the box on axis {a}"
                    )));
                }
            }
            Ok(())
        };
        match self {
            DomainShape::Box => Ok(()),
            DomainShape::Ball { center, radius } => ball_fits(center, *radius, "ball"),
            DomainShape::Annulus {
                outer_center,
                outer_radius,
                inner_center,
                inner_radius,
            } => {
                ball_fits(outer_center, *outer_radius, "outer ball")?;
                if inner_center.len() != dim || !(*inner_radius > 0.0) {
                    return Err(Error::ShapeDoesNotFit("malformed inner ball".into()));
                }
                if !(dist(outer_center, inner_center) + inner_radius < *outer_radius) {
                    return Err(Error::ShapeDoesNotFit(
                        "inner ball closure is not inside the open outer ball".into(),
                    ));
                }
                Ok(())
            }
            DomainShape::Explicit { mask } => {
                if mask.len() != spec.cell_count() {
                    return Err(Error::ShapeDoesNotFit(format!(
                        "mask has {} entries, grid has {} cells",
                        mask.len(),
                        spec.cell_count()
                    )));
                }
                Ok(())
            }
        }
    }
}

/// A grid together with the interior mask of the domain `G`.
#[derive(Debug, Clone)]
pub struct Grid {
    spec: GridSpec,
    shape: DomainShape,
    h: f64,
    cell_volume: f64,
    strides: Vec<usize>,
    interior: Vec<bool>,
    interior_cells: Vec<usize>,
    /// Per cell, `Σ (1/θ − 1)` over links to exterior neighbours, with `θh`
    /// the distance from the cell centre to the curved boundary along the
    /// link. Zero where the boundary sits on the neighbour centre.
    boundary_weight: Vec<f64>,
    treatment: BoundaryTreatment,
    fingerprint: u64,
}

/// Smallest boundary fraction kept by the embedded-boundary correction.
pub const MIN_BOUNDARY_FRACTION: f64 = 0.1;

/// Real values on grid cells, zero outside the interior mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
    fingerprint: u64,
}

impl Field {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field {
            values: self.values.iter().map(|v| c * v).collect(),
            fingerprint: self.fingerprint,
        }
    }

    /// `self + alpha * other`. Both fields must come from the same grid.
    pub fn add_scaled(&self, alpha: f64, other: &Field) -> Result<Field> {
        if other.fingerprint != self.fingerprint || other.len() != self.len() {
            return Err(Error::MisalignedField);
        }
        Ok(Field {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + alpha * b)
                .collect(),
            fingerprint: self.fingerprint,
        })
    }

    /// Pointwise `max(u, 0)`.
    pub fn positive_part(&self) -> Field {
        Field {
            values: self.values.iter().map(|v| v.max(0.0)).collect(),
            fingerprint: self.fingerprint,
        }
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn has_positive_part(&self) -> bool {
        self.values.iter().any(|&v| v > 0.0)
    }
}

/// FNV-1a, used for grid fingerprints that must stay stable across builds.
pub(crate) struct Fnv(u64);

impl Fnv {
    pub(crate) fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

/// Dirichlet condition on curved (ball and annulus) boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTreatment {
    /// Zero at the first exterior cell centre.
    Staircase,
    /// Zero at the boundary crossing of each exterior link
    /// (see [`MIN_BOUNDARY_FRACTION`]).
    #[default]
    Embedded,
}

/// Builds the grid for `shape` on the box of `spec` with the default
/// [`BoundaryTreatment`].
pub fn build_grid(spec: GridSpec, shape: DomainShape) -> Result<Grid> {
    build_grid_with(spec, shape, BoundaryTreatment::default())
}

pub fn build_grid_with(spec: GridSpec, shape: DomainShape, treatment: BoundaryTreatment) -> Result<Grid> {
    spec.validate()?;
    shape.check_fits(&spec)?;
    let dim = spec.dim();
    let n = spec.cell_count();
    let mut strides = vec![1usize; dim];
    for a in (0..dim - 1).rev() {
        strides[a] = strides[a + 1] * spec.cells_per_axis[a + 1];
    }
    let h = spec.spacing();
    let mut grid = Grid {
        h,
        cell_volume: h.powi(dim as i32),
        strides,
        interior: vec![false; n],
        interior_cells: Vec::new(),
        boundary_weight: vec![0.0; n],
        treatment,
        fingerprint: 0,
        spec,
        shape,
    };
    let mut coords = vec![0usize; dim];
    let mut x = vec![0.0; dim];
    for idx in 0..n {
        grid.coords_into(idx, &mut coords);
        let on_frame = coords
            .iter()
            .zip(&grid.spec.cells_per_axis)
            .any(|(&c, &m)| c == 0 || c + 1 == m);
        if on_frame {
            continue;
        }
        let inside = match &grid.shape {
            DomainShape::Explicit { mask } => mask[idx],
            shape => {
                grid.center_into(idx, &mut x);
                shape.contains(&x)
            }
        };
        if inside {
            grid.interior[idx] = true;
            grid.interior_cells.push(idx);
        }
    }
    if grid.interior_cells.is_empty() {
        return Err(Error::EmptyInterior);
    }
    let curved = matches!(grid.shape, DomainShape::Ball { .. } | DomainShape::Annulus { .. });
    if curved && treatment == BoundaryTreatment::Embedded {
        grid.boundary_weight = grid.embedded_boundary_weights();
    }
    let mut hasher = Fnv::new();
    hasher.write(&[treatment as u8]);
    for a in 0..dim {
        hasher.write(&grid.spec.lower[a].to_le_bytes());
        hasher.write(&grid.spec.upper[a].to_le_bytes());
        hasher.write(&(grid.spec.cells_per_axis[a] as u64).to_le_bytes());
    }
    for &i in &grid.interior_cells {
        hasher.write(&(i as u64).to_le_bytes());
    }
    grid.fingerprint = hasher.finish();
    Ok(grid)
}

/// Conjugate-gradient controls for [`Grid::solve_poisson_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative tolerance on `‖A v − rhs‖₂ / ‖rhs‖₂`.
    pub tol: f64,
    pub max_iters: usize,
    /// Solves `(−Δ_h − shift) v = rhs`; the shift must stay below the
    /// smallest eigenvalue for the operator to remain positive definite.
    pub shift: f64,
}

impl CgOptions {
    pub fn with_tol(tol: f64) -> Self {
        CgOptions {
            tol,
            max_iters: 20_000,
            shift: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Field,
    pub iterations: usize,
    pub relative_residual: f64,
}

impl Grid {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn shape(&self) -> &DomainShape {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn cell_count(&self) -> usize {
        self.interior.len()
    }

    pub fn interior(&self) -> &[bool] {
        &self.interior
    }

    pub fn interior_cells(&self) -> &[usize] {
        &self.interior_cells
    }

    pub fn interior_count(&self) -> usize {
        self.interior_cells.len()
    }

    pub fn is_interior(&self, idx: usize) -> bool {
        self.interior[idx]
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// `2N/(N−2)`; infinite for `N = 2`.
    pub fn critical_exponent(&self) -> f64 {
        critical_exponent(self.dim())
    }

    pub fn coords_into(&self, idx: usize, out: &mut [usize]) {
        let mut rem = idx;
        for (a, s) in self.strides.iter().enumerate() {
            out[a] = rem / s;
            rem %= s;
        }
    }

    pub fn center_into(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        for (a, s) in self.strides.iter().enumerate() {
            let c = rem / s;
            rem %= s;
            out[a] = self.spec.lower[a] + (c as f64 + 0.5) * self.h;
        }
    }

    pub fn center(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.center_into(idx, &mut x);
        x
    }

    /// Index of the cell containing `x`, if `x` lies in the box.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for a in 0..self.dim() {
            let t = (x[a] - self.spec.lower[a]) / self.h;
            if !(t >= 0.0) {
                return None;
            }
            let c = t.floor() as usize;
            if c >= self.spec.cells_per_axis[a] {
                return None;
            }
            idx += c * self.strides[a];
        }
        Some(idx)
    }

    pub fn zeros(&self) -> Field {
        Field {
            values: vec![0.0; self.cell_count()],
            fingerprint: self.fingerprint,
        }
    }

    /// Samples `f` at interior cell centres; non-interior cells are zero.
    pub fn field_from_fn(&self, mut f: impl FnMut(&[f64]) -> f64) -> Field {
        let mut values = vec![0.0; self.cell_count()];
        let mut x = vec![0.0; self.dim()];
        for &i in &self.interior_cells {
            self.center_into(i, &mut x);
            values[i] = f(&x);
        }
        Field {
            values,
            fingerprint: self.fingerprint,
        }
    }

    /// Wraps raw values, zeroing every non-interior cell.
    pub fn field_from_values(&self, mut values: Vec<f64>) -> Result<Field> {
        if values.len() != self.cell_count() {
            return Err(Error::MisalignedField);
        }
        for (v, &inside) in values.iter_mut().zip(&self.interior) {
            if !inside {
                *v = 0.0;
            }
        }
        Ok(Field {
            values,
            fingerprint: self.fingerprint,
        })
    }

    /// Pointwise map over interior cells.
    pub fn map(&self, u: &Field, mut f: impl FnMut(f64) -> f64) -> Result<Field> {
        self.check(u)?;
        let mut values = vec![0.0; self.cell_count()];
        for &i in &self.interior_cells {
            values[i] = f(u.values[i]);
        }
        Ok(Field {
            values,
            fingerprint: self.fingerprint,
        })
    }

    pub fn check(&self, u: &Field) -> Result<()> {
        if u.fingerprint != self.fingerprint || u.values.len() != self.cell_count() {
            return Err(Error::MisalignedField);
        }
        Ok(())
    }

    pub(crate) fn wrap(&self, values: Vec<f64>) -> Field {
        debug_assert_eq!(values.len(), self.cell_count());
        Field {
            values,
            fingerprint: self.fingerprint,
        }
    }

    /// Boundary fractions along every link from an interior cell to an
    /// exterior one, located by bisection on [`DomainShape::contains`].
    fn embedded_boundary_weights(&self) -> Vec<f64> {
        let dim = self.dim();
        let mut weights = vec![0.0; self.cell_count()];
        let mut x = vec![0.0; dim];
        let mut y = vec![0.0; dim];
        for &i in &self.interior_cells {
            self.center_into(i, &mut x);
            let mut w = 0.0;
            for a in 0..dim {
                for (sign, j) in [(-1.0, i - self.strides[a]), (1.0, i + self.strides[a])] {
                    if self.interior[j] {
                        continue;
                    }
                    y.copy_from_slice(&x);
                    y[a] += sign * self.h;
                    if self.shape.contains(&y) {
                        // Clamped frame cell: the boundary is its centre.
                        continue;
                    }
                    let (mut lo, mut hi) = (0.0, 1.0);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        y[a] = x[a] + sign * mid * self.h;
                        if self.shape.contains(&y) {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    let theta = hi.max(MIN_BOUNDARY_FRACTION);
                    w += 1.0 / theta - 1.0;
                }
            }
            weights[i] = w;
        }
        weights
    }

    pub fn treatment(&self) -> BoundaryTreatment {
        self.treatment
    }

    /// `Σ (1/θ − 1)` for cell `idx`; see [`MIN_BOUNDARY_FRACTION`].
    pub fn boundary_weight(&self, idx: usize) -> f64 {
        self.boundary_weight[idx]
    }

    /// `out = −Δ_h u` on interior cells; `out` must be zero elsewhere.
    ///
    /// Links that cross a curved boundary at distance `θh` use the
    /// coefficient `1/(θh²)` for the Dirichlet value there, which only
    /// changes the diagonal and keeps the operator symmetric.
    pub(crate) fn neg_laplacian_into(&self, u: &[f64], out: &mut [f64]) {
        let inv_h2 = 1.0 / (self.h * self.h);
        let diag = 2.0 * self.dim() as f64;
        let bw = &self.boundary_weight;
        match self.strides.as_slice() {
            &[s0, s1, s2] => {
                for &i in &self.interior_cells {
                    let nb = u[i - s0] + u[i + s0] + u[i - s1] + u[i + s1] + u[i - s2] + u[i + s2];
                    out[i] = ((diag + bw[i]) * u[i] - nb) * inv_h2;
                }
            }
            strides => {
                for &i in &self.interior_cells {
                    let nb: f64 = strides.iter().map(|&s| u[i - s] + u[i + s]).sum();
                    out[i] = ((diag + bw[i]) * u[i] - nb) * inv_h2;
                }
            }
        }
    }

    /// `−Δ_h u` with the `(2N+1)`-point stencil and zero Dirichlet data.
    pub fn apply_laplacian(&self, u: &Field) -> Result<Field> {
        self.check(u)?;
        let mut out = vec![0.0; self.cell_count()];
        self.neg_laplacian_into(&u.values, &mut out);
        Ok(self.wrap(out))
    }

    /// Midpoint rule over the interior.
    pub fn integrate(&self, f: &Field) -> Result<f64> {
        self.check(f)?;
        Ok(self.cell_volume * self.interior_cells.iter().map(|&i| f.values[i]).sum::<f64>())
    }

    /// Discrete `L²` inner product.
    pub fn inner(&self, u: &Field, v: &Field) -> Result<f64> {
        self.check(u)?;
        self.check(v)?;
        Ok(self.cell_volume * dot(&u.values, &v.values))
    }

    /// `‖∇_h u‖²`, summed over forward differences on every cell face plus
    /// the embedded-boundary terms `(1/θ − 1) u_i²`.
    pub fn dirichlet_energy(&self, u: &Field) -> Result<f64> {
        self.check(u)?;
        let dim = self.dim();
        let mut coords = vec![0usize; dim];
        let mut sum: f64 = self
            .interior_cells
            .iter()
            .map(|&i| self.boundary_weight[i] * u.values[i] * u.values[i])
            .sum();
        for idx in 0..self.cell_count() {
            let ui = u.values[idx];
            self.coords_into(idx, &mut coords);
            for a in 0..dim {
                if coords[a] + 1 < self.spec.cells_per_axis[a] {
                    let d = ui - u.values[idx + self.strides[a]];
                    sum += d * d;
                }
            }
        }
        Ok(sum * self.h.powi(dim as i32 - 2))
    }

    /// `(∫|u|^q)^{1/q}`.
    pub fn lp_norm(&self, u: &Field, q: f64) -> Result<f64> {
        if !(q >= 1.0) {
            return Err(Error::InvalidArgument(format!("norm exponent q = {q} < 1")));
        }
        self.check(u)?;
        let s: f64 = self.interior_cells.iter().map(|&i| u.values[i].abs().powf(q)).sum();
        Ok((self.cell_volume * s).powf(1.0 / q))
    }

    /// Solves `−Δ_h v = rhs` to `‖−Δ_h v − rhs‖₂ ≤ tol·‖rhs‖₂`.
    pub fn solve_poisson(&self, rhs: &Field, tol: f64) -> Result<Field> {
        Ok(self.solve_poisson_with(rhs, &CgOptions::with_tol(tol), None)?.solution)
    }

    /// Conjugate gradients on `−Δ_h − shift`, optionally warm-started.
    pub fn solve_poisson_with(&self, rhs: &Field, opts: &CgOptions, initial: Option<&Field>) -> Result<CgOutcome> {
        if !(opts.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance {} must be positive", opts.tol)));
        }
        self.check(rhs)?;
        if let Some(x0) = initial {
            self.check(x0)?;
        }
        let n = self.cell_count();
        let b = &rhs.values;
        let b_norm = dot(b, b).sqrt();
        if b_norm == 0.0 {
            return Ok(CgOutcome {
                solution: self.zeros(),
                iterations: 0,
                relative_residual: 0.0,
            });
        }
        let apply = |x: &[f64], out: &mut [f64]| {
            self.neg_laplacian_into(x, out);
            if opts.shift != 0.0 {
                for &i in &self.interior_cells {
                    out[i] -= opts.shift * x[i];
                }
            }
        };
        let mut x = match initial {
            Some(x0) => x0.values.clone(),
            None => vec![0.0; n],
        };
        let mut ap = vec![0.0; n];
        let mut r = vec![0.0; n];
        let true_residual = |x: &[f64], r: &mut [f64], ap: &mut [f64]| {
            apply(x, ap);
            for &i in &self.interior_cells {
                r[i] = b[i] - ap[i];
            }
            dot(r, r)
        };
        let target = opts.tol * b_norm;
        let mut rr = true_residual(&x, &mut r, &mut ap);
        let mut p = r.clone();
        let mut iterations = 0;
        loop {
            if rr.sqrt() <= target {
                // Confirm against the true residual; the recurrence drifts.
                rr = true_residual(&x, &mut r, &mut ap);
                if rr.sqrt() <= target {
                    break;
                }
                p.copy_from_slice(&r);
            }
            if iterations >= opts.max_iters {
                return Err(Error::NoConvergence {
                    solver: "conjugate gradient",
                    iterations,
                    residual: rr.sqrt() / b_norm,
                });
            }
            apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::NoConvergence {
                    solver: "conjugate gradient (operator not positive definite)",
                    iterations,
                    residual: rr.sqrt() / b_norm,
                });
            }
            let alpha = rr / pap;
            for &i in &self.interior_cells {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for &i in &self.interior_cells {
                p[i] = r[i] + beta * p[i];
            }
            iterations += 1;
        }
        Ok(CgOutcome {
            solution: self.wrap(x),
            iterations,
            relative_residual: rr.sqrt() / b_norm,
        })
    }

    /// Euclidean `‖·‖₂` over the cell values (no volume weight).
    pub fn euclidean_norm(&self, u: &Field) -> Result<f64> {
        self.check(u)?;
        Ok(dot(&u.values, &u.values).sqrt())
    }

    /// Smallest distance from `x` to the centre of a non-interior cell,
    /// i.e. to the nearest point where the Dirichlet condition is imposed.
    pub fn distance_to_exterior(&self, x: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        let mut c = vec![0.0; self.dim()];
        for (i, &inside) in self.interior.iter().enumerate() {
            if !inside {
                self.center_into(i, &mut c);
                best = best.min(dist(x, &c));
            }
        }
        best
    }
}

pub fn critical_exponent(dim: usize) -> f64 {
    if dim <= 2 {
        f64::INFINITY
    } else {
        2.0 * dim as f64 / (dim as f64 - 2.0)
    }
}

/// Sequential dot product; fixed summation order keeps results reproducible.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit_box(dim: usize, cells: usize) -> Grid {
        build_grid(GridSpec::uniform(dim, 0.0, 1.0, cells).unwrap(), DomainShape::Box).unwrap()
    }

    fn random_field(g: &Grid, rng: &mut ChaCha8Rng) -> Field {
        g.field_from_fn(|_| rng.gen_range(-1.0..1.0))
    }

    fn box_mode(g: &Grid) -> Field {
        g.field_from_fn(|x| x.iter().map(|&t| (PI * t).sin()).product())
    }

    #[test]
    fn box_frame_is_clamped() {
        let g = unit_box(3, 16);
        assert_eq!(g.interior_count(), 14 * 14 * 14);
        assert_eq!(g.cell_volume(), (1.0f64 / 16.0).powi(3));
    }

    #[test]
    fn ball_count_matches_enumeration() {
        let spec = GridSpec::cube(3, 2.0, 32).unwrap();
        let g = build_grid(spec, DomainShape::centered_ball(3, 1.0)).unwrap();
        // Direct enumeration of centres (i + 1/2)/8 - 2 with |x| < 1.
        let mut count = 0;
        for i in 0..32 {
            for j in 0..32 {
                for k in 0..32 {
                    let c = |m: i32| -2.0 + (m as f64 + 0.5) / 8.0;
                    let r2 = c(i).powi(2) + c(j).powi(2) + c(k).powi(2);
                    if r2 < 1.0 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(g.interior_count(), count);
        assert_eq!(count, 2176);
        let continuum = 4.0 / 3.0 * PI * 512.0;
        assert!((count as f64 - continuum).abs() / continuum < 0.02);
    }

    #[test]
    fn oversized_ball_is_rejected() {
        let spec = GridSpec::cube(3, 2.0, 16).unwrap();
        let err = build_grid(spec, DomainShape::centered_ball(3, 3.0)).unwrap_err();
        assert!(matches!(err, Error::ShapeDoesNotFit(_)));
    }

    #[test]
    fn annulus_inner_ball_must_be_inside() {
        let spec = GridSpec::cube(3, 4.0, 16).unwrap();
        let bad = DomainShape::annulus(vec![0.0; 3], 3.0, vec![2.5, 0.0, 0.0], 1.0);
        assert!(build_grid(spec, bad).is_err());
    }

    #[test]
    fn spec_rejects_bad_input() {
        assert!(GridSpec::uniform(3, 0.0, 1.0, 3).is_err());
        assert!(GridSpec::uniform(1, 0.0, 1.0, 8).is_err());
        assert!(GridSpec::new(vec![0.0, 0.0], vec![1.0, 2.0], vec![8, 8]).is_err());
        assert!(GridSpec::new(vec![0.0, 0.0], vec![1.0, 2.0], vec![8, 16]).is_ok());
        assert!(GridSpec::uniform(2, 0.0, 1.0, 8).unwrap().below_existence_dimension());
    }

    #[test]
    fn empty_interior_is_an_error() {
        let spec = GridSpec::cube(3, 2.0, 4).unwrap();
        let tiny = DomainShape::ball(vec![0.2, 0.2, 0.2], 0.01);
        assert_eq!(build_grid(spec, tiny).unwrap_err(), Error::EmptyInterior);
    }

    #[test]
    fn laplacian_of_zero_is_zero() {
        let g = unit_box(3, 8);
        let out = g.apply_laplacian(&g.zeros()).unwrap();
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn box_mode_is_a_discrete_eigenpair() {
        // Cell centres of the full box, with the frame layer clamped to zero:
        // the sampled sine is an exact eigenvector only where the stencil
        // does not touch the frame, so compare on cells two layers in.
        let n = 32;
        let g = unit_box(3, n);
        let h = g.spacing();
        let lam = 3.0 * 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        let u = box_mode(&g);
        let lu = g.apply_laplacian(&u).unwrap();
        let mut coords = [0usize; 3];
        let mut worst: f64 = 0.0;
        for &i in g.interior_cells() {
            g.coords_into(i, &mut coords);
            if coords.iter().all(|&c| c >= 2 && c + 2 < n) {
                worst = worst.max((lu.values()[i] - lam * u.values()[i]).abs() / u.values()[i].abs());
            }
        }
        assert!(worst < 1e-10, "worst relative deviation {worst}");
    }

    #[test]
    fn laplacian_is_symmetric() {
        let spec = GridSpec::cube(3, 1.5, 12).unwrap();
        let g = build_grid(spec, DomainShape::centered_ball(3, 1.2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let u = random_field(&g, &mut rng);
            let v = random_field(&g, &mut rng);
            let a = g.inner(&g.apply_laplacian(&u).unwrap(), &v).unwrap();
            let b = g.inner(&u, &g.apply_laplacian(&v).unwrap()).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()));
        }
    }

    #[test]
    fn dirichlet_energy_matches_stencil_form() {
        let spec = GridSpec::cube(3, 1.5, 12).unwrap();
        let g = build_grid(spec, DomainShape::annulus(vec![0.0; 3], 1.3, vec![0.2, 0.0, 0.0], 0.4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let u = random_field(&g, &mut rng);
            let e = g.dirichlet_energy(&u).unwrap();
            let s = g.inner(&g.apply_laplacian(&u).unwrap(), &u).unwrap();
            assert!(e > 0.0);
            assert!((e - s).abs() <= 1e-12 * e);
            let c = 2.5;
            let ec = g.dirichlet_energy(&u.scaled(c)).unwrap();
            assert!((ec - c * c * e).abs() <= 1e-12 * ec);
        }
        assert_eq!(g.dirichlet_energy(&g.zeros()).unwrap(), 0.0);
    }

    #[test]
    fn box_mode_energy_identity() {
        // Frame centres on the faces of [0,1]^3: the sampled mode is exact.
        let g = build_grid(GridSpec::dirichlet_cube(3, 0.0, 1.0, 24).unwrap(), DomainShape::Box).unwrap();
        let h = g.spacing();
        let lam = 3.0 * 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        let u = box_mode(&g);
        let e = g.dirichlet_energy(&u).unwrap();
        let l2 = g.lp_norm(&u, 2.0).unwrap().powi(2);
        assert!((e - lam * l2).abs() < 1e-12 * e);
        let lu = g.apply_laplacian(&u).unwrap();
        assert!(lu.add_scaled(-lam, &u).unwrap().max_abs() < 1e-10 * lam);
    }

    #[test]
    fn integrate_constants_and_linearity() {
        let g = unit_box(3, 16);
        let one = g.field_from_fn(|_| 1.0);
        let vol = g.integrate(&one).unwrap();
        assert_eq!(vol, g.cell_volume() * 14f64.powi(3));
        assert!((vol - (14.0f64 / 16.0).powi(3)).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_field(&g, &mut rng);
        let h = random_field(&g, &mut rng);
        let (a, b) = (1.7, -0.3);
        let combo = f.scaled(a).add_scaled(b, &h).unwrap();
        let lhs = g.integrate(&combo).unwrap();
        let rhs = a * g.integrate(&f).unwrap() + b * g.integrate(&h).unwrap();
        assert!((lhs - rhs).abs() < 1e-13);
        for q in [1.0, 2.0, 3.5] {
            let n = g.lp_norm(&one, q).unwrap();
            assert!((n - vol.powf(1.0 / q)).abs() < 1e-14);
        }
    }

    #[test]
    fn ball_volume_converges() {
        let target = 4.0 * PI / 3.0;
        let mut errs = Vec::new();
        for cells in [20, 40, 80] {
            let spec = GridSpec::cube(3, 1.25, cells).unwrap();
            let g = build_grid(spec, DomainShape::centered_ball(3, 1.0)).unwrap();
            let v = g.integrate(&g.field_from_fn(|_| 1.0)).unwrap();
            errs.push(((v - target) / target).abs());
        }
        assert!(errs[2] < 0.01, "{errs:?}");
        assert!(errs[2] < errs[0]);
    }

    #[test]
    fn l2_norm_of_box_mode() {
        // ∫ sin²(πx) over [0,1] is 1/2 for every axis.
        let g = unit_box(3, 40);
        let n = g.lp_norm(&box_mode(&g), 2.0).unwrap();
        assert!((n - 0.5f64.powf(1.5)).abs() < 1e-3);
    }

    #[test]
    fn lp_norm_rejects_small_q() {
        let g = unit_box(3, 8);
        assert!(g.lp_norm(&g.zeros(), 0.5).is_err());
    }

    #[test]
    fn misaligned_fields_are_rejected() {
        let g = unit_box(3, 8);
        let other = unit_box(3, 10);
        let u = other.zeros();
        assert_eq!(g.apply_laplacian(&u).unwrap_err(), Error::MisalignedField);
        assert_eq!(g.integrate(&u).unwrap_err(), Error::MisalignedField);
        assert_eq!(g.dirichlet_energy(&u).unwrap_err(), Error::MisalignedField);
    }

    #[test]
    fn poisson_inverts_the_stencil() {
        let spec = GridSpec::cube(3, 1.5, 16).unwrap();
        let g = build_grid(spec, DomainShape::centered_ball(3, 1.4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_field(&g, &mut rng);
        let rhs = g.apply_laplacian(&w).unwrap();
        let v = g.solve_poisson(&rhs, 1e-12).unwrap();
        let res = g.apply_laplacian(&v).unwrap().add_scaled(-1.0, &rhs).unwrap();
        assert!(g.euclidean_norm(&res).unwrap() <= 1e-12 * g.euclidean_norm(&rhs).unwrap());
        let err = v.add_scaled(-1.0, &w).unwrap().max_abs();
        assert!(err < 1e-8, "{err}");

        let zero = g.solve_poisson(&g.zeros(), 1e-10).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn poisson_on_exact_eigenvector() {
        // A periodic-free exact eigenvector of the clamped box operator:
        // sin(π j k/(m+1)) over the interior index j = 1..m.
        let n = 20;
        let g = unit_box(3, n);
        let m = n - 2;
        let theta = PI / (m as f64 + 1.0);
        let mut coords = [0usize; 3];
        let vals: Vec<f64> = (0..g.cell_count())
            .map(|i| {
                g.coords_into(i, &mut coords);
                coords.iter().map(|&c| (theta * c as f64).sin()).product()
            })
            .collect();
        let e = g.field_from_values(vals).unwrap();
        let h = g.spacing();
        let lam = 3.0 * 4.0 / (h * h) * (theta / 2.0).sin().powi(2);
        let v = g.solve_poisson(&e, 1e-12).unwrap();
        let diff = v.add_scaled(-1.0 / lam, &e).unwrap().max_abs();
        assert!(diff < 1e-12 * e.max_abs() / lam * 10.0);
    }
}
