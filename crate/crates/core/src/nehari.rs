//! Nehari projection, ground-state minimisation on the Nehari manifold,
//! criticality checks, the translated-instanton threshold probe and local
//! `L^{2*}` mass profiles for spotting concentration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exponent::{build_constant_exponent, validate_h1, ExponentField};
use crate::functional::{
    constraint, constraint_derivative, critical_level, energy, pos_pow, residual, truncated_instanton,
};
use crate::grid::{CgOptions, Field, Grid};

/// `t ↦ J(t u)/t²` along the ray through `u`, with the nonlinear weights
/// `cell_volume·(u⁺)^{p}` cached.
#[derive(Debug, Clone)]
pub struct NehariFiber {
    kinetic: f64,
    /// `(p_i − 2, cell_volume·(u_i⁺)^{p_i})` for every positive cell.
    terms: Vec<(f64, f64)>,
}

impl NehariFiber {
    pub fn new(g: &Grid, pf: &ExponentField, u: &Field) -> Result<Self> {
        pf.check(g)?;
        let kinetic = g.dirichlet_energy(u)?;
        let vol = g.cell_volume();
        let vals = u.values();
        let terms: Vec<(f64, f64)> = g
            .interior_cells()
            .iter()
            .filter(|&&i| vals[i] > 0.0)
            .map(|&i| (pf.p[i] - 2.0, vol * pos_pow(vals[i], pf.p[i])))
            .collect();
        if terms.is_empty() {
            return Err(Error::NonpositiveInput);
        }
        Ok(NehariFiber { kinetic, terms })
    }

    /// `J(e^s u)/e^{2s}` and its derivative in `s`.
    fn reduced(&self, s: f64) -> (f64, f64) {
        let mut value = self.kinetic;
        let mut slope = 0.0;
        for &(e, w) in &self.terms {
            let term = w * (e * s).exp();
            value -= term;
            slope -= e * term;
        }
        (value, slope)
    }

    /// `φ(t) = J(t u)/t = t‖u‖² − ∫ t^{p−1}(u⁺)^p`.
    pub fn phi(&self, t: f64) -> f64 {
        t * self.reduced(t.ln()).0
    }

    pub fn kinetic(&self) -> f64 {
        self.kinetic
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub t: f64,
    pub projected: Field,
    pub iterations: usize,
    /// `|J(t u)| / ‖t u‖²`.
    pub constraint_residual: f64,
}

const MAX_LOG_SCALE: f64 = 690.0;

/// Finds the unique `t > 0` with `t u ∈ N`.
///
/// Brackets the root of `s ↦ J(e^s u)/e^{2s}` (strictly decreasing) by
/// decades, then runs Newton in `s`, falling back to bisection whenever
/// the Newton step leaves the bracket.
pub fn project(g: &Grid, pf: &ExponentField, u: &Field, tol: f64) -> Result<ProjectionResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("projection tolerance {tol} must be positive")));
    }
    let fiber = NehariFiber::new(g, pf, u)?;
    let target = tol * fiber.kinetic;
    let step = 10f64.ln();

    let (mut lo, mut hi) = (0.0, 0.0);
    let (f0, _) = fiber.reduced(0.0);
    if f0 > 0.0 {
        loop {
            hi += step;
            let (f, _) = fiber.reduced(hi);
            if f.is_nan() || hi > MAX_LOG_SCALE {
                return Err(Error::NoBracket(format!("no sign change up to t = e^{hi:.0}")));
            }
            if f <= 0.0 {
                break;
            }
            lo = hi;
        }
    } else {
        loop {
            lo -= step;
            let (f, _) = fiber.reduced(lo);
            if f.is_nan() || lo < -MAX_LOG_SCALE {
                return Err(Error::NoBracket(format!("no sign change down to t = e^{lo:.0}")));
            }
            if f > 0.0 {
                break;
            }
            hi = lo;
        }
    }

    let mut s = 0.5 * (lo + hi);
    let mut iterations = 0;
    loop {
        let (f, df) = fiber.reduced(s);
        iterations += 1;
        if f.abs() <= target || iterations >= 300 || hi - lo <= 4.0 * f64::EPSILON * s.abs().max(1.0) {
            break;
        }
        if f > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let newton = s - f / df;
        s = if df < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }

    let t = s.exp();
    let projected = u.scaled(t);
    let kinetic = g.dirichlet_energy(&projected)?;
    let constraint_residual = constraint(g, pf, &projected)?.abs() / kinetic;
    Ok(ProjectionResult {
        t,
        projected,
        iterations,
        constraint_residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Sum of seeded Gaussian bumps placed in `Ω_δ` (or anywhere in `G`).
    RandomBump,
    /// The instanton centred at the centroid of `Ω`.
    Instanton,
    Custom(Field),
}

impl Init {
    pub fn label(&self) -> &'static str {
        match self {
            Init::RandomBump => "random-bump",
            Init::Instanton => "instanton",
            Init::Custom(_) => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Initial step of the preconditioned gradient iteration.
    pub step: f64,
    /// Termination threshold on `dual_residual / ‖u‖_{1,2}`.
    pub tol_dual: f64,
    /// Termination threshold on `|J(u)| / ‖u‖²_{1,2}`.
    pub tol_constraint: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub init: Init,
    /// Relative tolerance of the inner Poisson solves.
    pub poisson_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            step: 1.0,
            tol_dual: 1e-5,
            tol_constraint: 1e-10,
            max_iters: 500,
            seed: 0,
            init: Init::RandomBump,
            poisson_tol: 1e-10,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.tol_dual > 0.0 && self.tol_constraint > 0.0 && self.poisson_tol > 0.0) {
            return Err(Error::InvalidArgument("solver step and tolerances must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub energy: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone)]
pub struct GroundState {
    pub u: Field,
    /// `I(u)`, an upper bound for the level `m`.
    pub m: f64,
    /// `√(cell_volume·⟨P r, r⟩)` with `P` the inverse Dirichlet Laplacian.
    pub dual_residual: f64,
    pub relative_dual_residual: f64,
    pub constraint_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    pub init: &'static str,
    pub tol_dual: f64,
    pub tol_constraint: f64,
}

struct Gradient {
    direction: Field,
    dual: f64,
}

fn preconditioned_gradient(g: &Grid, pf: &ExponentField, u: &Field, poisson_tol: f64) -> Result<Gradient> {
    let r = residual(g, pf, u)?;
    let direction = g.solve_poisson_with(&r, &CgOptions::with_tol(poisson_tol), None)?.solution;
    let dual = g.inner(&r, &direction)?.max(0.0).sqrt();
    Ok(Gradient { direction, dual })
}

fn centroid(g: &Grid, mask: &[bool]) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; g.dim()];
    let mut count = 0usize;
    let mut x = vec![0.0; g.dim()];
    for &i in g.interior_cells() {
        if mask[i] {
            g.center_into(i, &mut x);
            for (s, v) in sum.iter_mut().zip(&x) {
                *s += v;
            }
            count += 1;
        }
    }
    (count > 0).then(|| sum.into_iter().map(|s| s / count as f64).collect())
}

fn initial_field(g: &Grid, pf: &ExponentField, opts: &SolverOptions) -> Result<Field> {
    match &opts.init {
        Init::Custom(f) => {
            g.check(f)?;
            Ok(f.clone())
        }
        Init::Instanton => {
            let center = centroid(g, &pf.omega_mask)
                .or_else(|| centroid(g, g.interior()))
                .expect("grid has interior cells");
            truncated_instanton(g, &center)
        }
        Init::RandomBump => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let in_band: Vec<usize> = g.interior_cells().iter().copied().filter(|&i| pf.omega_delta_mask[i]).collect();
            let candidates = if in_band.is_empty() {
                g.interior_cells().to_vec()
            } else {
                in_band
            };
            let mask: Vec<bool> = {
                let mut m = vec![false; g.cell_count()];
                for &i in &candidates {
                    m[i] = true;
                }
                m
            };
            let c = centroid(g, &mask).expect("candidates are nonempty");
            let mut x = vec![0.0; g.dim()];
            let mut spread = 0.0;
            for &i in &candidates {
                g.center_into(i, &mut x);
                spread += x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            let rms = (spread / candidates.len() as f64).sqrt();
            let width = (0.5 * rms).max(2.0 * g.spacing());
            let bumps: Vec<(Vec<f64>, f64)> = (0..3)
                .map(|_| {
                    let cell = candidates[rng.gen_range(0..candidates.len())];
                    (g.center(cell), rng.gen_range(0.5..1.5))
                })
                .collect();
            Ok(g.field_from_fn(|x| {
                bumps
                    .iter()
                    .map(|(c, a)| {
                        let r2: f64 = x.iter().zip(c).map(|(p, q)| (p - q) * (p - q)).sum();
                        a * (-r2 / (width * width)).exp()
                    })
                    .sum()
            }))
        }
    }
}

/// Nehari-projected, `H¹`-preconditioned gradient descent.
///
/// Each iterate is `project((u − τ P r)⁺)` with `r` the residual and `P`
/// the Poisson solve; `τ` halves until the energy does not increase and
/// grows again after an accepted step. Every iterate lies on the Nehari
/// manifold, so the returned energy is an upper bound for the level `m`.
/// Hitting `max_iters` returns the last (lowest-energy) iterate with
/// `converged = false`.
pub fn minimize(g: &Grid, pf: &ExponentField, opts: &SolverOptions) -> Result<GroundState> {
    opts.validate()?;
    let report = validate_h1(g, pf)?;
    if !report.passed() {
        let names: Vec<_> = report.failures().iter().map(|c| c.detail.clone()).collect();
        return Err(Error::InvalidExponentField(names.join("; ")));
    }
    let proj_tol = opts.tol_constraint * 0.1;
    let start = initial_field(g, pf, opts)?.positive_part();
    let mut current = project(g, pf, &start, proj_tol)?;
    let mut e = energy(g, pf, &current.projected)?.total;
    let mut tau = opts.step;
    let tau_max = 4.0 * opts.step;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut grad = preconditioned_gradient(g, pf, &current.projected, opts.poisson_tol)?;

    loop {
        let norm = g.dirichlet_energy(&current.projected)?.sqrt();
        let relative = grad.dual / norm;
        trace.push(TraceEntry {
            iteration: iterations,
            energy: e,
            dual_residual: grad.dual,
        });
        if relative <= opts.tol_dual && current.constraint_residual <= opts.tol_constraint {
            converged = true;
            break;
        }
        if iterations >= opts.max_iters {
            break;
        }
        iterations += 1;

        let mut accepted = None;
        let mut trial = tau;
        while trial >= 1e-10 * opts.step {
            let candidate = current.projected.add_scaled(-trial, &grad.direction)?.positive_part();
            if let Ok(next) = project(g, pf, &candidate, proj_tol) {
                let e_next = energy(g, pf, &next.projected)?.total;
                if e_next <= e {
                    accepted = Some((next, e_next, trial));
                    break;
                }
            }
            trial *= 0.5;
        }
        let Some((next, e_next, used)) = accepted else {
            // No descent at any step size: the gradient is below the noise
            // floor of the energy evaluation.
            break;
        };
        current = next;
        e = e_next;
        tau = (used * 1.5).min(tau_max);
        grad = preconditioned_gradient(g, pf, &current.projected, opts.poisson_tol)?;
    }

    let norm = g.dirichlet_energy(&current.projected)?.sqrt();
    Ok(GroundState {
        m: e,
        dual_residual: grad.dual,
        relative_dual_residual: grad.dual / norm,
        constraint_residual: current.constraint_residual,
        u: current.projected,
        iterations,
        converged,
        trace,
        init: opts.init.label(),
        tol_dual: opts.tol_dual,
        tol_constraint: opts.tol_constraint,
    })
}

#[derive(Debug, Clone)]
pub struct MultistartResult {
    pub runs: Vec<GroundState>,
    pub best: usize,
    /// Runs whose energy matches the best within `tie_rtol` but whose
    /// fields differ; no tie-breaking is implied.
    pub ties: Vec<usize>,
}

impl MultistartResult {
    pub fn best(&self) -> &GroundState {
        &self.runs[self.best]
    }
}

/// Runs [`minimize`] from several initial fields and keeps the lowest energy.
pub fn minimize_multistart(g: &Grid, pf: &ExponentField, opts: &SolverOptions, inits: &[Init]) -> Result<MultistartResult> {
    if inits.is_empty() {
        return Err(Error::InvalidArgument("multistart needs at least one initial field".into()));
    }
    let runs = inits
        .iter()
        .enumerate()
        .map(|(k, init)| {
            let o = SolverOptions {
                init: init.clone(),
                seed: opts.seed.wrapping_add(k as u64),
                ..opts.clone()
            };
            minimize(g, pf, &o)
        })
        .collect::<Result<Vec<_>>>()?;
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.m.total_cmp(&b.1.m))
        .map(|(i, _)| i)
        .expect("runs nonempty");
    let tie_rtol = 1e-6;
    let best_m = runs[best].m;
    let best_norm = g.lp_norm(&runs[best].u, 2.0)?;
    let mut ties = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        if i == best || (run.m - best_m).abs() > tie_rtol * best_m.abs() {
            continue;
        }
        let diff = g.lp_norm(&run.u.add_scaled(-1.0, &runs[best].u)?, 2.0)?;
        if diff > 1e-3 * best_norm {
            ties.push(i);
        }
    }
    Ok(MultistartResult { runs, best, ties })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalityReport {
    pub energy: f64,
    pub dual_residual: f64,
    pub relative_dual_residual: f64,
    pub constraint_residual: f64,
    /// `J'(u)(u) = 2‖u‖² − ∫ p (u⁺)^p`; negative on the Nehari manifold.
    pub j_prime: f64,
    pub min_value: f64,
    /// `I(u) − J(u)/p⁻`.
    pub energy_identity: f64,
    /// `(1/2 − 1/p⁻)‖u‖²_{1,2}`.
    pub identity_lower_bound: f64,
    pub dual_ok: bool,
    pub constraint_ok: bool,
    pub j_prime_negative: bool,
    pub nonnegative: bool,
    pub identity_ok: bool,
}

impl CriticalityReport {
    pub fn passed(&self) -> bool {
        self.dual_ok && self.constraint_ok && self.j_prime_negative && self.nonnegative && self.identity_ok
    }
}

/// Criticality checks of `u` at the given relative tolerances.
pub fn verify_field(g: &Grid, pf: &ExponentField, u: &Field, tol_dual: f64, tol_constraint: f64) -> Result<CriticalityReport> {
    let e = energy(g, pf, u)?.total;
    let kinetic = g.dirichlet_energy(u)?;
    let j = constraint(g, pf, u)?;
    let grad = preconditioned_gradient(g, pf, u, 1e-10)?;
    let relative = if kinetic > 0.0 { grad.dual / kinetic.sqrt() } else { f64::INFINITY };
    let constraint_residual = if kinetic > 0.0 { j.abs() / kinetic } else { f64::INFINITY };
    let j_prime = constraint_derivative(g, pf, u)?;
    let identity = e - j / pf.p_minus;
    let lower = (0.5 - 1.0 / pf.p_minus) * kinetic;
    Ok(CriticalityReport {
        energy: e,
        dual_residual: grad.dual,
        relative_dual_residual: relative,
        constraint_residual,
        j_prime,
        min_value: u.min_value(),
        energy_identity: identity,
        identity_lower_bound: lower,
        dual_ok: relative <= tol_dual,
        constraint_ok: constraint_residual <= tol_constraint,
        j_prime_negative: j_prime < 0.0,
        nonnegative: u.min_value() >= 0.0,
        identity_ok: identity >= lower - 1e-10 * kinetic.max(1.0),
    })
}

/// Re-derives every criticality check for a solver result from scratch.
pub fn verify_critical(g: &Grid, pf: &ExponentField, gs: &GroundState) -> Result<CriticalityReport> {
    verify_field(g, pf, &gs.u, gs.tol_dual, gs.tol_constraint)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbePoint {
    pub k: f64,
    pub t: f64,
    /// `I(t_k w_k)` under the given exponent field.
    pub energy: f64,
    /// Same instanton projected and evaluated with `p ≡ 2*` on the same
    /// grid: the truncation-only reference level.
    pub critical_t: f64,
    pub critical_energy: f64,
    pub threshold: f64,
}

impl ProbePoint {
    pub fn below_threshold(&self) -> bool {
        self.energy < self.threshold
    }

    /// `I(t_k w_k) − I₀(t⁰_k w_k)`: the contribution of the subcritical region.
    pub fn correction(&self) -> f64 {
        self.energy - self.critical_energy
    }
}

/// Projects the translates `w_k(x) = w(x + k e_N)` onto the Nehari manifold
/// and records `(k, t_k, I(t_k w_k))`.
pub fn instanton_threshold_probe(g: &Grid, pf: &ExponentField, k_values: &[f64]) -> Result<Vec<ProbePoint>> {
    pf.check(g)?;
    let dim = g.dim();
    let threshold = critical_level(dim)?;
    let pure = build_constant_exponent(g, g.critical_exponent())?;
    let spec = g.spec();
    let mut out = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let mut center = vec![0.0; dim];
        center[dim - 1] = -k;
        let inside = (0..dim).all(|a| center[a] > spec.lower[a] && center[a] < spec.upper[a]);
        if !inside || g.locate(&center).is_none_or(|i| !g.is_interior(i)) {
            return Err(Error::OffsetOutsideBox(k));
        }
        let w = truncated_instanton(g, &center)?;
        let proj = project(g, pf, &w, 1e-12)?;
        let e = energy(g, pf, &proj.projected)?.total;
        let base = project(g, &pure, &w, 1e-12)?;
        let e0 = energy(g, &pure, &base.projected)?.total;
        out.push(ProbePoint {
            k,
            t: proj.t,
            energy: e,
            critical_t: base.t,
            critical_energy: e0,
            threshold,
        });
    }
    Ok(out)
}

/// Integer offsets `o` with `|o|·h < radius`.
fn ball_offsets(dim: usize, h: f64, radius: f64) -> Vec<Vec<isize>> {
    let reach = (radius / h).floor() as isize;
    let mut out = Vec::new();
    let mut o = vec![-reach; dim];
    loop {
        let r2: f64 = o.iter().map(|&c| (c as f64 * h).powi(2)).sum();
        if r2.sqrt() < radius {
            out.push(o.clone());
        }
        let mut a = dim;
        loop {
            if a == 0 {
                return out;
            }
            a -= 1;
            if o[a] < reach {
                o[a] += 1;
                break;
            }
            o[a] = -reach;
        }
    }
}

/// `x ↦ ∫_{B_radius(x)} |u|^{2*}` on interior cells.
///
/// A spike approaching `S^{N/2}` marks a bubble.
pub fn concentration_profile(g: &Grid, u: &Field, radius: f64) -> Result<Field> {
    g.check(u)?;
    let min = 2.0 * g.spacing();
    if !(radius >= min) {
        return Err(Error::RadiusTooSmall { radius, min });
    }
    let crit = g.critical_exponent();
    if !crit.is_finite() {
        return Err(Error::InvalidArgument("concentration profile needs N >= 3".into()));
    }
    let dim = g.dim();
    let cells = &g.spec().cells_per_axis;
    let offsets = ball_offsets(dim, g.spacing(), radius);
    let density: Vec<f64> = u.values().iter().map(|v| v.abs().powf(crit)).collect();
    let mut strides = vec![1isize; dim];
    for a in (0..dim - 1).rev() {
        strides[a] = strides[a + 1] * cells[a + 1] as isize;
    }
    let vol = g.cell_volume();
    let mut out = vec![0.0; g.cell_count()];
    let mut coords = vec![0usize; dim];
    for &i in g.interior_cells() {
        g.coords_into(i, &mut coords);
        let mut s = 0.0;
        'offsets: for o in &offsets {
            let mut j = i as isize;
            for a in 0..dim {
                let c = coords[a] as isize + o[a];
                if c < 0 || c >= cells[a] as isize {
                    continue 'offsets;
                }
                j += o[a] * strides[a];
            }
            s += density[j as usize];
        }
        out[i] = vol * s;
    }
    Ok(g.wrap(out))
}

/// Number of cells in the filter ball used by [`concentration_profile`].
pub fn filter_cell_count(dim: usize, h: f64, radius: f64) -> usize {
    ball_offsets(dim, h, radius).len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponent::{build_constant_exponent, build_exponent};
    use crate::functional::{apriori_constants, instanton, sobolev_constant};
    use crate::grid::{build_grid, DomainShape, GridSpec};

    fn ball(cells: usize) -> Grid {
        build_grid(GridSpec::cube(3, 1.2, cells).unwrap(), DomainShape::centered_ball(3, 1.0)).unwrap()
    }

    fn bump(g: &Grid, c: [f64; 3], w: f64) -> Field {
        g.field_from_fn(|x| {
            let r2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
            (-r2 / (w * w)).exp()
        })
    }

    #[test]
    fn constant_exponent_projection_has_closed_form() {
        let g = ball(16);
        let q = 4.0;
        let pf = build_constant_exponent(&g, q).unwrap();
        let u = bump(&g, [0.1, 0.0, -0.2], 0.5);
        let d = g.dirichlet_energy(&u).unwrap();
        let nq = g.lp_norm(&u, q).unwrap().powf(q);
        let t_exact = (d / nq).powf(1.0 / (q - 2.0));
        let res = project(&g, &pf, &u, 1e-14).unwrap();
        assert!((res.t - t_exact).abs() < 1e-10 * t_exact);
        let scaled = project(&g, &pf, &u.scaled(3.0), 1e-14).unwrap();
        assert!((scaled.t - res.t / 3.0).abs() < 1e-10 * res.t);
    }

    #[test]
    fn projection_rejects_nonpositive_fields() {
        let g = ball(12);
        let pf = build_constant_exponent(&g, 4.0).unwrap();
        let neg = bump(&g, [0.0; 3], 0.5).scaled(-1.0);
        assert_eq!(project(&g, &pf, &neg, 1e-10).unwrap_err(), Error::NonpositiveInput);
        assert_eq!(project(&g, &pf, &g.zeros(), 1e-10).unwrap_err(), Error::NonpositiveInput);
    }

    #[test]
    fn projection_is_idempotent() {
        let g = ball(16);
        let pf = build_exponent(&g, DomainShape::centered_ball(3, 0.5), 0.3, 3.0, 1.0).unwrap();
        let u = bump(&g, [0.2, 0.1, 0.0], 0.4).scaled(25.0);
        let first = project(&g, &pf, &u, 1e-13).unwrap();
        assert!(first.constraint_residual <= 1e-12);
        let second = project(&g, &pf, &first.projected, 1e-13).unwrap();
        assert!((second.t - 1.0).abs() < 1e-8);
    }

    #[test]
    fn unprojected_instanton_fails_the_constraint_check() {
        let g = ball(16);
        let pf = build_constant_exponent(&g, 4.0).unwrap();
        let w = instanton(&g, &[0.0; 3]).unwrap();
        let report = verify_field(&g, &pf, &w, 1e-4, 1e-8).unwrap();
        assert!(!report.constraint_ok);
        assert!(!report.passed());
    }

    #[test]
    fn minimize_converges_on_a_constant_exponent_ball() {
        let g = ball(16);
        let pf = build_constant_exponent(&g, 4.0).unwrap();
        let opts = SolverOptions {
            tol_dual: 1e-6,
            ..SolverOptions::default()
        };
        let gs = minimize(&g, &pf, &opts).unwrap();
        assert!(gs.converged, "{:?}", gs.trace.last());
        assert!(gs.m > 0.0);
        assert!(gs.u.min_value() >= 0.0);
        assert!(gs.trace.windows(2).all(|w| w[1].energy <= w[0].energy));
        let report = verify_critical(&g, &pf, &gs).unwrap();
        assert!(report.passed(), "{report:?}");

        let consts = apriori_constants(3, 4.0, pf.omega_delta_measure(&g)).unwrap();
        assert!(gs.m >= consts.level_lower_bound());
    }

    #[test]
    fn multistart_reports_the_lowest_run() {
        let g = ball(12);
        let pf = build_constant_exponent(&g, 3.0).unwrap();
        let opts = SolverOptions {
            tol_dual: 1e-5,
            ..SolverOptions::default()
        };
        let res = minimize_multistart(&g, &pf, &opts, &[Init::RandomBump, Init::Instanton]).unwrap();
        let best = res.best().m;
        assert!(res.runs.iter().all(|r| r.m >= best));
        // Both starts reach the same radial ground state.
        assert!((res.runs[0].m - res.runs[1].m).abs() < 1e-4 * best);
    }

    #[test]
    fn minimize_rejects_fields_failing_h1() {
        let g = ball(12);
        let pure = build_constant_exponent(&g, 6.0).unwrap();
        assert!(matches!(
            minimize(&g, &pure, &SolverOptions::default()),
            Err(Error::InvalidExponentField(_))
        ));
    }

    #[test]
    fn profile_of_zero_and_radius_check() {
        let g = ball(12);
        let p = concentration_profile(&g, &g.zeros(), 3.0 * g.spacing()).unwrap();
        assert_eq!(p.max_abs(), 0.0);
        assert!(matches!(
            concentration_profile(&g, &g.zeros(), g.spacing()),
            Err(Error::RadiusTooSmall { .. })
        ));
    }

    #[test]
    fn profile_mass_is_filter_weighted_total() {
        let g = build_grid(GridSpec::cube(3, 2.0, 20).unwrap(), DomainShape::Box).unwrap();
        let u = bump(&g, [0.0; 3], 0.3);
        // Cut the bump so its support stays clear of the frame by the radius.
        let u = g.map(&u, |v| if v > 1e-3 { v } else { 0.0 }).unwrap();
        let radius = 0.5;
        let prof = concentration_profile(&g, &u, radius).unwrap();
        let mass: f64 = g.integrate(&g.map(&u, |v| v.abs().powi(6)).unwrap()).unwrap();
        let total = g.integrate(&prof).unwrap();
        let factor = filter_cell_count(3, g.spacing(), radius) as f64 * g.cell_volume();
        assert!((total - mass * factor).abs() < 1e-12 * total);
    }

    #[test]
    fn profile_peak_sees_the_instanton_mass() {
        let g = build_grid(GridSpec::cube(3, 6.0, 48).unwrap(), DomainShape::Box).unwrap();
        let w = instanton(&g, &[0.0; 3]).unwrap();
        let prof = concentration_profile(&g, &w, 4.0).unwrap();
        let peak = prof.max_value();
        let s32 = sobolev_constant(3).unwrap().powf(1.5);
        // Most of ‖w‖_{2*}^{2*} = S^{3/2} sits within radius 4 of the centre.
        assert!(peak > 0.8 * s32 && peak < 1.05 * s32, "{peak} vs {s32}");
    }
}
