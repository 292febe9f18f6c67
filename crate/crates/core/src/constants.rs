//! Best embedding constants `S_q(U)`, the curve
//! `g(q) = (1/2 − 1/q) S_q(U)^{q/(q−2)}`, its threshold crossing `q̄`, and the
//! ball/annulus sufficient conditions for `S₂(U) < 1`.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functional::{critical_level, sobolev_constant};
use crate::grid::{build_grid, CgOptions, DomainShape, Field, Grid, GridSpec};

#[derive(Debug, Clone)]
pub struct BestConstant {
    pub q: f64,
    /// `S_q(U)`.
    pub value: f64,
    /// Nonnegative minimiser with `‖·‖_q = 1`.
    pub extremal: Field,
    pub iterations: usize,
    /// For `q = 2`: `‖−Δ_h φ − λ φ‖₂/‖φ‖₂`. Otherwise the `H¹` norm of the
    /// Rayleigh-quotient gradient relative to `‖φ‖_{1,2}`.
    pub residual: f64,
}

/// Rayleigh quotient `‖∇v‖²/‖v‖_q²` recomputed from scratch.
pub fn rayleigh_quotient(g: &Grid, v: &Field, q: f64) -> Result<f64> {
    let n = g.lp_norm(v, q)?;
    if n == 0.0 {
        return Err(Error::NonpositiveInput);
    }
    Ok(g.dirichlet_energy(v)? / (n * n))
}

fn normalized(g: &Grid, v: &Field, q: f64) -> Result<Field> {
    let n = g.lp_norm(v, q)?;
    if !(n > 0.0) {
        return Err(Error::NonpositiveInput);
    }
    Ok(v.scaled(1.0 / n))
}

fn check_interior(g: &Grid) -> Result<()> {
    if g.interior_count() == 0 {
        Err(Error::EmptyInterior)
    } else {
        Ok(())
    }
}

fn eigen_residual(g: &Grid, phi: &Field) -> Result<(f64, f64)> {
    let a = g.apply_laplacian(phi)?;
    let pp: f64 = phi.values().iter().map(|v| v * v).sum();
    let ap: f64 = a.values().iter().zip(phi.values()).map(|(x, y)| x * y).sum();
    let lambda = ap / pp;
    let r = a.add_scaled(-lambda, phi)?;
    let rr: f64 = r.values().iter().map(|v| v * v).sum();
    Ok((lambda, (rr / pp).sqrt()))
}

/// First Dirichlet eigenvalue of `−Δ_h` on the grid's interior.
///
/// Inverse iteration started from the torsion function; once the residual
/// is small relative to the Rayleigh quotient `λ` the solves are shifted by
/// `0.9·(λ − r)`, which stays below the smallest eigenvalue.
pub fn s2(g: &Grid, tol: f64) -> Result<BestConstant> {
    check_interior(g)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let ones = g.field_from_fn(|_| 1.0);
    let mut phi = g.solve_poisson(&ones, 1e-10)?;
    let max_iters = 200;
    for it in 0..max_iters {
        let scale = g.euclidean_norm(&phi)?;
        phi = phi.scaled(1.0 / scale);
        let (lambda, res) = eigen_residual(g, &phi)?;
        if res <= tol {
            let phi = normalized(g, &phi.positive_part(), 2.0)?;
            return Ok(BestConstant {
                q: 2.0,
                value: rayleigh_quotient(g, &phi, 2.0)?,
                extremal: phi,
                iterations: it,
                residual: res,
            });
        }
        let shift = if res < 0.1 * lambda { 0.9 * (lambda - res) } else { 0.0 };
        let opts = CgOptions {
            tol: 1e-10,
            max_iters: 50_000,
            shift,
        };
        let mut next = g.solve_poisson_with(&phi, &opts, Some(&phi.scaled(1.0 / (lambda - shift))))?.solution;
        if next.max_value() < -next.min_value() {
            next = next.scaled(-1.0);
        }
        phi = next;
    }
    let (_, res) = eigen_residual(g, &phi)?;
    Err(Error::NoConvergence {
        solver: "s2",
        iterations: max_iters,
        residual: res,
    })
}

/// Outcome of the `L^q`-sphere descent, converged or not.
#[derive(Debug, Clone)]
struct SqRun {
    best: BestConstant,
    converged: bool,
}

fn sq_descent(g: &Grid, q: f64, tol: f64, start: Field, max_iters: usize) -> Result<SqRun> {
    let mut v = normalized(g, &start.positive_part(), q)?;
    let mut rq = g.dirichlet_energy(&v)?;
    let mut tau = 1.0;
    let mut warm: Option<Field> = None;
    let mut iterations = 0;
    loop {
        let load = g.map(&v, |x| if x > 0.0 { x.powf(q - 1.0) } else { 0.0 })?;
        let y = g
            .solve_poisson_with(&load, &CgOptions::with_tol(1e-11), warm.as_ref())?
            .solution;
        let d = v.add_scaled(-rq, &y)?;
        let residual = (g.dirichlet_energy(&d)? / rq).sqrt();
        warm = Some(y);
        if residual <= tol || iterations >= max_iters {
            return Ok(SqRun {
                best: BestConstant {
                    q,
                    value: rq,
                    extremal: v,
                    iterations,
                    residual,
                },
                converged: residual <= tol,
            });
        }
        iterations += 1;
        let mut trial = tau;
        let mut accepted = false;
        while trial > 1e-8 {
            let w = v.add_scaled(-trial, &d)?.positive_part();
            if let Ok(w) = normalized(g, &w, q) {
                let rw = g.dirichlet_energy(&w)?;
                if rw <= rq {
                    v = w;
                    rq = rw;
                    accepted = true;
                    break;
                }
            }
            trial *= 0.5;
        }
        if !accepted {
            // Descent has stalled at round-off level. The quotient error is
            // of order residual², so a stall below the floor still counts.
            return Ok(SqRun {
                best: BestConstant {
                    q,
                    value: rq,
                    extremal: v,
                    iterations,
                    residual,
                },
                converged: residual <= tol.max(SQ_STALL_FLOOR),
            });
        }
        tau = (trial * 1.5).min(4.0);
    }
}

fn random_start(g: &Grid, seed: u64) -> Result<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..g.cell_count()).map(|_| rng.gen_range(0.5..1.5)).collect();
    let noise = g.field_from_values(noise)?;
    g.solve_poisson(&noise, 1e-10)
}

const SQ_MAX_ITERS: usize = 2000;
/// Relative gradient norm below which a stalled descent is accepted.
const SQ_STALL_FLOOR: f64 = 1e-6;

fn check_q(g: &Grid, q: f64) -> Result<()> {
    let crit = g.critical_exponent();
    if !(q >= 2.0 && q <= crit) {
        return Err(Error::ExponentOutOfRange(format!("q = {q} outside [2, {crit}]")));
    }
    Ok(())
}

/// `S_q(U)` by preconditioned gradient descent on the unit `L^q` sphere.
///
/// The step direction is `v − S·(−Δ_h)^{-1}(v^{q−1})`, the `H¹` gradient of
/// the quotient; each trial is clipped to its positive part and
/// renormalised. `q = 2` is delegated to [`s2`].
pub fn sq(g: &Grid, q: f64, tol: f64, seed: u64) -> Result<BestConstant> {
    check_interior(g)?;
    check_q(g, q)?;
    if q == 2.0 {
        return s2(g, tol);
    }
    let run = sq_descent(g, q, tol, random_start(g, seed)?, SQ_MAX_ITERS)?;
    if run.converged {
        Ok(run.best)
    } else {
        Err(Error::NoConvergence {
            solver: "sq",
            iterations: run.best.iterations,
            residual: run.best.residual,
        })
    }
}

/// `S_q` descent from a caller-supplied start; non-convergence is reported
/// through the flag rather than an error.
pub fn sq_from(g: &Grid, q: f64, tol: f64, start: &Field, max_iters: usize) -> Result<(BestConstant, bool)> {
    check_interior(g)?;
    check_q(g, q)?;
    g.check(start)?;
    let run = sq_descent(g, q, tol, start.clone(), max_iters)?;
    Ok((run.best, run.converged))
}

/// `(1/2 − 1/q)·S^{q/(q−2)}`, evaluated through logarithms.
pub fn g_value(sq_value: f64, q: f64) -> Result<f64> {
    if !(q > 2.0) {
        return Err(Error::ExponentOutOfRange(format!("g(q) needs q > 2, got {q}")));
    }
    if !(sq_value > 0.0) {
        return Err(Error::InvalidArgument(format!("S_q must be positive, got {sq_value}")));
    }
    if q.is_infinite() {
        return Ok(0.5 * sq_value);
    }
    Ok(((0.5 - 1.0 / q).ln() + q / (q - 2.0) * sq_value.ln()).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GSample {
    pub q: f64,
    /// Value of `S_q(U)` entering `g`, after blending with the analytic `S`.
    pub sq: f64,
    pub g: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QBarResult {
    pub qbar: f64,
    pub bracket: (f64, f64),
    /// The scan, in increasing `q`.
    pub samples: Vec<GSample>,
    /// `S^{N/2}/N`.
    pub threshold: f64,
    pub g_at_qbar: f64,
    pub s2: f64,
}

impl QBarResult {
    pub fn relative_error(&self) -> f64 {
        (self.g_at_qbar - self.threshold).abs() / self.threshold
    }
}

/// Width of the window below `2*` where the computed `S_q` is capped by `S`.
pub const CRITICAL_BLEND: f64 = 0.05;
/// Number of scan points for [`qbar`].
pub const QBAR_SAMPLES: usize = 64;

struct GCurve<'a> {
    g: &'a Grid,
    crit: f64,
    sobolev: f64,
    tol: f64,
    warm: Field,
}

impl GCurve<'_> {
    fn eval(&mut self, q: f64) -> Result<GSample> {
        if q >= self.crit {
            return Ok(GSample {
                q,
                sq: self.sobolev,
                g: g_value(self.sobolev, q)?,
            });
        }
        let near = self.crit - q <= CRITICAL_BLEND;
        let (best, converged) = sq_from(self.g, q, self.tol, &self.warm, SQ_MAX_ITERS)?;
        if !converged && !near {
            return Err(Error::NoConvergence {
                solver: "sq",
                iterations: best.iterations,
                residual: best.residual,
            });
        }
        let value = if near { best.value.min(self.sobolev) } else { best.value };
        self.warm = best.extremal;
        Ok(GSample {
            q,
            sq: value,
            g: g_value(value, q)?,
        })
    }
}

/// Scan points `2 + (2* − 2)·10^{−3(1 − k/63)}`, `k = 0..64`, ending at `2*`.
pub fn qbar_scan_points(crit: f64) -> Vec<f64> {
    let n = QBAR_SAMPLES;
    (0..n)
        .map(|k| {
            let e = -3.0 * (1.0 - k as f64 / (n - 1) as f64);
            2.0 + (crit - 2.0) * 10f64.powf(e)
        })
        .collect()
}

/// Smallest `q ∈ (2, 2*]` with `g(q) = S^{N/2}/N`.
///
/// Scans [`qbar_scan_points`] for the first sample reaching the threshold,
/// then refines with the Illinois variant of regula falsi until
/// `|g − threshold|/threshold ≤ tol`.
pub fn qbar(g: &Grid, tol: f64) -> Result<QBarResult> {
    check_interior(g)?;
    let dim = g.dim();
    let crit = g.critical_exponent();
    let sobolev = sobolev_constant(dim)?;
    let threshold = critical_level(dim)?;
    let base = s2(g, 1e-9)?;
    if base.value >= 1.0 {
        return Err(Error::HypothesisViolated(format!("S₂(U) ≥ 1 (computed {:.6})", base.value)));
    }
    let inner_tol = (tol * 1e-2).clamp(1e-9, 1e-6);
    let mut curve = GCurve {
        g,
        crit,
        sobolev,
        tol: inner_tol,
        warm: base.extremal.clone(),
    };

    let mut samples = Vec::with_capacity(QBAR_SAMPLES);
    let mut crossing = None;
    for q in qbar_scan_points(crit) {
        let s = curve.eval(q)?;
        samples.push(s);
        if s.g >= threshold {
            crossing = Some(samples.len() - 1);
            break;
        }
    }
    let k = crossing.expect("the last scan point is 2*, where g equals the threshold");
    if k == 0 {
        return Err(Error::NoBracket("g already exceeds the threshold at the first scan point".into()));
    }
    let hit = samples[k];
    if (hit.g - threshold).abs() <= tol * threshold {
        return Ok(QBarResult {
            qbar: hit.q,
            bracket: (samples[k - 1].q, hit.q),
            samples,
            threshold,
            g_at_qbar: hit.g,
            s2: base.value,
        });
    }

    let (mut a, mut b) = (samples[k - 1], hit);
    curve.warm = base.extremal;
    let mut fa = a.g - threshold;
    let mut fb = b.g - threshold;
    let mut side = 0i8;
    let mut best = b;
    for _ in 0..100 {
        let q = (a.q * fb - b.q * fa) / (fb - fa);
        let q = if q > a.q && q < b.q { q } else { 0.5 * (a.q + b.q) };
        let s = curve.eval(q)?;
        let f = s.g - threshold;
        if f.abs() < (best.g - threshold).abs() {
            best = s;
        }
        if f.abs() <= tol * threshold {
            break;
        }
        if f < 0.0 {
            a = s;
            fa = f;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = s;
            fb = f;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
        if b.q - a.q <= 1e-12 {
            break;
        }
    }
    if (best.g - threshold).abs() > tol * threshold {
        return Err(Error::NoConvergence {
            solver: "qbar",
            iterations: 100,
            residual: (best.g - threshold).abs() / threshold,
        });
    }
    Ok(QBarResult {
        qbar: best.q,
        bracket: (a.q, b.q),
        samples,
        threshold,
        g_at_qbar: best.g,
        s2: base.value,
    })
}

/// Cells per axis of the reference unit-ball grid: `h = 1/32` in 3-D,
/// coarser in higher dimension to keep about 4·10⁵ cells.
pub fn reference_cells(dim: usize) -> usize {
    let by_budget = (400_000f64).powf(1.0 / dim as f64).floor() as usize;
    by_budget.clamp(8, 144)
}

/// Grid of the ball `B_R(0)` inside the cube `[−1.125R, 1.125R]^N`.
pub fn ball_grid(dim: usize, radius: f64, cells: usize) -> Result<Grid> {
    if !(radius > 0.0) {
        return Err(Error::InvalidRadii(format!("radius {radius} must be positive")));
    }
    build_grid(
        GridSpec::cube(dim, 1.125 * radius, cells)?,
        DomainShape::centered_ball(dim, radius),
    )
}

fn unit_ball_cache() -> &'static Mutex<HashMap<usize, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// `S₂(B₁)` at the reference resolution, computed once per dimension.
pub fn unit_ball_s2(dim: usize) -> Result<f64> {
    if let Some(&v) = unit_ball_cache().lock().expect("cache lock").get(&dim) {
        return Ok(v);
    }
    let g = ball_grid(dim, 1.0, reference_cells(dim))?;
    let v = s2(&g, 1e-8)?.value;
    unit_ball_cache().lock().expect("cache lock").insert(dim, v);
    Ok(v)
}

/// `(R > √S₂(B₁), S₂(B₁))`: when true, `S₂(B_R) < 1`.
pub fn ball_condition(radius: f64, dim: usize) -> Result<(bool, f64)> {
    if !(radius > 0.0) {
        return Err(Error::InvalidRadii(format!("radius {radius} must be positive")));
    }
    let s = unit_ball_s2(dim)?;
    Ok((radius > s.sqrt(), s))
}

/// `(R − r > 2√S₂(B₁), S₂(B₁))`: when true, every annulus `B_R ∖ B̄_r`
/// contains a ball of radius `(R − r)/2` with `S₂ < 1`.
pub fn annulus_condition(outer: f64, inner: f64, dim: usize) -> Result<(bool, f64)> {
    if !(inner > 0.0 && inner < outer && outer.is_finite()) {
        return Err(Error::InvalidRadii(format!("need 0 < r < R, got R = {outer}, r = {inner}")));
    }
    let s = unit_ball_s2(dim)?;
    Ok((outer - inner > 2.0 * s.sqrt(), s))
}
