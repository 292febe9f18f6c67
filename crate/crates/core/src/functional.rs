//! Energy functional, its derivative and Nehari constraint, the a-priori
//! constants bounding the Nehari manifold away from zero, the Sobolev
//! constant and the Aubin–Talenti instanton.
//!
//! With `u⁺ = max(u, 0)`:
//!
//! ```text
//! I(u)     = ½‖∇u‖² − ∫ (u⁺)^{p(x)} / p(x)
//! I'(u)(v) = ∫ ∇u·∇v − ∫ (u⁺)^{p(x)−1} v
//! J(u)     = I'(u)(u) = ‖∇u‖² − ∫ (u⁺)^{p(x)}
//! ```

use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::exponent::ExponentField;
use crate::grid::{critical_exponent, Field, Grid};

/// `t^p` for `t > 0`, evaluated through the logarithm; zero otherwise.
#[inline]
pub fn pos_pow(t: f64, p: f64) -> f64 {
    if t > 0.0 {
        (p * t.ln()).exp()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub total: f64,
    /// `½‖u‖²_{1,2}`.
    pub kinetic: f64,
    /// `∫_{Ω_δ} (u⁺)^{p}/p`.
    pub potential_sub: f64,
    /// `∫_{G∖Ω_δ} (u⁺)^{2*}/2*`.
    pub potential_crit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AprioriConstants {
    pub sobolev: f64,
    /// `(1/p⁻)|Ω_δ|^{(2*−p⁻)/2*}` as printed.
    pub a: f64,
    /// `a·S^{−p⁻/2}`: the same bound once `‖u‖_{2*}` is traded for `‖u‖_{1,2}`.
    pub a_corrected: f64,
    /// `S^{−2*/2}/p⁻`.
    pub b: f64,
    /// `2*·a_corrected`.
    pub c1: f64,
    /// `2*·b + S^{−2*/2}`.
    pub c2: f64,
    /// Positive root of `c1 t^{p⁻−2} + c2 t^{2*−2} = 1`.
    pub eta: f64,
    pub p_minus: f64,
    pub critical: f64,
}

impl AprioriConstants {
    /// `(1/2 − 1/p⁻) η²`, the lower bound on the ground-state level.
    pub fn level_lower_bound(&self) -> f64 {
        (0.5 - 1.0 / self.p_minus) * self.eta * self.eta
    }
}

/// `S = πN(N−2) (Γ(N/2)/Γ(N))^{2/N}`.
pub fn sobolev_constant(dim: usize) -> Result<f64> {
    if dim < 3 {
        return Err(Error::InvalidArgument(format!("Sobolev constant needs N >= 3, got {dim}")));
    }
    let n = dim as f64;
    let log_ratio = ln_gamma(n / 2.0) - ln_gamma(n);
    Ok(PI * n * (n - 2.0) * (2.0 / n * log_ratio).exp())
}

/// `S^{N/2}/N`, the level that minimisers must stay below.
pub fn critical_level(dim: usize) -> Result<f64> {
    let s = sobolev_constant(dim)?;
    Ok(s.powf(dim as f64 / 2.0) / dim as f64)
}

/// `[N(N−2)]^{(N−2)/4} / (1 + r²)^{(N−2)/2}`.
pub fn instanton_value(dim: usize, r: f64) -> f64 {
    let n = dim as f64;
    let c = (n * (n - 2.0)).powf((n - 2.0) / 4.0);
    c * (1.0 + r * r).powf(-(n - 2.0) / 2.0)
}

fn check_center(g: &Grid, center: &[f64]) -> Result<()> {
    if g.dim() < 3 {
        return Err(Error::InvalidArgument("the instanton needs N >= 3".into()));
    }
    if center.len() != g.dim() {
        return Err(Error::InvalidArgument("center dimension mismatch".into()));
    }
    let spec = g.spec();
    let inside = (0..g.dim()).all(|a| center[a] > spec.lower[a] && center[a] < spec.upper[a]);
    if !inside {
        return Err(Error::InvalidArgument(format!("center {center:?} is outside the box")));
    }
    Ok(())
}

fn radius(x: &[f64], center: &[f64]) -> f64 {
    x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Samples `w(x − center)` at interior cell centres.
///
/// The sampled field jumps to zero at the Dirichlet frame; use
/// [`truncated_instanton`] wherever gradients of the instanton matter.
pub fn instanton(g: &Grid, center: &[f64]) -> Result<Field> {
    check_center(g, center)?;
    let dim = g.dim();
    Ok(g.field_from_fn(|x| instanton_value(dim, radius(x, center))))
}

/// `(w(x − center) − w(ρ))⁺` with `ρ` the distance from `center` to the
/// nearest non-interior cell: continuous across the Dirichlet boundary,
/// equal to the instanton up to a constant shift inside the ball of radius ρ.
pub fn truncated_instanton(g: &Grid, center: &[f64]) -> Result<Field> {
    check_center(g, center)?;
    let dim = g.dim();
    let rho = g.distance_to_exterior(center);
    let floor = instanton_value(dim, rho);
    Ok(g.field_from_fn(|x| (instanton_value(dim, radius(x, center)) - floor).max(0.0)))
}

fn check_pair(g: &Grid, pf: &ExponentField, u: &Field) -> Result<()> {
    g.check(u)?;
    pf.check(g)
}

pub fn energy(g: &Grid, pf: &ExponentField, u: &Field) -> Result<EnergyBreakdown> {
    check_pair(g, pf, u)?;
    let kinetic = 0.5 * g.dirichlet_energy(u)?;
    let (mut sub, mut crit) = (0.0, 0.0);
    let vals = u.values();
    for &i in g.interior_cells() {
        let t = vals[i];
        if t > 0.0 {
            let p = pf.p[i];
            let term = pos_pow(t, p) / p;
            if pf.omega_delta_mask[i] {
                sub += term;
            } else {
                crit += term;
            }
        }
    }
    let vol = g.cell_volume();
    let potential_sub = vol * sub;
    let potential_crit = vol * crit;
    Ok(EnergyBreakdown {
        total: kinetic - potential_sub - potential_crit,
        kinetic,
        potential_sub,
        potential_crit,
    })
}

/// Strong-form representative `−Δ_h u − (u⁺)^{p(x)−1}` of `I'(u)`:
/// `I'(u)(v) = cell_volume · ⟨residual(u), v⟩`.
pub fn residual(g: &Grid, pf: &ExponentField, u: &Field) -> Result<Field> {
    check_pair(g, pf, u)?;
    let mut out = g.apply_laplacian(u)?.into_values();
    let vals = u.values();
    for &i in g.interior_cells() {
        out[i] -= pos_pow(vals[i], pf.p[i] - 1.0);
    }
    Ok(g.wrap(out))
}

/// `I'(u)(v)`.
pub fn pairing(g: &Grid, pf: &ExponentField, u: &Field, v: &Field) -> Result<f64> {
    g.check(v)?;
    let r = residual(g, pf, u)?;
    g.inner(&r, v)
}

/// `∫ (u⁺)^{p(x)}`.
pub fn nonlinear_mass(g: &Grid, pf: &ExponentField, u: &Field) -> Result<f64> {
    check_pair(g, pf, u)?;
    let vals = u.values();
    let s: f64 = g.interior_cells().iter().map(|&i| pos_pow(vals[i], pf.p[i])).sum();
    Ok(g.cell_volume() * s)
}

/// `J(u) = ‖u‖²_{1,2} − ∫ (u⁺)^{p(x)}`.
pub fn constraint(g: &Grid, pf: &ExponentField, u: &Field) -> Result<f64> {
    Ok(g.dirichlet_energy(u)? - nonlinear_mass(g, pf, u)?)
}

/// `J'(u)(u) = 2‖u‖²_{1,2} − ∫ p(x)(u⁺)^{p(x)}`.
pub fn constraint_derivative(g: &Grid, pf: &ExponentField, u: &Field) -> Result<f64> {
    check_pair(g, pf, u)?;
    let vals = u.values();
    let s: f64 = g
        .interior_cells()
        .iter()
        .map(|&i| pf.p[i] * pos_pow(vals[i], pf.p[i]))
        .sum();
    Ok(2.0 * g.dirichlet_energy(u)? - g.cell_volume() * s)
}

/// Positive root of `c1 t^{e1} + c2 t^{e2} = 1` (`e1, e2 > 0`), by bisection.
pub fn solve_eta(c1: f64, c2: f64, e1: f64, e2: f64) -> Result<f64> {
    if !(c1 >= 0.0 && c2 >= 0.0 && c1 + c2 > 0.0 && e1 > 0.0 && e2 > 0.0) {
        return Err(Error::InvalidArgument("eta equation needs nonnegative coefficients and positive powers".into()));
    }
    let f = |t: f64| c1 * t.powf(e1) + c2 * t.powf(e2) - 1.0;
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::NoBracket("eta equation".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn apriori_constants(dim: usize, p_minus: f64, omega_delta_measure: f64) -> Result<AprioriConstants> {
    let crit = critical_exponent(dim);
    let s = sobolev_constant(dim)?;
    if !(p_minus > 2.0 && p_minus < crit) {
        return Err(Error::ExponentOutOfRange(format!("p⁻ = {p_minus} must lie in (2, {crit})")));
    }
    if !(omega_delta_measure > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "|Ω_δ| = {omega_delta_measure} must be positive"
        )));
    }
    let a = omega_delta_measure.powf((crit - p_minus) / crit) / p_minus;
    let b = s.powf(-crit / 2.0) / p_minus;
    let a_corrected = a * s.powf(-p_minus / 2.0);
    let c1 = crit * a_corrected;
    let c2 = crit * b + s.powf(-crit / 2.0);
    let eta = solve_eta(c1, c2, p_minus - 2.0, crit - 2.0)?;
    Ok(AprioriConstants {
        sobolev: s,
        a,
        a_corrected,
        b,
        c1,
        c2,
        eta,
        p_minus,
        critical: crit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponent::{build_constant_exponent, build_exponent};
    use crate::grid::{build_grid, DomainShape, GridSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ball_grid() -> Grid {
        build_grid(GridSpec::cube(3, 2.0, 16).unwrap(), DomainShape::centered_ball(3, 1.8)).unwrap()
    }

    fn smooth_positive(g: &Grid, rng: &mut ChaCha8Rng) -> Field {
        let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let amp = rng.gen_range(0.5..2.0);
        let w = rng.gen_range(0.3..0.9);
        g.field_from_fn(|x| {
            let r2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
            amp * (-r2 / (w * w)).exp()
        })
    }

    /// `Γ(n)` for integers and half-integers from the factorial formulas.
    fn exact_gamma(two_x: usize) -> f64 {
        if two_x.is_multiple_of(2) {
            (1..two_x / 2).map(|k| k as f64).product()
        } else {
            // Γ(k + 1/2) = (2k)! √π / (4^k k!)
            let k = two_x / 2;
            let num: f64 = (1..=2 * k).map(|j| j as f64).product();
            let den: f64 = 4f64.powi(k as i32) * (1..=k).map(|j| j as f64).product::<f64>();
            num / den * PI.sqrt()
        }
    }

    #[test]
    fn sobolev_constant_closed_forms() {
        let s3 = sobolev_constant(3).unwrap();
        assert!((s3 - 3.0 * (PI / 2.0).powf(4.0 / 3.0)).abs() < 1e-12 * s3);
        assert!((s3 - 5.4779).abs() < 1e-4);
        let s4 = sobolev_constant(4).unwrap();
        assert!((s4 - 8.0 * PI / 6f64.sqrt()).abs() < 1e-12 * s4);
        for dim in 3..=8usize {
            let n = dim as f64;
            let exact = PI * n * (n - 2.0) * (exact_gamma(dim) / exact_gamma(2 * dim)).powf(2.0 / n);
            let s = sobolev_constant(dim).unwrap();
            assert!((s - exact).abs() < 1e-12 * exact, "dim {dim}: {s} vs {exact}");
        }
        let level = critical_level(3).unwrap();
        assert!((level - 4.2740).abs() < 1e-3);
        assert!(sobolev_constant(2).is_err());
    }

    #[test]
    fn instanton_point_values() {
        let c3 = 3f64.powf(0.25);
        assert!((instanton_value(3, 0.0) - c3).abs() < 1e-15);
        assert!((c3 - 1.31607).abs() < 1e-5);
        assert!((instanton_value(3, 1.0) - c3 / 2f64.sqrt()).abs() < 1e-15);
        let g = build_grid(GridSpec::cube(3, 2.0, 16).unwrap(), DomainShape::Box).unwrap();
        // A centre that coincides with a cell centre reproduces C_3 there.
        let c = g.center(g.locate(&[0.1, 0.1, 0.1]).unwrap());
        let w = instanton(&g, &c).unwrap();
        assert!((w.max_value() - c3).abs() < 1e-15);
        // Translation: w_k(x) = w(x + k e_N) is the instanton centred at −k e_N.
        let k = 0.75;
        let shifted = instanton(&g, &[0.0, 0.0, -k]).unwrap();
        let probe = g.locate(&[0.3, -0.2, 0.4]).unwrap();
        let x = g.center(probe);
        let expect = instanton_value(3, (x[0] * x[0] + x[1] * x[1] + (x[2] + k).powi(2)).sqrt());
        assert!((shifted.values()[probe] - expect).abs() < 1e-15);
        assert!(instanton(&g, &[5.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn truncated_instanton_vanishes_at_the_frame() {
        let g = build_grid(GridSpec::cube(3, 4.0, 16).unwrap(), DomainShape::Box).unwrap();
        let w = truncated_instanton(&g, &[0.0; 3]).unwrap();
        let raw = instanton(&g, &[0.0; 3]).unwrap();
        assert!(w.min_value() >= 0.0);
        let rho = g.distance_to_exterior(&[0.0; 3]);
        let shift = instanton_value(3, rho);
        let i = g.locate(&[0.1, 0.1, 0.1]).unwrap();
        assert!((raw.values()[i] - w.values()[i] - shift).abs() < 1e-15);
    }

    #[test]
    fn energy_of_trivial_and_negative_fields() {
        let g = ball_grid();
        let pf = build_exponent(&g, DomainShape::centered_ball(3, 0.7), 0.4, 4.0, 1.0).unwrap();
        let e = energy(&g, &pf, &g.zeros()).unwrap();
        assert_eq!(e.total, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let neg = smooth_positive(&g, &mut rng).scaled(-1.0);
        let e = energy(&g, &pf, &neg).unwrap();
        assert_eq!(e.total, e.kinetic);
        assert_eq!(e.potential_sub + e.potential_crit, 0.0);
        let j = constraint(&g, &pf, &neg).unwrap();
        assert!((j - g.dirichlet_energy(&neg).unwrap()).abs() < 1e-12 * j);
        assert!(j > 0.0);
    }

    #[test]
    fn constant_exponent_identities() {
        let g = ball_grid();
        let q = 4.0;
        let pf = build_constant_exponent(&g, q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let u = smooth_positive(&g, &mut rng);
            let d = g.dirichlet_energy(&u).unwrap();
            let nq = g.lp_norm(&u, q).unwrap().powf(q);
            let e = energy(&g, &pf, &u).unwrap();
            assert!((e.total - (0.5 * d - nq / q)).abs() < 1e-12 * d);
            assert!((e.total - (e.kinetic - e.potential_sub - e.potential_crit)).abs() == 0.0);
            let j = constraint(&g, &pf, &u).unwrap();
            assert!((j - (d - nq)).abs() < 1e-12 * d);
            let pairing_uu = pairing(&g, &pf, &u, &u).unwrap();
            assert!((pairing_uu - j).abs() < 1e-12 * d);
        }
    }

    #[test]
    fn residual_represents_pairing() {
        let g = ball_grid();
        let pf = build_exponent(&g, DomainShape::centered_ball(3, 0.7), 0.4, 3.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(residual(&g, &pf, &g.zeros()).unwrap().max_abs(), 0.0);
        for _ in 0..10 {
            let u = g.field_from_fn(|_| rng.gen_range(-0.5..1.5));
            let v = g.field_from_fn(|_| rng.gen_range(-1.0..1.0));
            let r = residual(&g, &pf, &u).unwrap();
            let lhs = pairing(&g, &pf, &u, &v).unwrap();
            let rhs = g.cell_volume() * r.values().iter().zip(v.values()).map(|(a, b)| a * b).sum::<f64>();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
            // Linearity in v.
            let w = g.field_from_fn(|_| rng.gen_range(-1.0..1.0));
            let combo = v.scaled(0.3).add_scaled(-1.7, &w).unwrap();
            let lin = 0.3 * lhs - 1.7 * pairing(&g, &pf, &u, &w).unwrap();
            let direct = pairing(&g, &pf, &u, &combo).unwrap();
            assert!((lin - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn pairing_matches_central_differences() {
        let g = ball_grid();
        let pf = build_exponent(&g, DomainShape::centered_ball(3, 0.7), 0.5, 3.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = smooth_positive(&g, &mut rng);
        let v = smooth_positive(&g, &mut rng);
        let exact = pairing(&g, &pf, &u, &v).unwrap();
        let fd = |eps: f64| {
            let plus = energy(&g, &pf, &u.add_scaled(eps, &v).unwrap()).unwrap().total;
            let minus = energy(&g, &pf, &u.add_scaled(-eps, &v).unwrap()).unwrap().total;
            (plus - minus) / (2.0 * eps)
        };
        let e3 = (fd(1e-3) - exact).abs();
        let e4 = (fd(1e-4) - exact).abs();
        assert!(e4 < 1e-6 * exact.abs(), "{e4}");
        // O(ε²): a factor ~100 between the two step sizes, modulo round-off.
        assert!(e4 < e3 || e3 < 1e-10 * exact.abs());
    }

    #[test]
    fn apriori_examples() {
        let s = sobolev_constant(3).unwrap();
        let k = apriori_constants(3, 3.0, 1.0).unwrap();
        assert!((k.a - 1.0 / 3.0).abs() < 1e-15);
        assert!((k.b - s.powi(-3) / 3.0).abs() < 1e-15);
        assert!((k.b - 2.028e-3).abs() < 1e-6);
        let lhs = k.c1 * k.eta.powf(1.0) + k.c2 * k.eta.powf(4.0);
        assert!((lhs - 1.0).abs() < 1e-12);
        assert!(k.eta > 0.0 && k.c1 > 0.0 && k.c2 > 0.0);

        let eta = solve_eta(1.0, 1.0, 1.0, 4.0).unwrap();
        // Independent check: Newton on t + t⁴ − 1 from t = 1.
        let mut t: f64 = 1.0;
        for _ in 0..50 {
            t -= (t + t.powi(4) - 1.0) / (1.0 + 4.0 * t.powi(3));
        }
        assert!((eta - t).abs() < 1e-12);
        assert!((eta - 0.7245).abs() < 1e-4);

        assert!(apriori_constants(3, 6.0, 1.0).is_err());
        assert!(apriori_constants(3, 3.0, 0.0).is_err());
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let g = ball_grid();
        let other = build_grid(GridSpec::cube(3, 2.0, 12).unwrap(), DomainShape::Box).unwrap();
        let pf = build_constant_exponent(&g, 4.0).unwrap();
        assert_eq!(energy(&g, &pf, &other.zeros()).unwrap_err(), Error::MisalignedField);
        let pf_other = build_constant_exponent(&other, 4.0).unwrap();
        assert_eq!(energy(&g, &pf_other, &g.zeros()).unwrap_err(), Error::MisalignedField);
    }
}
