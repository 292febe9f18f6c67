//! Variable exponent fields `p(x)`: subcritical on a bounded region `Ω`,
//! ramped continuously across the band `0 < dist(x, Ω̄) < δ`, and equal to
//! the critical exponent `2* = 2N/(N−2)` beyond it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DomainShape, Grid};

/// The region `U ⊂ Ω` on which the exponent is the constant `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct URegion {
    pub shape: DomainShape,
    pub q: f64,
    #[serde(skip)]
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct ExponentField {
    /// Exponent per grid cell (frame cells included).
    pub p: Vec<f64>,
    /// Interior cells whose centre lies in `Ω̄`.
    pub omega_mask: Vec<bool>,
    /// Interior cells with `dist(centre, Ω̄) ≤ δ`.
    pub omega_delta_mask: Vec<bool>,
    /// `dist(centre, Ω̄)` per cell; zero inside `Ω̄`.
    pub distance: Vec<f64>,
    pub delta: f64,
    pub p_minus: f64,
    pub p_plus: f64,
    pub critical: f64,
    pub omega: Option<DomainShape>,
    pub u_region: Option<URegion>,
    /// Constant subcritical exponent on the whole domain. Satisfies the
    /// inequalities of (H1) only in a degenerate sense; used for oracles.
    pub degenerate: bool,
    pub(crate) fingerprint: u64,
}

impl ExponentField {
    pub fn check(&self, g: &Grid) -> Result<()> {
        if self.fingerprint != g.fingerprint() || self.p.len() != g.cell_count() {
            return Err(Error::MisalignedField);
        }
        Ok(())
    }

    /// Cells of the closed band `Ω_δ` where (H1c) is enforced (`d < δ`,
    /// or all of `Ω_δ` for constant fields).
    fn in_open_band(&self, i: usize) -> bool {
        self.omega_delta_mask[i] && (self.degenerate || self.distance[i] < self.delta)
    }

    /// Replaces `p` on `shape` by the constant `q`, recording the (H2) data.
    pub fn with_u_region(mut self, g: &Grid, shape: DomainShape, q: f64) -> Result<Self> {
        self.check(g)?;
        shape.check_fits(g.spec())?;
        if !(q > 2.0 && q < self.critical) {
            return Err(Error::ExponentOutOfRange(format!(
                "q_U = {q} must lie in (2, {})",
                self.critical
            )));
        }
        let mut mask = vec![false; g.cell_count()];
        let mut x = vec![0.0; g.dim()];
        for &i in g.interior_cells() {
            let inside = match &shape {
                DomainShape::Explicit { mask } => mask[i],
                s => {
                    g.center_into(i, &mut x);
                    s.contains(&x)
                }
            };
            if inside {
                mask[i] = true;
                self.p[i] = q;
            }
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidArgument("U contains no interior cell".into()));
        }
        self.u_region = Some(URegion { shape, q, mask });
        self.refresh_bounds();
        Ok(self)
    }

    fn refresh_bounds(&mut self) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.p.len() {
            if self.in_open_band(i) {
                lo = lo.min(self.p[i]);
                hi = hi.max(self.p[i]);
            }
        }
        if lo.is_finite() {
            self.p_minus = lo;
            self.p_plus = hi;
        }
    }

    /// `|Ω_δ|` as cell-volume measure.
    pub fn omega_delta_measure(&self, g: &Grid) -> f64 {
        self.omega_delta_mask.iter().filter(|&&m| m).count() as f64 * g.cell_volume()
    }

    pub fn omega_measure(&self, g: &Grid) -> f64 {
        self.omega_mask.iter().filter(|&&m| m).count() as f64 * g.cell_volume()
    }
}

/// Builds the ramp field on `g`.
///
/// `p = p_inner` on `Ω̄`, `p = p_inner + (2* − p_inner)(d/δ)^ramp_power`
/// for `0 < d < δ` and `p = 2*` for `d ≥ δ`, with `d = dist(x, Ω̄)`.
pub fn build_exponent(g: &Grid, omega: DomainShape, delta: f64, p_inner: f64, ramp_power: f64) -> Result<ExponentField> {
    let critical = g.critical_exponent();
    if !critical.is_finite() {
        return Err(Error::ExponentOutOfRange(format!(
            "no finite critical exponent in dimension {}",
            g.dim()
        )));
    }
    if !(p_inner > 2.0 && p_inner < critical) {
        return Err(Error::ExponentOutOfRange(format!(
            "p_inner = {p_inner} must lie in (2, {critical})"
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::DeltaNonpositive(delta));
    }
    if !(ramp_power > 0.0) {
        return Err(Error::InvalidArgument(format!("ramp power {ramp_power} must be positive")));
    }
    omega.check_fits(g.spec())?;

    let n = g.cell_count();
    let distance = match &omega {
        DomainShape::Explicit { mask } => explicit_distance(g, mask),
        shape => {
            let mut x = vec![0.0; g.dim()];
            (0..n)
                .map(|i| {
                    g.center_into(i, &mut x);
                    shape.distance_to_closure(&x).unwrap_or(f64::INFINITY)
                })
                .collect()
        }
    };

    let mut p = vec![critical; n];
    let mut omega_mask = vec![false; n];
    let mut omega_delta_mask = vec![false; n];
    for i in 0..n {
        let d = distance[i];
        p[i] = ramp_value(d, delta, p_inner, critical, ramp_power);
        if g.is_interior(i) {
            omega_mask[i] = d == 0.0;
            omega_delta_mask[i] = d <= delta;
        }
    }
    if !omega_mask.iter().any(|&m| m) {
        return Err(Error::OmegaEmpty);
    }
    let mut field = ExponentField {
        p,
        omega_mask,
        omega_delta_mask,
        distance,
        delta,
        p_minus: p_inner,
        p_plus: p_inner,
        critical,
        omega: Some(omega),
        u_region: None,
        degenerate: false,
        fingerprint: g.fingerprint(),
    };
    field.refresh_bounds();
    Ok(field)
}

pub(crate) fn ramp_value(d: f64, delta: f64, p_inner: f64, critical: f64, ramp_power: f64) -> f64 {
    if d <= 0.0 {
        p_inner
    } else if d < delta {
        p_inner + (critical - p_inner) * (d / delta).powf(ramp_power)
    } else {
        critical
    }
}

/// Distance from each cell centre to the nearest centre of a masked cell.
/// Quadratic in the cell count; explicit masks are meant for small grids.
fn explicit_distance(g: &Grid, mask: &[bool]) -> Vec<f64> {
    let members: Vec<Vec<f64>> = (0..g.cell_count()).filter(|&i| mask[i]).map(|i| g.center(i)).collect();
    let mut x = vec![0.0; g.dim()];
    (0..g.cell_count())
        .map(|i| {
            if mask[i] {
                return 0.0;
            }
            g.center_into(i, &mut x);
            members
                .iter()
                .map(|c| c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// `p ≡ q` on the whole grid.
///
/// For `q < 2*` every interior cell belongs to `Ω` and `Ω_δ` (flagged
/// `degenerate`); for `q = 2*` this is the pure critical problem and `Ω`
/// is empty.
pub fn build_constant_exponent(g: &Grid, q: f64) -> Result<ExponentField> {
    let critical = g.critical_exponent();
    if !(q > 2.0 && q <= critical) {
        return Err(Error::ExponentOutOfRange(format!("q = {q} must lie in (2, {critical}]")));
    }
    let n = g.cell_count();
    let subcritical = q < critical;
    let mask: Vec<bool> = (0..n).map(|i| subcritical && g.is_interior(i)).collect();
    Ok(ExponentField {
        p: vec![q; n],
        omega_mask: mask.clone(),
        omega_delta_mask: mask,
        distance: vec![if subcritical { 0.0 } else { f64::INFINITY }; n],
        delta: 0.0,
        p_minus: q,
        p_plus: q,
        critical,
        omega: None,
        u_region: None,
        degenerate: subcritical,
        fingerprint: g.fingerprint(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Cell index of the worst violation, if any.
    pub worst_cell: Option<usize>,
    pub worst_value: Option<f64>,
    pub detail: String,
}

impl CheckResult {
    fn pass(name: &str, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            passed: true,
            worst_cell: None,
            worst_value: None,
            detail,
        }
    }

    fn fail(name: &str, cell: Option<usize>, value: Option<f64>, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            passed: false,
            worst_cell: cell,
            worst_value: value,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub omega_delta_measure: f64,
    pub degenerate: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// Tracks the cell with the largest violation.
struct Worst {
    cell: Option<usize>,
    amount: f64,
    value: f64,
}

impl Worst {
    fn new() -> Self {
        Worst {
            cell: None,
            amount: 0.0,
            value: f64::NAN,
        }
    }

    fn offer(&mut self, cell: usize, amount: f64, value: f64) {
        if amount > self.amount || (self.cell.is_none() && amount >= 0.0) {
            self.cell = Some(cell);
            self.amount = amount;
            self.value = value;
        }
    }
}

/// Checks (H1a), (H1b) and (H1c) cell by cell.
pub fn validate_h1(g: &Grid, pf: &ExponentField) -> Result<ValidationReport> {
    pf.check(g)?;
    let crit = pf.critical;
    let mut checks = Vec::new();

    // (H1a): 2 < p⁻ ≤ p ≤ p⁺ < 2* on Ω.
    let scalars_ok = pf.p_minus > 2.0 && pf.p_minus <= pf.p_plus && pf.p_plus < crit;
    let omega_cells = pf.omega_mask.iter().filter(|&&m| m).count();
    let mut worst = Worst::new();
    for i in 0..pf.p.len() {
        if pf.omega_mask[i] {
            let p = pf.p[i];
            let excess = (pf.p_minus - p).max(p - pf.p_plus);
            if excess > 0.0 {
                worst.offer(i, excess, p);
            }
        }
    }
    checks.push(if omega_cells == 0 {
        CheckResult::fail("H1a", None, None, "Ω has no interior cell".into())
    } else if !scalars_ok {
        CheckResult::fail(
            "H1a",
            None,
            None,
            format!("need 2 < p⁻ ≤ p⁺ < 2*, have p⁻ = {}, p⁺ = {}", pf.p_minus, pf.p_plus),
        )
    } else if let Some(cell) = worst.cell {
        CheckResult::fail(
            "H1a",
            Some(cell),
            Some(worst.value),
            format!("p = {} outside [p⁻, p⁺] on Ω", worst.value),
        )
    } else {
        CheckResult::pass("H1a", format!("{omega_cells} cells of Ω within [p⁻, p⁺]"))
    });

    // (H1b): p = 2* on G \ Ω_δ.
    let mut worst = Worst::new();
    for &i in g.interior_cells() {
        if !pf.omega_delta_mask[i] && pf.p[i] != crit {
            worst.offer(i, (crit - pf.p[i]).abs(), pf.p[i]);
        }
    }
    checks.push(match worst.cell {
        Some(cell) => CheckResult::fail(
            "H1b",
            Some(cell),
            Some(worst.value),
            format!("p = {} ≠ 2* outside Ω_δ", worst.value),
        ),
        None => CheckResult::pass("H1b", "p = 2* on every cell outside Ω_δ".into()),
    });

    // (H1c): 2 < p⁻ ≤ p < 2* on Ω_δ (half-open band d < δ).
    let mut worst = Worst::new();
    for i in 0..pf.p.len() {
        if pf.in_open_band(i) {
            let p = pf.p[i];
            let excess = (pf.p_minus - p).max(p - crit);
            if excess > 0.0 || p == crit {
                worst.offer(i, excess.max(0.0), p);
            }
        }
    }
    checks.push(if !(pf.p_minus > 2.0) {
        CheckResult::fail("H1c", None, None, format!("p⁻ = {} is not > 2", pf.p_minus))
    } else if let Some(cell) = worst.cell {
        CheckResult::fail(
            "H1c",
            Some(cell),
            Some(worst.value),
            format!("p = {} violates p⁻ ≤ p < 2* on Ω_δ", worst.value),
        )
    } else {
        CheckResult::pass("H1c", "p⁻ ≤ p < 2* on Ω_δ".into())
    });

    let nested = (0..pf.p.len()).all(|i| !pf.omega_mask[i] || pf.omega_delta_mask[i]);
    checks.push(if nested {
        CheckResult::pass("nesting", "Ω ⊆ Ω_δ".into())
    } else {
        CheckResult::fail("nesting", None, None, "Ω is not contained in Ω_δ".into())
    });

    Ok(ValidationReport {
        checks,
        omega_delta_measure: pf.omega_delta_measure(g),
        degenerate: pf.degenerate,
    })
}

/// Checks (H2): `S₂(U) < 1`, `p ≡ q_U` on `U ⊆ Ω` and `p⁻ ≤ q_U < min(q̄, p⁺)`.
pub fn validate_h2(g: &Grid, pf: &ExponentField, s2_of_u: f64, qbar: f64) -> Result<ValidationReport> {
    pf.check(g)?;
    let region = pf.u_region.as_ref().ok_or(Error::MissingURegion)?;
    let q = region.q;
    let mut checks = Vec::new();

    checks.push(if s2_of_u < 1.0 {
        CheckResult::pass("S2(U) < 1", format!("S₂(U) = {s2_of_u}"))
    } else {
        CheckResult::fail("S2(U) < 1", None, Some(s2_of_u), format!("S₂(U) ≥ 1 (S₂(U) = {s2_of_u})"))
    });

    let upper = qbar.min(pf.p_plus);
    checks.push(if pf.p_minus <= q && q < upper {
        CheckResult::pass("q range", format!("p⁻ = {} ≤ q = {q} < min(q̄, p⁺) = {upper}", pf.p_minus))
    } else {
        CheckResult::fail(
            "q range",
            None,
            Some(q),
            format!("need p⁻ = {} ≤ q = {q} < min(q̄ = {qbar}, p⁺ = {})", pf.p_minus, pf.p_plus),
        )
    });

    let mut worst = Worst::new();
    for i in 0..pf.p.len() {
        if region.mask.get(i).copied().unwrap_or(false) && pf.p[i] != q {
            worst.offer(i, (pf.p[i] - q).abs(), pf.p[i]);
        }
    }
    checks.push(match worst.cell {
        Some(cell) => CheckResult::fail("p = q on U", Some(cell), Some(worst.value), format!("p = {} ≠ q", worst.value)),
        None => CheckResult::pass("p = q on U", "p ≡ q on every cell of U".into()),
    });

    let outside = (0..pf.p.len()).find(|&i| region.mask.get(i).copied().unwrap_or(false) && !pf.omega_mask[i]);
    checks.push(match outside {
        Some(cell) => CheckResult::fail("U ⊆ Ω", Some(cell), None, "U has a cell outside Ω".into()),
        None => CheckResult::pass("U ⊆ Ω", "U ⊆ Ω".into()),
    });

    Ok(ValidationReport {
        checks,
        omega_delta_measure: pf.omega_delta_measure(g),
        degenerate: pf.degenerate,
    })
}
