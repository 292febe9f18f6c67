use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use critexp_core::constants::GSample;
use critexp_core::functional::critical_level;
use critexp_core::nehari::minimize_multistart;
use critexp_core::snapshot::{write_exponent, write_field};
use critexp_core::*;

use crate::config::{ExperimentConfig, ExponentSpec, Task, URegionSpec};
use crate::report::{write_rows, Format, ReportRow};

/// Absolute slack on the lower bound, relative to the threshold scale.
const LOWER_SLACK: f64 = 1e-10;
/// Tolerance of the ground-state versus `g(q)` cross-check.
const CROSSCHECK_RTOL: f64 = 0.02;

/// Everything a run produces.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub rows: Vec<ReportRow>,
    pub grid: Option<Grid>,
    pub solution: Option<Field>,
    pub exponent: Option<ExponentField>,
    pub g_curve: Vec<GSample>,
}

impl RunOutput {
    pub fn failures(&self) -> Vec<String> {
        self.rows
            .iter()
            .flat_map(|r| r.failures().into_iter().map(move |f| format!("{}: {f}", r.label)))
            .collect()
    }
}

pub fn build_main_grid(cfg: &ExperimentConfig) -> Result<Grid> {
    let spec = GridSpec::cube(cfg.dim, cfg.half_width, cfg.cells_per_axis)?;
    Ok(build_grid_with(spec, cfg.domain.clone(), cfg.boundary)?)
}

pub fn build_exponent_field(g: &Grid, spec: &ExponentSpec) -> Result<ExponentField> {
    Ok(match spec {
        ExponentSpec::Variable {
            omega,
            delta,
            p_inner,
            ramp_power,
        } => build_exponent(g, omega.clone(), *delta, *p_inner, *ramp_power)?,
        ExponentSpec::Constant { q } => build_constant_exponent(g, *q)?,
    })
}

/// Grid of the box `centre ± 1.125·R` around the ball or annulus `U`.
pub fn u_grid(dim: usize, u: &URegionSpec, boundary: BoundaryTreatment) -> Result<Grid> {
    let (center, radius) = match &u.shape {
        DomainShape::Ball { center, radius } => (center, *radius),
        DomainShape::Annulus {
            outer_center,
            outer_radius,
            ..
        } => (outer_center, *outer_radius),
        _ => bail!("u_region shape must be a ball or an annulus"),
    };
    if center.len() != dim {
        bail!("u_region centre has {} coordinates, expected {dim}", center.len());
    }
    let lower = center.iter().map(|c| c - 1.125 * radius).collect();
    let upper = center.iter().map(|c| c + 1.125 * radius).collect();
    let spec = GridSpec::new(lower, upper, vec![u.cells_per_axis; dim])?;
    Ok(build_grid_with(spec, u.shape.clone(), boundary)?)
}

fn geometric_conditions(cfg: &ExperimentConfig, row: &mut ReportRow) -> Result<()> {
    match &cfg.domain {
        DomainShape::Ball { radius, .. } => row.ball_condition = Some(ball_condition(*radius, cfg.dim)?.0),
        DomainShape::Annulus {
            outer_radius,
            inner_radius,
            ..
        } => row.annulus_condition = Some(annulus_condition(*outer_radius, *inner_radius, cfg.dim)?.0),
        _ => {}
    }
    Ok(())
}

/// `(S₂(U), q̄(U))` and the (H₂) report, with `pf` gaining the `U` region.
fn attach_u_region(
    cfg: &ExperimentConfig,
    g: &Grid,
    pf: ExponentField,
    row: &mut ReportRow,
) -> Result<(ExponentField, Option<ValidationReport>)> {
    let Some(u) = &cfg.u_region else {
        return Ok((pf, None));
    };
    let ug = u_grid(cfg.dim, u, cfg.boundary).context("building the U grid")?;
    let s2u = s2(&ug, 1e-8).context("computing S₂(U)")?.value;
    // Without S₂(U) < 1 there is no q̄; the (H₂) check then fails on S₂.
    let qb = if s2u < 1.0 {
        let r = qbar(&ug, cfg.constants.qbar_tol).context("computing q̄(U)")?;
        row.qbar_ok = Some(r.relative_error() <= cfg.constants.qbar_tol);
        r.qbar
    } else {
        f64::NAN
    };
    let pf = pf.with_u_region(g, u.shape.clone(), u.q)?;
    let h2 = validate_h2(g, &pf, s2u, qb)?;
    row.s2_u = Some(s2u);
    row.qbar = qb.is_finite().then_some(qb);
    row.q_u = Some(u.q);
    if s2u < 1.0 && u.q > 2.0 {
        let sq_u = sq(&ug, u.q, cfg.constants.tol, cfg.constants.seed)?.value;
        row.g_q_u = Some(g_value(sq_u, u.q)?);
    }
    row.h2_ok = Some(h2.passed());
    Ok((pf, Some(h2)))
}

fn ground_state(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let label = cfg.label();
    let g = build_main_grid(cfg)?;
    let spec = cfg.exponent.as_ref().expect("checked");
    let pf = build_exponent_field(&g, spec)?;
    let mut row = ReportRow::new(cfg.task.name(), &label);
    let h1 = validate_h1(&g, &pf)?;
    row.h1_ok = Some(h1.passed());
    if !h1.passed() {
        let reasons: Vec<String> = h1.failures().iter().map(|c| c.detail.clone()).collect();
        bail!("exponent violates (H1): {}", reasons.join("; "));
    }
    let (pf, _) = attach_u_region(cfg, &g, pf, &mut row)?;

    let threshold = critical_level(cfg.dim)?;
    let consts = apriori_constants(cfg.dim, pf.p_minus, pf.omega_delta_measure(&g))?;
    let runs = minimize_multistart(&g, &pf, &cfg.solver.options(), &cfg.solver.inits())?;
    let best = runs.best().clone();
    let report = verify_critical(&g, &pf, &best)?;

    row.m = Some(best.m);
    row.threshold = Some(threshold);
    row.eta = Some(consts.eta);
    row.lower_bound = Some(consts.level_lower_bound());
    row.p_minus = Some(pf.p_minus);
    row.p_plus = Some(pf.p_plus);
    row.dual_residual = Some(best.dual_residual);
    row.relative_dual_residual = Some(best.relative_dual_residual);
    row.constraint_residual = Some(best.constraint_residual);
    row.iterations = Some(best.iterations);
    row.converged = Some(best.converged);
    row.critical_ok = Some(report.passed());
    row.lower_ok = Some(best.m >= consts.level_lower_bound() - LOWER_SLACK * threshold);
    if cfg.u_region.is_some() {
        row.upper_ok = Some(best.m < threshold);
    }
    if let ExponentSpec::Constant { q } = spec {
        if *q < g.critical_exponent() {
            let sq_g = sq(&g, *q, cfg.constants.tol, cfg.constants.seed)?;
            let gq = g_value(sq_g.value, *q)?;
            row.q = Some(*q);
            row.sq = Some(sq_g.value);
            row.g = Some(gq);
            row.crosscheck_ok = Some((best.m - gq).abs() / gq < CROSSCHECK_RTOL);
        }
    }
    if !runs.ties.is_empty() {
        let inits: Vec<&str> = runs.ties.iter().map(|&i| runs.runs[i].init).collect();
        row.detail = Some(format!("tied minimisers from inits: {}", inits.join(", ")));
    }
    geometric_conditions(cfg, &mut row)?;
    row.grid_hash = Some(format!("{:016x}", g.fingerprint()));
    Ok(RunOutput {
        rows: vec![row],
        solution: Some(best.u),
        exponent: Some(pf),
        grid: Some(g),
        g_curve: Vec::new(),
    })
}

fn constants_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let label = cfg.label();
    let g = build_main_grid(cfg)?;
    let hash = format!("{:016x}", g.fingerprint());
    let c = &cfg.constants;
    let mut rows = Vec::new();

    let base = s2(&g, c.tol.min(1e-8))?;
    let mut row = ReportRow::new(cfg.task.name(), &label);
    row.quantity = Some("S_2".into());
    row.value = Some(base.value);
    row.q = Some(2.0);
    row.sq = Some(base.value);
    geometric_conditions(cfg, &mut row)?;
    rows.push(row);

    for &q in &c.q_values {
        let r = sq(&g, q, c.tol, c.seed).with_context(|| format!("S_q at q = {q}"))?;
        let mut row = ReportRow::new(cfg.task.name(), &label);
        row.quantity = Some("S_q".into());
        row.value = Some(r.value);
        row.q = Some(q);
        row.sq = Some(r.value);
        row.g = Some(g_value(r.value, q)?);
        row.iterations = Some(r.iterations);
        rows.push(row);
    }

    let mut curve = Vec::new();
    if c.qbar && base.value < 1.0 {
        let r = qbar(&g, c.qbar_tol)?;
        let mut row = ReportRow::new(cfg.task.name(), &label);
        row.quantity = Some("qbar".into());
        row.value = Some(r.qbar);
        row.qbar = Some(r.qbar);
        row.g = Some(r.g_at_qbar);
        row.threshold = Some(r.threshold);
        let below = r.samples.iter().filter(|s| s.q < r.qbar).all(|s| s.g < r.threshold);
        row.qbar_ok = Some(r.relative_error() <= c.qbar_tol && below);
        rows.push(row);
        curve = r.samples;
    }
    for row in &mut rows {
        row.grid_hash = Some(hash.clone());
    }
    Ok(RunOutput {
        rows,
        grid: Some(g),
        g_curve: curve,
        ..Default::default()
    })
}

fn threshold_probe(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let label = cfg.label();
    let g = build_main_grid(cfg)?;
    let pf = build_exponent_field(&g, cfg.exponent.as_ref().expect("checked"))?;
    let probe = cfg.probe.as_ref().expect("checked");
    if probe.k_values.is_empty() {
        bail!("probe.k_values is empty");
    }
    let h1 = validate_h1(&g, &pf)?;
    let points = instanton_threshold_probe(&g, &pf, &probe.k_values)?;
    let largest = probe
        .k_values
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let hash = format!("{:016x}", g.fingerprint());
    let rows = points
        .iter()
        .map(|p| {
            let mut row = ReportRow::new(cfg.task.name(), &label);
            row.k = Some(p.k);
            row.t = Some(p.t);
            row.value = Some(p.energy);
            row.quantity = Some("I(t_k w_k)".into());
            row.threshold = Some(p.threshold);
            row.critical_energy = Some(p.critical_energy);
            row.correction = Some(p.correction());
            row.h1_ok = Some(h1.passed());
            if p.k == largest {
                row.t_max = Some(probe.t_max);
                row.probe_ok = Some(p.below_threshold() && p.t <= probe.t_max);
            }
            row.grid_hash = Some(hash.clone());
            row
        })
        .collect();
    Ok(RunOutput {
        rows,
        exponent: Some(pf),
        grid: Some(g),
        ..Default::default()
    })
}

fn validate(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let label = cfg.label();
    let g = build_main_grid(cfg)?;
    let pf = build_exponent_field(&g, cfg.exponent.as_ref().expect("checked"))?;
    let mut summary = ReportRow::new(cfg.task.name(), &label);
    let h1 = validate_h1(&g, &pf)?;
    summary.h1_ok = Some(h1.passed());
    summary.p_minus = Some(pf.p_minus);
    summary.p_plus = Some(pf.p_plus);
    let (pf, h2) = attach_u_region(cfg, &g, pf, &mut summary)?;
    geometric_conditions(cfg, &mut summary)?;
    summary.grid_hash = Some(format!("{:016x}", g.fingerprint()));

    let mut rows = Vec::new();
    for (family, report) in [("H1", Some(&h1)), ("H2", h2.as_ref())] {
        let Some(report) = report else { continue };
        for c in &report.checks {
            let mut row = ReportRow::new(cfg.task.name(), &label);
            row.quantity = Some(format!("{family}: {}", c.name));
            row.value = c.worst_value;
            row.detail = Some(c.detail.clone());
            if !c.passed {
                row.detail = Some(format!("FAIL {} (cell {:?})", c.detail, c.worst_cell));
            }
            rows.push(row);
        }
    }
    rows.push(summary);
    Ok(RunOutput {
        rows,
        exponent: Some(pf),
        grid: Some(g),
        ..Default::default()
    })
}

/// Runs one configuration. Rows carry the wall time and are rounded to 12
/// significant digits.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.check()?;
    let start = Instant::now();
    let mut out = match cfg.task {
        Task::GroundState => ground_state(cfg),
        Task::ConstantsSweep => constants_sweep(cfg),
        Task::ThresholdProbe => threshold_probe(cfg),
        Task::Validate => validate(cfg),
    }
    .with_context(|| format!("task {} ({})", cfg.task.name(), cfg.label()))?;
    let elapsed = start.elapsed().as_secs_f64();
    out.rows = out
        .rows
        .into_iter()
        .map(|mut r| {
            r.wall_time_s = Some(elapsed);
            r.rounded()
        })
        .collect();
    Ok(out)
}

/// Runs `cfg` once per value of `param`, concurrently.
pub fn sweep(cfg: &ExperimentConfig, param: &str, values: &[f64]) -> Result<Vec<RunOutput>> {
    let configs = values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            c.set_param(param, v)?;
            c.check()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<Result<RunOutput>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs.iter().map(|c| s.spawn(move || run(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("sweep worker panicked"))))
            .collect()
    });
    results
        .into_iter()
        .zip(values)
        .map(|(r, &v)| {
            let mut out = r.with_context(|| format!("{param} = {v}"))?;
            for row in &mut out.rows {
                row.sweep_param = Some(param.to_string());
                row.sweep_value = Some(v);
            }
            Ok(out)
        })
        .collect()
}

/// Writes the report, field snapshots and g-curve of `out` into `dir`.
pub fn write_output(out: &RunOutput, dir: &Path, format: Format) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let report = dir.join(format!("report.{}", format.extension()));
    write_rows(&out.rows, format, BufWriter::new(File::create(&report)?))?;
    if let Some(g) = &out.grid {
        if let Some(u) = &out.solution {
            let mut w = BufWriter::new(File::create(dir.join("u.txt"))?);
            write_field(g, u, &mut w)?;
            w.flush()?;
        }
        if let Some(pf) = &out.exponent {
            let mut w = BufWriter::new(File::create(dir.join("exponent.txt"))?);
            write_exponent(g, pf, &mut w)?;
            w.flush()?;
        }
    }
    if !out.g_curve.is_empty() {
        write_g_curve(&out.g_curve, BufWriter::new(File::create(dir.join("g_curve.csv"))?))?;
    }
    Ok(())
}

pub fn write_g_curve<W: Write>(samples: &[GSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["q", "S_q", "g"])?;
    for s in samples {
        w.write_record([format!("{:.11e}", s.q), format!("{:.11e}", s.sq), format!("{:.11e}", s.g)])?;
    }
    w.flush()?;
    Ok(())
}

