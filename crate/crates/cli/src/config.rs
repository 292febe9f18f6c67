use std::path::Path;

use anyhow::{bail, Context, Result};
use critexp_core::nehari::Init;
use critexp_core::{BoundaryTreatment, DomainShape, SolverOptions};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    GroundState,
    ConstantsSweep,
    ThresholdProbe,
    Validate,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::GroundState => "ground-state",
            Task::ConstantsSweep => "constants-sweep",
            Task::ThresholdProbe => "threshold-probe",
            Task::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExponentSpec {
    /// `p = p_inner` on `Ω`, ramping to `2*` across the band of width `δ`.
    Variable {
        omega: DomainShape,
        delta: f64,
        p_inner: f64,
        #[serde(default = "one")]
        ramp_power: f64,
    },
    Constant { q: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct URegionSpec {
    pub shape: DomainShape,
    pub q: f64,
    /// Cells per axis of the separate grid on which `S₂(U)` and `q̄` are computed.
    #[serde(default = "default_u_cells")]
    pub cells_per_axis: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    RandomBump,
    Instanton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub step: f64,
    pub tol_dual: f64,
    pub tol_constraint: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub poisson_tol: f64,
    /// One run per entry; the lowest energy is reported.
    pub inits: Vec<InitKind>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverSpec {
            step: d.step,
            tol_dual: d.tol_dual,
            tol_constraint: d.tol_constraint,
            max_iters: d.max_iters,
            seed: d.seed,
            poisson_tol: d.poisson_tol,
            inits: vec![InitKind::RandomBump],
        }
    }
}

impl SolverSpec {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            step: self.step,
            tol_dual: self.tol_dual,
            tol_constraint: self.tol_constraint,
            max_iters: self.max_iters,
            seed: self.seed,
            init: Init::RandomBump,
            poisson_tol: self.poisson_tol,
        }
    }

    pub fn inits(&self) -> Vec<Init> {
        self.inits
            .iter()
            .map(|k| match k {
                InitKind::RandomBump => Init::RandomBump,
                InitKind::Instanton => Init::Instanton,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub k_values: Vec<f64>,
    /// Bound asserted on `t_k` at the largest `k`.
    #[serde(default = "default_t_max")]
    pub t_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsSpec {
    /// Exponents at which `S_q` of the domain is computed.
    pub q_values: Vec<f64>,
    pub tol: f64,
    pub seed: u64,
    /// Also compute `q̄` when `S₂ < 1`.
    pub qbar: bool,
    pub qbar_tol: f64,
}

impl Default for ConstantsSpec {
    fn default() -> Self {
        ConstantsSpec {
            q_values: Vec::new(),
            tol: 1e-7,
            seed: 0,
            qbar: true,
            qbar_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// The grid box is `[−L, L]^dim`.
    pub half_width: f64,
    pub cells_per_axis: usize,
    pub domain: DomainShape,
    #[serde(default)]
    pub boundary: BoundaryTreatment,
    #[serde(default)]
    pub exponent: Option<ExponentSpec>,
    #[serde(default)]
    pub u_region: Option<URegionSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub probe: Option<ProbeSpec>,
    #[serde(default)]
    pub constants: ConstantsSpec,
}

fn one() -> f64 {
    1.0
}

fn default_dim() -> usize {
    3
}

fn default_u_cells() -> usize {
    28
}

fn default_t_max() -> f64 {
    1.05
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).context("parsing experiment config")?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.task.name().to_string())
    }

    /// Checks that the fields the task needs are present.
    pub fn check(&self) -> Result<()> {
        match self.task {
            Task::GroundState | Task::Validate if self.exponent.is_none() => {
                bail!("task {} needs an `exponent` section", self.task.name())
            }
            Task::ThresholdProbe if self.exponent.is_none() || self.probe.is_none() => {
                bail!("task threshold-probe needs `exponent` and `probe` sections")
            }
            _ => Ok(()),
        }
    }

    /// Sets a named parameter for `sweep`.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        match name {
            "q" => match (&mut self.exponent, self.task) {
                (_, Task::ConstantsSweep) => self.constants.q_values = vec![value],
                (Some(ExponentSpec::Constant { q }), _) => *q = value,
                _ => bail!("parameter q needs a constant exponent or a constants-sweep task"),
            },
            "p_inner" | "delta" | "ramp_power" => match &mut self.exponent {
                Some(ExponentSpec::Variable {
                    p_inner,
                    delta,
                    ramp_power,
                    ..
                }) => {
                    let slot = match name {
                        "p_inner" => p_inner,
                        "delta" => delta,
                        _ => ramp_power,
                    };
                    *slot = value;
                }
                _ => bail!("parameter {name} needs a variable exponent"),
            },
            "q_u" => match &mut self.u_region {
                Some(u) => u.q = value,
                None => bail!("parameter q_u needs a `u_region` section"),
            },
            "radius" => {
                // Scales the domain ball and the box together so the
                // resolution relative to the radius is unchanged.
                let DomainShape::Ball { center, radius } = &mut self.domain else {
                    bail!("parameter radius needs a ball domain");
                };
                let factor = value / *radius;
                *radius = value;
                for c in center.iter_mut() {
                    *c *= factor;
                }
                self.half_width *= factor;
            }
            "half_width" => self.half_width = value,
            "cells_per_axis" => {
                if value < 1.0 || value.fract() != 0.0 {
                    bail!("cells_per_axis must be a positive integer, got {value}");
                }
                self.cells_per_axis = value as usize;
            }
            "seed" => {
                if value < 0.0 || value.fract() != 0.0 {
                    bail!("seed must be a nonnegative integer, got {value}");
                }
                self.solver.seed = value as u64;
                self.constants.seed = value as u64;
            }
            other => bail!(
                "unknown sweep parameter {other:?} (known: q, p_inner, delta, ramp_power, q_u, radius, half_width, cells_per_axis, seed)"
            ),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "task": "ground-state",
        "half_width": 1.125,
        "cells_per_axis": 16,
        "domain": {"kind": "ball", "center": [0, 0, 0], "radius": 1.0},
        "exponent": {"kind": "constant", "q": 4.0}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.dim, 3);
        assert_eq!(cfg.solver, SolverSpec::default());
        assert_eq!(cfg.boundary, BoundaryTreatment::Embedded);
        assert_eq!(cfg.label(), "ground-state");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = MINIMAL.replace("\"half_width\"", "\"halfwidth\": 1, \"half_width\"");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn missing_sections_are_reported() {
        let text = MINIMAL.replace("\"task\": \"ground-state\"", "\"task\": \"threshold-probe\"");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(format!("{err:#}").contains("probe"));
    }

    #[test]
    fn radius_sweep_scales_the_box() {
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.set_param("radius", 4.0).unwrap();
        assert_eq!(cfg.half_width, 4.5);
        cfg.set_param("q", 3.0).unwrap();
        assert_eq!(cfg.exponent, Some(ExponentSpec::Constant { q: 3.0 }));
        assert!(cfg.set_param("nonsense", 1.0).is_err());
        assert!(cfg.set_param("delta", 1.0).is_err());
    }
}
