use std::io::Write;

use anyhow::Result;
use serde::{Deserialize, Serialize};

/// Rounds to 12 significant digits.
pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// One line of a report. Columns a task does not produce stay empty.
///
/// Columns ending in `_ok` are asserted inequalities; each is recomputable
/// from the numeric columns of the same row. `ball_condition` and
/// `annulus_condition` are reported but not asserted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub label: String,
    pub sweep_param: Option<String>,
    pub sweep_value: Option<f64>,
    /// Name of the quantity in `value` for rows that carry a single number.
    pub quantity: Option<String>,
    pub value: Option<f64>,
    pub detail: Option<String>,
    pub m: Option<f64>,
    /// `S^{N/2}/N`.
    pub threshold: Option<f64>,
    pub eta: Option<f64>,
    /// `(1/2 − 1/p⁻)η²`.
    pub lower_bound: Option<f64>,
    pub p_minus: Option<f64>,
    pub p_plus: Option<f64>,
    pub s2_u: Option<f64>,
    pub qbar: Option<f64>,
    pub q_u: Option<f64>,
    pub g_q_u: Option<f64>,
    pub q: Option<f64>,
    pub sq: Option<f64>,
    pub g: Option<f64>,
    pub k: Option<f64>,
    pub t: Option<f64>,
    pub t_max: Option<f64>,
    pub critical_energy: Option<f64>,
    pub correction: Option<f64>,
    pub dual_residual: Option<f64>,
    pub relative_dual_residual: Option<f64>,
    pub constraint_residual: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub lower_ok: Option<bool>,
    pub upper_ok: Option<bool>,
    pub h1_ok: Option<bool>,
    pub h2_ok: Option<bool>,
    pub critical_ok: Option<bool>,
    pub crosscheck_ok: Option<bool>,
    pub probe_ok: Option<bool>,
    pub qbar_ok: Option<bool>,
    pub ball_condition: Option<bool>,
    pub annulus_condition: Option<bool>,
    pub wall_time_s: Option<f64>,
    pub grid_hash: Option<String>,
}

macro_rules! round_fields {
    ($row:ident, $($f:ident),*) => {
        $( $row.$f = $row.$f.map(sig12); )*
    };
}

impl ReportRow {
    pub fn new(task: &str, label: &str) -> Self {
        ReportRow {
            task: task.to_string(),
            label: label.to_string(),
            ..Default::default()
        }
    }

    pub fn rounded(mut self) -> Self {
        round_fields!(
            self,
            sweep_value,
            value,
            m,
            threshold,
            eta,
            lower_bound,
            p_minus,
            p_plus,
            s2_u,
            qbar,
            q_u,
            g_q_u,
            q,
            sq,
            g,
            k,
            t,
            t_max,
            critical_energy,
            correction,
            dual_residual,
            relative_dual_residual,
            constraint_residual,
            wall_time_s
        );
        self
    }

    fn asserted(&self) -> [(&'static str, Option<bool>); 9] {
        [
            ("converged", self.converged),
            ("lower_ok", self.lower_ok),
            ("upper_ok", self.upper_ok),
            ("h1_ok", self.h1_ok),
            ("h2_ok", self.h2_ok),
            ("critical_ok", self.critical_ok),
            ("crosscheck_ok", self.crosscheck_ok),
            ("probe_ok", self.probe_ok),
            ("qbar_ok", self.qbar_ok),
        ]
    }

    /// Names of asserted flags that are false.
    pub fn failures(&self) -> Vec<&'static str> {
        self.asserted()
            .into_iter()
            .filter(|(_, v)| *v == Some(false))
            .map(|(n, _)| n)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

pub fn write_rows<W: Write>(rows: &[ReportRow], format: Format, out: W) -> Result<()> {
    match format {
        Format::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, rows)?;
            writeln!(out)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for row in rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
