//! Plain-text field snapshots: one header line, then one row per cell
//! (`index x_1 … x_N value`), values in round-trip precision.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::exponent::ExponentField;
use crate::grid::{Field, Grid, GridSpec};

const MAGIC: &str = "# critexp-field v1";

fn join(v: impl IntoIterator<Item = String>) -> String {
    v.into_iter().collect::<Vec<_>>().join(",")
}

fn header(spec: &GridSpec) -> String {
    format!(
        "{MAGIC} dim={} lower={} upper={} cells={}",
        spec.dim(),
        join(spec.lower.iter().map(|v| format!("{v:e}"))),
        join(spec.upper.iter().map(|v| format!("{v:e}"))),
        join(spec.cells_per_axis.iter().map(|v| v.to_string())),
    )
}

fn io(e: std::io::Error) -> Error {
    Error::Snapshot(e.to_string())
}

pub fn write_field<W: Write>(g: &Grid, u: &Field, mut out: W) -> Result<()> {
    g.check(u)?;
    writeln!(out, "{}", header(g.spec())).map_err(io)?;
    let mut x = vec![0.0; g.dim()];
    for (i, v) in u.values().iter().enumerate() {
        g.center_into(i, &mut x);
        let coords = x.iter().map(|c| format!("{c:.17e}")).collect::<Vec<_>>().join(" ");
        writeln!(out, "{i} {coords} {v:.17e}").map_err(io)?;
    }
    Ok(())
}

/// Like [`write_field`] with the exponent as the value column, preceded by
/// `# delta=…`, `# p_minus=…`, `# p_plus=…` and `# omega=<json>` lines.
pub fn write_exponent<W: Write>(g: &Grid, pf: &ExponentField, mut out: W) -> Result<()> {
    pf.check(g)?;
    writeln!(out, "{}", header(g.spec())).map_err(io)?;
    writeln!(out, "# delta={:.17e}", pf.delta).map_err(io)?;
    writeln!(out, "# p_minus={:.17e}", pf.p_minus).map_err(io)?;
    writeln!(out, "# p_plus={:.17e}", pf.p_plus).map_err(io)?;
    let omega = match &pf.omega {
        Some(s) => format!("{s:?}"),
        None => "none".into(),
    };
    writeln!(out, "# omega={omega}").map_err(io)?;
    let mut x = vec![0.0; g.dim()];
    for (i, v) in pf.p.iter().enumerate() {
        g.center_into(i, &mut x);
        let coords = x.iter().map(|c| format!("{c:.17e}")).collect::<Vec<_>>().join(" ");
        writeln!(out, "{i} {coords} {v:.17e}").map_err(io)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| t.parse().map_err(|_| Error::Snapshot(format!("bad list entry {t:?}"))))
        .collect()
}

/// Reads a snapshot written by [`write_field`] or [`write_exponent`].
pub fn read_snapshot<R: BufRead>(input: R) -> Result<Snapshot> {
    let mut lines = input.lines();
    let first = lines.next().ok_or_else(|| Error::Snapshot("empty input".into()))?.map_err(io)?;
    let rest = first
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::Snapshot("missing header".into()))?;
    let (mut lower, mut upper, mut cells) = (None, None, None);
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Snapshot(format!("bad header field {kv:?}")))?;
        match k {
            "lower" => lower = Some(parse_list::<f64>(v)?),
            "upper" => upper = Some(parse_list::<f64>(v)?),
            "cells" => cells = Some(parse_list::<usize>(v)?),
            _ => {}
        }
    }
    let missing = || Error::Snapshot("incomplete header".into());
    let spec = GridSpec::new(lower.ok_or_else(missing)?, upper.ok_or_else(missing)?, cells.ok_or_else(missing)?)?;
    let n = spec.cell_count();
    let mut values = vec![f64::NAN; n];
    let mut seen = 0;
    for line in lines {
        let line = line.map_err(io)?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let idx: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Snapshot(format!("bad row {line:?}")))?;
        let value: f64 = parts
            .last()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Snapshot(format!("bad row {line:?}")))?;
        if idx >= n {
            return Err(Error::Snapshot(format!("cell index {idx} out of range")));
        }
        values[idx] = value;
        seen += 1;
    }
    if seen != n {
        return Err(Error::Snapshot(format!("expected {n} rows, found {seen}")));
    }
    Ok(Snapshot { spec, values })
}
