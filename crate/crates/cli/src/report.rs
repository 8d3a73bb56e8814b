//! Merges report CSVs and evaluates the trend and tolerance assertions.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use homog_core::homog_lab::{sort_rows, strictly_decreasing, EffectiveReport};

use crate::CliError;

pub const ENERGY_TOL: f64 = 1e-8;
pub const PROBE_TOL: f64 = 1e-8;

/// One evaluated assertion.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub fn read_csv(path: &Path) -> Result<Vec<EffectiveReport>, CliError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let headers = rd.headers().map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?.clone();
    if let Some(h) = headers.iter().find(|h| !EffectiveReport::COLUMNS.contains(h)) {
        return Err(CliError::Schema(format!("{}: unknown column '{h}'", path.display())));
    }
    if !headers.iter().any(|h| h == "scenario") {
        return Err(CliError::Schema(format!("{}: missing column 'scenario'", path.display())));
    }
    rd.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| CliError::Schema(format!("{} row {}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn merge(paths: &[impl AsRef<Path>]) -> Result<Vec<EffectiveReport>, CliError> {
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(read_csv(p.as_ref())?);
    }
    sort_rows(&mut rows);
    Ok(rows)
}

pub fn checks(rows: &[EffectiveReport]) -> Vec<Check> {
    let mut out = Vec::new();
    let mut by_scenario: BTreeMap<&str, Vec<&EffectiveReport>> = BTreeMap::new();
    for r in rows {
        by_scenario.entry(r.scenario.as_str()).or_default().push(r);
    }
    for (name, group) in by_scenario {
        let bad: Vec<String> = group
            .iter()
            .filter(|r| !r.residuals_finite())
            .map(|r| format!("eps={:?}", r.eps))
            .collect();
        out.push(Check {
            name: format!("{name}: residuals finite"),
            passed: bad.is_empty(),
            detail: if bad.is_empty() { "all rows".into() } else { bad.join(", ") },
        });
        let energy: Vec<f64> = group.iter().filter_map(|r| r.energy_residual).collect();
        if !energy.is_empty() {
            let worst = energy.iter().copied().fold(0.0, f64::max);
            out.push(Check {
                name: format!("{name}: energy_residual <= {ENERGY_TOL:e}"),
                passed: worst <= ENERGY_TOL,
                detail: format!("max {worst:.3e}"),
            });
        }
        let mut ladder: Vec<(f64, f64)> =
            group.iter().filter_map(|r| Some((r.eps?, r.corrector_norm?))).collect();
        if ladder.len() >= 2 {
            ladder.sort_by(|a, b| b.0.total_cmp(&a.0));
            let norms: Vec<f64> = ladder.iter().map(|p| p.1).collect();
            out.push(Check {
                name: format!("{name}: corrector_norm strictly decreasing as eps decreases"),
                passed: strictly_decreasing(&norms),
                detail: norms.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>().join(" > "),
            });
        }
        let probes: Vec<f64> = group.iter().filter_map(|r| r.probe_ratio).collect();
        if !probes.is_empty() {
            let worst = probes.iter().map(|p| (p - 1.0).abs()).fold(0.0, f64::max);
            out.push(Check {
                name: format!("{name}: |probe_ratio - 1| <= {PROBE_TOL:e}"),
                passed: worst <= PROBE_TOL,
                detail: format!("max deviation {worst:.3e}"),
            });
        }
    }
    out
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6e}"))
}

/// Plain-text table of the key columns.
pub fn write_table<W: Write>(rows: &[EffectiveReport], mut w: W) -> std::io::Result<()> {
    let head = ["scenario", "eps", "r_eps", "energy_res", "gamma_eff", "s", "t", "m22", "corrector", "probe", "cell_value"];
    writeln!(w, "{}", head.map(|h| format!("{h:>14}")).join(" "))?;
    for r in rows {
        let cols = [
            r.scenario.clone(),
            cell(r.eps),
            cell(r.r_eps),
            cell(r.energy_residual),
            cell(r.gamma_eff),
            cell(r.s),
            cell(r.t),
            cell(r.m22),
            cell(r.corrector_norm),
            cell(r.probe_ratio),
            cell(r.cell_value),
        ];
        writeln!(w, "{}", cols.map(|c| format!("{c:>14}")).join(" "))?;
    }
    Ok(())
}
