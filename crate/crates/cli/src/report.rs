//! Markdown summaries of run directories.

use std::fmt::Write;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::config::Experiment;
use crate::error::CliError;
use crate::output::{Manifest, Verdict};

#[derive(Deserialize)]
struct DecayRow {
    family: String,
    estimate: String,
    slope: f64,
    ratio_spread: f64,
}

#[derive(Deserialize)]
struct MomentRow {
    a: f64,
    estimate: f64,
    stderr: f64,
    closed_form: Option<f64>,
}

fn fmt(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 1e-3 && v.abs() < 1e5) {
        format!("{v:.6}")
    } else {
        format!("{v:.3e}")
    }
}

fn status(v: &Verdict) -> &'static str {
    match v.pass {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "info",
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<Option<Vec<T>>, CliError> {
    let path = dir.join(name);
    if !path.exists() {
        return Ok(None);
    }
    let mut r = csv::Reader::from_path(&path)?;
    Ok(Some(r.deserialize().collect::<Result<_, _>>()?))
}

/// Builds the markdown report and stores it as `report.md` next to the manifest.
pub fn report(dir: &Path) -> Result<String, CliError> {
    let m = Manifest::load(dir)?;
    let mut s = String::new();
    let _ = writeln!(s, "# {} run\n", m.experiment);
    let _ = writeln!(s, "- tool: {} {}", m.tool, m.version);
    let _ = writeln!(s, "- seed: {}", m.seed.map_or("none".into(), |v| v.to_string()));
    let _ = writeln!(s, "- configuration sha256: `{}`", m.config_sha256);
    let _ = writeln!(s, "- threads: {}, wall time: {:.2} s", m.threads, m.wall_time_s);
    let failed = m.verdicts.iter().filter(|v| v.pass == Some(false)).count();
    let judged = m.verdicts.iter().filter(|v| v.pass.is_some()).count();
    let _ = writeln!(s, "- checks passed: {}/{}\n", judged - failed, judged);

    let _ = writeln!(s, "## Checks\n");
    let _ = writeln!(s, "| check | value | bound | status |");
    let _ = writeln!(s, "|---|---|---|---|");
    for v in &m.verdicts {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} |",
            v.check,
            fmt(v.value),
            v.bound.map_or("".into(), fmt),
            status(v)
        );
    }

    match m.experiment {
        Experiment::Stability => {
            if let Some(rows) = read_rows::<DecayRow>(dir, "decay.csv")? {
                let _ = writeln!(s, "\n## Decay fits\n");
                let _ = writeln!(s, "| family | estimate | slope | ratio spread |");
                let _ = writeln!(s, "|---|---|---|---|");
                for r in rows {
                    let _ = writeln!(s, "| {} | {} | {} | {} |", r.family, r.estimate, fmt(r.slope), fmt(r.ratio_spread));
                }
            }
        }
        Experiment::Counterexample => {
            if let Some(rows) = read_rows::<MomentRow>(dir, "moments.csv")? {
                let _ = writeln!(s, "\n## Exponential moments\n");
                let _ = writeln!(s, "| a | estimate | stderr | closed form | status |");
                let _ = writeln!(s, "|---|---|---|---|---|");
                for r in rows {
                    let (cf, st) = match r.closed_form {
                        Some(c) if (r.estimate - c).abs() <= 3.0 * r.stderr => (fmt(c), "PASS"),
                        Some(c) => (fmt(c), "FAIL"),
                        None => ("infinite".to_string(), "heavy tail"),
                    };
                    let _ = writeln!(s, "| {} | {} | {} | {} | {} |", r.a, fmt(r.estimate), fmt(r.stderr), cf, st);
                }
            }
        }
        _ => {}
    }

    let _ = writeln!(s, "\n## Outputs\n");
    for f in &m.outputs {
        let _ = writeln!(s, "- `{}` ({} bytes, sha256 `{}`)", f.name, f.bytes, &f.sha256[..16]);
    }
    let path = dir.join("report.md");
    fs::write(&path, &s).map_err(|source| CliError::Write { path, source })?;
    Ok(s)
}
