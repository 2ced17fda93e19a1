//! Checks, summaries and file output shared by the subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Resolved;
use crate::CliError;

/// A named measurement against a threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// How `value` is compared, e.g. `"<= 1e-12"`.
    pub threshold: String,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Check {
        Check {
            name: name.into(),
            value,
            threshold: format!("<= {bound:e}"),
            passed: value <= bound,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Check {
        Check {
            name: name.into(),
            value,
            threshold: format!(">= {bound:e}"),
            passed: value >= bound,
        }
    }

    /// A yes/no property; `value` is 1 when it holds.
    pub fn holds(name: impl Into<String>, ok: bool, what: &str) -> Check {
        Check {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            threshold: what.into(),
            passed: ok,
        }
    }
}

/// What every subcommand prints to stdout as JSON.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub command: String,
    pub ok: bool,
    pub checks: Vec<Check>,
    pub outputs: Vec<PathBuf>,
    pub results: Value,
}

impl Summary {
    pub fn new(
        command: &str,
        checks: Vec<Check>,
        outputs: Vec<PathBuf>,
        results: Value,
    ) -> Summary {
        Summary {
            command: command.into(),
            ok: checks.iter().all(|c| c.passed),
            checks,
            outputs,
            results,
        }
    }
}

/// Collects written files and wall-clock timings of one run.
#[derive(Debug, Default)]
pub struct Writer {
    pub outputs: Vec<PathBuf>,
    pub timings: BTreeMap<String, f64>,
}

impl Writer {
    pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
    }

    pub fn text(&mut self, path: PathBuf, text: &str) -> Result<(), CliError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            Writer::ensure_dir(parent)?;
        }
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.outputs.push(path);
        Ok(())
    }

    pub fn json(&mut self, path: PathBuf, value: &impl Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("plain data serializes");
        self.text(path, &(text + "\n"))
    }

    /// `meta.json` with the schema `{params, grid, tolerances, seed, version, timings}` plus `extra`.
    pub fn meta(
        &mut self,
        path: PathBuf,
        cfg: &Resolved,
        tolerances: Value,
        extra: Value,
    ) -> Result<(), CliError> {
        let mut meta = json!({
            "command": cfg.command,
            "preset": cfg.preset,
            "params": cfg.params,
            "grid": cfg.grid,
            "tolerances": tolerances,
            "seed": cfg.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "timings": self.timings,
        });
        if let (Value::Object(m), Value::Object(e)) = (&mut meta, extra) {
            m.extend(e);
        }
        self.json(path, &meta)
    }
}

/// Rows of numbers as CSV with full precision.
pub fn csv(header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = format!("{header}\n");
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
