//! Experiment settings: built-in defaults, presets, TOML files and flags,
//! layered in that order.

use std::path::{Path, PathBuf};

use aggdiff::{limit_profile, Density, Grid, Params};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Initial data shared by `evolve` and `jko`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InitialDatum {
    /// Two Gaussians of half the mass each, centred at ±1 with width 0.25.
    TwoBump,
    /// A centred Gaussian of width 0.5.
    Gaussian,
    /// Mollified indicator with a small bump on top (ε = 0.1, α = 4).
    Mollifier,
    /// `¼·1_{|x|<3/2}`; its mass (3/4) replaces the configured one.
    Indicator,
    /// Minimizer of the local limit energy.
    Limit,
}

impl InitialDatum {
    pub fn build(self, grid: Grid, p: &Params) -> aggdiff::Result<Density> {
        match self {
            InitialDatum::TwoBump => Density::gaussian_bumps(
                grid,
                &[(-1.0, 0.25, 0.5 * p.mass), (1.0, 0.25, 0.5 * p.mass)],
            ),
            InitialDatum::Gaussian => Density::gaussian_bumps(grid, &[(0.0, 0.5, p.mass)]),
            InitialDatum::Mollifier => Density::mollified_counterexample(grid, 0.1, 4.0),
            InitialDatum::Indicator => Density::indicator(grid, -1.5, 1.5, 0.25),
            InitialDatum::Limit => limit_profile(p, grid),
        }
    }
}

/// Every configurable field; `None` means "not set at this layer".
///
/// The same struct is read from TOML and from the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    /// Subcommand a config file is meant for (checked, or used by `run`).
    #[arg(skip)]
    pub command: Option<String>,
    /// Named preset: fig1-left, fig1-right, fig2..fig5, two-bump, gaussian, mollifier, indicator, vanishing.
    #[arg(long)]
    pub preset: Option<String>,
    /// Diffusion exponent m > 2.
    #[arg(long)]
    pub m: Option<f64>,
    /// Quadratic diffusion weight β ≥ 0.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Attraction strength χ > 0.
    #[arg(long)]
    pub chi: Option<f64>,
    /// Kernel order s in (0, 1/2).
    #[arg(long)]
    pub s: Option<f64>,
    /// Total mass M.
    #[arg(long)]
    pub mass: Option<f64>,
    /// Half width of the box [−L, L].
    #[arg(long = "L")]
    #[serde(rename = "L")]
    pub half_width: Option<f64>,
    /// Number of cells.
    #[arg(long)]
    pub n: Option<usize>,
    /// Fixed-point tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Fixed-point iteration cap.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Final time.
    #[arg(long = "T")]
    #[serde(rename = "T")]
    pub t_end: Option<f64>,
    /// Number of equally spaced stored states after t = 0.
    #[arg(long)]
    pub outputs: Option<usize>,
    /// Initial datum.
    #[arg(long, value_enum)]
    pub init: Option<InitialDatum>,
    /// Minimizing-movement time step.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Number of minimizing-movement steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Number of equal-mass pieces of the quantile representation.
    #[arg(long = "K")]
    #[serde(rename = "K")]
    pub particles: Option<usize>,
    /// Pieces used to polish stationary states in Lagrangian coordinates (0 disables).
    #[arg(long)]
    pub refine: Option<usize>,
    /// Kernel orders of a scan, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub s_list: Option<Vec<f64>>,
    /// Seed of every random choice.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (`steady`) or directory (other commands).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Diagnostics file of `steady`.
    #[arg(long)]
    pub diag: Option<PathBuf>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident; $($f:ident),*) => {
        Settings { $($f: $top.$f.or($base.$f)),* }
    };
}

impl Settings {
    /// Fields set in `top` win.
    pub fn overlay(self, top: Settings) -> Settings {
        overlay_fields!(self, top; command, preset, m, beta, chi, s, mass, half_width, n, tol, max_iter,
            t_end, outputs, init, tau, steps, particles, refine, s_list, seed, out, diag)
    }

    pub fn from_toml(text: &str) -> Result<Settings, CliError> {
        if text.trim().is_empty() {
            return Err(CliError::Usage("config file is empty".into()));
        }
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Settings::from_toml(&text)
    }

    fn defaults() -> Settings {
        Settings {
            command: None,
            preset: None,
            m: Some(3.0),
            beta: Some(0.0),
            chi: Some(1.0),
            s: Some(0.1),
            mass: Some(1.0),
            half_width: Some(4.0),
            n: Some(1024),
            tol: Some(1e-10),
            max_iter: Some(50_000),
            t_end: Some(1.0),
            outputs: Some(20),
            init: Some(InitialDatum::Gaussian),
            tau: Some(1e-3),
            steps: Some(50),
            particles: Some(256),
            refine: Some(256),
            s_list: Some(vec![0.2, 0.1, 0.05, 0.02]),
            seed: Some(0),
            out: None,
            diag: None,
        }
    }

    /// Defaults, then the preset named by the file or the flags, then the
    /// file, then the flags.
    pub fn resolve(file: Option<Settings>, flags: Settings) -> Result<Resolved, CliError> {
        let file = file.unwrap_or_default();
        let name = flags.preset.clone().or_else(|| file.preset.clone());
        let mut layered = Settings::defaults();
        if let Some(name) = &name {
            layered = layered.overlay(preset(name)?);
        }
        let merged = layered.overlay(file).overlay(flags);
        Resolved::from_settings(merged)
    }
}

/// Field values of a named preset.
pub fn preset(name: &str) -> Result<Settings, CliError> {
    let base = Settings {
        m: Some(3.0),
        chi: Some(1.0),
        mass: Some(1.0),
        ..Settings::default()
    };
    let evolve = |beta: f64, s: f64, l: f64, t: f64, outputs: usize, init: InitialDatum| Settings {
        beta: Some(beta),
        s: Some(s),
        half_width: Some(l),
        n: Some(1024),
        t_end: Some(t),
        outputs: Some(outputs),
        init: Some(init),
        ..base.clone()
    };
    let scan = |beta: f64, list: Vec<f64>| Settings {
        beta: Some(beta),
        s: Some(list[0]),
        half_width: Some(4.0),
        n: Some(2048),
        s_list: Some(list),
        ..base.clone()
    };
    let settings = match name {
        "fig1-left" => scan(0.0, vec![0.25, 0.15, 0.1, 0.05]),
        "fig1-right" => scan(0.2, vec![0.25, 0.15, 0.1, 0.05]),
        "vanishing" => scan(0.6, vec![0.2, 0.1, 0.05]),
        "fig2" | "two-bump" => evolve(0.2, 0.1, 4.0, 30.0, 30, InitialDatum::TwoBump),
        // Limit radius 5 for β = 0.4, hence the wider box.
        "fig3" | "gaussian" => evolve(0.4, 0.08, 12.0, 4.0, 40, InitialDatum::Gaussian),
        "fig4" | "mollifier" => evolve(0.0, 0.1, 3.0, 1.0, 200, InitialDatum::Mollifier),
        "fig5" | "indicator" => evolve(0.0, 0.1, 3.0, 1.0, 200, InitialDatum::Indicator),
        other => return Err(CliError::Usage(format!("unknown preset `{other}`"))),
    };
    Ok(Settings {
        preset: Some(name.to_string()),
        ..settings
    })
}

/// Fully specified experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub command: Option<String>,
    pub preset: Option<String>,
    pub params: Params,
    pub grid: Grid,
    pub tol: f64,
    pub max_iter: usize,
    pub t_end: f64,
    pub outputs: usize,
    pub init: InitialDatum,
    pub tau: f64,
    pub steps: usize,
    pub particles: usize,
    pub refine: usize,
    pub s_list: Vec<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub diag: Option<PathBuf>,
}

impl Resolved {
    fn from_settings(s: Settings) -> Result<Resolved, CliError> {
        // Every field is set by the defaults layer.
        let params = Params::new(
            s.m.unwrap(),
            s.beta.unwrap(),
            s.chi.unwrap(),
            s.s.unwrap(),
            s.mass.unwrap(),
        )
        .map_err(|e| CliError::Usage(format!("invalid parameters: {e}")))?;
        let grid = Grid::new(s.half_width.unwrap(), s.n.unwrap())
            .map_err(|e| CliError::Usage(format!("invalid grid: {e}")))?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(CliError::Usage(format!("{name} must be positive, got {v}")))
            }
        };
        let s_list = s.s_list.unwrap();
        if s_list.is_empty() {
            return Err(CliError::Usage("s-list must not be empty".into()));
        }
        for &order in &s_list {
            params
                .with_s(order)
                .validate()
                .map_err(|e| CliError::Usage(format!("invalid s-list entry: {e}")))?;
        }
        let outputs = s.outputs.unwrap();
        if outputs == 0 {
            return Err(CliError::Usage("outputs must be at least 1".into()));
        }
        Ok(Resolved {
            command: s.command,
            preset: s.preset,
            params,
            grid,
            tol: positive("tol", s.tol.unwrap())?,
            max_iter: s.max_iter.unwrap(),
            t_end: positive("T", s.t_end.unwrap())?,
            outputs,
            init: s.init.unwrap(),
            tau: positive("tau", s.tau.unwrap())?,
            steps: s.steps.unwrap(),
            particles: s.particles.unwrap().max(1),
            refine: s.refine.unwrap(),
            s_list,
            seed: s.seed.unwrap(),
            out: s.out,
            diag: s.diag,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_which_overrides_preset() {
        let file = Settings::from_toml("preset = \"fig2\"\nbeta = 0.3\nn = 256\n").unwrap();
        let flags = Settings {
            n: Some(128),
            ..Settings::default()
        };
        let r = Settings::resolve(Some(file), flags).unwrap();
        assert_eq!(r.params.beta, 0.3);
        assert_eq!(r.params.s, 0.1);
        assert_eq!(r.grid.n_cells, 128);
        assert_eq!(r.t_end, 30.0);
        assert_eq!(r.init, InitialDatum::TwoBump);
    }

    #[test]
    fn bad_input_is_a_usage_error() {
        assert!(matches!(
            Settings::from_toml("  \n"),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            Settings::from_toml("bogus = 1"),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(preset("fig9"), Err(CliError::Usage(_))));
        let flags = Settings {
            m: Some(1.5),
            ..Settings::default()
        };
        assert!(matches!(
            Settings::resolve(None, flags),
            Err(CliError::Usage(_))
        ));
    }
}
