//! The `steady`, `evolve`, `jko` and `limit-scan` experiments.

use std::path::{Path, PathBuf};
use std::time::Instant;

use aggdiff::{
    ball_radius_general, evolve as run_evolve, fixed_point_solve, jko_run, limit_profile,
    monotonicity_breach, refine, steady_diagnostics, Density, EvolveOptions, Grid, JkoOptions,
    KernelWeights, NewtonOptions, Params, RefinedState, SolverOptions, SteadyDiagnostics,
    SteadyState,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::Resolved;
use crate::report::{csv, Check, Summary, Writer};
use crate::CliError;

/// Identities checked at every stationary state.
const IDENTITY_TOL: f64 = 1e-3;

/// A grid fixed point, optionally polished in Lagrangian coordinates.
pub struct SteadyRun {
    pub state: SteadyState,
    pub grid_diagnostics: SteadyDiagnostics,
    pub refined: Option<RefinedState>,
}

impl SteadyRun {
    /// The most accurate profile available, on the run's grid.
    pub fn profile(&self) -> &Density {
        self.refined.as_ref().map_or(&self.state.rho, |r| &r.rho)
    }

    pub fn diagnostics(&self) -> &SteadyDiagnostics {
        self.refined
            .as_ref()
            .map_or(&self.grid_diagnostics, |r| &r.diagnostics)
    }

    pub fn converged(&self) -> bool {
        self.state.converged
            && !self.state.collapsed
            && self.refined.as_ref().is_none_or(|r| r.converged)
    }

    fn diag_json(&self) -> Value {
        let (st, d) = (&self.state, &self.grid_diagnostics);
        let refined = self.refined.as_ref().map(|r| {
            json!({
                "particles": r.quantile.n_particles(),
                "newton_iterations": r.newton_iterations,
                "grad_norm": r.grad_norm,
                "converged": r.converged,
                "diagnostics": r.diagnostics,
            })
        });
        json!({
            "c_s": st.c_s,
            "iterations": st.iterations,
            "residual": st.residual,
            "converged": st.converged,
            "collapsed": st.collapsed,
            "virial_residual": d.virial_residual,
            "virial_relative": d.virial_relative,
            "cs_consistency": d.cs_consistency,
            "cs_relative": d.cs_relative,
            "height": d.height,
            "support_radius": d.support_radius,
            "energy": d.energy,
            "refined": refined,
        })
    }

    fn checks(&self, label: &str) -> Vec<Check> {
        let d = self.diagnostics();
        vec![
            Check::holds(
                format!("{label}converged"),
                self.converged(),
                "fixed point (and refinement) converged",
            ),
            Check::at_most(
                format!("{label}virial_relative"),
                d.virial_relative,
                IDENTITY_TOL,
            ),
            Check::at_most(format!("{label}cs_relative"), d.cs_relative, IDENTITY_TOL),
            Check::holds(
                format!("{label}energy_negative"),
                d.energy.total < 0.0,
                "F_s < 0",
            ),
        ]
    }
}

/// Grid large enough for the stationary state: the configured one, widened in
/// the vanishing regime to four times the radius of the optimal ball.
pub fn steady_grid(p: &Params, grid: Grid) -> Result<Grid, CliError> {
    if p.net_attraction() > 0.0 {
        return Ok(grid);
    }
    let r = ball_radius_general(p)?;
    Ok(Grid::new(grid.half_width.max(4.0 * r), grid.n_cells)?)
}

pub fn solve_steady(
    p: &Params,
    grid: Grid,
    tol: f64,
    max_iter: usize,
    particles: usize,
) -> Result<SteadyRun, CliError> {
    let init = if p.net_attraction() > 0.0 {
        limit_profile(p, grid)?
    } else {
        let r = ball_radius_general(p)?;
        Density::gaussian_bumps(grid, &[(0.0, 0.5 * r, p.mass)])?
    };
    let opts = SolverOptions {
        tol,
        max_iter,
        ..SolverOptions::default()
    };
    let state = fixed_point_solve(p, &init, &opts)?;
    let weights = KernelWeights::shared(grid, p.s, 0.0)?;
    let grid_diagnostics = steady_diagnostics(&state, p, &weights)?;
    let refined = if particles > 0 && !state.collapsed {
        Some(refine(p, &state.rho, particles, &NewtonOptions::default())?)
    } else {
        None
    };
    Ok(SteadyRun {
        state,
        grid_diagnostics,
        refined,
    })
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent()
        .map_or_else(|| PathBuf::from(name), |d| d.join(name))
}

pub fn steady(cfg: &Resolved) -> Result<Summary, CliError> {
    let mut w = Writer::default();
    let out = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("profile.csv"));
    let diag = cfg
        .diag
        .clone()
        .unwrap_or_else(|| sibling(&out, "diag.json"));
    let p = cfg.params;
    let grid = steady_grid(&p, cfg.grid)?;
    let t = Instant::now();
    let run = solve_steady(&p, grid, cfg.tol, cfg.max_iter, cfg.refine)?;
    w.timings.insert("solve".into(), t.elapsed().as_secs_f64());

    w.text(out.clone(), &run.state.rho.to_csv())?;
    if let Some(r) = &run.refined {
        let stem = out
            .file_stem()
            .map_or("profile".into(), |s| s.to_string_lossy().into_owned());
        w.text(
            sibling(&out, &format!("{stem}_refined.csv")),
            &r.rho.to_csv(),
        )?;
    }
    let diag_value = run.diag_json();
    w.json(diag, &diag_value)?;
    w.meta(
        sibling(&out, "meta.json"),
        cfg,
        json!({ "tol": cfg.tol, "max_iter": cfg.max_iter, "refine": cfg.refine, "newton": NewtonOptions::default() }),
        json!({ "solve_grid": grid }),
    )?;
    Ok(Summary::new(
        "steady",
        run.checks(""),
        w.outputs,
        diag_value,
    ))
}

pub fn evolve(cfg: &Resolved) -> Result<Summary, CliError> {
    let mut cfg = cfg.clone();
    let mut w = Writer::default();
    let dir = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("evolve-out"));
    Writer::ensure_dir(&dir)?;
    let rho0 = cfg.init.build(cfg.grid, &cfg.params)?;
    // Some data fix their own mass.
    cfg.params.mass = rho0.mass();
    let p = cfg.params;
    let opts = EvolveOptions::uniform(cfg.t_end, cfg.outputs);
    let t = Instant::now();
    let traj = run_evolve(&p, &rho0, cfg.t_end, &opts)?;
    w.timings.insert("evolve".into(), t.elapsed().as_secs_f64());

    for (time, state) in traj.times.iter().zip(&traj.states) {
        w.text(dir.join(format!("state_{time:.6}.csv")), &state.to_csv())?;
    }
    let rows = traj
        .times
        .iter()
        .zip(&traj.energy_log)
        .map(|(&t, e)| vec![t, e.h_m, e.quad, e.w_s, e.total]);
    w.text(dir.join("energy.csv"), &csv("t,h_m,quad,w_s,total", rows))?;

    let breach = monotonicity_breach(&traj);
    // Distance to the stationary state, when the limit profile exists to start from.
    let t = Instant::now();
    let l1_to_steady = if p.net_attraction() > 0.0 {
        solve_steady(&p, cfg.grid, cfg.tol, cfg.max_iter, 0)
            .ok()
            .filter(|r| r.converged())
            .and_then(|r| traj.last().lp_distance(&r.state.rho, 1.0).ok())
    } else {
        None
    };
    w.timings
        .insert("steady_reference".into(), t.elapsed().as_secs_f64());
    let dts = &traj.dt_history;
    let dt_stats = json!({
        "steps": dts.len(),
        "min": dts.iter().copied().fold(f64::INFINITY, f64::min),
        "max": dts.iter().copied().fold(0.0, f64::max),
        "mean": dts.iter().sum::<f64>() / dts.len().max(1) as f64,
    });
    let results = json!({
        "mass": p.mass,
        "breach_time": breach,
        "mass_drift": traj.mass_drift,
        "boundary_mass": traj.boundary_mass,
        "max_relative_energy_increase": traj.max_relative_energy_increase(),
        "final_energy": traj.energy_log.last().map(|e| e.total),
        "final_height": traj.last().sup_norm(),
        "l1_to_steady": l1_to_steady,
        "dt": dt_stats,
    });
    w.meta(
        dir.join("meta.json"),
        &cfg,
        json!({ "fixed_point_tol": cfg.tol, "energy_slack": 1e-8 }),
        results.clone(),
    )?;
    let checks = vec![
        Check::at_most("mass_drift", traj.mass_drift, 1e-12 * p.mass),
        Check::at_most(
            "relative_energy_increase",
            traj.max_relative_energy_increase(),
            1e-8,
        ),
        Check::at_most("boundary_mass", traj.boundary_mass, 1e-8 * p.mass),
    ];
    Ok(Summary::new("evolve", checks, w.outputs, results))
}

pub fn jko(cfg: &Resolved) -> Result<Summary, CliError> {
    let mut cfg = cfg.clone();
    let mut w = Writer::default();
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("jko-out"));
    Writer::ensure_dir(&dir.join("states"))?;
    let rho0 = cfg.init.build(cfg.grid, &cfg.params)?;
    // Some data fix their own mass.
    cfg.params.mass = rho0.mass();
    let p = cfg.params;
    let opts = JkoOptions {
        tau: cfg.tau,
        particles: cfg.particles,
        ..JkoOptions::default()
    };
    let t = Instant::now();
    let run = jko_run(&p, &rho0, &opts, cfg.steps)?;
    w.timings.insert("jko".into(), t.elapsed().as_secs_f64());

    let extent = run
        .states
        .iter()
        .flat_map(|q| [q.nodes()[0], q.nodes()[q.nodes().len() - 1]]);
    let state_grid = covering_grid(cfg.grid, extent.fold(0.0, |a: f64, x| a.max(x.abs())))?;
    for (k, rho) in run.densities(state_grid)?.iter().enumerate() {
        w.text(
            dir.join("states").join(format!("state_{k:05}.csv")),
            &rho.to_csv(),
        )?;
    }
    let basic = run.basic_estimate();
    let mut text = String::from("k,F_s,w2_inc,second_moment,basic1_lhs,basic1_rhs\n");
    for (k, e) in run.energies.iter().enumerate() {
        let m2 = run.second_moments[k];
        if k == 0 {
            text.push_str(&format!("0,{:.16e},,{m2:.16e},,\n", e.total));
        } else {
            let (lhs, rhs) = basic[k - 1];
            text.push_str(&format!(
                "{k},{:.16e},{:.16e},{m2:.16e},{lhs:.16e},{rhs:.16e}\n",
                e.total,
                run.w2_increments[k - 1]
            ));
        }
    }
    w.text(dir.join("estimates.csv"), &text)?;

    let slack = opts.tol;
    let worst_basic = basic
        .iter()
        .map(|(l, r)| l - r)
        .fold(f64::NEG_INFINITY, f64::max);
    let worst_telescoped = run
        .telescoped_estimate()
        .iter()
        .map(|(l, r)| l - r)
        .fold(f64::NEG_INFINITY, f64::max);
    let moment_excess = run
        .second_moments
        .iter()
        .zip(run.second_moment_bounds())
        .map(|(m, b)| m - b)
        .fold(f64::NEG_INFINITY, f64::max);
    let results = json!({
        "mass": p.mass,
        "energies": run.energies.iter().map(|e| e.total).collect::<Vec<_>>(),
        "worst_basic_excess": worst_basic,
        "worst_telescoped_excess": worst_telescoped,
        "worst_second_moment_excess": moment_excess,
        "max_inner_iterations": run.inner_iterations.iter().max(),
        "max_grad_norm": run.grad_norms.iter().copied().fold(0.0, f64::max),
    });
    let mut meta_extra = results.clone();
    meta_extra["state_grid"] = json!(state_grid);
    w.meta(
        dir.join("meta.json"),
        &cfg,
        json!({ "jko": opts }),
        meta_extra,
    )?;
    let mut checks = vec![Check::holds(
        "inner_converged",
        run.all_converged,
        "every step reached the tolerance",
    )];
    if !basic.is_empty() {
        checks.push(Check::at_most("basic_estimate_excess", worst_basic, slack));
        checks.push(Check::at_most(
            "telescoped_estimate_excess",
            worst_telescoped,
            cfg.steps as f64 * slack,
        ));
        checks.push(Check::at_most("second_moment_excess", moment_excess, 0.0));
    }
    Ok(Summary::new("jko", checks, w.outputs, results))
}

/// `grid` extended symmetrically by whole cells until it contains `[-reach, reach]`.
/// Minimizing movements live on the line, so diffusion may carry mass past the box.
fn covering_grid(grid: Grid, reach: f64) -> Result<Grid, CliError> {
    if reach <= grid.half_width {
        return Ok(grid);
    }
    let dx = grid.dx();
    let extra = ((reach - grid.half_width) / dx).ceil() as usize;
    Ok(Grid::new(
        grid.half_width + extra as f64 * dx,
        grid.n_cells + 2 * extra,
    )?)
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

pub fn limit_scan(cfg: &Resolved) -> Result<Summary, CliError> {
    let mut w = Writer::default();
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("scan-out"));
    Writer::ensure_dir(&dir)?;
    let base = cfg.params;
    let t = Instant::now();
    let runs: Vec<(f64, Grid, SteadyRun)> = cfg
        .s_list
        .par_iter()
        .map(|&s| {
            let p = base.with_s(s);
            let grid = steady_grid(&p, cfg.grid)?;
            Ok((
                s,
                grid,
                solve_steady(&p, grid, cfg.tol, cfg.max_iter, cfg.refine)?,
            ))
        })
        .collect::<Result<_, CliError>>()?;
    w.timings.insert("scan".into(), t.elapsed().as_secs_f64());

    let target = base.net_attraction();
    let limit = if target > 0.0 {
        Some(limit_profile(&base, cfg.grid)?)
    } else {
        None
    };
    if let Some(l) = &limit {
        w.text(dir.join("limit.csv"), &l.to_csv())?;
    }
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let (mut heights, mut l3, mut energies) = (Vec::new(), Vec::new(), Vec::new());
    for (s, grid, run) in &runs {
        w.text(
            dir.join(format!("profile_s{s}.csv")),
            &run.profile().to_csv(),
        )?;
        let d = run.diagnostics();
        let dist = match &limit {
            Some(l) if grid.same_as(&cfg.grid) => run.profile().lp_distance(l, 3.0)?,
            _ => f64::NAN,
        };
        heights.push(d.height);
        l3.push(dist);
        energies.push(d.energy.total);
        rows.push(vec![
            *s,
            d.height,
            dist,
            d.energy.total,
            d.virial_relative,
            d.cs_relative,
            run.grid_diagnostics.virial_relative,
            run.state.iterations as f64,
            f64::from(u8::from(run.converged())),
        ]);
        checks.extend(run.checks(&format!("s={s}: ")));
    }
    w.text(
        dir.join("scan.csv"),
        &csv("s,height,l3_to_limit,energy,virial_relative,cs_relative,grid_virial_relative,iterations,converged", rows),
    )?;
    // Scans run from large to small s.
    let ordered = cfg.s_list.windows(2).all(|p| p[1] < p[0]);
    if ordered && runs.len() > 1 {
        if target > 0.0 {
            let height_target = target.powf(1.0 / (base.m - 2.0));
            let gaps: Vec<f64> = heights.iter().map(|h| (h - height_target).abs()).collect();
            checks.push(Check::holds(
                "heights_approach_limit",
                strictly_decreasing(&gaps),
                "|height - limit height| strictly decreasing",
            ));
            checks.push(Check::holds(
                "l3_distance_decreasing",
                strictly_decreasing(&l3),
                "strictly decreasing",
            ));
        } else {
            checks.push(Check::holds(
                "sup_decreasing",
                strictly_decreasing(&heights),
                "strictly decreasing",
            ));
            checks.push(Check::holds(
                "energy_increasing_to_zero",
                energies.windows(2).all(|e| e[1] > e[0]) && energies.iter().all(|&e| e < 0.0),
                "strictly increasing, negative",
            ));
        }
    }
    let results = json!({
        "s": cfg.s_list,
        "heights": heights,
        "l3_to_limit": l3,
        "energies": energies,
        "limit_height": (target > 0.0).then(|| target.powf(1.0 / (base.m - 2.0))),
    });
    w.meta(
        dir.join("meta.json"),
        cfg,
        json!({ "tol": cfg.tol, "max_iter": cfg.max_iter, "refine": cfg.refine, "newton": NewtonOptions::default() }),
        results.clone(),
    )?;
    Ok(Summary::new("limit-scan", checks, w.outputs, results))
}
