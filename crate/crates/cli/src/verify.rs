//! The property suite behind `aggdiff verify`: every invariant is measured and
//! compared with its threshold at fixed seeds.

use aggdiff::energy::lower_bound_check;
use aggdiff::riesz::GaussianBump;
use aggdiff::{
    cfl_dt, convolve, evolve, fixed_point_solve, free_energy, gamma, hls_constant, jko_run,
    jko_step, limit_profile, riesz_constant, sds_constant, step, symmetric_form, w2_distance,
    Density, EvolveOptions, Grid, JkoOptions, KernelWeights, Params, Quantile, SolverOptions,
};
use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::commands::solve_steady;
use crate::report::Check;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Module {
    Special,
    Grid,
    Riesz,
    Energy,
    Steady,
    Evolution,
    Jko,
}

/// Deliberate corruption used to confirm that the suite notices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    /// Perturbs `S_{d,s}` by one part in 10⁸ before it is compared.
    SdsConstant,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModuleReport {
    pub module: Module,
    pub seconds: f64,
    pub checks: Vec<Check>,
}

pub fn run(
    modules: &[Module],
    seed: u64,
    mutation: Option<Mutation>,
) -> Result<Vec<ModuleReport>, CliError> {
    let mut reports: Vec<ModuleReport> = modules
        .par_iter()
        .map(|&module| {
            let t = std::time::Instant::now();
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ (module as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            );
            let checks = match module {
                Module::Special => special(&mut rng, mutation),
                Module::Grid => grid(&mut rng),
                Module::Riesz => riesz(&mut rng),
                Module::Energy => energy(&mut rng),
                Module::Steady => steady(),
                Module::Evolution => evolution(),
                Module::Jko => jko(&mut rng),
            }?;
            Ok(ModuleReport {
                module,
                seconds: t.elapsed().as_secs_f64(),
                checks,
            })
        })
        .collect::<Result<_, CliError>>()?;
    reports.sort_by_key(|r| r.module);
    Ok(reports)
}

fn params(beta: f64, s: f64) -> Params {
    Params::new(3.0, beta, 1.0, s, 1.0).expect("valid constants")
}

fn max_of(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// One to four Gaussian bumps with centres in `[−2, 2]`, unit mass.
fn random_density(rng: &mut ChaCha8Rng, grid: Grid) -> Result<Density, CliError> {
    let l = 4.0;
    let count = rng.random_range(1..=4);
    let mut bumps: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                rng.random_range(-l / 2.0..l / 2.0),
                rng.random_range(0.15..0.6),
                rng.random_range(0.2..1.0),
            )
        })
        .collect();
    let total: f64 = bumps.iter().map(|b| b.2).sum();
    bumps.iter_mut().for_each(|b| b.2 /= total);
    let rho = Density::gaussian_bumps(grid, &bumps)?;
    let mass = rho.mass();
    Ok(rho.scaled(1.0 / mass)?)
}

fn special(rng: &mut ChaCha8Rng, mutation: Option<Mutation>) -> Result<Vec<Check>, CliError> {
    use std::f64::consts::PI;
    let reflection = (0..1000)
        .map(|_| {
            let x: f64 = rng.random_range(1e-3..0.999);
            Ok((gamma(x)? * gamma(1.0 - x)? * (PI * x).sin() / PI - 1.0).abs())
        })
        .collect::<Result<Vec<f64>, CliError>>()?;
    let recurrence = (0..1000)
        .map(|_| {
            let x: f64 = rng.random_range(1e-3..150.0);
            let b = x * gamma(x)?;
            Ok((gamma(x + 1.0)? - b).abs() / b)
        })
        .collect::<Result<Vec<f64>, CliError>>()?;
    let product = (0..100)
        .map(|_| {
            let s: f64 = rng.random_range(1e-3..0.499);
            let mut sds = sds_constant(1, s)?;
            if mutation == Some(Mutation::SdsConstant) {
                sds *= 1.0 + 1e-8;
            }
            Ok((riesz_constant(1, s)? * hls_constant(1, s)? - sds).abs() / sds)
        })
        .collect::<Result<Vec<f64>, CliError>>()?;
    // c_{1,s}/s → π^{−1/2}Γ(1/2) = 1; Richardson removes the O(s) term.
    let asymptote = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&s| {
            Ok(
                (2.0 * riesz_constant(1, s / 2.0)? / (s / 2.0) - riesz_constant(1, s)? / s - 1.0)
                    .abs(),
            )
        })
        .collect::<Result<Vec<f64>, CliError>>()?;
    Ok(vec![
        Check::at_most(
            "riesz_constant(1, 1/4) error",
            (riesz_constant(1, 0.25)? - 0.398_942_280_4).abs(),
            1e-9,
        ),
        Check::at_most("gamma reflection", max_of(reflection), 1e-10),
        Check::at_most("gamma recurrence", max_of(recurrence), 1e-12),
        Check::at_most("S = c*H identity", max_of(product), 1e-11),
        Check::at_most("c/s small-order limit", max_of(asymptote), 1e-2),
    ])
}

fn grid(rng: &mut ChaCha8Rng) -> Result<Vec<Check>, CliError> {
    let g = Grid::new(4.0, 512)?;
    // Mass of 1 + x/5 is 8; the step 1 on [−1, 0], 3 on [0, 2] has mass 7 and
    // first moment 11/2 (its faces sit on the grid).
    let linear = Density::from_fn(g, |x| 1.0 + 0.2 * x)?;
    let step_profile = Density::from_fn(g, |x| {
        if (-1.0..0.0).contains(&x) {
            1.0
        } else if (0.0..2.0).contains(&x) {
            3.0
        } else {
            0.0
        }
    })?;
    let m = step_profile.moments();
    let moment_err = (linear.mass() - 8.0)
        .abs()
        .max((m.mass - 7.0).abs())
        .max((m.center_of_mass * m.mass - 5.5).abs());

    let rho = Density::gaussian_bumps(g, &[(0.0, 0.5, 1.0)])?;
    let composed = rho.dilate(1.3)?.dilate(0.8)?;
    let direct = rho.dilate(1.3 * 0.8)?;
    let dilation_err = composed.lp_distance(&direct, 1.0)?;
    // Two resamplings, each off by at most dx times the total variation 2‖ρ‖_∞.
    let dilation_bound = 2.0 * g.dx() * 2.0 * 1.3 * rho.sup_norm();

    // A wider box, so that recentring never pushes the tails out.
    let wide = Grid::new(8.0, 1024)?;
    let mut mass_err = 0.0f64;
    let mut com_excess = f64::NEG_INFINITY;
    for _ in 0..20 {
        let target = rng.random_range(0.5..1.0);
        let out = random_density(rng, wide)?.normalize_to_class(target)?;
        mass_err = mass_err.max((out.mass() - target).abs() / target);
        com_excess = com_excess.max(out.moments().center_of_mass.abs() - 0.5 * g.dx());
    }
    Ok(vec![
        Check::at_most(
            "moments exact on grid-represented profiles",
            moment_err,
            1e-12,
        ),
        Check::at_most(
            "dilation composition L1 error",
            dilation_err,
            dilation_bound,
        ),
        Check::at_most("normalize_to_class mass error", mass_err, 1e-10),
        Check::at_most("normalize_to_class |com| - dx/2", com_excess, 1e-12),
    ])
}

fn riesz(rng: &mut ChaCha8Rng) -> Result<Vec<Check>, CliError> {
    // K_s ∗ 1_{[−1,1]} at 0 is c/s; the nearest centres sit at ±dx/2.
    let s = 0.2;
    let exact = riesz_constant(1, s)? / s;
    let errors = [256usize, 512, 1024, 2048]
        .iter()
        .map(|&n| {
            let g = Grid::new(4.0, n)?;
            let rho = Density::indicator(g, -1.0, 1.0, 1.0)?;
            let field = convolve(&rho, &KernelWeights::build(g, s, 0.0)?)?;
            Ok((field[n / 2] - exact).abs())
        })
        .collect::<Result<Vec<f64>, CliError>>()?;
    let order = errors
        .windows(2)
        .map(|e| (e[0] / e[1]).log2())
        .fold(f64::INFINITY, f64::min);

    let g = Grid::new(4.0, 512)?;
    let mut reflection = 0.0f64;
    for _ in 0..10 {
        let rho = random_density(rng, g)?;
        let s = rng.random_range(0.02..0.45);
        let w = KernelWeights::build(g, s, 0.0)?;
        let phi = GaussianBump {
            center: 0.3,
            width: 0.5,
            amplitude: 1.0,
        };
        let phi_r = GaussianBump {
            center: -0.3,
            ..phi
        };
        let (a, b) = (
            symmetric_form(&rho, &phi, &w)?,
            symmetric_form(&rho.reflect(), &phi_r, &w)?,
        );
        reflection = reflection.max((a - b).abs() / (1.0 + a.abs()));
    }

    // I_s(ρ_s; φ) → ∫ρ²φ″ along ρ_s = ρ + s·(zero-mass perturbation).
    let g = Grid::new(4.0, 2048)?;
    let phi = GaussianBump {
        center: 0.2,
        width: 0.5,
        amplitude: 1.0,
    };
    let base = Density::gaussian_bumps(g, &[(0.0, 0.5, 1.0)])?;
    let bump = |c: f64, x: f64| (-0.5 * ((x - c) / 0.3).powi(2)).exp();
    let perturbation: Vec<f64> = g
        .centers()
        .iter()
        .map(|&x| 0.5 * (bump(0.5, x) - bump(-0.5, x)))
        .collect();
    let limit_of = |rho: &Density| -> f64 {
        let sub = 32;
        let h = g.dx() / sub as f64;
        rho.values()
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                (0..sub)
                    .map(|k| phi.d2(g.face(i) + (k as f64 + 0.5) * h))
                    .sum::<f64>()
                    * h
                    * r
                    * r
            })
            .sum()
    };
    use aggdiff::TestFunction;
    let limit = limit_of(&base);
    let collapse = [0.1, 0.05, 0.02]
        .iter()
        .map(|&s| {
            let values: Vec<f64> = base
                .values()
                .iter()
                .zip(&perturbation)
                .map(|(r, q)| r + s * q)
                .collect();
            let rho_s = Density::new(g, values)?;
            Ok((symmetric_form(&rho_s, &phi, &KernelWeights::build(g, s, 0.0)?)? - limit).abs())
        })
        .collect::<Result<Vec<f64>, CliError>>()?;

    // ‖(K_{s,ε} − K_s) ∗ ρ‖_{L¹} ≤ M c ∫_{|r|≤ε} (|r|^{2s−1} − ε^{2s−1}) dr.
    let g = Grid::new(4.0, 1024)?;
    let rho = Density::gaussian_bumps(g, &[(0.0, 0.5, 1.0)])?;
    let s = 0.2;
    let exact = convolve(&rho, &KernelWeights::build(g, s, 0.0)?)?;
    let c = riesz_constant(1, s)?;
    // K_{s,ε} ≤ K_s, so for ρ ≥ 0 the bound is attained up to rounding.
    let mut truncation_ratio = 0.0f64;
    let mut truncation_errors = Vec::new();
    for eps in [g.dx(), g.dx() / 2.0, g.dx() / 4.0] {
        let field = convolve(&rho, &KernelWeights::build(g, s, eps)?)?;
        let l1: f64 = field
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * g.dx();
        let bound = rho.mass() * c * 2.0 * eps.powf(2.0 * s) * (1.0 / (2.0 * s) - 1.0);
        truncation_ratio = truncation_ratio.max(l1 / bound);
        truncation_errors.push(l1);
    }
    Ok(vec![
        Check::at_least("convolution observed order", order, 1.0),
        Check::at_most("symmetric form reflection defect", reflection, 1e-12),
        Check::holds(
            "kernel collapse error decreasing",
            strictly_decreasing(&collapse),
            "strictly decreasing",
        ),
        Check::at_most("truncation L1 error / bound", truncation_ratio, 1.0 + 1e-9),
        Check::holds(
            "truncation error decreasing",
            strictly_decreasing(&truncation_errors),
            "strictly decreasing",
        ),
    ])
}

fn energy(rng: &mut ChaCha8Rng) -> Result<Vec<Check>, CliError> {
    let g = Grid::new(4.0, 512)?;
    let mut reflection = 0.0f64;
    let mut hls_excess = f64::NEG_INFINITY;
    let mut bound_ok = true;
    for _ in 0..20 {
        let rho = random_density(rng, g)?;
        let s = rng.random_range(0.02..0.45);
        let p = params(0.2, s);
        let w = KernelWeights::build(g, s, 0.0)?;
        let (a, b) = (
            free_energy(&rho, &p, &w)?.total,
            free_energy(&rho.reflect(), &p, &w)?.total,
        );
        reflection = reflection.max((a - b).abs() / (1.0 + a.abs()));
        let r = lower_bound_check(&rho, &p, &w)?;
        hls_excess = hls_excess.max(r.interaction - r.hls_interpolated);
        bound_ok &= r.satisfied;
    }

    // Pieces scale as λ^{m−1}, λ and λ^{1−2s} under mass-invariant dilation.
    let g = Grid::new(4.0, 2048)?;
    let p = params(0.2, 0.2);
    let w = KernelWeights::build(g, p.s, 0.0)?;
    let rho = Density::gaussian_bumps(g, &[(0.0, 0.5, 1.0)])?;
    let lambda = 1.2;
    let (e0, e1) = (
        free_energy(&rho, &p, &w)?,
        free_energy(&rho.dilate(lambda)?, &p, &w)?,
    );
    let scaling = [
        (e1.h_m / e0.h_m) / lambda.powf(p.m - 1.0),
        (e1.quad / e0.quad) / lambda,
        (e1.w_s / e0.w_s) / lambda.powf(1.0 - 2.0 * p.s),
    ]
    .iter()
    .map(|r| (r - 1.0).abs())
    .fold(0.0, f64::max);
    Ok(vec![
        Check::at_most("free energy reflection defect", reflection, 1e-13),
        Check::at_most("dilation scaling of the energy pieces", scaling, 1e-4),
        Check::at_most("|W_s| - HLS interpolation bound", hls_excess, 0.0),
        Check::holds("a-priori lower bound", bound_ok, "holds on all samples"),
    ])
}

fn steady() -> Result<Vec<Check>, CliError> {
    let g = Grid::new(4.0, 2048)?;
    let scan = [0.2, 0.1, 0.05, 0.02];
    let runs = scan
        .par_iter()
        .map(|&s| solve_steady(&params(0.0, s), g, 1e-10, 50_000, 256))
        .collect::<Result<Vec<_>, CliError>>()?;
    let limit = limit_profile(&params(0.0, 0.1), g)?;
    let l3 = runs
        .iter()
        .map(|r| Ok(r.profile().lp_distance(&limit, 3.0)?))
        .collect::<Result<Vec<f64>, CliError>>()?;
    let radii: Vec<f64> = runs
        .iter()
        .map(|r| r.diagnostics().support_radius)
        .collect();
    let identities = runs
        .iter()
        .map(|r| {
            r.diagnostics()
                .virial_relative
                .max(r.diagnostics().cs_relative)
        })
        .fold(0.0, f64::max);

    let vanishing = [0.2, 0.1, 0.05]
        .par_iter()
        .map(|&s| {
            let p = params(0.6, s);
            let grid = crate::commands::steady_grid(&p, g)?;
            Ok(solve_steady(&p, grid, 1e-10, 50_000, 0)?
                .diagnostics()
                .height)
        })
        .collect::<Result<Vec<f64>, CliError>>()?;

    // Shape and resolution stability of the grid fixed point at s = 0.1.
    let p = params(0.0, 0.1);
    let heights = [1024usize, 2048]
        .iter()
        .map(|&n| {
            let g = Grid::new(4.0, n)?;
            Ok(fixed_point_solve(&p, &limit_profile(&p, g)?, &SolverOptions::default())?.rho)
        })
        .collect::<Result<Vec<Density>, CliError>>()?;
    let fine = &heights[1];
    let v = fine.values();
    let n = v.len();
    let asymmetry = (0..n)
        .map(|i| (v[i] - v[n - 1 - i]).abs())
        .fold(0.0, f64::max);
    // Largest rise over one cell on the right half.
    let rise = v[n / 2..]
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max);
    let sup_change = (heights[0].sup_norm() - fine.sup_norm()).abs() / fine.sup_norm();
    Ok(vec![
        Check::holds(
            "L3 distance to the limit decreasing",
            strictly_decreasing(&l3),
            "strictly decreasing",
        ),
        Check::at_most(
            "L3 distance to the limit at s = 0.02",
            l3[l3.len() - 1],
            0.1,
        ),
        Check::at_most("stationary identities (relative)", identities, 1e-3),
        Check::holds(
            "vanishing regime sup decreasing",
            strictly_decreasing(&vanishing),
            "strictly decreasing",
        ),
        Check::at_most("profile asymmetry", asymmetry, 1e-12),
        Check::at_most("rise on the right half", rise, 1e-9),
        Check::at_most(
            "sup norm change N=1024 -> 2048 (relative)",
            sup_change,
            0.05,
        ),
        Check::at_most("support radius across the scan", max_of(radii), 2.0),
    ])
}

fn evolution() -> Result<Vec<Check>, CliError> {
    let p = params(0.2, 0.1);
    let g = Grid::new(4.0, 512)?;
    let rho0 = Density::gaussian_bumps(g, &[(0.0, 0.5, 1.0)])?;
    let w = KernelWeights::build(g, p.s, 0.0)?;
    // Per-step bookkeeping over a short run.
    let mut rho = rho0.clone();
    let (mut mass_err, mut min_value, mut asymmetry, mut com_drift) =
        (0.0f64, f64::INFINITY, 0.0f64, 0.0f64);
    for _ in 0..2000 {
        let dt = cfl_dt(&rho, &p, &w)?;
        let next = step(&rho, &p, &w, dt)?;
        mass_err = mass_err.max((next.mass() - rho.mass()).abs());
        min_value = min_value.min(next.values().iter().copied().fold(f64::INFINITY, f64::min));
        let v = next.values();
        asymmetry = asymmetry.max(
            (0..v.len())
                .map(|i| (v[i] - v[v.len() - 1 - i]).abs())
                .fold(0.0, f64::max),
        );
        com_drift =
            com_drift.max((next.moments().center_of_mass - rho.moments().center_of_mass).abs());
        rho = next;
    }
    let com_drift = com_drift / g.dx();
    let traj = evolve(&p, &rho0, 0.5, &EvolveOptions::uniform(0.5, 10))?;

    // Long-time attraction from a Gaussian at β = 0.4, s = 0.08.
    let p = params(0.4, 0.08);
    let g = Grid::new(12.0, 512)?;
    let rho0 = Density::gaussian_bumps(g, &[(0.0, 0.5, 1.0)])?;
    let traj_long = evolve(
        &p,
        &rho0,
        4.0,
        &EvolveOptions {
            output_times: vec![1.0, 2.0, 4.0],
            ..Default::default()
        },
    )?;
    let steady = fixed_point_solve(&p, &limit_profile(&p, g)?, &SolverOptions::default())?;
    let distances = traj_long.states[1..]
        .iter()
        .map(|r| Ok(r.lp_distance(&steady.rho, 1.0)?))
        .collect::<Result<Vec<f64>, CliError>>()?;
    Ok(vec![
        Check::at_most("per-step mass change", mass_err, 1e-12),
        Check::at_least("minimum cell value", min_value, 0.0),
        Check::at_most("asymmetry of even data", asymmetry, 1e-12),
        Check::at_most("per-step centre-of-mass drift / dx", com_drift, 1e-10),
        Check::at_most(
            "relative energy increase",
            traj.max_relative_energy_increase(),
            1e-8,
        ),
        Check::at_most("boundary mass", traj.boundary_mass, 1e-8),
        Check::holds(
            "L1 distance to the stationary state decreasing over T = 1, 2, 4",
            strictly_decreasing(&distances),
            "strictly decreasing",
        ),
    ])
}

fn jko(rng: &mut ChaCha8Rng) -> Result<Vec<Check>, CliError> {
    let g = Grid::new(4.0, 512)?;
    let mut round_trip_excess = f64::NEG_INFINITY;
    for _ in 0..10 {
        let rho = Density::gaussian_bumps(
            g,
            &[(
                rng.random_range(-1.0..1.0),
                rng.random_range(0.15..0.6),
                1.0,
            )],
        )?;
        let k = rng.random_range(64..512);
        let back = Quantile::from_density(&rho, k)?.to_density(g)?;
        let bound = 2.0 * (rho.mass() / k as f64 + rho.sup_norm() * g.dx());
        round_trip_excess = round_trip_excess.max(rho.lp_distance(&back, 1.0)? - bound);
    }
    let mut triangle = f64::NEG_INFINITY;
    for _ in 0..20 {
        let (a, b, c) = (
            random_density(rng, g)?,
            random_density(rng, g)?,
            random_density(rng, g)?,
        );
        triangle = triangle.max(w2_distance(&a, &c)? - w2_distance(&a, &b)? - w2_distance(&b, &c)?);
    }

    let p = params(0.2, 0.25);
    let rho0 = Density::gaussian_bumps(g, &[(0.0, 0.5, 1.0)])?;
    let opts = JkoOptions::default();
    let steps = 20;
    let run = jko_run(&p, &rho0, &opts, steps)?;
    let telescoped = run
        .telescoped_estimate()
        .iter()
        .map(|(l, r)| l - r)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut mass_com = 0.0f64;
    let mut prev = Quantile::from_density(&rho0, opts.particles)?;
    for _ in 0..5 {
        let next = jko_step(&prev, &p, &opts)?.next;
        mass_com = mass_com
            .max((next.mass() - prev.mass()).abs())
            .max(next.center_of_mass().abs());
        prev = next;
    }
    Ok(vec![
        Check::at_most(
            "quantile round trip L1 error - bound",
            round_trip_excess,
            0.0,
        ),
        Check::at_most("W2 triangle inequality excess", triangle, 1e-9),
        Check::at_most(
            "telescoped estimate excess",
            telescoped,
            steps as f64 * opts.tol,
        ),
        Check::at_most("jko step mass / centre-of-mass change", mass_com, 1e-8),
    ])
}
