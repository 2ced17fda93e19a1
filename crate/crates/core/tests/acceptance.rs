//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Runs as a plain binary (`harness = false`) so the report is printed in
//! order and is not swallowed by output capture.

use std::time::Instant;

use aggdiff::evolution::{EvolveOptions, Trajectory};
use aggdiff::riesz::{CompactBump, GaussianBump};
use aggdiff::steady::{BallCoefficients, SteadyDiagnostics};
use aggdiff::{
    ball_radius, ball_radius_general, evolve, fixed_point_solve, gamma, hls_constant, jko_run,
    limit_profile, local_limit_evolve, monotonicity_breach, refine, riesz_constant, sds_constant,
    steady_diagnostics, symmetric_form, w2_distance, weak_residual, Density, Grid, JkoOptions,
    KernelWeights, NewtonOptions, Params, Quantile, SolverOptions, StepObjective, TestFunction,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn params(beta: f64, s: f64) -> Params {
    Params::new(3.0, beta, 1.0, s, 1.0).unwrap()
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn fmt(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.4e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn constants() -> Outcome {
    let c = riesz_constant(1, 0.25).unwrap();
    let ok_c = (c - 0.3989422804).abs() <= 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_s = 0.0f64;
    for _ in 0..100 {
        let s: f64 = rng.random_range(0.001..0.499);
        let prod = riesz_constant(1, s).unwrap() * hls_constant(1, s).unwrap();
        let sds = sds_constant(1, s).unwrap();
        worst_s = worst_s.max((prod - sds).abs() / sds.abs());
    }
    let mut worst_g = 0.0f64;
    for i in 1..200 {
        let x = f64::from(i) / 200.0;
        let lhs = gamma(x).unwrap() * gamma(1.0 - x).unwrap();
        let rhs = std::f64::consts::PI / (std::f64::consts::PI * x).sin();
        worst_g = worst_g.max((lhs - rhs).abs() / rhs.abs());
    }
    (
        ok_c && worst_s <= 1e-11 && worst_g <= 1e-10,
        format!("c(1,1/4) = {c:.12}, S identity worst rel {worst_s:.1e}, reflection worst rel {worst_g:.1e}"),
    )
}

struct ScanPoint {
    height: f64,
    l3: f64,
    converged: bool,
    diag: SteadyDiagnostics,
    grid_virial: f64,
}

/// Grid fixed point followed by the Lagrangian refinement.
fn steady_scan(beta: f64, scan: &[f64]) -> Vec<ScanPoint> {
    let g = Grid::new(4.0, 2048).unwrap();
    scan.iter()
        .map(|&s| {
            let p = params(beta, s);
            let rho0 = limit_profile(&p, g).unwrap();
            let st = fixed_point_solve(&p, &rho0, &SolverOptions::default()).unwrap();
            let w = KernelWeights::build(g, s, 0.0).unwrap();
            let grid_virial = steady_diagnostics(&st, &p, &w).unwrap().virial_relative;
            let r = refine(&p, &st.rho, 256, &NewtonOptions::default()).unwrap();
            ScanPoint {
                height: r.diagnostics.height,
                l3: r.rho.lp_distance(&rho0, 3.0).unwrap(),
                converged: st.converged && r.converged,
                diag: r.diagnostics,
                grid_virial,
            }
        })
        .collect()
}

fn limit_profile_scan(collected: &mut Vec<SteadyDiagnostics>) -> Outcome {
    let scan = [0.2, 0.1, 0.05, 0.02];
    let mut ok = true;
    let mut detail = Vec::new();
    for (beta, target) in [(0.0, 0.5), (0.2, 0.3)] {
        let pts = steady_scan(beta, &scan);
        let h: Vec<f64> = pts.iter().map(|p| p.height).collect();
        let l3: Vec<f64> = pts.iter().map(|p| p.l3).collect();
        // Without quadratic diffusion the heights rise to the target; with it
        // they come down to it, so the scan asks for a monotone approach.
        let gap: Vec<f64> = h.iter().map(|x| (x - target).abs()).collect();
        let one_sided = if beta == 0.0 {
            h.iter().all(|&x| x < target) && strictly_increasing(&h)
        } else {
            true
        };
        ok &= pts.iter().all(|p| p.converged)
            && one_sided
            && strictly_decreasing(&gap)
            && gap[gap.len() - 1] <= 0.05
            && strictly_decreasing(&l3);
        detail.push(format!(
            "beta={beta}: heights [{}], L3 to limit [{}], grid-solver virial rel [{}], converged {:?}",
            fmt(&h),
            fmt(&l3),
            fmt(&pts.iter().map(|p| p.grid_virial).collect::<Vec<_>>()),
            pts.iter().map(|p| p.converged).collect::<Vec<_>>()
        ));
        collected.extend(pts.into_iter().map(|p| p.diag));
    }
    (ok, detail.join("; "))
}

fn vanishing_scan(collected: &mut Vec<SteadyDiagnostics>) -> Outcome {
    let mut sup = Vec::new();
    let mut energy = Vec::new();
    let mut ok = true;
    for s in [0.2, 0.1, 0.05] {
        let p = params(0.6, s);
        let r = ball_radius_general(&p).unwrap();
        let g = Grid::new(4.0 * r, 2048).unwrap();
        let rho0 = Density::gaussian_bumps(g, &[(0.0, 0.5 * r, 1.0)]).unwrap();
        let st = fixed_point_solve(&p, &rho0, &SolverOptions::default()).unwrap();
        let w = KernelWeights::build(g, s, 0.0).unwrap();
        let d = steady_diagnostics(&st, &p, &w).unwrap();
        ok &= st.converged && !st.collapsed && st.rho.support_radius(0.0) < 0.9 * g.half_width;
        sup.push(d.height);
        energy.push(d.energy.total);
        collected.push(d);
    }
    ok &= strictly_decreasing(&sup)
        && strictly_increasing(&energy)
        && energy.iter().all(|&e| e < 0.0);
    (ok, format!("sup [{}], F [{}]", fmt(&sup), fmt(&energy)))
}

fn identities(states: &[SteadyDiagnostics]) -> Outcome {
    let vir = states.iter().map(|d| d.virial_relative).fold(0.0, f64::max);
    let cs = states.iter().map(|d| d.cs_relative).fold(0.0, f64::max);
    let neg = states.iter().all(|d| d.energy.total < 0.0);
    (
        !states.is_empty() && vir <= 1e-3 && cs <= 1e-3 && neg,
        format!(
            "{} states: worst virial rel {vir:.1e}, worst C_s rel {cs:.1e}, all F < 0: {neg}",
            states.len()
        ),
    )
}

fn ball() -> Outcome {
    let p = params(0.0, 0.25);
    let closed = ball_radius(&p).unwrap();
    let coef = BallCoefficients::new(&p).unwrap();
    let f = |r: f64| coef.c1 * r.powi(-2) - coef.c3 * r.powf(-0.5);
    // Golden-section search on a bracket found by scanning.
    let (mut a, mut b) = (0.05f64, 50.0f64);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let (x1, x2) = (b - phi * (b - a), a + phi * (b - a));
        if f(x1) < f(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    let numeric = 0.5 * (a + b);
    let rel = (closed - numeric).abs() / numeric;
    (
        rel <= 1e-3 && (closed - 1.209).abs() < 1e-3,
        format!("closed form {closed:.9}, numerical {numeric:.9}, rel {rel:.1e}"),
    )
}

fn two_bump() -> Outcome {
    let p = params(0.2, 0.1);
    let g = Grid::new(4.0, 1024).unwrap();
    let rho0 = Density::gaussian_bumps(g, &[(-1.0, 0.25, 0.5), (1.0, 0.25, 0.5)]).unwrap();
    let traj = evolve(&p, &rho0, 30.0, &EvolveOptions::uniform(30.0, 30)).unwrap();
    let st = fixed_point_solve(
        &p,
        &limit_profile(&p, g).unwrap(),
        &SolverOptions::default(),
    )
    .unwrap();
    let l1 = traj.last().lp_distance(&st.rho, 1.0).unwrap();
    let slack_ok = traj
        .step_energy
        .windows(2)
        .all(|w| w[1] - w[0] <= 1e-8 * (1.0 + w[0].abs()));
    let drift = traj.mass_drift;
    (
        drift <= 1e-12 && slack_ok && l1 <= 0.02 && st.converged,
        format!(
            "mass drift {drift:.1e}, worst energy increase {:.1e}, final L1 to steady state {l1:.4}, {} steps",
            traj.max_energy_increase(),
            traj.dt_history.len()
        ),
    )
}

fn breach_run(p: &Params, rho0: &Density) -> Trajectory {
    // Recording up to t = 0.2 suffices: a breach found there lies in (0, 1].
    evolve(p, rho0, 0.2, &EvolveOptions::uniform(0.2, 40)).unwrap()
}

fn monotonicity() -> Outcome {
    let g = Grid::new(3.0, 1024).unwrap();
    let mollified = Density::mollified_counterexample(g, 0.1, 4.0).unwrap();
    let indicator = Density::indicator(g, -1.5, 1.5, 0.25).unwrap();
    let mut times = Vec::new();
    for rho0 in [&mollified, &indicator] {
        let mut p = params(0.0, 0.1);
        p.mass = rho0.mass();
        times.push(monotonicity_breach(&breach_run(&p, rho0)));
    }
    let p = params(0.0, 0.1);
    let st = fixed_point_solve(
        &p,
        &limit_profile(&p, g).unwrap(),
        &SolverOptions {
            tol: 1e-13,
            ..Default::default()
        },
    )
    .unwrap();
    let control = monotonicity_breach(&breach_run(&p, &st.rho));
    let inside = |t: &Option<f64>| matches!(t, Some(t) if *t > 0.0 && *t <= 1.0);
    (
        times.iter().all(inside) && control.is_none(),
        format!(
            "breach times: mollifier {:?}, indicator {:?}; steady control {control:?}",
            times[0], times[1]
        ),
    )
}

fn kernel_collapse() -> Outcome {
    let g = Grid::new(4.0, 2048).unwrap();
    let rho = Density::gaussian_bumps(g, &[(0.0, 0.5, 1.0)]).unwrap();
    let phi = GaussianBump {
        center: 0.2,
        width: 0.5,
        amplitude: 1.0,
    };
    // ∫ρ²φ″ for the cell-averaged ρ, by the midpoint rule on each cell.
    let sub = 64;
    let h = g.dx() / sub as f64;
    let limit: f64 = rho
        .values()
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let a = g.face(i);
            (0..sub)
                .map(|k| phi.d2(a + (k as f64 + 0.5) * h))
                .sum::<f64>()
                * h
                * r
                * r
        })
        .sum();
    let errors: Vec<f64> = [0.1, 0.05, 0.02]
        .iter()
        .map(|&s| {
            let w = KernelWeights::build(g, s, 0.0).unwrap();
            (symmetric_form(&rho, &phi, &w).unwrap() - limit).abs()
        })
        .collect();
    (
        strictly_decreasing(&errors),
        format!("limit {limit:.6e}, |I_s - limit| [{}]", fmt(&errors)),
    )
}

fn evolution_limit() -> Outcome {
    let g = Grid::new(4.0, 1024).unwrap();
    let rho0 = Density::gaussian_bumps(g, &[(0.0, 0.4, 1.0)]).unwrap();
    let opts = EvolveOptions::uniform(0.5, 1);
    let limit = local_limit_evolve(&params(0.6, 0.1), &rho0, 0.5, &opts).unwrap();
    let gaps: Vec<f64> = [0.1, 0.05, 0.02]
        .iter()
        .map(|&s| {
            let traj = evolve(&params(0.6, s), &rho0, 0.5, &opts).unwrap();
            traj.last().lp_distance(limit.last(), 2.0).unwrap()
        })
        .collect();
    (
        strictly_decreasing(&gaps),
        format!("L2 gap to local limit [{}]", fmt(&gaps)),
    )
}

fn jko() -> Outcome {
    let p = params(0.2, 0.25);
    let g = Grid::new(4.0, 1024).unwrap();
    let rho0 = Density::gaussian_bumps(g, &[(0.0, 0.5, 1.0)]).unwrap();
    let run = jko_run(&p, &rho0, &JkoOptions::default(), 50).unwrap();
    let worst_step = run
        .basic_estimate()
        .iter()
        .map(|(l, r)| l - r)
        .fold(f64::NEG_INFINITY, f64::max);
    let estimate_ok = run.basic_estimate().iter().all(|(l, r)| l <= &(r + 1e-8));

    let a = Density::indicator(g, 0.0, 1.0, 1.0).unwrap();
    let b = Density::indicator(g, 1.0, 2.0, 1.0).unwrap();
    let c = Density::indicator(g, -1.0, 1.0, 0.5).unwrap();
    let d = Density::indicator(g, -2.0, 2.0, 0.25).unwrap();
    let w2_err = [
        (w2_distance(&a, &b).unwrap() - 1.0).abs(),
        w2_distance(&a, &a).unwrap(),
        (w2_distance(&c, &d).unwrap() - (1.0f64 / 3.0).sqrt()).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let prev = Quantile::from_density(&rho0, 256).unwrap();
    let obj = StepObjective::new(&p, &prev, 1e-3).unwrap();
    let mut worst_fd = 0.0f64;
    for _ in 0..20 {
        let mut x = prev.nodes().to_vec();
        let gaps: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let mut pos = x[0] + rng.random_range(-0.1..0.1);
        x[0] = pos;
        for (k, gap) in gaps.iter().enumerate() {
            pos += gap * rng.random_range(0.7..1.3);
            x[k + 1] = pos;
        }
        let mut grad = vec![0.0; x.len()];
        obj.gradient(&x, &mut grad);
        let h = 1e-6;
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for j in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (obj.value(&xp) - obj.value(&xm)) / (2.0 * h);
            num = num.max((fd - grad[j]).abs());
            den = den.max(grad[j].abs());
        }
        worst_fd = worst_fd.max(num / den);
    }
    (
        estimate_ok && run.all_converged && w2_err <= 1e-6 && worst_fd <= 1e-5,
        format!(
            "worst per-step F+W2^2/2tau - F_prev {worst_step:.1e}, analytic W2 worst err {w2_err:.1e}, gradient vs FD worst rel {worst_fd:.1e}"
        ),
    )
}

fn weak_form() -> Outcome {
    let p = params(0.3, 0.2);
    let phi = GaussianBump {
        center: 0.3,
        width: 0.4,
        amplitude: 1.0,
    };
    let eta = CompactBump { lo: 0.02, hi: 0.18 };
    let residuals: Vec<f64> = [256usize, 512, 1024]
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let g = Grid::new(3.0, n).unwrap();
            let rho0 = Density::gaussian_bumps(g, &[(0.0, 0.5, 1.0)]).unwrap();
            let traj = evolve(&p, &rho0, 0.2, &EvolveOptions::uniform(0.2, 40 << (2 * k))).unwrap();
            let w = KernelWeights::build(g, p.s, 0.0).unwrap();
            weak_residual(&traj, &phi, &eta, &p, &w).unwrap()
        })
        .collect();
    let ratios: Vec<f64> = residuals.windows(2).map(|w| w[0] / w[1]).collect();
    (
        ratios.iter().all(|&r| r >= 1.5),
        format!("residuals [{}], ratios [{}]", fmt(&residuals), fmt(&ratios)),
    )
}

fn main() {
    // `cargo test -- --list` and similar probes pass flags; run only on a plain invocation.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut steady_states = Vec::new();
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut run = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let out = f();
        let secs = t.elapsed().as_secs_f64();
        println!(
            "criterion {n:>2} [{}] {name} ({secs:.1} s): {}",
            if out.0 { "PASS" } else { "FAIL" },
            out.1
        );
        results.push((n, name, out, secs));
    };
    run(1, "constants", &mut constants);
    run(2, "limit profile scan", &mut || {
        limit_profile_scan(&mut steady_states)
    });
    run(3, "vanishing regime", &mut || {
        vanishing_scan(&mut steady_states)
    });
    run(4, "steady-state identities", &mut || {
        identities(&steady_states)
    });
    run(5, "ball radius", &mut ball);
    run(6, "evolution conservation and dissipation", &mut two_bump);
    run(7, "monotonicity breach", &mut monotonicity);
    run(8, "kernel collapse", &mut kernel_collapse);
    run(9, "s -> 0 evolution limit", &mut evolution_limit);
    run(10, "minimizing movements", &mut jko);
    run(11, "weak-form consistency", &mut weak_form);
    let failed: Vec<usize> = results.iter().filter(|r| !r.2 .0).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed {:?}",
        results.len() - failed.len(),
        failed.len(),
        failed
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
