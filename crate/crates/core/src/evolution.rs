//! Explicit finite-volume gradient-flow scheme.
//!
//! The equation is written in velocity form `∂ₜρ + ∂ₓ(ρu) = 0` with
//! `u = −∂ₓψ` and `ψ = (m/(m−1))ρ^{m−1} + 2βρ − χ K_s∗ρ`. Face velocities are
//! central differences of `ψ`, fluxes are upwinded, the box has zero-flux
//! walls. Under the step restriction of [`cfl_dt`] the update is
//! nonnegative, conserves mass exactly (telescoping) and keeps even data even.

use serde::Serialize;

use crate::energy::{self, EnergyBreakdown};
use crate::grid::{pow, Density, Params};
use crate::riesz::{self, KernelWeights, TestFunction};
use crate::{Error, Result};

/// `ψ` at cell centres and `u` on the `n − 1` interior faces.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub psi: Vec<f64>,
    /// `u[i]` lives on the face between cells `i` and `i + 1`.
    pub u: Vec<f64>,
}

impl VelocityField {
    fn from_psi(psi: Vec<f64>, dx: f64) -> Self {
        let u = psi.windows(2).map(|w| -(w[1] - w[0]) / dx).collect();
        VelocityField { psi, u }
    }

    pub fn max_speed(&self) -> f64 {
        self.u.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// First variation of `F_s` at `ρ` and the induced face velocities.
pub fn velocity_potential(
    rho: &Density,
    p: &Params,
    weights: &KernelWeights,
) -> Result<VelocityField> {
    energy::check_kernel(p, weights)?;
    let field = riesz::convolve(rho, weights)?;
    Ok(velocity_from_field(rho, p, &field))
}

fn velocity_from_field(rho: &Density, p: &Params, field: &[f64]) -> VelocityField {
    let coef = p.m / (p.m - 1.0);
    let psi = rho
        .values()
        .iter()
        .zip(field)
        .map(|(&r, &k)| coef * pow(r, p.m - 1.0) + 2.0 * p.beta * r - p.chi * k)
        .collect();
    VelocityField::from_psi(psi, rho.grid().dx())
}

/// Local-limit potential `(m/(m−1))ρ^{m−1} + 2(β − χ/2)ρ`.
fn local_velocity(rho: &Density, p: &Params) -> VelocityField {
    let coef = p.m / (p.m - 1.0);
    let lin = 2.0 * (p.beta - 0.5 * p.chi);
    let psi = rho
        .values()
        .iter()
        .map(|&r| coef * pow(r, p.m - 1.0) + lin * r)
        .collect();
    VelocityField::from_psi(psi, rho.grid().dx())
}

/// `min(0.4 dx / max|u|, 0.2 dx² / max D(ρ))` with the diffusivity
/// `D(ρ) = mρ^{m−1} + 2bρ` (`b = β`, or `β − χ/2` for the local limit).
fn stability_bound(rho: &Density, p: &Params, vel: &VelocityField, b: f64) -> f64 {
    let dx = rho.grid().dx();
    let diff = rho
        .values()
        .iter()
        .fold(0.0f64, |a, &r| a.max(p.m * pow(r, p.m - 1.0) + 2.0 * b * r));
    let adv = vel.max_speed();
    let mut bound = f64::INFINITY;
    if adv > 0.0 {
        bound = 0.4 * dx / adv;
    }
    if diff > 0.0 {
        bound = bound.min(0.2 * dx * dx / diff);
    }
    bound
}

/// Largest admissible time step at `ρ`.
pub fn cfl_dt(rho: &Density, p: &Params, weights: &KernelWeights) -> Result<f64> {
    let vel = velocity_potential(rho, p, weights)?;
    Ok(stability_bound(rho, p, &vel, p.beta))
}

/// Conservative upwind update; `vel.u` must belong to `rho`.
fn transport(rho: &Density, vel: &VelocityField, dt: f64) -> Density {
    let values = rho.values();
    let n = values.len();
    let ratio = dt / rho.grid().dx();
    let mut out = values.to_vec();
    for (i, &u) in vel.u.iter().enumerate() {
        let flux = if u > 0.0 {
            u * values[i]
        } else {
            u * values[i + 1]
        };
        out[i] -= ratio * flux;
        out[i + 1] += ratio * flux;
    }
    // Outflow is bounded by 0.8·ρ_i under the step restriction; clip round-off only.
    for v in out.iter_mut().take(n) {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Density::new(*rho.grid(), out).expect("transport keeps finite nonnegative values")
}

/// One explicit step of size `dt`.
pub fn step(rho: &Density, p: &Params, weights: &KernelWeights, dt: f64) -> Result<Density> {
    let vel = velocity_potential(rho, p, weights)?;
    let bound = stability_bound(rho, p, &vel, p.beta);
    if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, bound });
    }
    Ok(transport(rho, &vel, dt))
}

/// Controls for [`evolve`] and [`local_limit_evolve`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvolveOptions {
    /// Times at which states are stored, in addition to `0` and `T`.
    pub output_times: Vec<f64>,
    /// Fraction of the stability bound used as step, in `(0, 1]`.
    pub safety: f64,
    /// Abort when `‖ρ‖_∞` exceeds this.
    pub blow_up: f64,
    pub max_steps: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            output_times: Vec::new(),
            safety: 1.0,
            blow_up: 1e6,
            max_steps: 50_000_000,
        }
    }
}

impl EvolveOptions {
    /// `count` equally spaced output times in `(0, T]`.
    pub fn uniform(t_end: f64, count: usize) -> Self {
        let output_times = (1..=count)
            .map(|k| t_end * k as f64 / count as f64)
            .collect();
        EvolveOptions {
            output_times,
            ..Default::default()
        }
    }
}

/// Stored states plus the per-step history.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Density>,
    /// Energy of each stored state (the local limit energy for [`local_limit_evolve`]).
    pub energy_log: Vec<EnergyBreakdown>,
    pub dt_history: Vec<f64>,
    /// Total energy before every step and after the last one.
    pub step_energy: Vec<f64>,
    /// Largest `|mass − mass₀|` seen over all steps.
    pub mass_drift: f64,
    /// Largest mass found in the two outermost cells.
    pub boundary_mass: f64,
}

impl Trajectory {
    pub fn last(&self) -> &Density {
        self.states
            .last()
            .expect("a trajectory stores at least the initial state")
    }

    /// Largest step-to-step energy increase (negative when strictly dissipative).
    pub fn max_energy_increase(&self) -> f64 {
        self.step_energy
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest energy increase relative to the slack `1 + |F|`.
    pub fn max_relative_energy_increase(&self) -> f64 {
        self.step_energy
            .windows(2)
            .map(|w| (w[1] - w[0]) / (1.0 + w[0].abs()))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// What the generic driver needs to know about the flow being integrated.
trait Flow {
    /// Velocity field and energy at `rho`.
    fn eval(&self, rho: &Density) -> Result<(VelocityField, EnergyBreakdown)>;
    fn bound(&self, rho: &Density, vel: &VelocityField) -> f64;
}

struct Nonlocal<'a> {
    p: &'a Params,
    weights: &'a KernelWeights,
}

impl Flow for Nonlocal<'_> {
    fn eval(&self, rho: &Density) -> Result<(VelocityField, EnergyBreakdown)> {
        let field = riesz::convolve(rho, self.weights)?;
        Ok((
            velocity_from_field(rho, self.p, &field),
            energy::energy_from_field(rho, self.p, &field),
        ))
    }
    fn bound(&self, rho: &Density, vel: &VelocityField) -> f64 {
        stability_bound(rho, self.p, vel, self.p.beta)
    }
}

struct Local<'a> {
    p: &'a Params,
}

impl Flow for Local<'_> {
    fn eval(&self, rho: &Density) -> Result<(VelocityField, EnergyBreakdown)> {
        let h_m = rho.power_integral(self.p.m) / (self.p.m - 1.0);
        let quad = (self.p.beta - 0.5 * self.p.chi) * rho.power_integral(2.0);
        Ok((
            local_velocity(rho, self.p),
            EnergyBreakdown::from_parts(h_m, quad, 0.0),
        ))
    }
    fn bound(&self, rho: &Density, vel: &VelocityField) -> f64 {
        stability_bound(rho, self.p, vel, self.p.beta - 0.5 * self.p.chi)
    }
}

fn run(flow: &dyn Flow, rho0: &Density, t_end: f64, opts: &EvolveOptions) -> Result<Trajectory> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::Domain(format!(
            "final time {t_end} must be finite and nonnegative"
        )));
    }
    if !(opts.safety > 0.0 && opts.safety <= 1.0) {
        return Err(Error::Domain(format!(
            "safety factor {} outside (0, 1]",
            opts.safety
        )));
    }
    let mut marks: Vec<f64> = opts
        .output_times
        .iter()
        .copied()
        .filter(|&t| t > 0.0 && t < t_end)
        .collect();
    marks.push(t_end);
    marks.sort_by(f64::total_cmp);
    marks.dedup();

    let mass0 = rho0.mass();
    let n = rho0.len();
    let edge_mass = |r: &Density| {
        let v = r.values();
        (v[0] + v[1] + v[n - 2] + v[n - 1]) * r.grid().dx()
    };
    let mut rho = rho0.clone();
    let (mut vel, mut e) = flow.eval(&rho)?;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![rho.clone()],
        energy_log: vec![e],
        dt_history: Vec::new(),
        step_energy: vec![e.total],
        mass_drift: 0.0,
        boundary_mass: edge_mass(&rho),
    };
    let mut t = 0.0;
    for &mark in &marks {
        if mark == 0.0 {
            continue;
        }
        while t < mark {
            if traj.dt_history.len() >= opts.max_steps {
                return Err(Error::Domain(format!(
                    "step budget {} exhausted at t = {t}",
                    opts.max_steps
                )));
            }
            let bound = flow.bound(&rho, &vel);
            let mut dt = opts.safety * bound;
            let last = t + dt >= mark;
            if last {
                dt = mark - t;
            }
            rho = transport(&rho, &vel, dt);
            t = if last { mark } else { t + dt };
            traj.dt_history.push(dt);
            let sup = rho.sup_norm();
            if sup > opts.blow_up {
                return Err(Error::BlowUp(t, sup));
            }
            traj.mass_drift = traj.mass_drift.max((rho.mass() - mass0).abs());
            traj.boundary_mass = traj.boundary_mass.max(edge_mass(&rho));
            (vel, e) = flow.eval(&rho)?;
            traj.step_energy.push(e.total);
        }
        traj.times.push(t);
        traj.states.push(rho.clone());
        traj.energy_log.push(e);
    }
    Ok(traj)
}

/// Integrates the nonlocal equation from `rho0` up to `t_end`.
pub fn evolve(p: &Params, rho0: &Density, t_end: f64, opts: &EvolveOptions) -> Result<Trajectory> {
    p.validate()?;
    let weights = KernelWeights::shared(*rho0.grid(), p.s, 0.0)?;
    run(
        &Nonlocal {
            p,
            weights: &weights,
        },
        rho0,
        t_end,
        opts,
    )
}

/// Integrates `∂ₜρ = ∂ₓₓ(ρᵐ) + (β − χ/2)∂ₓₓ(ρ²)`, the `s → 0` limit, with the
/// same scheme. Only the forward-parabolic case `β ≥ χ/2` is accepted.
pub fn local_limit_evolve(
    p: &Params,
    rho0: &Density,
    t_end: f64,
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    p.validate()?;
    if p.beta < 0.5 * p.chi {
        return Err(Error::Domain(format!(
            "local limit is forward-backward for beta = {} < chi/2 = {}",
            p.beta,
            0.5 * p.chi
        )));
    }
    run(&Local { p }, rho0, t_end, opts)
}

/// Defect of the weak formulation tested against `φ(x)η(t)`:
///
/// ```text
/// | ∫η′∫ρφ + ∫η ( ∫φ″(ρᵐ + βρ²) − (χ/2) I_s(ρ; φ) ) |
/// ```
///
/// with trapezoidal time integrals over the stored states.
pub fn weak_residual(
    traj: &Trajectory,
    phi: &dyn TestFunction,
    eta: &dyn TestFunction,
    p: &Params,
    weights: &KernelWeights,
) -> Result<f64> {
    energy::check_kernel(p, weights)?;
    let times = &traj.times;
    let inside = times.iter().filter(|&&t| eta.value(t) != 0.0).count();
    if times
        .iter()
        .all(|&t| eta.value(t) == 0.0 && eta.d1(t) == 0.0)
    {
        return Ok(0.0);
    }
    if inside < 20 {
        return Err(Error::Sampling(format!(
            "{inside} stored states inside the time window; at least 20 are needed"
        )));
    }
    let integrand: Vec<f64> = traj
        .states
        .iter()
        .zip(times)
        .map(|(rho, &t)| {
            let (w, dw) = (eta.value(t), eta.d1(t));
            if w == 0.0 && dw == 0.0 {
                return Ok(0.0);
            }
            let g = rho.grid();
            let dx = g.dx();
            let mut mass_term = 0.0;
            let mut diffusion = 0.0;
            for (i, &r) in rho.values().iter().enumerate() {
                let x = g.center(i);
                mass_term += r * phi.value(x);
                diffusion += phi.d2(x) * (pow(r, p.m) + p.beta * r * r);
            }
            let form = if w != 0.0 {
                riesz::symmetric_form(rho, phi, weights)?
            } else {
                0.0
            };
            Ok(dw * mass_term * dx + w * (diffusion * dx - 0.5 * p.chi * form))
        })
        .collect::<Result<_>>()?;
    let total: f64 = times
        .windows(2)
        .zip(integrand.windows(2))
        .map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1]))
        .sum();
    Ok(total.abs())
}

/// First stored time at which the right half of the profile increases
/// somewhere by more than `1e-9`, i.e. stops being radially nonincreasing.
pub fn monotonicity_breach(traj: &Trajectory) -> Option<f64> {
    const FLOOR: f64 = 1e-9;
    traj.times.iter().zip(&traj.states).find_map(|(&t, rho)| {
        let v = rho.values();
        let right = &v[v.len() / 2..];
        right.windows(2).any(|w| w[1] > w[0] + FLOOR).then_some(t)
    })
}
