//! Free energy `F_s = H_m + W_s`, its local limit `F_0`, and the a-priori
//! lower bound obtained from the sharp HLS inequality.

use serde::Serialize;

use crate::grid::{Density, Params};
use crate::riesz::{self, KernelWeights};
use crate::special::KernelConstants;
use crate::{Error, Result};

/// The pieces of `F_s[ρ]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    /// `(1/(m−1)) ∫ρᵐ`
    pub h_m: f64,
    /// `β ∫ρ²`
    pub quad: f64,
    /// `−(χ/2) ∫∫ K_s(x − y) ρ(x)ρ(y)`
    pub w_s: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub(crate) fn from_parts(h_m: f64, quad: f64, w_s: f64) -> Self {
        EnergyBreakdown {
            h_m,
            quad,
            w_s,
            total: h_m + quad + w_s,
        }
    }
}

pub(crate) fn check_kernel(p: &Params, weights: &KernelWeights) -> Result<()> {
    if p.s != weights.s() {
        return Err(Error::Domain(format!(
            "kernel weights built for s = {} but parameters use s = {}",
            weights.s(),
            p.s
        )));
    }
    Ok(())
}

/// `F_s[ρ]` with midpoint sums for the local terms and the exact-cell
/// interaction of [`riesz::interaction_energy`].
pub fn free_energy(rho: &Density, p: &Params, weights: &KernelWeights) -> Result<EnergyBreakdown> {
    check_kernel(p, weights)?;
    let field = riesz::convolve(rho, weights)?;
    Ok(energy_from_field(rho, p, &field))
}

/// Same as [`free_energy`] when `K_s ∗ ρ` is already known.
pub(crate) fn energy_from_field(rho: &Density, p: &Params, field: &[f64]) -> EnergyBreakdown {
    let h_m = rho.power_integral(p.m) / (p.m - 1.0);
    let quad = p.beta * rho.power_integral(2.0);
    let w_s = riesz::interaction_from_field(rho, field, p.chi);
    EnergyBreakdown::from_parts(h_m, quad, w_s)
}

/// `F_0[ρ] = (1/(m−1)) ∫ρᵐ − ((χ − 2β)/2) ∫ρ²`.
pub fn limit_energy(rho: &Density, p: &Params) -> f64 {
    rho.power_integral(p.m) / (p.m - 1.0) - p.net_attraction() * rho.power_integral(2.0)
}

/// Outcome of the lower-bound check `‖ρ‖_m^m / (2(m−1)) ≤ F_s[ρ] + C̄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    /// `θ = (d − 2s)m / (2d(m − 1))`.
    pub theta: f64,
    pub cbar: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `|W_s[ρ]|` against `(χ/2) S_{d,s} M^{2−2θ} ‖ρ‖_m^{2θ}`.
    pub interaction: f64,
    pub hls_interpolated: f64,
    pub satisfied: bool,
}

/// `θ` of the interpolation `‖ρ‖_{2d/(d+2s)}² ≤ M^{2−2θ} ‖ρ‖_m^{2θ}`.
pub fn interpolation_exponent(p: &Params) -> f64 {
    let d = f64::from(Params::DIM);
    (d - 2.0 * p.s) * p.m / (2.0 * d * (p.m - 1.0))
}

/// `C̄`, the sharp Young constant absorbing `(χ/2) S_{d,s} M^{2−2θ} y^{2θ}` into
/// `y^m / (2(m−1))`.
pub fn cbar(p: &Params, mass: f64) -> Result<f64> {
    let theta = interpolation_exponent(p);
    let sds = KernelConstants::new(Params::DIM, p.s)?.s_ds;
    let m = p.m;
    let a = 0.5 * p.chi * sds * mass.powf(2.0 - 2.0 * theta);
    Ok((m - 2.0 * theta) / m
        * (m / (4.0 * theta * (m - 1.0))).powf(-2.0 * theta / (m - 2.0 * theta))
        * a.powf(m / (m - 2.0 * theta)))
}

/// Evaluates the lower bound and the HLS/interpolation chain behind it. A
/// violation is reported through `satisfied`, never as an error.
pub fn lower_bound_check(
    rho: &Density,
    p: &Params,
    weights: &KernelWeights,
) -> Result<BoundReport> {
    let energy = free_energy(rho, p, weights)?;
    let mass = rho.mass();
    let theta = interpolation_exponent(p);
    let cbar = cbar(p, mass)?;
    let lm = rho.power_integral(p.m);
    let lhs = lm / (2.0 * (p.m - 1.0));
    let rhs = energy.total + cbar;
    let sds = KernelConstants::new(Params::DIM, p.s)?.s_ds;
    let hls_interpolated =
        0.5 * p.chi * sds * mass.powf(2.0 - 2.0 * theta) * lm.powf(2.0 * theta / p.m);
    let interaction = energy.w_s.abs();
    let satisfied = lhs <= rhs
        && interaction <= hls_interpolated
        && hls_interpolated <= cbar + lhs * (1.0 + 1e-12);
    Ok(BoundReport {
        theta,
        cbar,
        lhs,
        rhs,
        interaction,
        hls_interpolated,
        satisfied,
    })
}
