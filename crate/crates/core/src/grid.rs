//! Uniform mesh on `[−L, L]`, cell-averaged densities and the model parameters.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Model parameters in one space dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Diffusion exponent, `m > 2`.
    pub m: f64,
    /// Weight of the quadratic diffusion, `β ≥ 0`.
    pub beta: f64,
    /// Attraction strength, `χ > 0`.
    pub chi: f64,
    /// Kernel order, `0 < s < 1/2`.
    pub s: f64,
    /// Total mass, `M > 0`.
    pub mass: f64,
}

impl Params {
    pub const DIM: u32 = 1;

    pub fn new(m: f64, beta: f64, chi: f64, s: f64, mass: f64) -> Result<Self> {
        let p = Params {
            m,
            beta,
            chi,
            s,
            mass,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Domain(what.to_string()));
        if !(self.m > 2.0 && self.m.is_finite()) {
            return bad(&format!("diffusion exponent m = {} must exceed 2", self.m));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(&format!("beta = {} must be nonnegative", self.beta));
        }
        if !(self.chi > 0.0 && self.chi.is_finite()) {
            return bad(&format!("chi = {} must be positive", self.chi));
        }
        if !(self.s > 0.0 && self.s < 0.5) {
            return bad(&format!("kernel order s = {} outside (0, 1/2)", self.s));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return bad(&format!("mass = {} must be positive", self.mass));
        }
        Ok(())
    }

    /// Same parameters with another kernel order.
    pub fn with_s(&self, s: f64) -> Self {
        Params { s, ..*self }
    }

    /// `γ = χ/2 − β`, the net quadratic attraction left in the `s → 0` limit.
    pub fn net_attraction(&self) -> f64 {
        self.chi / 2.0 - self.beta
    }
}

/// Uniform mesh of `n_cells` cells on `[−L, L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub half_width: f64,
    pub n_cells: usize,
}

impl Grid {
    /// `n_cells` must be even so the mesh is symmetric about the origin.
    pub fn new(half_width: f64, n_cells: usize) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::Domain(format!(
                "half width {half_width} must be positive"
            )));
        }
        if n_cells == 0 || n_cells % 2 != 0 {
            return Err(Error::Domain(format!(
                "cell count {n_cells} must be even and positive"
            )));
        }
        Ok(Grid {
            half_width,
            n_cells,
        })
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n_cells as f64
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.dx()
    }

    /// Left face of cell `i` (face `n_cells` is the right boundary).
    #[inline]
    pub fn face(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.n_cells == other.n_cells && self.half_width == other.half_width
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "[-{}, {}] x {} vs [-{}, {}] x {}",
                self.half_width,
                self.half_width,
                self.n_cells,
                other.half_width,
                other.half_width,
                other.n_cells
            )))
        }
    }
}

/// Mass, center of mass and second moment of a density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mass: f64,
    pub center_of_mass: f64,
    pub second_moment: f64,
    /// Set when the mass vanishes; the center of mass is then reported as 0.
    pub zero_mass: bool,
}

/// Nonnegative cell averages on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    grid: Grid,
    values: Vec<f64>,
}

// 8-point Gauss–Legendre rule on [−1, 1].
const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// Composite 8-point Gauss–Legendre quadrature of `f` over `[a, b]`.
/// `v^e`, through `powi` for small integer exponents (the common `m = 3` case).
#[inline]
pub(crate) fn pow(v: f64, e: f64) -> f64 {
    if e.fract() == 0.0 && e.abs() <= 16.0 {
        v.powi(e as i32)
    } else {
        v.powf(e)
    }
}

pub(crate) fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
            total += w * f(mid + half * x);
        }
    }
    total * 0.5 * h
}

impl Density {
    /// Wraps cell averages; all values must be finite and nonnegative.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells {
            return Err(Error::GridMismatch(format!(
                "{} values for {} cells",
                values.len(),
                grid.n_cells
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
        {
            return Err(Error::Domain(format!(
                "cell {i} holds invalid density value {v}"
            )));
        }
        Ok(Density { grid, values })
    }

    /// Skips validation; callers guarantee nonnegativity.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_cells);
        Density { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Density {
            grid,
            values: vec![0.0; grid.n_cells],
        }
    }

    /// Cell averages of a nonnegative function, by Gauss–Legendre on each cell.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let dx = grid.dx();
        let values = (0..grid.n_cells)
            .map(|i| integrate(&f, grid.face(i), grid.face(i + 1), 2) / dx)
            .collect();
        Density::new(grid, values)
    }

    /// `height · 1_{[a, b]}` with exact cell overlaps.
    pub fn indicator(grid: Grid, a: f64, b: f64, height: f64) -> Result<Self> {
        let dx = grid.dx();
        let values = (0..grid.n_cells)
            .map(|i| {
                let lo = grid.face(i).max(a);
                let hi = grid.face(i + 1).min(b);
                height * (hi - lo).max(0.0) / dx
            })
            .collect();
        Density::new(grid, values)
    }

    /// Sum of Gaussian bumps `(center, std, mass)`.
    pub fn gaussian_bumps(grid: Grid, bumps: &[(f64, f64, f64)]) -> Result<Self> {
        for &(_, sd, w) in bumps {
            if !(sd > 0.0) || !(w >= 0.0) {
                return Err(Error::Domain(format!("bump with std {sd} and mass {w}")));
            }
        }
        let norm = (2.0 * std::f64::consts::PI).sqrt();
        Density::from_fn(grid, |x| {
            bumps
                .iter()
                .map(|&(c, sd, w)| w / (sd * norm) * (-0.5 * ((x - c) / sd).powi(2)).exp())
                .sum()
        })
    }

    /// Initial datum `φ_ε + ε^α (φ_ε ∗ 1_{[−1,1]})` built from the standard bump
    /// mollifier `φ(x) ∝ exp(−1/(1 − x²))` of unit mass.
    pub fn mollified_counterexample(grid: Grid, eps: f64, alpha: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Domain(format!(
                "mollifier width {eps} must be positive"
            )));
        }
        if !(alpha > f64::from(Params::DIM) + 2.0) {
            return Err(Error::Domain(format!(
                "exponent alpha = {alpha} must exceed d + 2 = 3"
            )));
        }
        if 1.0 + eps > grid.half_width {
            return Err(Error::SupportOverflow(format!(
                "datum supported in [-{0}, {0}] exceeds the box",
                1.0 + eps
            )));
        }
        let bump = |t: f64| {
            if t.abs() < 1.0 {
                (-1.0 / (1.0 - t * t)).exp()
            } else {
                0.0
            }
        };
        let norm = integrate(&bump, -1.0, 1.0, 64);
        let phi_eps = move |x: f64| bump(x / eps) / (norm * eps);
        // Φ_ε(t) = ∫_{−∞}^{t} φ_ε.
        let cdf = move |t: f64| {
            if t <= -eps {
                0.0
            } else if t >= eps {
                1.0
            } else {
                integrate(&phi_eps, -eps, t, 16)
            }
        };
        let plateau = eps.powf(alpha);
        Density::from_fn(grid, move |x| {
            phi_eps(x) + plateau * (cdf(x + 1.0) - cdf(x - 1.0)).max(0.0)
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.dx()
    }

    pub fn moments(&self) -> Moments {
        let dx = self.grid.dx();
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for (i, &r) in self.values.iter().enumerate() {
            let x = self.grid.center(i);
            m0 += r;
            m1 += x * r;
            m2 += x * x * r;
        }
        let mass = m0 * dx;
        let zero_mass = mass == 0.0;
        Moments {
            mass,
            center_of_mass: if zero_mass { 0.0 } else { m1 * dx / mass },
            second_moment: m2 * dx,
            zero_mass,
        }
    }

    /// `(Σ|ρ_i|^p dx)^{1/p}`.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(Error::Domain(format!("Lp exponent {p} must be at least 1")));
        }
        Ok(self.power_integral(p).powf(1.0 / p))
    }

    /// `Σ ρ_i^p dx`.
    pub fn power_integral(&self, p: f64) -> f64 {
        let sum: f64 = self.values.iter().map(|&v| pow(v, p)).sum();
        sum * self.grid.dx()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, &b| a.max(b))
    }

    /// `‖ρ − σ‖_{L^p}` on a shared grid.
    pub fn lp_distance(&self, other: &Density, p: f64) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        if !(p >= 1.0) {
            return Err(Error::Domain(format!("Lp exponent {p} must be at least 1")));
        }
        let sum: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs().powf(p))
            .sum();
        Ok((sum * self.grid.dx()).powf(1.0 / p))
    }

    pub fn sup_distance(&self, other: &Density) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs())))
    }

    /// Largest `|x_i|` among cells above `threshold`, measured to the outer cell face.
    pub fn support_radius(&self, threshold: f64) -> f64 {
        let dx = self.grid.dx();
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > threshold)
            .map(|(i, _)| self.grid.center(i).abs() + 0.5 * dx)
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Result<Density> {
        Density::new(self.grid, self.values.iter().map(|v| v * factor).collect())
    }

    /// `x ↦ ρ(−x)`.
    pub fn reflect(&self) -> Density {
        let mut values = self.values.clone();
        values.reverse();
        Density::from_raw(self.grid, values)
    }

    /// Translate by `k` whole cells (positive = to the right). Cells pushed out
    /// of the box may carry at most `1e-13` of the mass.
    pub fn shift_cells(&self, k: isize) -> Result<Density> {
        let n = self.values.len() as isize;
        let total: f64 = self.values.iter().sum();
        let mut values = vec![0.0; self.values.len()];
        let mut lost = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            let j = i as isize + k;
            if (0..n).contains(&j) {
                values[j as usize] = v;
            } else {
                lost += v;
            }
        }
        // Same tolerance as for rescaling: negligible tails may be dropped.
        if lost > 1e-13 * total {
            return Err(Error::SupportOverflow(format!(
                "shift by {k} cells leaves the box"
            )));
        }
        Ok(Density::from_raw(self.grid, values))
    }

    /// `∫_a^b ρ` for the piecewise-constant reconstruction (zero outside the box).
    fn integral_over(&self, a: f64, b: f64) -> f64 {
        let g = self.grid;
        let dx = g.dx();
        let lo = a.max(-g.half_width);
        let hi = b.min(g.half_width);
        if hi <= lo {
            return 0.0;
        }
        let first = (((lo + g.half_width) / dx).floor() as usize).min(g.n_cells - 1);
        let last = (((hi + g.half_width) / dx).ceil() as usize).clamp(first + 1, g.n_cells);
        let mut total = 0.0;
        for j in first..last {
            let overlap = hi.min(g.face(j + 1)) - lo.max(g.face(j));
            if overlap > 0.0 {
                total += self.values[j] * overlap;
            }
        }
        total
    }

    /// `x ↦ ρ(λx)`, resampled by exact integration over the target cells.
    /// The mass becomes `mass/λ`.
    pub fn rescale_argument(&self, lambda: f64) -> Result<Density> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!(
                "scaling factor {lambda} must be positive"
            )));
        }
        if lambda == 1.0 {
            return Ok(self.clone());
        }
        if lambda < 1.0 {
            let reach = lambda * self.grid.half_width;
            let total = self.values.iter().sum::<f64>() * self.grid.dx();
            let lost = total - self.integral_over(-reach, reach);
            if lost > 1e-13 * total {
                return Err(Error::SupportOverflow(format!(
                    "mass {lost} outside [-{reach}, {reach}] would leave the box after scaling by {lambda}"
                )));
            }
        }
        let g = self.grid;
        let dx = g.dx();
        let values = (0..g.n_cells)
            .map(|i| self.integral_over(lambda * g.face(i), lambda * g.face(i + 1)) / (lambda * dx))
            .collect();
        Ok(Density::from_raw(g, values))
    }

    /// Mass-invariant dilation `ρ_λ(x) = λ ρ(λx)`.
    pub fn dilate(&self, lambda: f64) -> Result<Density> {
        let mut out = self.rescale_argument(lambda)?;
        if lambda != 1.0 {
            out.values.iter_mut().for_each(|v| *v *= lambda);
        }
        Ok(out)
    }

    /// Brings `ρ` to mass `M` by `x ↦ ρ(λx)` with `λ = mass/M`, then moves the
    /// center of mass to within half a cell of the origin by a whole-cell shift.
    pub fn normalize_to_class(&self, mass: f64) -> Result<Density> {
        if !(mass > 0.0) {
            return Err(Error::Domain(format!(
                "target mass {mass} must be positive"
            )));
        }
        let current = self.mass();
        if current <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let scaled = self.rescale_argument(current / mass)?;
        let com = scaled.moments().center_of_mass;
        let k = (com / self.grid.dx()).round() as isize;
        if k == 0 {
            Ok(scaled)
        } else {
            scaled.shift_cells(-k)
        }
    }

    /// CSV with header `x,rho`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(40 * self.values.len() + 8);
        out.push_str("x,rho\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{:.16e},{:.16e}", self.grid.center(i), v);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    /// Parses the `x,rho` format; the grid is inferred from the cell centers.
    pub fn from_csv(text: &str) -> Result<Density> {
        let mut lines = text.lines();
        match lines.next().map(str::trim) {
            Some("x,rho") => {}
            other => return Err(Error::Domain(format!("unexpected CSV header {other:?}"))),
        }
        let mut xs = Vec::new();
        let mut values = Vec::new();
        for (no, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut parts = line.split(',');
            let parse = |p: Option<&str>| -> Result<f64> {
                p.and_then(|t| t.trim().parse().ok())
                    .ok_or_else(|| Error::Domain(format!("malformed CSV row {}", no + 2)))
            };
            xs.push(parse(parts.next())?);
            values.push(parse(parts.next())?);
        }
        if xs.len() < 2 {
            return Err(Error::Domain("CSV needs at least two cells".into()));
        }
        let dx = xs[1] - xs[0];
        let half_width = -(xs[0] - 0.5 * dx);
        let grid = Grid::new(half_width, xs.len())?;
        Density::new(grid, values)
    }
}
