//! Minimizing movements `ρᵏ ∈ argmin F_s[ρ] + W₂²(ρ, ρᵏ⁻¹)/(2τ)` in
//! Lagrangian coordinates.
//!
//! A density is represented by `K + 1` nondecreasing nodes `x_0 < … < x_K`
//! with mass `M/K` between consecutive nodes, i.e. a piecewise-constant
//! density whose quantile function is piecewise linear on the mass grid
//! `k/K`. For this class both terms of the objective are available in closed
//! form:
//!
//! * the local terms are `Σ_k Δ_k (ρ_k^m/(m−1) + βρ_k²)` with `ρ_k = (M/K)/Δ_k`;
//! * the interaction is `(χc/2) Σ_{a,b} δ_a δ_b G(x_a − x_b)`, where
//!   `δ_a = ρ_{a+1} − ρ_a` are the jumps at the nodes and
//!   `G(r) = |r|^{2s+1}/(2s(2s+1))` is the double antiderivative of `|r|^{2s−1}`;
//! * `W₂²` between two such densities is `(M/K) Σ_k (a_{k−1}² + a_{k−1}a_k + a_k²)/3`
//!   with `a = x − y`, the exact integral of the squared quantile difference.
//!
//! Each step is solved by projected gradient descent (Barzilai–Borwein steps,
//! nonmonotone Armijo search, projection by isotonic regression).

use serde::Serialize;

use crate::energy::EnergyBreakdown;
use crate::grid::{pow, Density, Grid, Params};
use crate::special::riesz_constant;
use crate::{Error, Result};

/// Piecewise-linear quantile function of a density with `K` equal-mass pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantile {
    mass: f64,
    nodes: Vec<f64>,
}

/// Breakpoints `(cumulative mass, position)` of the quantile function of a
/// cell-averaged density, skipping empty cells (where the quantile jumps).
fn segments(rho: &Density) -> Vec<(f64, f64, f64, f64)> {
    let g = rho.grid();
    let dx = g.dx();
    let mut level = 0.0;
    let mut out = Vec::new();
    for (i, &v) in rho.values().iter().enumerate() {
        if v > 0.0 {
            let next = level + v * dx;
            out.push((level, next, g.face(i), g.face(i + 1)));
            level = next;
        }
    }
    out
}

impl Quantile {
    /// Builds `K + 1` nodes from explicit positions.
    pub fn new(mass: f64, nodes: Vec<f64>) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Domain(format!("mass {mass} must be positive")));
        }
        if nodes.len() < 2 {
            return Err(Error::Domain("a quantile needs at least two nodes".into()));
        }
        if nodes.iter().any(|x| !x.is_finite()) || nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain(
                "quantile nodes must be finite and strictly increasing".into(),
            ));
        }
        Ok(Quantile { mass, nodes })
    }

    /// Exact inverse distribution function of `rho` at the levels `kM/K`.
    pub fn from_density(rho: &Density, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("need at least one particle".into()));
        }
        let segs = segments(rho);
        let mass = segs.last().map_or(0.0, |s| s.1);
        if mass <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let mut nodes = Vec::with_capacity(k + 1);
        nodes.push(segs[0].2);
        let mut j = 0;
        for idx in 1..k {
            let level = mass * idx as f64 / k as f64;
            while j + 1 < segs.len() && segs[j].1 < level {
                j += 1;
            }
            let (l0, l1, a, b) = segs[j];
            let t = ((level - l0) / (l1 - l0)).clamp(0.0, 1.0);
            nodes.push(a + t * (b - a));
        }
        nodes.push(segs[segs.len() - 1].3);
        // Exact inversion can repeat a node only inside a single cell at
        // round-off level; keep the representation strictly increasing.
        for i in 1..nodes.len() {
            if nodes[i] <= nodes[i - 1] {
                nodes[i] = nodes[i - 1] + f64::EPSILON * nodes[i - 1].abs().max(1.0);
            }
        }
        Ok(Quantile { mass, nodes })
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Number of equal-mass pieces `K`.
    pub fn n_particles(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Quantile values at the mass midpoints `(k − ½)/K`.
    pub fn midpoints(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Piece densities `ρ_k = (M/K)/(x_k − x_{k−1})`.
    pub fn densities(&self) -> Vec<f64> {
        let mu = self.mass / self.n_particles() as f64;
        self.nodes.windows(2).map(|w| mu / (w[1] - w[0])).collect()
    }

    /// Cell averages of the piecewise-constant density on `grid`.
    pub fn to_density(&self, grid: Grid) -> Result<Density> {
        let (lo, hi) = (self.nodes[0], self.nodes[self.nodes.len() - 1]);
        if lo < -grid.half_width || hi > grid.half_width {
            return Err(Error::SupportOverflow(format!(
                "support [{lo}, {hi}] does not fit in the box of half width {}",
                grid.half_width
            )));
        }
        let dx = grid.dx();
        let mut values = vec![0.0; grid.n_cells];
        let cell =
            |x: f64| (((x + grid.half_width) / dx).floor().max(0.0) as usize).min(grid.n_cells - 1);
        for (w, r) in self.nodes.windows(2).zip(self.densities()) {
            for (j, v) in values
                .iter_mut()
                .enumerate()
                .take(cell(w[1]) + 1)
                .skip(cell(w[0]))
            {
                let overlap = w[1].min(grid.face(j + 1)) - w[0].max(grid.face(j));
                if overlap > 0.0 {
                    *v += r * overlap / dx;
                }
            }
        }
        Density::new(grid, values)
    }

    /// `∫xρ / M`.
    pub fn center_of_mass(&self) -> f64 {
        let mu = self.mass / self.n_particles() as f64;
        self.nodes
            .windows(2)
            .map(|w| mu * 0.5 * (w[0] + w[1]))
            .sum::<f64>()
            / self.mass
    }

    /// `∫x²ρ`, exact.
    pub fn second_moment(&self) -> f64 {
        let mu = self.mass / self.n_particles() as f64;
        self.nodes
            .windows(2)
            .map(|w| mu * (w[0] * w[0] + w[0] * w[1] + w[1] * w[1]) / 3.0)
            .sum()
    }

    /// Exact `W₂²` to another quantile on the same mass grid.
    pub fn w2_squared(&self, other: &Quantile) -> Result<f64> {
        if self.nodes.len() != other.nodes.len() {
            return Err(Error::Domain(format!(
                "particle counts differ: {} vs {}",
                self.n_particles(),
                other.n_particles()
            )));
        }
        check_masses(self.mass, other.mass)?;
        let diff: Vec<f64> = self
            .nodes
            .iter()
            .zip(&other.nodes)
            .map(|(a, b)| a - b)
            .collect();
        Ok(prox_value(&diff, self.mass))
    }

    /// `F_s` of the represented density, exact.
    pub fn energy(&self, p: &Params) -> Result<EnergyBreakdown> {
        let model = Model::new(p, self.mass, self.n_particles())?;
        Ok(model.energy(&self.nodes))
    }
}

fn check_masses(a: f64, b: f64) -> Result<()> {
    if (a - b).abs() > 1e-10 * a.max(b) {
        return Err(Error::MassMismatch(a, b));
    }
    Ok(())
}

/// `(M/K) Σ (a_{k−1}² + a_{k−1}a_k + a_k²)/3`.
fn prox_value(diff: &[f64], mass: f64) -> f64 {
    let mu = mass / (diff.len() - 1) as f64;
    diff.windows(2)
        .map(|w| (w[0] * w[0] + w[0] * w[1] + w[1] * w[1]) / 3.0)
        .sum::<f64>()
        * mu
}

fn prox_gradient(diff: &[f64], mass: f64, out: &mut [f64]) {
    let mu = mass / (diff.len() - 1) as f64;
    out.iter_mut().for_each(|g| *g = 0.0);
    for (k, w) in diff.windows(2).enumerate() {
        out[k] += mu * (2.0 * w[0] + w[1]) / 3.0;
        out[k + 1] += mu * (w[0] + 2.0 * w[1]) / 3.0;
    }
}

/// Exact `W₂` between two cell-averaged densities of equal mass, from their
/// piecewise-linear quantile functions.
pub fn w2_distance(rho: &Density, sigma: &Density) -> Result<f64> {
    let (a, b) = (segments(rho), segments(sigma));
    let (ma, mb) = (a.last().map_or(0.0, |s| s.1), b.last().map_or(0.0, |s| s.1));
    if ma <= 0.0 || mb <= 0.0 {
        return Err(Error::ZeroMass);
    }
    check_masses(ma, mb)?;
    let at = |s: &(f64, f64, f64, f64), scale: f64, level: f64| {
        let (l0, l1) = (s.0 * scale, s.1 * scale);
        s.2 + (s.3 - s.2) * ((level - l0) / (l1 - l0)).clamp(0.0, 1.0)
    };
    let (sa, sb) = (1.0 / ma, 1.0 / mb);
    let (mut i, mut j) = (0, 0);
    let mut level = 0.0;
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let end = (a[i].1 * sa).min(b[j].1 * sb);
        if end > level {
            let d0 = at(&a[i], sa, level) - at(&b[j], sb, level);
            let d1 = at(&a[i], sa, end) - at(&b[j], sb, end);
            total += (end - level) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
            level = end;
        }
        if a[i].1 * sa <= level {
            i += 1;
        }
        if j < b.len() && b[j].1 * sb <= level {
            j += 1;
        }
    }
    Ok((ma * total).sqrt())
}

/// Closed-form energy and gradient in node coordinates.
struct Model {
    m: f64,
    beta: f64,
    /// `χ c_{1,s}`.
    chi_c: f64,
    two_s: f64,
    mu: f64,
}

impl Model {
    fn new(p: &Params, mass: f64, k: usize) -> Result<Self> {
        p.validate()?;
        Ok(Model {
            m: p.m,
            beta: p.beta,
            chi_c: p.chi * riesz_constant(Params::DIM, p.s)?,
            two_s: 2.0 * p.s,
            mu: mass / k as f64,
        })
    }

    /// `G(r)` and `G′(r)` for `r > 0`.
    #[inline]
    fn kernel(&self, r: f64) -> (f64, f64) {
        let e = (self.two_s * r.ln()).exp();
        let d1 = e / self.two_s;
        (d1 * r / (self.two_s + 1.0), d1)
    }

    fn densities(&self, x: &[f64]) -> Vec<f64> {
        x.windows(2).map(|w| self.mu / (w[1] - w[0])).collect()
    }

    /// Jumps `δ_a = ρ_{a+1} − ρ_a` with `ρ_0 = ρ_{K+1} = 0`.
    fn jumps(rho: &[f64]) -> Vec<f64> {
        let k = rho.len();
        (0..=k)
            .map(|a| {
                let right = if a < k { rho[a] } else { 0.0 };
                let left = if a > 0 { rho[a - 1] } else { 0.0 };
                right - left
            })
            .collect()
    }

    /// `Φ_a = Σ_b δ_b G(x_a − x_b)` and, on request, `Ψ_a = Σ_b δ_b G′(x_a − x_b)`.
    fn pair_sums(&self, x: &[f64], delta: &[f64], with_derivative: bool) -> (Vec<f64>, Vec<f64>) {
        let n = x.len();
        let mut phi = vec![0.0; n];
        let mut psi = vec![0.0; if with_derivative { n } else { 0 }];
        for a in 0..n {
            for b in a + 1..n {
                let (g, dg) = self.kernel(x[b] - x[a]);
                phi[a] += delta[b] * g;
                phi[b] += delta[a] * g;
                if with_derivative {
                    // G′ is odd and x_a < x_b.
                    psi[a] -= delta[b] * dg;
                    psi[b] += delta[a] * dg;
                }
            }
        }
        (phi, psi)
    }

    fn energy(&self, x: &[f64]) -> EnergyBreakdown {
        let rho = self.densities(x);
        let mut h_m = 0.0;
        let mut quad = 0.0;
        for (w, &r) in x.windows(2).zip(&rho) {
            let len = w[1] - w[0];
            h_m += len * pow(r, self.m) / (self.m - 1.0);
            quad += len * self.beta * r * r;
        }
        let delta = Self::jumps(&rho);
        let (phi, _) = self.pair_sums(x, &delta, false);
        let w_s = 0.5 * self.chi_c * delta.iter().zip(&phi).map(|(d, f)| d * f).sum::<f64>();
        EnergyBreakdown::from_parts(h_m, quad, w_s)
    }

    /// Total energy and its gradient with respect to the nodes.
    fn energy_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let k = x.len() - 1;
        let rho = self.densities(x);
        let delta = Self::jumps(&rho);
        let (phi, psi) = self.pair_sums(x, &delta, true);
        let mut local = 0.0;
        // Pressure P = ρᵐ + βρ², so that ∂(local)/∂Δ_k = −P_k.
        let pressure: Vec<f64> = rho
            .iter()
            .map(|&r| pow(r, self.m) + self.beta * r * r)
            .collect();
        for (w, &r) in x.windows(2).zip(&rho) {
            local += (w[1] - w[0]) * (pow(r, self.m) / (self.m - 1.0) + self.beta * r * r);
        }
        // A_k = (∂W/∂ρ_k) ρ_k/Δ_k with ∂W/∂ρ_k = χc(Φ_{k−1} − Φ_k).
        let a_term: Vec<f64> = (0..k)
            .map(|j| self.chi_c * (phi[j] - phi[j + 1]) * rho[j] * rho[j] / self.mu)
            .collect();
        for (a, g) in grad.iter_mut().enumerate() {
            let p_right = if a < k { pressure[a] } else { 0.0 };
            let p_left = if a > 0 { pressure[a - 1] } else { 0.0 };
            let a_right = if a < k { a_term[a] } else { 0.0 };
            let a_left = if a > 0 { a_term[a - 1] } else { 0.0 };
            *g = p_right - p_left + self.chi_c * delta[a] * psi[a] + a_right - a_left;
        }
        let w_s = 0.5 * self.chi_c * delta.iter().zip(&phi).map(|(d, f)| d * f).sum::<f64>();
        local + w_s
    }
}

/// Projection onto `{x_{k+1} − x_k ≥ gap}` in the norm `Σ w_k x_k²`, by
/// pool-adjacent-violators on `x_k − k·gap`.
fn project_monotone(x: &mut [f64], weights: &[f64], gap: f64) {
    // Blocks of (weighted sum, total weight, count).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(x.len());
    for (k, (&v, &w)) in x.iter().zip(weights).enumerate() {
        blocks.push((w * (v - k as f64 * gap), w, 1));
        while blocks.len() > 1 {
            let (s1, w1, c1) = blocks[blocks.len() - 1];
            let (s0, w0, c0) = blocks[blocks.len() - 2];
            if s0 / w0 > s1 / w1 {
                blocks.pop();
                let last = blocks.len() - 1;
                blocks[last] = (s0 + s1, w0 + w1, c0 + c1);
            } else {
                break;
            }
        }
    }
    let mut k = 0;
    for (sum, weight, count) in blocks {
        let mean = sum / weight;
        for _ in 0..count {
            x[k] = mean + k as f64 * gap;
            k += 1;
        }
    }
}

/// Controls for [`jko_step`] and [`jko_run`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JkoOptions {
    pub tau: f64,
    /// Number of equal-mass pieces `K`.
    pub particles: usize,
    /// Stop when the largest gradient entry divided by `M/K` (a velocity) is below this.
    pub tol: f64,
    pub max_inner: usize,
    /// Minimal node spacing kept by the projection.
    pub min_gap: f64,
}

impl Default for JkoOptions {
    fn default() -> Self {
        JkoOptions {
            tau: 1e-3,
            particles: 256,
            tol: 1e-8,
            max_inner: 20_000,
            min_gap: 1e-12,
        }
    }
}

/// Outcome of one minimizing-movement step.
#[derive(Debug, Clone, PartialEq)]
pub struct JkoStep {
    pub next: Quantile,
    pub energy: EnergyBreakdown,
    /// `W₂²(next, prev)`.
    pub w2_squared: f64,
    pub iterations: usize,
    /// Final stationarity measure, in velocity units.
    pub grad_norm: f64,
    pub converged: bool,
}

/// The step objective `F_s + W₂²(·, prev)/(2τ)` and its gradient.
pub struct StepObjective<'a> {
    model: Model,
    prev: &'a Quantile,
    tau: f64,
}

impl<'a> StepObjective<'a> {
    pub fn new(p: &Params, prev: &'a Quantile, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Domain(format!("time step {tau} must be positive")));
        }
        if (p.mass - prev.mass).abs() > 1e-10 * p.mass {
            return Err(Error::MassMismatch(p.mass, prev.mass));
        }
        Ok(StepObjective {
            model: Model::new(p, prev.mass, prev.n_particles())?,
            prev,
            tau,
        })
    }

    fn feasible(x: &[f64]) -> bool {
        x.iter().all(|v| v.is_finite()) && x.windows(2).all(|w| w[1] > w[0])
    }

    /// Objective value; `+∞` outside the strictly increasing cone.
    pub fn value(&self, x: &[f64]) -> f64 {
        if x.len() != self.prev.nodes.len() || !Self::feasible(x) {
            return f64::INFINITY;
        }
        let diff: Vec<f64> = x.iter().zip(&self.prev.nodes).map(|(a, b)| a - b).collect();
        self.model.energy(x).total + prox_value(&diff, self.prev.mass) / (2.0 * self.tau)
    }

    /// Diagonal curvature of the proximal and local terms, used as metric.
    fn curvature(&self, x: &[f64]) -> Vec<f64> {
        let k = x.len() - 1;
        let mu = self.model.mu;
        let prox = mu / (3.0 * self.tau);
        let mut out = vec![0.0; x.len()];
        for (j, w) in x.windows(2).enumerate() {
            let r = mu / (w[1] - w[0]);
            let h = (self.model.m * pow(r, self.model.m + 1.0) + 2.0 * self.model.beta * r * r * r)
                / mu;
            out[j] += prox + h;
            out[j + 1] += prox + h;
        }
        debug_assert_eq!(out.len(), k + 1);
        out
    }

    /// Objective value and gradient.
    pub fn gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        if x.len() != self.prev.nodes.len() || !Self::feasible(x) {
            return f64::INFINITY;
        }
        let energy = self.model.energy_gradient(x, grad);
        let diff: Vec<f64> = x.iter().zip(&self.prev.nodes).map(|(a, b)| a - b).collect();
        let mut pg = vec![0.0; x.len()];
        prox_gradient(&diff, self.prev.mass, &mut pg);
        let scale = 1.0 / (2.0 * self.tau);
        grad.iter_mut().zip(&pg).for_each(|(g, p)| *g += scale * p);
        energy + scale * prox_value(&diff, self.prev.mass)
    }
}

/// One minimizing-movement step from `prev`.
///
/// Projected gradient descent in the metric of a diagonal curvature estimate
/// (proximal term plus local terms), with Barzilai–Borwein step lengths and a
/// nonmonotone Armijo search over the last ten objective values.
pub fn jko_step(prev: &Quantile, p: &Params, opts: &JkoOptions) -> Result<JkoStep> {
    let obj = StepObjective::new(p, prev, opts.tau)?;
    let n = prev.nodes.len();
    let mu = obj.model.mu;
    let mut x = prev.nodes.clone();
    let mut g = vec![0.0; n];
    let mut f = obj.gradient(&x, &mut g);
    let measure = |g: &[f64]| g.iter().fold(0.0f64, |a, v| a.max(v.abs())) / mu;
    let mut grad_norm = measure(&g);
    let mut alpha = 1.0;
    let mut history = std::collections::VecDeque::from(vec![f]);
    let mut iterations = 0;
    let mut trial = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    while grad_norm > opts.tol && iterations < opts.max_inner {
        iterations += 1;
        let metric = obj.curvature(&x);
        let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut accepted = None;
        let mut step = alpha;
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = x[i] - step * g[i] / metric[i];
            }
            project_monotone(&mut trial, &metric, opts.min_gap);
            let decrease: f64 = g
                .iter()
                .zip(&trial)
                .zip(&x)
                .map(|((gv, t), xv)| gv * (t - xv))
                .sum();
            let f_new = obj.gradient(&trial, &mut g_new);
            let noise = 1e-15 * (1.0 + f.abs());
            if f_new <= reference + 1e-4 * decrease
                || (f_new.is_finite() && (f_new - f).abs() <= noise)
            {
                accepted = Some(f_new);
                break;
            }
            step *= 0.5;
        }
        let Some(f_new) = accepted else { break };
        let (mut sds, mut sy) = (0.0, 0.0);
        for i in 0..n {
            let s = trial[i] - x[i];
            sds += s * s * metric[i];
            sy += s * (g_new[i] - g[i]);
        }
        alpha = if sy > 0.0 {
            (sds / sy).clamp(1e-6, 1e6)
        } else {
            2.0 * step
        };
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        history.push_back(f);
        if history.len() > 10 {
            history.pop_front();
        }
        grad_norm = measure(&g);
    }
    let next = Quantile {
        mass: prev.mass,
        nodes: x,
    };
    let energy = obj.model.energy(&next.nodes);
    let w2_squared = next.w2_squared(prev)?;
    Ok(JkoStep {
        next,
        energy,
        w2_squared,
        iterations,
        grad_norm,
        converged: grad_norm <= opts.tol,
    })
}

/// Controls for [`minimize_energy`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewtonOptions {
    /// Stop when the largest gradient entry divided by `M/K` is below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-9,
            max_iter: 60,
        }
    }
}

/// Result of [`minimize_energy`].
#[derive(Debug, Clone, PartialEq)]
pub struct Minimized {
    pub quantile: Quantile,
    pub energy: EnergyBreakdown,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Minimizes the closed-form `F_s` over node vectors with fixed piece mass,
/// starting from `start`, by a damped Newton method.
///
/// The Hessian is assembled from central differences of the analytic
/// gradient; translations are removed by a penalty on the centre of mass.
/// Steps solve `(H + λI) d = −g` with `λ` raised until the factorization
/// succeeds and the energy decreases.
pub fn minimize_energy(p: &Params, start: &Quantile, opts: &NewtonOptions) -> Result<Minimized> {
    use nalgebra::{DMatrix, DVector};

    let model = Model::new(p, start.mass, start.n_particles())?;
    let n = start.nodes.len();
    let mu = model.mu;
    let mut x = start.nodes.clone();
    let mut g = vec![0.0; n];
    let mut f = model.energy_gradient(&x, &mut g);
    let measure = |g: &[f64]| g.iter().fold(0.0f64, |a, v| a.max(v.abs())) / mu;
    let mut grad_norm = measure(&g);
    let mut lambda = 0.0;
    let mut iterations = 0;
    let (mut gp, mut gm) = (vec![0.0; n], vec![0.0; n]);
    while grad_norm > opts.tol && iterations < opts.max_iter {
        iterations += 1;
        let mut h = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let left = if j > 0 {
                x[j] - x[j - 1]
            } else {
                f64::INFINITY
            };
            let right = if j + 1 < n {
                x[j + 1] - x[j]
            } else {
                f64::INFINITY
            };
            let step = 1e-5 * left.min(right);
            let mut xs = x.clone();
            xs[j] = x[j] + step;
            model.energy_gradient(&xs, &mut gp);
            xs[j] = x[j] - step;
            model.energy_gradient(&xs, &mut gm);
            for i in 0..n {
                h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        h = 0.5 * (&h + h.transpose());
        // Centre-of-mass penalty: weights of the node positions in ∫xρ/M.
        let scale = h.diagonal().amax().max(f64::MIN_POSITIVE);
        let mut v = DVector::<f64>::zeros(n);
        for k in 0..n - 1 {
            v[k] += 0.5 / (n - 1) as f64;
            v[k + 1] += 0.5 / (n - 1) as f64;
        }
        h += scale * (&v * v.transpose()) / v.norm_squared();
        let rhs = -DVector::from_column_slice(&g);
        let mut accepted = false;
        for _ in 0..40 {
            let shifted = &h + DMatrix::<f64>::identity(n, n) * (lambda * scale);
            if let Some(chol) = shifted.cholesky() {
                let d = chol.solve(&rhs);
                let trial: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + b).collect();
                if StepObjective::feasible(&trial) {
                    let mut g_trial = vec![0.0; n];
                    let f_trial = model.energy_gradient(&trial, &mut g_trial);
                    let noise = 1e-14 * (1.0 + f.abs());
                    let better = measure(&g_trial) < grad_norm;
                    if f_trial < f - noise || (f_trial <= f + noise && better) {
                        x = trial;
                        g = g_trial;
                        f = f_trial;
                        grad_norm = measure(&g);
                        lambda = if lambda > 1e-12 { lambda * 0.1 } else { 0.0 };
                        accepted = true;
                        break;
                    }
                }
            }
            lambda = if lambda == 0.0 { 1e-8 } else { lambda * 10.0 };
        }
        if !accepted {
            break;
        }
    }
    let quantile = Quantile {
        mass: start.mass,
        nodes: x,
    };
    let energy = model.energy(&quantile.nodes);
    Ok(Minimized {
        quantile,
        energy,
        iterations,
        grad_norm,
        converged: grad_norm <= opts.tol,
    })
}

/// A chain of minimizing movements and the discrete estimates along it.
#[derive(Debug, Clone, PartialEq)]
pub struct JkoRun {
    pub tau: f64,
    /// `ρ_τ^0, …, ρ_τ^n`.
    pub states: Vec<Quantile>,
    pub energies: Vec<EnergyBreakdown>,
    /// `W₂(ρ_τ^k, ρ_τ^{k−1})` for `k ≥ 1`.
    pub w2_increments: Vec<f64>,
    pub second_moments: Vec<f64>,
    pub inner_iterations: Vec<usize>,
    pub grad_norms: Vec<f64>,
    pub all_converged: bool,
}

impl JkoRun {
    /// Per-step estimate `F(ρᵏ) + W₂²/(2τ)` against `F(ρᵏ⁻¹)`.
    pub fn basic_estimate(&self) -> Vec<(f64, f64)> {
        self.w2_increments
            .iter()
            .enumerate()
            .map(|(k, w)| {
                (
                    self.energies[k + 1].total + w * w / (2.0 * self.tau),
                    self.energies[k].total,
                )
            })
            .collect()
    }

    /// Telescoped estimate `F(ρᵏ) + Σ_{h≤k} W₂²/(2τ)` against `F(ρ⁰)`, per `k ≥ 1`.
    pub fn telescoped_estimate(&self) -> Vec<(f64, f64)> {
        let mut acc = 0.0;
        self.w2_increments
            .iter()
            .enumerate()
            .map(|(k, w)| {
                acc += w * w / (2.0 * self.tau);
                (self.energies[k + 1].total + acc, self.energies[0].total)
            })
            .collect()
    }

    /// `2∫x²ρ⁰ + 4kτ(F(ρ⁰) − F(ρᵏ))`, a bound for `∫x²ρᵏ` that follows from
    /// the telescoped estimate and Cauchy–Schwarz.
    pub fn second_moment_bounds(&self) -> Vec<f64> {
        let f0 = self.energies[0].total;
        self.energies
            .iter()
            .enumerate()
            .map(|(k, e)| 2.0 * self.second_moments[0] + 4.0 * k as f64 * self.tau * (f0 - e.total))
            .collect()
    }

    /// States averaged onto `grid`.
    pub fn densities(&self, grid: Grid) -> Result<Vec<Density>> {
        self.states.iter().map(|q| q.to_density(grid)).collect()
    }
}

/// Runs `n_steps` minimizing movements from `rho0` (with `opts.particles` pieces).
pub fn jko_run(p: &Params, rho0: &Density, opts: &JkoOptions, n_steps: usize) -> Result<JkoRun> {
    let q0 = Quantile::from_density(rho0, opts.particles)?;
    let p = Params {
        mass: q0.mass,
        ..*p
    };
    let mut run = JkoRun {
        tau: opts.tau,
        energies: vec![q0.energy(&p)?],
        second_moments: vec![q0.second_moment()],
        states: vec![q0],
        w2_increments: Vec::with_capacity(n_steps),
        inner_iterations: Vec::with_capacity(n_steps),
        grad_norms: Vec::with_capacity(n_steps),
        all_converged: true,
    };
    for _ in 0..n_steps {
        let st = jko_step(run.states.last().expect("initial state"), &p, opts)?;
        run.energies.push(st.energy);
        run.second_moments.push(st.next.second_moment());
        run.w2_increments.push(st.w2_squared.sqrt());
        run.inner_iterations.push(st.iterations);
        run.grad_norms.push(st.grad_norm);
        run.all_converged &= st.converged;
        run.states.push(st.next);
    }
    Ok(run)
}
