//! Python bindings: parameters, grids and densities, stationary states,
//! finite-volume evolution, minimizing movements and the kernel constants.
//!
//! Arrays cross the boundary as lists of floats; any sequence (including a
//! NumPy array) is accepted on input.

use aggdiff::{EnergyBreakdown, NewtonOptions, SteadyDiagnostics};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(
    aggdiff_py,
    AggdiffError,
    PyException,
    "A numerical routine failed."
);

/// Domain errors become `ValueError`; everything else is an `AggdiffError`.
fn err(e: aggdiff::Error) -> PyErr {
    match e {
        aggdiff::Error::Domain(_) => PyValueError::new_err(e.to_string()),
        _ => AggdiffError::new_err(e.to_string()),
    }
}

fn energy_dict<'py>(py: Python<'py>, e: &EnergyBreakdown) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("h_m", e.h_m)?;
    d.set_item("quad", e.quad)?;
    d.set_item("w_s", e.w_s)?;
    d.set_item("total", e.total)?;
    Ok(d)
}

fn diagnostics_dict<'py>(py: Python<'py>, g: &SteadyDiagnostics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("energy", energy_dict(py, &g.energy)?)?;
    d.set_item("virial_residual", g.virial_residual)?;
    d.set_item("virial_relative", g.virial_relative)?;
    d.set_item("c_s_energy", g.c_s_energy)?;
    d.set_item("c_s_virial", g.c_s_virial)?;
    d.set_item("cs_consistency", g.cs_consistency)?;
    d.set_item("cs_relative", g.cs_relative)?;
    d.set_item("energy_predicted", g.energy_predicted)?;
    d.set_item("height", g.height)?;
    d.set_item("support_radius", g.support_radius)?;
    Ok(d)
}

/// Model parameters `(m, β, χ, s, M)`.
#[pyclass(name = "Params", module = "aggdiff_py", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyParams(aggdiff::Params);

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (m = 3.0, beta = 0.0, chi = 1.0, s = 0.25, mass = 1.0))]
    fn new(m: f64, beta: f64, chi: f64, s: f64, mass: f64) -> PyResult<Self> {
        aggdiff::Params::new(m, beta, chi, s, mass)
            .map(PyParams)
            .map_err(err)
    }

    #[getter]
    fn m(&self) -> f64 {
        self.0.m
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta
    }

    #[getter]
    fn chi(&self) -> f64 {
        self.0.chi
    }

    #[getter]
    fn s(&self) -> f64 {
        self.0.s
    }

    #[getter]
    fn mass(&self) -> f64 {
        self.0.mass
    }

    /// Same parameters with another kernel order.
    fn with_s(&self, s: f64) -> PyResult<Self> {
        let p = self.0.with_s(s);
        p.validate().map_err(err)?;
        Ok(PyParams(p))
    }

    /// `χ/2 − β`.
    fn net_attraction(&self) -> f64 {
        self.0.net_attraction()
    }

    fn __repr__(&self) -> String {
        let p = self.0;
        format!(
            "Params(m={}, beta={}, chi={}, s={}, mass={})",
            p.m, p.beta, p.chi, p.s, p.mass
        )
    }
}

/// Uniform mesh of `n_cells` cells on `[−L, L]`.
#[pyclass(name = "Grid", module = "aggdiff_py", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyGrid(aggdiff::Grid);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(half_width: f64, n_cells: usize) -> PyResult<Self> {
        aggdiff::Grid::new(half_width, n_cells)
            .map(PyGrid)
            .map_err(err)
    }

    #[getter]
    fn half_width(&self) -> f64 {
        self.0.half_width
    }

    #[getter]
    fn n_cells(&self) -> usize {
        self.0.n_cells
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.0.dx()
    }

    fn centers(&self) -> Vec<f64> {
        self.0.centers()
    }

    fn __repr__(&self) -> String {
        format!(
            "Grid(half_width={}, n_cells={})",
            self.0.half_width, self.0.n_cells
        )
    }
}

/// Nonnegative cell averages on a grid.
#[pyclass(name = "Density", module = "aggdiff_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDensity(aggdiff::Density);

#[pymethods]
impl PyDensity {
    #[new]
    fn new(grid: PyRef<'_, PyGrid>, values: Vec<f64>) -> PyResult<Self> {
        aggdiff::Density::new(grid.0, values)
            .map(PyDensity)
            .map_err(err)
    }

    /// Sum of Gaussians given as `(center, width, mass)` triples.
    #[staticmethod]
    fn gaussian_bumps(grid: PyRef<'_, PyGrid>, bumps: Vec<(f64, f64, f64)>) -> PyResult<Self> {
        aggdiff::Density::gaussian_bumps(grid.0, &bumps)
            .map(PyDensity)
            .map_err(err)
    }

    /// `height · 1_{[a, b]}`, cell averaged exactly.
    #[staticmethod]
    fn indicator(grid: PyRef<'_, PyGrid>, a: f64, b: f64, height: f64) -> PyResult<Self> {
        aggdiff::Density::indicator(grid.0, a, b, height)
            .map(PyDensity)
            .map_err(err)
    }

    /// Minimizer of the local limit energy for `params`.
    #[staticmethod]
    fn limit_profile(params: PyRef<'_, PyParams>, grid: PyRef<'_, PyGrid>) -> PyResult<Self> {
        aggdiff::limit_profile(&params.0, grid.0)
            .map(PyDensity)
            .map_err(err)
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        aggdiff::Density::from_csv(text).map(PyDensity).map_err(err)
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(*self.0.grid())
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn mass(&self) -> f64 {
        self.0.mass()
    }

    /// `(mass, center_of_mass, second_moment)`.
    fn moments(&self) -> (f64, f64, f64) {
        let m = self.0.moments();
        (m.mass, m.center_of_mass, m.second_moment)
    }

    fn sup_norm(&self) -> f64 {
        self.0.sup_norm()
    }

    fn lp_norm(&self, p: f64) -> PyResult<f64> {
        self.0.lp_norm(p).map_err(err)
    }

    fn lp_distance(&self, other: PyRef<'_, PyDensity>, p: f64) -> PyResult<f64> {
        self.0.lp_distance(&other.0, p).map_err(err)
    }

    /// Largest `|x|` (to the outer cell face) of a cell above `threshold`.
    #[pyo3(signature = (threshold = 0.0))]
    fn support_radius(&self, threshold: f64) -> f64 {
        self.0.support_radius(threshold)
    }

    fn reflect(&self) -> Self {
        PyDensity(self.0.reflect())
    }

    /// Mass-preserving dilation `λ ρ(λ x)`.
    fn dilate(&self, lambda: f64) -> PyResult<Self> {
        self.0.dilate(lambda).map(PyDensity).map_err(err)
    }

    /// Rescales the argument to reach `mass`, then centres by a whole-cell shift.
    fn normalize_to_class(&self, mass: f64) -> PyResult<Self> {
        self.0.normalize_to_class(mass).map(PyDensity).map_err(err)
    }

    /// Free energy split into `h_m`, `quad`, `w_s` and `total`.
    fn free_energy<'py>(
        &self,
        py: Python<'py>,
        params: PyRef<'_, PyParams>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let w = aggdiff::KernelWeights::shared(*self.0.grid(), params.0.s, 0.0).map_err(err)?;
        energy_dict(
            py,
            &aggdiff::free_energy(&self.0, &params.0, &w).map_err(err)?,
        )
    }

    fn to_csv(&self) -> String {
        self.0.to_csv()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        let g = self.0.grid();
        format!(
            "Density(n_cells={}, half_width={}, mass={})",
            g.n_cells,
            g.half_width,
            self.0.mass()
        )
    }
}

/// A fixed point of the stationary map.
#[pyclass(name = "SteadyState", module = "aggdiff_py", frozen)]
struct PySteadyState(aggdiff::SteadyState);

#[pymethods]
impl PySteadyState {
    #[getter]
    fn rho(&self) -> PyDensity {
        PyDensity(self.0.rho.clone())
    }

    #[getter]
    fn c_s(&self) -> f64 {
        self.0.c_s
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.0.iterations
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.0.residual
    }

    #[getter]
    fn converged(&self) -> bool {
        self.0.converged
    }

    #[getter]
    fn collapsed(&self) -> bool {
        self.0.collapsed
    }

    #[getter]
    fn energy<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        energy_dict(py, &self.0.energy)
    }

    /// Identities evaluated on the grid profile.
    fn diagnostics<'py>(
        &self,
        py: Python<'py>,
        params: PyRef<'_, PyParams>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let w = aggdiff::KernelWeights::shared(*self.0.rho.grid(), params.0.s, 0.0).map_err(err)?;
        diagnostics_dict(
            py,
            &aggdiff::steady_diagnostics(&self.0, &params.0, &w).map_err(err)?,
        )
    }
}

/// A stationary state polished over equal-mass piecewise-constant densities.
#[pyclass(name = "RefinedState", module = "aggdiff_py", frozen)]
struct PyRefinedState(aggdiff::RefinedState);

#[pymethods]
impl PyRefinedState {
    #[getter]
    fn rho(&self) -> PyDensity {
        PyDensity(self.0.rho.clone())
    }

    /// Quantile nodes `x_0 < … < x_K`.
    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.0.quantile.nodes().to_vec()
    }

    #[getter]
    fn newton_iterations(&self) -> usize {
        self.0.newton_iterations
    }

    #[getter]
    fn grad_norm(&self) -> f64 {
        self.0.grad_norm
    }

    #[getter]
    fn converged(&self) -> bool {
        self.0.converged
    }

    #[getter]
    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        diagnostics_dict(py, &self.0.diagnostics)
    }
}

/// Damped fixed-point iteration for a stationary state, started from `init`.
#[pyfunction]
#[pyo3(signature = (params, init, tol = 1e-10, max_iter = 50_000))]
fn solve_steady(
    py: Python<'_>,
    params: PyRef<'_, PyParams>,
    init: PyRef<'_, PyDensity>,
    tol: f64,
    max_iter: usize,
) -> PyResult<PySteadyState> {
    let (p, rho) = (params.0, init.0.clone());
    let opts = aggdiff::SolverOptions {
        tol,
        max_iter,
        ..Default::default()
    };
    py.detach(|| aggdiff::fixed_point_solve(&p, &rho, &opts))
        .map(PySteadyState)
        .map_err(err)
}

/// Minimizes the exact energy over `particles` equal-mass pieces, starting from `start`.
#[pyfunction]
#[pyo3(signature = (params, start, particles = 256))]
fn refine(
    py: Python<'_>,
    params: PyRef<'_, PyParams>,
    start: PyRef<'_, PyDensity>,
    particles: usize,
) -> PyResult<PyRefinedState> {
    let (p, rho) = (params.0, start.0.clone());
    py.detach(|| aggdiff::refine(&p, &rho, particles, &NewtonOptions::default()))
        .map(PyRefinedState)
        .map_err(err)
}

/// Finite-volume evolution to `t_end` with `outputs` equally spaced snapshots.
///
/// Returns a dict with `times`, `states`, `energies`, `mass_drift`,
/// `boundary_mass` and `breach_time` (first loss of radial monotonicity, or None).
#[pyfunction]
#[pyo3(signature = (params, rho0, t_end, outputs = 10))]
fn evolve<'py>(
    py: Python<'py>,
    params: PyRef<'_, PyParams>,
    rho0: PyRef<'_, PyDensity>,
    t_end: f64,
    outputs: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let (p, rho) = (params.0, rho0.0.clone());
    let opts = aggdiff::EvolveOptions::uniform(t_end, outputs);
    let traj = py
        .detach(|| aggdiff::evolve(&p, &rho, t_end, &opts))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("times", &traj.times)?;
    d.set_item(
        "states",
        traj.states
            .iter()
            .cloned()
            .map(PyDensity)
            .collect::<Vec<_>>(),
    )?;
    d.set_item(
        "energies",
        traj.energy_log.iter().map(|e| e.total).collect::<Vec<_>>(),
    )?;
    d.set_item("mass_drift", traj.mass_drift)?;
    d.set_item("boundary_mass", traj.boundary_mass)?;
    d.set_item("breach_time", aggdiff::monotonicity_breach(&traj))?;
    Ok(d)
}

/// Minimizing-movement run of `steps` steps of size `tau` with `particles` pieces.
///
/// Returns a dict with `energies`, `w2_increments`, `second_moments`,
/// `converged` and `states` (cell averages on the grid of `rho0`).
#[pyfunction]
#[pyo3(signature = (params, rho0, tau, steps, particles = 256))]
fn jko<'py>(
    py: Python<'py>,
    params: PyRef<'_, PyParams>,
    rho0: PyRef<'_, PyDensity>,
    tau: f64,
    steps: usize,
    particles: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let (p, rho) = (params.0, rho0.0.clone());
    let opts = aggdiff::JkoOptions {
        tau,
        particles,
        ..Default::default()
    };
    let run = py
        .detach(|| aggdiff::jko_run(&p, &rho, &opts, steps))
        .map_err(err)?;
    let states = run.densities(*rho.grid()).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item(
        "energies",
        run.energies.iter().map(|e| e.total).collect::<Vec<_>>(),
    )?;
    d.set_item("w2_increments", &run.w2_increments)?;
    d.set_item("second_moments", &run.second_moments)?;
    d.set_item("converged", run.all_converged)?;
    d.set_item(
        "states",
        states.into_iter().map(PyDensity).collect::<Vec<_>>(),
    )?;
    Ok(d)
}

/// Exact quadratic Wasserstein distance between equal-mass densities.
#[pyfunction]
fn w2_distance(a: PyRef<'_, PyDensity>, b: PyRef<'_, PyDensity>) -> PyResult<f64> {
    aggdiff::w2_distance(&a.0, &b.0).map_err(err)
}

/// Radius of the energy-optimal ball (constant profile) for `params`.
#[pyfunction]
fn ball_radius(params: PyRef<'_, PyParams>) -> PyResult<f64> {
    aggdiff::ball_radius_general(&params.0).map_err(err)
}

#[pyfunction]
fn gamma(x: f64) -> PyResult<f64> {
    aggdiff::gamma(x).map_err(err)
}

/// Riesz kernel normalization `c_{d,s}`.
#[pyfunction]
fn riesz_constant(d: u32, s: f64) -> PyResult<f64> {
    aggdiff::riesz_constant(d, s).map_err(err)
}

/// Sharp HLS constant `H_{d,s}`.
#[pyfunction]
fn hls_constant(d: u32, s: f64) -> PyResult<f64> {
    aggdiff::hls_constant(d, s).map_err(err)
}

/// `S_{d,s} = c_{d,s} H_{d,s}`.
#[pyfunction]
fn sds_constant(d: u32, s: f64) -> PyResult<f64> {
    aggdiff::sds_constant(d, s).map_err(err)
}

#[pymodule]
fn aggdiff_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("AggdiffError", m.py().get_type::<AggdiffError>())?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyDensity>()?;
    m.add_class::<PySteadyState>()?;
    m.add_class::<PyRefinedState>()?;
    m.add_function(wrap_pyfunction!(solve_steady, m)?)?;
    m.add_function(wrap_pyfunction!(refine, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(jko, m)?)?;
    m.add_function(wrap_pyfunction!(w2_distance, m)?)?;
    m.add_function(wrap_pyfunction!(ball_radius, m)?)?;
    m.add_function(wrap_pyfunction!(gamma, m)?)?;
    m.add_function(wrap_pyfunction!(riesz_constant, m)?)?;
    m.add_function(wrap_pyfunction!(hls_constant, m)?)?;
    m.add_function(wrap_pyfunction!(sds_constant, m)?)?;
    Ok(())
}
