//! Cell-integrated Riesz kernel `K_s(r) = c_{1,s}|r|^{2s−1}` on a uniform grid.
//!
//! The weight between cell centre `x_i` and cell `j` is the exact integral
//! `w_{ij} = c_{1,s} ∫_{cell j} |x_i − y|^{2s−1} dy`, using the antiderivative
//! `|r|^{2s}/(2s)`; the diagonal cell holds the integrable singularity. On a
//! uniform grid `w_{ij}` only depends on `|i − j|`, so the matrix is stored as
//! its first row and applied through a circulant embedding.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::{Density, Grid};
use crate::special::KernelConstants;
use crate::{Error, Result};

/// Sizes below this use the direct O(n²) product.
const DIRECT_LIMIT: usize = 128;

/// Precomputed kernel weights for one grid, one order `s` and one truncation radius.
#[derive(Clone)]
pub struct KernelWeights {
    grid: Grid,
    s: f64,
    truncation: f64,
    constant: f64,
    /// `row[k] = w_{i,i±k}`.
    row: Vec<f64>,
    spectrum: Arc<Vec<Complex64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for KernelWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelWeights")
            .field("grid", &self.grid)
            .field("s", &self.s)
            .field("truncation", &self.truncation)
            .field("constant", &self.constant)
            .finish_non_exhaustive()
    }
}

/// `∫_p^q k_ε(r) dr` for `0 ≤ p ≤ q`, with `k_ε(r) = r^{2s−1}` for `r > ε`
/// and `ε^{2s−1}` below.
fn radial_integral(p: f64, q: f64, s: f64, eps: f64) -> f64 {
    let two_s = 2.0 * s;
    let mut total = 0.0;
    if eps > 0.0 && p < eps {
        total += eps.powf(two_s - 1.0) * (q.min(eps) - p);
    }
    let lo = p.max(eps);
    if q > lo {
        total += if lo == 0.0 {
            q.powf(two_s) / two_s
        } else {
            // q^{2s} − lo^{2s} without cancellation for q ≈ lo.
            lo.powf(two_s) * (two_s * ((q - lo) / lo).ln_1p()).exp_m1() / two_s
        };
    }
    total
}

impl KernelWeights {
    /// Exact weights of the Riesz kernel; `truncation > 0` replaces the kernel by
    /// the constant `c_{1,s} ε^{2s−1}` on `|r| ≤ ε`.
    pub fn build(grid: Grid, s: f64, truncation: f64) -> Result<Self> {
        if !(s > 0.0 && s < 0.5) {
            return Err(Error::Domain(format!(
                "kernel order s = {s} outside (0, 1/2)"
            )));
        }
        if !(truncation >= 0.0 && truncation.is_finite()) {
            return Err(Error::Domain(format!(
                "truncation radius {truncation} must be >= 0"
            )));
        }
        let constant = KernelConstants::new(1, s)?.c_ds;
        let n = grid.n_cells;
        let dx = grid.dx();
        let row: Vec<f64> = (0..n)
            .map(|k| {
                let integral = if k == 0 {
                    2.0 * radial_integral(0.0, 0.5 * dx, s, truncation)
                } else {
                    let k = k as f64;
                    radial_integral((k - 0.5) * dx, (k + 0.5) * dx, s, truncation)
                };
                constant * integral
            })
            .collect();

        let size = 2 * n;
        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        let mut spectrum = vec![Complex64::new(0.0, 0.0); size];
        spectrum[0] = Complex64::new(row[0], 0.0);
        for k in 1..n {
            spectrum[k] = Complex64::new(row[k], 0.0);
            spectrum[size - k] = Complex64::new(row[k], 0.0);
        }
        forward.process(&mut spectrum);
        Ok(KernelWeights {
            grid,
            s,
            truncation,
            constant,
            row,
            spectrum: Arc::new(spectrum),
            forward,
            inverse,
        })
    }

    /// Shared, process-wide cached weights for `(grid, s, truncation)`.
    pub fn shared(grid: Grid, s: f64, truncation: f64) -> Result<Arc<Self>> {
        type Key = (u64, usize, u64, u64);
        static CACHE: OnceLock<Mutex<HashMap<Key, Arc<KernelWeights>>>> = OnceLock::new();
        let key = (
            grid.half_width.to_bits(),
            grid.n_cells,
            s.to_bits(),
            truncation.to_bits(),
        );
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(w) = cache.lock().expect("weight cache poisoned").get(&key) {
            return Ok(Arc::clone(w));
        }
        let built = Arc::new(KernelWeights::build(grid, s, truncation)?);
        let mut guard = cache.lock().expect("weight cache poisoned");
        // Bound the cache; parameter scans would otherwise pin every matrix.
        if guard.len() >= 64 {
            guard.clear();
        }
        guard.insert(key, Arc::clone(&built));
        Ok(built)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    /// `c_{1,s}`.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.row[i.abs_diff(j)]
    }

    /// First row of the (symmetric Toeplitz) weight matrix.
    pub fn row(&self) -> &[f64] {
        &self.row
    }

    /// `y_i = Σ_j w_{ij} v_j` for an arbitrary cell vector.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.row.len();
        assert_eq!(v.len(), n, "vector length must match the grid");
        if n <= DIRECT_LIMIT {
            return (0..n)
                .map(|i| {
                    v.iter()
                        .enumerate()
                        .map(|(j, x)| self.row[i.abs_diff(j)] * x)
                        .sum()
                })
                .collect();
        }
        let size = 2 * n;
        let mut buf = vec![Complex64::new(0.0, 0.0); size];
        for (b, x) in buf.iter_mut().zip(v) {
            b.re = *x;
        }
        self.forward.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(self.spectrum.iter()) {
            *b *= *k;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / size as f64;
        buf[..n].iter().map(|z| z.re * scale).collect()
    }
}

/// `(K_s ∗ ρ)(x_i) = Σ_j w_{ij} ρ_j`, exact for the piecewise-constant `ρ`.
pub fn convolve(rho: &Density, weights: &KernelWeights) -> Result<Vec<f64>> {
    rho.grid().check_same(&weights.grid)?;
    Ok(weights.apply(rho.values()))
}

/// `(K_s ∗ ρ)′(x_i)`, differentiating the exact cell integrals:
/// `d/dx ∫_a^b K(x − y) dy = K(x − a) − K(x − b)`.
pub fn convolve_gradient(rho: &Density, weights: &KernelWeights) -> Result<Vec<f64>> {
    rho.grid().check_same(&weights.grid)?;
    let n = rho.len();
    let dx = weights.grid.dx();
    let (s, eps, c) = (weights.s, weights.truncation, weights.constant);
    let kernel = |r: f64| {
        let r = r.abs();
        if r <= eps {
            c * eps.powf(2.0 * s - 1.0)
        } else {
            c * r.powf(2.0 * s - 1.0)
        }
    };
    // g[k] for k = i − j ≥ 0; g[−k] = −g[k].
    let g: Vec<f64> = (0..n)
        .map(|k| {
            let k = k as f64;
            kernel((k + 0.5) * dx) - kernel((k - 0.5) * dx)
        })
        .collect();
    let v = rho.values();
    Ok((0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (j, r) in v.iter().enumerate() {
                if *r != 0.0 {
                    acc += if i >= j { g[i - j] } else { -g[j - i] } * r;
                }
            }
            acc
        })
        .collect())
}

/// `W_s[ρ] = −(χ/2) Σ_i ρ_i dx Σ_j w_{ij} ρ_j`.
pub fn interaction_energy(rho: &Density, weights: &KernelWeights, chi: f64) -> Result<f64> {
    let field = convolve(rho, weights)?;
    Ok(interaction_from_field(rho, &field, chi))
}

pub(crate) fn interaction_from_field(rho: &Density, field: &[f64], chi: f64) -> f64 {
    let dx = rho.grid().dx();
    -0.5 * chi
        * dx
        * rho
            .values()
            .iter()
            .zip(field)
            .map(|(r, k)| r * k)
            .sum::<f64>()
}

/// A smooth function with analytic first and second derivatives.
pub trait TestFunction {
    fn value(&self, x: f64) -> f64;
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;
}

/// `A·exp(−(x − c)²/(2w²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBump {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

impl TestFunction for GaussianBump {
    fn value(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.width;
        self.amplitude * (-0.5 * z * z).exp()
    }
    fn d1(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.width;
        -z / self.width * self.value(x)
    }
    fn d2(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.width;
        (z * z - 1.0) / (self.width * self.width) * self.value(x)
    }
}

/// Bump `exp(−1/(1 − u²))` with `u = (t − mid)/half`, supported in `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompactBump {
    pub lo: f64,
    pub hi: f64,
}

impl CompactBump {
    fn local(&self, t: f64) -> (f64, f64) {
        let half = 0.5 * (self.hi - self.lo);
        ((t - 0.5 * (self.lo + self.hi)) / half, half)
    }
}

impl TestFunction for CompactBump {
    fn value(&self, t: f64) -> f64 {
        let (u, _) = self.local(t);
        if u.abs() >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - u * u)).exp()
        }
    }
    fn d1(&self, t: f64) -> f64 {
        let (u, half) = self.local(t);
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let q = 1.0 - u * u;
        -2.0 * u / (q * q) * self.value(t) / half
    }
    fn d2(&self, t: f64) -> f64 {
        let (u, half) = self.local(t);
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let q = 1.0 - u * u;
        // d/du [−2u/q²·e] = e·(4u²/q⁴ − 2/q² − 8u²/q³)
        let e = self.value(t);
        e * (4.0 * u * u / q.powi(4) - 2.0 / (q * q) - 8.0 * u * u / q.powi(3)) / (half * half)
    }
}

/// The symmetrized double integral of the weak formulation,
///
/// ```text
/// I_s(ρ; φ) = (1 − 2s) c_{1,s} ∫∫ (φ′(x) − φ′(y))(x − y)|x − y|^{2s−3} ρ(x)ρ(y) dx dy.
/// ```
///
/// The difference quotient `(φ′(x) − φ′(y))/(x − y)` is smooth, so it is taken at
/// cell centres and integrated against the exact kernel weights. On the diagonal
/// cell the odd Taylor term cancels and the quotient contributes `φ″(x_i) w_{ii}`.
pub fn symmetric_form(
    rho: &Density,
    phi: &dyn TestFunction,
    weights: &KernelWeights,
) -> Result<f64> {
    rho.grid().check_same(&weights.grid)?;
    let g = weights.grid;
    let dx = g.dx();
    let v = rho.values();
    let xs = g.centers();
    let slope: Vec<f64> = xs.iter().map(|&x| phi.d1(x)).collect();
    let support: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
    let mut total = 0.0;
    for (a, &i) in support.iter().enumerate() {
        let mut row = phi.d2(xs[i]) * weights.row[0] * v[i];
        for &j in &support[a + 1..] {
            let quotient = (slope[i] - slope[j]) / (xs[i] - xs[j]);
            // Pairs (i, j) and (j, i) contribute equally.
            row += 2.0 * quotient * weights.row[j - i] * v[j];
        }
        total += v[i] * row;
    }
    Ok((1.0 - 2.0 * weights.s) * total * dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(n: usize) -> Grid {
        Grid::new(4.0, n).unwrap()
    }

    #[test]
    fn diagonal_weight_closed_form() {
        let g = grid(256);
        let s = 0.25;
        let w = KernelWeights::build(g, s, 0.0).unwrap();
        let c = w.constant();
        let want = c * 2.0 * (g.dx() / 2.0).powf(2.0 * s) / (2.0 * s);
        assert_relative_eq!(w.weight(7, 7), want, max_relative = 1e-14);
        for k in 1..5 {
            let k = k as f64;
            let want =
                c * g.dx().powf(2.0 * s) * ((k + 0.5).powf(2.0 * s) - (k - 0.5).powf(2.0 * s))
                    / (2.0 * s);
            assert_relative_eq!(w.row()[k as usize], want, max_relative = 1e-12);
        }
    }

    #[test]
    fn weights_symmetric_positive_decreasing() {
        let w = KernelWeights::build(grid(64), 0.3, 0.0).unwrap();
        for i in 0..64 {
            for j in 0..64 {
                assert_eq!(w.weight(i, j), w.weight(j, i));
                assert!(w.weight(i, j) > 0.0);
            }
        }
        assert!(w.row()[1..].windows(2).all(|p| p[1] < p[0]));
    }

    #[test]
    fn truncation_only_touches_near_diagonal() {
        let g = grid(128);
        let exact = KernelWeights::build(g, 0.25, 0.0).unwrap();
        let cut = KernelWeights::build(g, 0.25, g.dx() / 10.0).unwrap();
        assert!(cut.row()[0] < exact.row()[0]);
        assert_eq!(&cut.row()[1..], &exact.row()[1..]);
        // Truncation reaching into the neighbours changes exactly rows 0..=1.
        let wide = KernelWeights::build(g, 0.25, 0.9 * g.dx()).unwrap();
        assert!(wide.row()[1] < exact.row()[1]);
        assert_eq!(&wide.row()[2..], &exact.row()[2..]);
    }

    #[test]
    fn domain_errors() {
        assert!(KernelWeights::build(grid(8), 0.5, 0.0).is_err());
        assert!(KernelWeights::build(grid(8), 0.0, 0.0).is_err());
        assert!(KernelWeights::build(grid(8), 0.2, -1.0).is_err());
    }

    #[test]
    fn fft_path_matches_direct_sum() {
        let g = grid(1024);
        let w = KernelWeights::build(g, 0.17, 0.0).unwrap();
        let rho = Density::gaussian_bumps(g, &[(-0.7, 0.3, 0.4), (0.9, 0.5, 0.6)]).unwrap();
        let fast = convolve(&rho, &w).unwrap();
        for i in (0..1024).step_by(37) {
            let direct: f64 = (0..1024).map(|j| w.weight(i, j) * rho.values()[j]).sum();
            assert!((fast[i] - direct).abs() <= 1e-13 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn convolution_of_indicator_at_origin() {
        // ∫_{−1}^{1}|x − y|^{−1/2} dy = 2(√(1+x) + √(1−x)); at the two cells around 0
        // the average is within O(dx²) of the value 4 at x = 0.
        let s = 0.25;
        let mut errors = Vec::new();
        for n in [256, 512, 1024, 2048] {
            let g = grid(n);
            let w = KernelWeights::build(g, s, 0.0).unwrap();
            let rho = Density::indicator(g, -1.0, 1.0, 1.0).unwrap();
            let k = convolve(&rho, &w).unwrap();
            for i in [n / 2 - 1, n / 2] {
                let x = g.center(i);
                let exact = w.constant() * ((1.0 + x).sqrt() + (1.0 - x).sqrt()) * 2.0;
                assert!(
                    (k[i] - exact).abs() < 1e-12,
                    "cell {i}: {} vs {exact}",
                    k[i]
                );
            }
            let at_zero = 0.5 * (k[n / 2 - 1] + k[n / 2]);
            errors.push((at_zero - 1.595_769_121_605_730_7).abs());
        }
        for pair in errors.windows(2) {
            assert!((pair[0] / pair[1]).log2() >= 1.0, "errors {errors:?}");
        }
    }

    #[test]
    fn zero_density_gives_zero() {
        let g = grid(256);
        let w = KernelWeights::build(g, 0.2, 0.0).unwrap();
        let z = Density::zeros(g);
        assert!(convolve(&z, &w).unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(interaction_energy(&z, &w, 1.0).unwrap(), 0.0);
        let phi = GaussianBump {
            center: 0.0,
            width: 1.0,
            amplitude: 1.0,
        };
        assert_eq!(symmetric_form(&z, &phi, &w).unwrap(), 0.0);
    }

    #[test]
    fn self_adjoint() {
        let g = grid(512);
        let w = KernelWeights::build(g, 0.35, 0.0).unwrap();
        let a = Density::gaussian_bumps(g, &[(-0.4, 0.3, 1.0)]).unwrap();
        let b = Density::gaussian_bumps(g, &[(1.0, 0.6, 2.0)]).unwrap();
        let ka = convolve(&a, &w).unwrap();
        let kb = convolve(&b, &w).unwrap();
        let lhs: f64 = ka.iter().zip(b.values()).map(|(x, y)| x * y).sum();
        let rhs: f64 = kb.iter().zip(a.values()).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs());
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let w = KernelWeights::build(grid(64), 0.2, 0.0).unwrap();
        let rho = Density::zeros(grid(128));
        assert!(matches!(convolve(&rho, &w), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn compact_bump_derivatives() {
        let eta = CompactBump { lo: 0.2, hi: 1.0 };
        for t in [0.25, 0.4, 0.6, 0.77, 0.95] {
            let h = 1e-5;
            let fd1 = (eta.value(t + h) - eta.value(t - h)) / (2.0 * h);
            let fd2 = (eta.d1(t + h) - eta.d1(t - h)) / (2.0 * h);
            assert!((fd1 - eta.d1(t)).abs() < 1e-6 * (1.0 + eta.d1(t).abs()));
            assert!((fd2 - eta.d2(t)).abs() < 1e-5 * (1.0 + eta.d2(t).abs()));
        }
        assert_eq!(eta.value(0.1), 0.0);
    }

    #[test]
    fn shared_cache_reuses_weights() {
        let g = grid(64);
        let a = KernelWeights::shared(g, 0.21, 0.0).unwrap();
        let b = KernelWeights::shared(g, 0.21, 0.0).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }
}
