//! Randomized invariants of the public API.

use aggdiff::energy::lower_bound_check;
use aggdiff::riesz::GaussianBump;
use aggdiff::{
    cfl_dt, free_energy, gamma, hls_constant, riesz_constant, sds_constant, step, symmetric_form,
    w2_distance, Density, Grid, KernelWeights, Params, Quantile,
};
use proptest::prelude::*;

const L: f64 = 4.0;

/// One to four Gaussian bumps with centres in `[−L/2, L/2]`, unit mass.
fn bumps() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((-L / 2.0..L / 2.0, 0.15..0.6, 0.2..1.0), 1..=4).prop_map(|v| {
        let total: f64 = v.iter().map(|b| b.2).sum();
        v.into_iter().map(|(c, sd, w)| (c, sd, w / total)).collect()
    })
}

fn density(n: usize, b: &[(f64, f64, f64)]) -> Density {
    let rho = Density::gaussian_bumps(Grid::new(L, n).unwrap(), b).unwrap();
    let mass = rho.mass();
    rho.scaled(1.0 / mass).unwrap()
}

fn params(s: f64) -> Params {
    Params::new(3.0, 0.2, 1.0, s, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gamma_reflection(x in 1e-3..0.999f64) {
        let v = gamma(x).unwrap() * gamma(1.0 - x).unwrap() * (std::f64::consts::PI * x).sin() / std::f64::consts::PI;
        prop_assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gamma_recurrence(x in 1e-3..150.0f64) {
        let (a, b) = (gamma(x + 1.0).unwrap(), x * gamma(x).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * b.abs());
    }

    #[test]
    fn constant_product_identity(s in 1e-3..0.499f64) {
        let prod = riesz_constant(1, s).unwrap() * hls_constant(1, s).unwrap();
        let sds = sds_constant(1, s).unwrap();
        prop_assert!((prod - sds).abs() <= 1e-11 * sds);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn normalization_fixes_mass_and_centre(b in bumps(), mass in 0.1..1.5f64) {
        let rho = density(256, &b);
        // Growing the mass widens the support; leaving the box is a reported error.
        let out = rho.normalize_to_class(mass);
        prop_assume!(!matches!(out, Err(aggdiff::Error::SupportOverflow(_))));
        let out = out.unwrap();
        prop_assert!((out.mass() - mass).abs() <= 1e-10 * mass);
        prop_assert!(out.moments().center_of_mass.abs() <= 0.5 * out.grid().dx() + 1e-12);
    }

    #[test]
    fn hls_chain_and_lower_bound(b in bumps(), s in 0.02..0.45f64) {
        let rho = density(256, &b);
        let w = KernelWeights::build(*rho.grid(), s, 0.0).unwrap();
        let r = lower_bound_check(&rho, &params(s), &w).unwrap();
        prop_assert!(r.interaction <= r.hls_interpolated, "{r:?}");
        prop_assert!(r.satisfied, "{r:?}");
    }

    #[test]
    fn reflection_invariance(b in bumps(), s in 0.02..0.45f64) {
        let rho = density(256, &b);
        let w = KernelWeights::build(*rho.grid(), s, 0.0).unwrap();
        let p = params(s);
        let (e, er) = (free_energy(&rho, &p, &w).unwrap(), free_energy(&rho.reflect(), &p, &w).unwrap());
        prop_assert!((e.total - er.total).abs() <= 1e-13 * (1.0 + e.total.abs()));
        let phi = GaussianBump { center: 0.3, width: 0.5, amplitude: 1.0 };
        let phi_r = GaussianBump { center: -0.3, ..phi };
        let (i, ir) = (symmetric_form(&rho, &phi, &w).unwrap(), symmetric_form(&rho.reflect(), &phi_r, &w).unwrap());
        prop_assert!((i - ir).abs() <= 1e-12 * (1.0 + i.abs()));
    }

    #[test]
    fn step_conserves_mass_and_sign(b in bumps(), s in 0.05..0.45f64) {
        let rho = density(256, &b);
        let p = params(s);
        let w = KernelWeights::build(*rho.grid(), s, 0.0).unwrap();
        let mut cur = rho.clone();
        for _ in 0..20 {
            let dt = cfl_dt(&cur, &p, &w).unwrap();
            cur = step(&cur, &p, &w, dt).unwrap();
            prop_assert!(cur.values().iter().all(|&v| v >= 0.0));
        }
        prop_assert!((cur.mass() - rho.mass()).abs() <= 1e-12);
    }

    #[test]
    fn w2_triangle_inequality(a in bumps(), b in bumps(), c in bumps()) {
        let (x, y, z) = (density(256, &a), density(256, &b), density(256, &c));
        let xy = w2_distance(&x, &y).unwrap();
        let yz = w2_distance(&y, &z).unwrap();
        let xz = w2_distance(&x, &z).unwrap();
        prop_assert!(xz <= xy + yz + 1e-9);
        prop_assert!((xy - w2_distance(&y, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn quantile_round_trip(c in -1.0..1.0f64, sd in 0.15..0.6f64, k in 64usize..512) {
        // Single bumps: between well separated bumps a piece of mass M/K
        // spreads over the gap and the bound below no longer holds.
        let rho = density(512, &[(c, sd, 1.0)]);
        let back = Quantile::from_density(&rho, k).unwrap().to_density(*rho.grid()).unwrap();
        let bound = 2.0 * (1.0 / k as f64 + rho.sup_norm() * rho.grid().dx());
        prop_assert!(rho.lp_distance(&back, 1.0).unwrap() <= bound);
        prop_assert!((back.mass() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn riesz_constant_small_order_limit() {
    // c_{1,s}/s → π^{−1/2} Γ(1/2) = 1, with an O(s) correction removed by
    // Richardson extrapolation.
    let ratio = |s: f64| riesz_constant(1, s).unwrap() / s;
    for s in [1e-2, 1e-3, 1e-4] {
        let extrapolated = 2.0 * ratio(s / 2.0) - ratio(s);
        assert!((extrapolated - 1.0).abs() < 1e-2, "{s}: {extrapolated}");
        assert!(((1.0 - 2.0 * s) * riesz_constant(1, s).unwrap()).is_finite());
    }
}
