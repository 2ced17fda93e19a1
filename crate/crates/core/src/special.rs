//! Γ function and the closed-form constants of the Riesz interaction.
//!
//! For dimension `d` and order `s ∈ (0, d/2)`:
//!
//! ```text
//! c_{d,s} = π^{−d/2} 2^{−2s} Γ(d/2 − s) / Γ(s)                         (kernel normalization)
//! H_{d,s} = π^{(d−2s)/2} Γ(s)/Γ(s + d/2) · (Γ(d/2)/Γ(d))^{−2s/d}       (sharp HLS constant)
//! S_{d,s} = (4π)^{−s} Γ(d/2 − s)/Γ(d/2 + s) · (Γ(d/2)/Γ(d))^{−2s/d}    (= c_{d,s} H_{d,s})
//! ```

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use serde::Serialize;

use crate::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Largest argument with a finite Γ(x).
const GAMMA_MAX_ARG: f64 = 171.624_376_956_302_7;

/// Γ(x) for `x > 0`.
///
/// Lanczos approximation (g = 7, nine terms) on `x ≥ 1/2`, reflection below.
/// Relative error stays below 1e−13 on `[1e−3, 170]`.
pub fn gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("gamma requires x > 0, got {x}")));
    }
    if x > GAMMA_MAX_ARG {
        return Err(Error::Overflow(format!("gamma({x}) exceeds f64 range")));
    }
    Ok(gamma_positive(x))
}

fn gamma_positive(x: f64) -> f64 {
    if x < 0.5 {
        // Γ(x)Γ(1 − x) = π / sin(πx)
        return PI / ((PI * x).sin() * lanczos(1.0 - x));
    }
    lanczos(x)
}

fn lanczos(x: f64) -> f64 {
    let z = x - 1.0;
    let mut series = LANCZOS_COEFFS[0];
    for (k, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        series += c / (z + k as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    // t^(z+1/2) is split in two factors so that Γ(170) does not overflow midway.
    let half = t.powf(0.5 * (z + 0.5));
    (2.0 * PI).sqrt() * half * (half * (-t).exp()) * series
}

fn check_order(d: u32, s: f64) -> Result<()> {
    if d == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    if !(s > 0.0 && s < f64::from(d) / 2.0) {
        return Err(Error::Domain(format!(
            "kernel order s = {s} outside (0, {})",
            f64::from(d) / 2.0
        )));
    }
    Ok(())
}

/// Normalization `c_{d,s}` of the Riesz kernel `K_s(x) = c_{d,s}|x|^{2s−d}`.
pub fn riesz_constant(d: u32, s: f64) -> Result<f64> {
    check_order(d, s)?;
    let hd = f64::from(d) / 2.0;
    Ok(PI.powf(-hd) * 2f64.powf(-2.0 * s) * gamma_positive(hd - s) / gamma_positive(s))
}

fn dimension_factor(d: u32, s: f64) -> f64 {
    let df = f64::from(d);
    (gamma_positive(df / 2.0) / gamma_positive(df)).powf(-2.0 * s / df)
}

/// Optimal Hardy–Littlewood–Sobolev constant `H_{d,s}`.
pub fn hls_constant(d: u32, s: f64) -> Result<f64> {
    check_order(d, s)?;
    let df = f64::from(d);
    Ok(
        PI.powf((df - 2.0 * s) / 2.0) * gamma_positive(s) / gamma_positive(s + df / 2.0)
            * dimension_factor(d, s),
    )
}

/// `S_{d,s} = c_{d,s} H_{d,s}`, evaluated from its own closed form.
pub fn sds_constant(d: u32, s: f64) -> Result<f64> {
    check_order(d, s)?;
    let hd = f64::from(d) / 2.0;
    Ok(
        (4.0 * PI).powf(-s) * gamma_positive(hd - s) / gamma_positive(hd + s)
            * dimension_factor(d, s),
    )
}

/// The three kernel constants for one `(d, s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelConstants {
    pub d: u32,
    pub s: f64,
    pub c_ds: f64,
    pub h_ds: f64,
    pub s_ds: f64,
}

impl KernelConstants {
    /// Computes (or fetches from the process-wide cache) the constants for `(d, s)`.
    pub fn new(d: u32, s: f64) -> Result<Self> {
        static CACHE: OnceLock<Mutex<HashMap<(u32, u64), KernelConstants>>> = OnceLock::new();
        check_order(d, s)?;
        let key = (d, s.to_bits());
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(hit) = cache.lock().expect("constant cache poisoned").get(&key) {
            return Ok(*hit);
        }
        let k = KernelConstants {
            d,
            s,
            c_ds: riesz_constant(d, s)?,
            h_ds: hls_constant(d, s)?,
            s_ds: sds_constant(d, s)?,
        };
        cache
            .lock()
            .expect("constant cache poisoned")
            .insert(key, k);
        Ok(k)
    }

    /// Relative defect of `S_{d,s} = c_{d,s} H_{d,s}`.
    pub fn product_defect(&self) -> f64 {
        (self.c_ds * self.h_ds - self.s_ds).abs() / self.s_ds
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Reference values computed with mpmath at 30 digits.
    const GAMMA_TABLE: [(f64, f64); 7] = [
        (0.001, 999.423_772_484_595_466_1),
        (0.3, 2.991_568_987_687_590_628),
        (1.5, 0.886_226_925_452_758_013_6),
        (7.25, 1_155.381_013_919_989_687),
        (33.3, 7.487_577_596_522_706_608e35),
        (100.5, 9.320_963_104_082_716_608e156),
        (170.0, 4.269_068_009_004_705_275e304),
    ];

    #[test]
    fn gamma_trivial_values() {
        assert_relative_eq!(gamma(1.0).unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(gamma(0.5).unwrap(), PI.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(gamma(4.0).unwrap(), 6.0, max_relative = 1e-14);
    }

    #[test]
    fn gamma_against_high_precision_table() {
        for (x, want) in GAMMA_TABLE {
            let got = gamma(x).unwrap();
            assert!(
                ((got - want) / want).abs() <= 1e-12,
                "gamma({x}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn gamma_domain_and_overflow() {
        assert!(matches!(gamma(0.0), Err(Error::Domain(_))));
        assert!(matches!(gamma(-2.5), Err(Error::Domain(_))));
        assert!(matches!(gamma(f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(gamma(172.0), Err(Error::Overflow(_))));
    }

    #[test]
    fn riesz_constant_examples() {
        // Γ(1/4) cancels: c_{1,1/4} = 1/√(2π).
        let c = riesz_constant(1, 0.25).unwrap();
        assert!((c - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert!((c - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-14);
        assert_relative_eq!(
            riesz_constant(1, 0.1).unwrap(),
            0.114_517_318_623_821_34,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            riesz_constant(1, 1e-4).unwrap() / 1e-4,
            1.000_115_466_251_241,
            max_relative = 1e-10
        );
    }

    #[test]
    fn hls_and_sds_examples() {
        assert_relative_eq!(
            hls_constant(1, 0.25).unwrap(),
            2.958_675_119_188_639,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            hls_constant(1, 0.4).unwrap(),
            1.472_383_641_269_683,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            sds_constant(1, 0.1).unwrap(),
            1.031_349_920_264_492,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            sds_constant(1, 1e-4).unwrap(),
            1.000_025_126_913_208,
            max_relative = 1e-12
        );
        let k = KernelConstants::new(1, 0.25).unwrap();
        assert!(k.product_defect() < 1e-12);
    }

    #[test]
    fn order_domain_errors() {
        for s in [0.0, 0.5, -0.1, 0.7] {
            assert!(riesz_constant(1, s).is_err());
            assert!(hls_constant(1, s).is_err());
            assert!(sds_constant(1, s).is_err());
        }
        // d = 3 admits s up to 3/2.
        assert!(riesz_constant(3, 1.2).is_ok());
    }

    #[test]
    fn small_order_asymptote() {
        // c_{1,s}/s → π^{−1/2}Γ(1/2) = 1; the error is O(s), so Richardson
        // extrapolation over s, s/10 must land close to 1.
        let ratio = |s: f64| riesz_constant(1, s).unwrap() / s;
        for s in [1e-2, 1e-3] {
            let extrapolated = (10.0 * ratio(s / 10.0) - ratio(s)) / 9.0;
            assert!((extrapolated - 1.0).abs() < 1e-2);
        }
        assert!((ratio(1e-4) - 1.0).abs() < 1e-3);
        for s in [1e-2, 1e-3, 1e-4, 0.49] {
            assert!((1.0 - 2.0 * s) * riesz_constant(1, s).unwrap() < 2.0);
        }
    }

    #[test]
    fn cache_returns_same_values() {
        let a = KernelConstants::new(1, 0.3).unwrap();
        let b = KernelConstants::new(1, 0.3).unwrap();
        assert_eq!(a, b);
    }
}
