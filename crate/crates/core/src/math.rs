//! Scalar special functions used across the crate.
//!
//! `core` has no transcendental functions, so everything routes through `libm`.

use core::f64::consts::{FRAC_1_SQRT_2, LN_2, PI};

pub use libm::{exp, fabs, log, log1p, sqrt};

/// Converts an information quantity from nats to bits.
#[inline]
pub fn nats_to_bits(nats: f64) -> f64 {
    nats / LN_2
}

#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    exp(-0.5 * z * z) / sqrt(2.0 * PI)
}

/// Standard normal CDF, `Φ(z) = erfc(-z/√2)/2`.
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(z)` without cancellation.
#[inline]
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z * FRAC_1_SQRT_2)
}

/// `Φ(b) - Φ(a)` for `a <= b`, evaluated on whichever tail keeps precision.
pub fn std_normal_mass(a: f64, b: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    if a >= 0.0 {
        std_normal_sf(a) - std_normal_sf(b)
    } else if b <= 0.0 {
        std_normal_cdf(b) - std_normal_cdf(a)
    } else {
        1.0 - std_normal_cdf(a) - std_normal_sf(b)
    }
}

/// Mass of `N(mean, std²)` on `[lo, hi]`. Infinite bounds are allowed.
pub fn normal_interval_mass(mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    std_normal_mass((lo - mean) / std, (hi - mean) / std)
}

/// Standard normal quantile `Φ⁻¹(p)`.
///
/// Rational initial guess followed by Halley steps against `erfc`; the result
/// is accurate to a few ulps over `(0, 1)`. Returns NaN outside `(0, 1)` and
/// ±∞ at the endpoints.
pub fn std_normal_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }

    // Acklam's coefficients.
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let mut x = if p < P_LOW {
        let q = sqrt(-2.0 * log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = sqrt(-2.0 * log(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    for _ in 0..3 {
        // Residual on the tail that is small, to avoid 1 - p cancellation.
        let e = if x <= 0.0 {
            std_normal_cdf(x) - p
        } else {
            (1.0 - p) - std_normal_sf(x)
        };
        let u = e * sqrt(2.0 * PI) * exp(0.5 * x * x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// `erf` re-exported for callers that work with the error function directly.
#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_known_values() {
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((std_normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((std_normal_sf(6.0) - 9.865_876_450_376_98e-10).abs() < 1e-22);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-12, 1e-6, 0.01, 0.05, 0.3, 0.5, 0.7, 0.95, 0.999, 1.0 - 1e-9] {
            let x = std_normal_quantile(p);
            let back = if x <= 0.0 {
                std_normal_cdf(x)
            } else {
                1.0 - std_normal_sf(x)
            };
            assert!((back - p).abs() <= 1e-15 * p.max(1e-3), "p={p} x={x} back={back}");
        }
        assert!((std_normal_quantile(0.95) - 1.644_853_626_951_472_2).abs() < 1e-13);
        assert!((std_normal_quantile(0.9) - 1.281_551_565_544_600_4).abs() < 1e-13);
    }

    #[test]
    fn quantile_endpoints() {
        assert_eq!(std_normal_quantile(0.0), f64::NEG_INFINITY);
        assert_eq!(std_normal_quantile(1.0), f64::INFINITY);
        assert!(std_normal_quantile(1.5).is_nan());
    }

    #[test]
    fn interval_mass_tails() {
        let m = normal_interval_mass(0.0, 1.0, f64::NEG_INFINITY, f64::INFINITY);
        assert_eq!(m, 1.0);
        let far = normal_interval_mass(0.0, 1.0, 8.0, 9.0);
        assert!(far > 0.0 && far < 1e-14);
    }
}
