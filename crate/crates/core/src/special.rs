//! Normal distribution helpers built on the complementary error function.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal CDF, `0.5 * erfc(-x / sqrt(2))`.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal survival function `1 - Φ(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)`, accurate deep into the lower tail.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-norm_sf(x)).ln_1p()
    } else if x > -30.0 {
        norm_cdf(x).ln()
    } else {
        // Mills-ratio asymptotic expansion.
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

/// Standard normal quantile `Φ⁻¹(p)`.
pub fn norm_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
}

/// The `x` with `ln Φ(x) = log_p`, keeping precision in both tails.
pub fn norm_quantile_from_log(log_p: f64) -> f64 {
    if log_p < -std::f64::consts::LN_2 {
        norm_quantile(log_p.exp())
    } else {
        -norm_quantile(-log_p.exp_m1())
    }
}

pub fn ln_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * PI).ln()
}

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Ascending factorial `a (a+1) ... (a+n-1)`.
pub fn rising_factorial(a: f64, n: u32) -> f64 {
    (0..n).map(|k| a + k as f64).product()
}

/// Log density of an inverse-gamma `IG(shape, scale)` at `x`.
pub fn ln_inv_gamma_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// Log density of a gamma distribution with shape/rate parameterization.
pub fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn normal_quantiles() {
        assert_relative_eq!(norm_quantile(0.975), 1.959963984540054, max_relative = 1e-14);
        assert_relative_eq!(norm_quantile(1e-300), -37.047_096_299_361_2, max_relative = 1e-12);
        assert_eq!(norm_quantile(0.5), 0.0);
        for x in [-35.0, -8.0, -1.0, 0.3, 6.0, 8.0] {
            assert_relative_eq!(norm_quantile_from_log(ln_norm_cdf(x)), x, max_relative = 1e-9);
        }
    }

    #[test]
    fn cdf_reference_values() {
        assert_eq!(norm_cdf(0.0), 0.5);
        // Φ(1) and Φ(-1) to 16 digits.
        assert_relative_eq!(norm_cdf(1.0), 0.841_344_746_068_542_9, max_relative = 1e-15);
        assert_relative_eq!(norm_sf(1.0), 0.158_655_253_931_457_05, max_relative = 1e-15);
        // Φ(-10) = 7.619853024160527e-24
        assert_relative_eq!(norm_cdf(-10.0), 7.619_853_024_160_527e-24, max_relative = 1e-13);
    }

    #[test]
    fn ln_cdf_is_continuous_across_branch() {
        let a = ln_norm_cdf(-30.0 + 1e-9);
        let b = ln_norm_cdf(-30.0 - 1e-9);
        assert!((a - b).abs() < 1e-6);
        assert!(ln_norm_cdf(-50.0).is_finite());
    }

    #[test]
    fn rising_factorial_matches_gamma_ratio() {
        let a: f64 = 2.5;
        let direct = rising_factorial(a, 4);
        let via_gamma = (ln_gamma(a + 4.0) - ln_gamma(a)).exp();
        assert_relative_eq!(direct, via_gamma, max_relative = 1e-12);
        assert_eq!(rising_factorial(3.0, 0), 1.0);
    }
}
