//! Standard normal distribution helpers.
//!
//! The CDF is evaluated through `erfc`, which keeps full relative accuracy in
//! the lower tail where `1 + erf(x)` would cancel.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal cumulative distribution function F(x).
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail 1 - F(x), accurate for large positive `x`.
pub fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Maclaurin series of erf, summed until terms vanish. Independent of libm.
    fn cdf_series(x: f64) -> f64 {
        let z = x * FRAC_1_SQRT_2;
        let mut term = z;
        let mut sum = z;
        let mut n = 0.0;
        while term.abs() > 1e-18 {
            n += 1.0;
            term *= -z * z / n;
            sum += term / (2.0 * n + 1.0);
        }
        0.5 + sum / PI.sqrt()
    }

    #[test]
    fn tabulated_values() {
        assert_eq!(cdf(0.0), 0.5);
        assert!((cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-12);
        assert!((cdf(-1.0) - 0.158_655_253_931_457).abs() < 1e-12);
    }

    #[test]
    fn matches_series_oracle() {
        for i in -300..=300 {
            let x = i as f64 / 100.0;
            assert!((cdf(x) - cdf_series(x)).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn symmetry_and_tails() {
        for i in 0..=80 {
            let x = i as f64 / 10.0;
            assert!((cdf(-x) - (1.0 - cdf(x))).abs() < 1e-15);
            assert_eq!(sf(x), cdf(-x));
        }
        assert!(cdf(-40.0) >= 0.0);
        assert_eq!(cdf(40.0), 1.0);
    }

    #[test]
    fn density_integrates_to_cdf_increment() {
        // Simpson on [0, 1]
        let n = 1000;
        let h = 1.0 / n as f64;
        let mut s = pdf(0.0) + pdf(1.0);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * pdf(k as f64 * h);
        }
        let integral = s * h / 3.0;
        assert!((integral - (cdf(1.0) - 0.5)).abs() < 1e-12);
    }
}
