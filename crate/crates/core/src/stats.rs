//! Small numeric helpers shared across modules.

use alloc::vec::Vec;

/// Standard normal 0.75 quantile.
pub const Z75: f64 = 0.674_489_750_196_081_7;

/// Interquartile range of the standard normal law, `z_0.75 - z_0.25`.
pub const NORMAL_IQR: f64 = 2.0 * Z75;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * core::f64::consts::FRAC_1_SQRT_2)
}

/// Linear-interpolation sample quantile (Hyndman-Fan type 7) of sorted data.
///
/// `sorted` must be ascending and non-empty; `p` is clamped to `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let p = p.clamp(0.0, 1.0);
    let h = (n - 1) as f64 * p;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Type-7 quantile of unsorted data (copies and sorts).
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

/// Add-one bootstrap p-value: `(1 + #{draws >= observed}) / (B + 1)`.
pub fn add_one_p_value(draws: &[f64], observed: f64) -> f64 {
    let exceed = draws.iter().filter(|&&d| d >= observed).count();
    (1 + exceed) as f64 / (draws.len() + 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_matches_hand_values() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert!((quantile(&xs, 0.5) - 2.5).abs() < 1e-15);
        // h = 3 * 0.25 = 0.75
        assert!((quantile(&xs, 0.25) - 1.75).abs() < 1e-15);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn normal_constants() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let n = Normal::new(0.0, 1.0).unwrap();
        assert!((n.inverse_cdf(0.75) - Z75).abs() < 1e-12);
        // reference values from scipy.stats.norm.cdf
        let table = [
            (-3.0, 0.0013498980316300933),
            (-1.2, 0.11506967022170822),
            (0.0, 0.5),
            (0.4, 0.6554217416103242),
            (2.5, 0.9937903346742238),
        ];
        for (x, want) in table {
            assert!((normal_cdf(x) - want).abs() < 1e-15 * want.max(1e-3) * 10.0);
        }
    }

    #[test]
    fn add_one_rule_with_single_draw() {
        assert_eq!(add_one_p_value(&[3.0], 2.0), 1.0);
        assert_eq!(add_one_p_value(&[1.0], 2.0), 0.5);
    }
}
