//! Poisson distribution function and survival function.
//!
//! The shorter tail is always the one summed: below the mean the lower tail is
//! accumulated from `k` downwards, above it the upper tail from `k + 1`
//! upwards. Both walks start from a log-space pmf and use the pmf ratio
//! recurrence, so terms shrink monotonically and nothing overflows even for
//! means of order `10^4`.
//!
//! The starting pmf uses the saddle-point form
//! `pmf(j) = exp(-stirlerr(j) - bd0(j, mean)) / sqrt(2 pi j)`, which keeps full
//! relative accuracy where `ln Gamma(j + 1)` and `j ln(mean)` would cancel.

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

use super::AnalyticError;

/// `ln(n!) - [(n + 1/2) ln n - n + ln(2 pi)/2]`.
fn stirling_error(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        return ln_gamma(n + 1.0) - (n + 0.5) * n.ln() + n - 0.5 * (2.0 * PI).ln();
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x / np) + np - x`, summed as a series when `x ~ np`.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej *= v2;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

fn ln_pmf(mean: f64, j: u64) -> f64 {
    if j == 0 {
        return -mean;
    }
    let x = j as f64;
    -stirling_error(x) - bd0(x, mean) - 0.5 * (2.0 * PI * x).ln()
}

/// `P{Poisson(mean) = j}` for `mean > 0`.
pub(super) fn poisson_pmf(mean: f64, j: u64) -> f64 {
    ln_pmf(mean, j).exp()
}

/// `sum_{j=0}^{k} pmf(j)` for `0 <= k < mean`, walking down from `k`.
fn lower_tail(mean: f64, k: u64) -> f64 {
    let mut term = ln_pmf(mean, k).exp();
    let mut sum = term;
    let mut j = k;
    while j > 0 && term > sum * 1e-18 {
        term *= j as f64 / mean;
        sum += term;
        j -= 1;
    }
    sum
}

/// `sum_{j>k} pmf(j)` for `k >= mean`, walking up from `k + 1`.
fn upper_tail(mean: f64, k: u64) -> f64 {
    let mut j = k + 1;
    let mut term = ln_pmf(mean, j).exp();
    let mut sum = term;
    while term > sum * 1e-18 {
        j += 1;
        term *= mean / j as f64;
        sum += term;
    }
    sum
}

fn check_mean(mean: f64) -> Result<(), AnalyticError> {
    if mean >= 0.0 && mean.is_finite() {
        Ok(())
    } else {
        Err(AnalyticError::NegativeMean(mean))
    }
}

/// `P{Poisson(mean) <= k}`; zero for `k < 0`.
pub fn poisson_cdf(mean: f64, k: i64) -> Result<f64, AnalyticError> {
    check_mean(mean)?;
    if k < 0 {
        return Ok(0.0);
    }
    if mean == 0.0 {
        return Ok(1.0);
    }
    let k = k as u64;
    if (k as f64) < mean {
        Ok(lower_tail(mean, k).min(1.0))
    } else {
        Ok((1.0 - upper_tail(mean, k)).max(0.0))
    }
}

/// `P{Poisson(mean) > k}`; one for `k < 0`.
pub fn poisson_sf(mean: f64, k: i64) -> Result<f64, AnalyticError> {
    check_mean(mean)?;
    if k < 0 {
        return Ok(1.0);
    }
    if mean == 0.0 {
        return Ok(0.0);
    }
    let k = k as u64;
    if (k as f64) < mean {
        Ok((1.0 - lower_tail(mean, k)).max(0.0))
    } else {
        Ok(upper_tail(mean, k).min(1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{DiscreteCDF, Poisson};

    #[test]
    fn point_mass_and_empty_sum() {
        assert_eq!(poisson_cdf(0.0, 0).unwrap(), 1.0);
        assert_eq!(poisson_cdf(0.0, 5).unwrap(), 1.0);
        assert_eq!(poisson_cdf(3.5, -1).unwrap(), 0.0);
        assert_eq!(poisson_cdf(0.0, -1).unwrap(), 0.0);
        assert_eq!(poisson_sf(3.5, -1).unwrap(), 1.0);
        assert_eq!(poisson_sf(0.0, 0).unwrap(), 0.0);
    }

    #[test]
    fn single_term() {
        let got = poisson_cdf(1.0, 0).unwrap();
        assert!((got - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn far_upper_tail_is_one() {
        let got = poisson_cdf(500.0, 998).unwrap();
        assert!((1.0 - got).abs() <= f64::EPSILON);
    }

    #[test]
    fn rejects_bad_mean() {
        assert_eq!(poisson_cdf(-1.0, 3), Err(AnalyticError::NegativeMean(-1.0)));
        assert!(poisson_sf(f64::NAN, 3).is_err());
        assert!(poisson_cdf(f64::INFINITY, 3).is_err());
    }

    // statrs goes through ln Gamma and loses about `mean * 1e-15` absolute;
    // the exact references are in `high_precision_reference`.
    #[test]
    fn matches_regularized_gamma() {
        for &mean in &[0.3, 1.0, 5.0, 37.5, 700.0, 701.0, 1000.0, 1010.0, 12_000.0] {
            let reference = Poisson::new(mean).unwrap();
            let centre = mean as i64;
            let spread = (8.0 * mean.sqrt()) as i64 + 3;
            let tol = 2e-12 * (mean / 1000.0).max(1.0);
            for k in (centre - spread).max(0)..=centre + spread {
                let want = reference.cdf(k as u64);
                let got = poisson_cdf(mean, k).unwrap();
                assert!((got - want).abs() < tol, "cdf mean={mean} k={k}: {got} vs {want}");
                let sf = poisson_sf(mean, k).unwrap();
                assert!((got + sf - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn high_precision_reference() {
        // Regularized upper incomplete gamma Q(1000, 1000), 40-digit arithmetic.
        let got = poisson_cdf(1000.0, 999).unwrap();
        assert!((got - 0.495_794_755_819_784_5).abs() < 1e-14);
        // Q(801, 1000)
        let got = poisson_cdf(1000.0, 800).unwrap();
        assert!(((got - 3.229_888_722_729_021e-11) / got).abs() < 1e-12);
        // Q(11865, 12000)
        let got = poisson_cdf(12_000.0, 11_864).unwrap();
        assert!((got - 0.107_903_526_414_308_44).abs() < 1e-14);
    }

    #[test]
    fn tails_keep_relative_accuracy() {
        // P{Poisson(0.01) > 3} = sum_{j>=4} e^-x x^j/j! ~ 4.1e-10.
        let x: f64 = 0.01;
        let want: f64 = (4..30)
            .map(|j| (-x).exp() * x.powi(j) / (1..=j).map(f64::from).product::<f64>())
            .sum();
        let got = poisson_sf(x, 3).unwrap();
        assert!(((got - want) / want).abs() < 1e-13);
        // P{Poisson(1000) <= 800} is about 1e-11.
        let got = poisson_cdf(1000.0, 800).unwrap();
        let want = Poisson::new(1000.0).unwrap().cdf(800);
        assert!(((got - want) / want).abs() < 1e-9);
    }
}
