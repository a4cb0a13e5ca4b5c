//! Distribution function of the first observed passage time.
//!
//! Every `c_i` and `d_i` coefficient is non-negative and `lambda^{i+1} phi_i`
//! is the distribution function of `Gamma(i+1, lambda) + Exp(mu)` (time of
//! the `(i+1)`-th attack plus the wait for the next observation). The CDF is
//! therefore evaluated as a mixture of those distribution functions, each of
//! which is computed from positive-term series only.

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use super::poisson::poisson_pmf;
use super::transforms::{cdf, sf};
use super::AnalyticError;
use crate::model::ModelParams;

/// Default cap on `M` for the crossing-time CDF.
pub const MAX_SAFE_CDF_THRESHOLD: u64 = 50;

const DISTINCT_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CdfOptions {
    /// Lifts the [`MAX_SAFE_CDF_THRESHOLD`] cap.
    pub allow_large_threshold: bool,
}

/// Crossing-time CDF sampled on an ascending grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfCurve {
    pub thetas: Vec<f64>,
    pub values: Vec<f64>,
}

fn check_distinct(
    first: &'static str,
    x: f64,
    second: &'static str,
    y: f64,
) -> Result<(), AnalyticError> {
    if (x - y).abs() <= DISTINCT_RTOL * x.abs().max(y.abs()) {
        Err(AnalyticError::RatesTooClose { first, second })
    } else {
        Ok(())
    }
}

fn check_time(theta: f64) -> Result<(), AnalyticError> {
    if theta >= 0.0 && !theta.is_nan() {
        Ok(())
    } else {
        Err(AnalyticError::InvalidQuery {
            name: "theta",
            value: theta,
        })
    }
}

/// `ln sum_{s>=0} r_s` with `r_0 = 1` and `r_{s+1} = r_s * ratio(s)`.
/// Ratios must be positive and eventually decreasing below one.
fn ln_positive_series(ratio: impl Fn(u64) -> f64) -> f64 {
    let mut ln_term = 0.0f64;
    let mut ln_scale = 0.0f64;
    let mut acc = 1.0f64;
    let mut s = 0u64;
    loop {
        let r = ratio(s);
        if r <= 0.0 {
            break;
        }
        ln_term += r.ln();
        if ln_term > ln_scale + 500.0 {
            acc *= (ln_scale - ln_term).exp();
            ln_scale = ln_term;
        }
        let t = (ln_term - ln_scale).exp();
        acc += t;
        if r < 1.0 && t <= acc * 1e-18 {
            break;
        }
        s += 1;
    }
    ln_scale + acc.ln()
}

/// `P{Gamma(i+1, lambda) + Exp(mu) <= t}`.
fn attack_then_observe_cdf(i: u64, t: f64, lambda: f64, mu: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let k = i as f64;
    // P{G <= t < G + E} = e^{-mu t} lambda^{i+1} int_0^t s^i/i! e^{(mu-lambda)s} ds
    let ln_prefix = (k + 1.0) * (lambda * t).ln() - ln_gamma(k + 2.0);
    let ln_between = if mu > lambda {
        let eta_t = (mu - lambda) * t;
        -mu * t
            + ln_prefix
            + ln_positive_series(|s| {
                let s = s as f64;
                eta_t * (k + s + 1.0) / ((s + 1.0) * (k + s + 2.0))
            })
    } else {
        let delta_t = (lambda - mu) * t;
        -lambda * t + ln_prefix + ln_positive_series(|s| delta_t / (k + s as f64 + 2.0))
    };
    // P{G > t} = P{Poisson(lambda t) <= i}
    (1.0 - cdf(lambda * t, i as i64) - ln_between.exp()).clamp(0.0, 1.0)
}

/// `phi_i(theta)`: the building block of the crossing-time CDF,
/// `(1/lambda^{i+1}) P{Gamma(i+1, lambda) + Exp(mu) <= theta}`.
pub fn phi_i(i: u64, theta: f64, p: &ModelParams) -> Result<f64, AnalyticError> {
    check_time(theta)?;
    let lambda = p.attack_rate();
    let mu = p.observation_rate();
    check_distinct("lambda", lambda, "mu", mu)?;
    if theta.is_infinite() {
        return Ok(lambda.powf(-(i as f64 + 1.0)));
    }
    Ok(attack_then_observe_cdf(i, theta, lambda, mu) * lambda.powf(-(i as f64 + 1.0)))
}

fn binomial_pmf(n: u64, i: u64, a: f64) -> f64 {
    let b = 1.0 - a;
    if b == 0.0 {
        return if i == n { 1.0 } else { 0.0 };
    }
    let (nf, kf) = (n as f64, i as f64);
    let ln_choose = ln_gamma(nf + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(nf - kf + 1.0);
    (ln_choose + kf * a.ln() + (nf - kf) * b.ln()).exp()
}

/// Crossing-time CDF with its mixture weights precomputed.
#[derive(Debug, Clone)]
pub struct CrossingTimeCdf {
    lambda: f64,
    mu: f64,
    weights: Vec<f64>,
}

impl CrossingTimeCdf {
    pub fn new(p: &ModelParams, opts: CdfOptions) -> Result<Self, AnalyticError> {
        let lambda = p.attack_rate();
        let mu = p.observation_rate();
        let m = p.node_threshold();
        // The lambda/b pole cancels out of the final mixture, only lambda = mu
        // is singular.
        check_distinct("lambda", lambda, "mu", mu)?;
        if m > MAX_SAFE_CDF_THRESHOLD && !opts.allow_large_threshold {
            return Err(AnalyticError::ThresholdTooLargeForCdf {
                m,
                cap: MAX_SAFE_CDF_THRESHOLD,
            });
        }
        let a = p.geom_p();
        let x = p.weight_rate() * p.weight_threshold();
        let node_exit = sf(x, m as i64 - 2);
        let pmfs: Vec<f64> = (0..m.saturating_sub(1)).map(|j| poisson_pmf(x, j)).collect();
        let weights = (0..m)
            .map(|i| {
                let early: f64 = (i..m.saturating_sub(1))
                    .map(|j| pmfs[j as usize] * binomial_pmf(j, i, a))
                    .sum();
                node_exit * binomial_pmf(m - 1, i, a) + early
            })
            .collect();
        Ok(Self { lambda, mu, weights })
    }

    /// `F(theta) = P{tau_rho <= theta}`.
    pub fn eval(&self, theta: f64) -> Result<f64, AnalyticError> {
        check_time(theta)?;
        if theta == 0.0 {
            return Ok(0.0);
        }
        if theta.is_infinite() {
            return Ok(self.weights.iter().sum::<f64>().min(1.0));
        }
        let total: f64 = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, w)| w * attack_then_observe_cdf(i as u64, theta, self.lambda, self.mu))
            .sum();
        Ok(total.clamp(0.0, 1.0))
    }

    /// Mixture weight on `Gamma(i+1, lambda) + Exp(mu)`, i.e. the probability
    /// that the exit epoch is the one containing attack `i + 1`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `P{tau_rho <= theta}` with the default threshold cap.
pub fn crossing_time_cdf(theta: f64, p: &ModelParams) -> Result<f64, AnalyticError> {
    CrossingTimeCdf::new(p, CdfOptions::default())?.eval(theta)
}

/// Evaluates the CDF on an ascending grid.
pub fn crossing_time_curve(
    grid: &[f64],
    p: &ModelParams,
    opts: CdfOptions,
) -> Result<CdfCurve, AnalyticError> {
    let f = CrossingTimeCdf::new(p, opts)?;
    let values = grid.iter().map(|&t| f.eval(t)).collect::<Result<Vec<_>, _>>()?;
    Ok(CdfCurve {
        thetas: grid.to_vec(),
        values,
    })
}
