//! Independent numerical evaluation of the joint functional.
//!
//! The joint functional is `1 - (1 - gamma) D^{-1}[1 / (1 - gamma_bar)](M, V)`,
//! where `gamma_bar = gamma(z x, v + w, theta, beta)`. The oracle applies the
//! two inverse operators numerically instead of in closed form:
//!
//! * the discrete inverse in `x` takes the power series of `1/(1 - gamma_bar)`
//!   in `x` by truncated series arithmetic and sums its first `M` coefficients;
//! * the inverse Laplace-Carson transform in `w` is a Gaver-Stehfest inversion
//!   of `S(w) / w` at `V`.
//!
//! Only small thresholds are accepted; Gaver-Stehfest in double precision is
//! good to roughly six digits there.

use super::{gamma_transform, AnalyticError, TransformQuery};
use crate::model::ModelParams;

/// Number of Gaver-Stehfest terms (even).
pub const STEHFEST_TERMS: usize = 14;
/// Largest node threshold the oracle accepts.
pub const ORACLE_MAX_NODES: u64 = 12;
/// Largest `xi * V` the oracle accepts.
pub const ORACLE_MAX_WEIGHT_SCALE: f64 = 20.0;

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Gaver-Stehfest weights `V_1..V_n` for an even `n`.
pub fn stehfest_coefficients(n: usize) -> Vec<f64> {
    assert!(n >= 2 && n.is_multiple_of(2), "Stehfest order must be even");
    let half = n / 2;
    (1..=n)
        .map(|k| {
            let lo = k.div_ceil(2);
            let hi = k.min(half);
            let sum: f64 = (lo..=hi)
                .map(|j| {
                    (j as f64).powi(half as i32) * factorial(2 * j)
                        / (factorial(half - j)
                            * factorial(j)
                            * factorial(j - 1)
                            * factorial(k - j)
                            * factorial(2 * j - k))
                })
                .sum();
            let sign = if (k + half).is_multiple_of(2) { 1.0 } else { -1.0 };
            sign * sum
        })
        .collect()
}

/// Inverts a Laplace transform `transform(w)` at time `t > 0`.
pub fn stehfest_invert(transform: impl Fn(f64) -> f64, t: f64, n: usize) -> f64 {
    let ln2_t = std::f64::consts::LN_2 / t;
    stehfest_coefficients(n)
        .iter()
        .enumerate()
        .map(|(k, c)| c * transform((k + 1) as f64 * ln2_t))
        .sum::<f64>()
        * ln2_t
}

/// Truncated power series `1 / a(x)` up to the length of `a`.
fn series_recip(a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    out[0] = 1.0 / a[0];
    for n in 1..a.len() {
        let acc: f64 = (1..=n).map(|k| a[k] * out[n - k]).sum();
        out[n] = -acc * out[0];
    }
    out
}

/// `sum_{r < M} [x^r] 1 / (1 - gamma(z x, v + w, theta, beta))`.
fn truncated_renewal_sum(q: &TransformQuery, p: &ModelParams, w: f64) -> f64 {
    let len = p.node_threshold() as usize;
    let lambda = p.attack_rate();
    let mu = p.observation_rate();
    let a = p.geom_p();
    let b = p.geom_q();
    let xi = p.weight_rate();
    let c = q.z() * q.m_beta() * xi / (xi + q.v() + w);
    // mu + theta_bar*(x) = mu + theta + lambda - lambda g(c x), g(c x) = sum_k a b^{k-1} c^k x^k
    let mut denom = vec![0.0; len];
    denom[0] = mu + q.theta() + lambda;
    let mut coeff = a * c;
    for slot in denom.iter_mut().skip(1) {
        *slot = -lambda * coeff;
        coeff *= b * c;
    }
    let gamma_bar: Vec<f64> = series_recip(&denom).into_iter().map(|t| mu * t).collect();
    let mut one_minus: Vec<f64> = gamma_bar.iter().map(|g| -g).collect();
    one_minus[0] += 1.0;
    series_recip(&one_minus).iter().sum()
}

/// Joint functional by numerical operator inversion.
pub fn operator_inversion_oracle(q: &TransformQuery, p: &ModelParams) -> Result<f64, AnalyticError> {
    if p.node_threshold() > ORACLE_MAX_NODES
        || p.weight_rate() * p.weight_threshold() > ORACLE_MAX_WEIGHT_SCALE
    {
        return Err(AnalyticError::OracleScaleExceeded {
            max_nodes: ORACLE_MAX_NODES,
            max_scale: ORACLE_MAX_WEIGHT_SCALE,
        });
    }
    let gamma = gamma_transform(q, p);
    let inverted = stehfest_invert(
        |w| truncated_renewal_sum(q, p, w) / w,
        p.weight_threshold(),
        STEHFEST_TERMS,
    );
    Ok(1.0 - (1.0 - gamma) * inverted)
}
