//! Increment transform, the joint functional at the first observed passage
//! and its three marginals.
//!
//! Throughout, `z` and `m_beta` only ever appear as the product `z * m_beta`,
//! `l(v) = xi / (xi + v)` is the weight LST and `g(s) = a s / (1 - b s)` the
//! node-count PGF.

use super::poisson::{poisson_cdf, poisson_sf};
use super::{AnalyticError, TransformQuery};
use crate::model::ModelParams;

/// Below this ratio of `v + xi(1 - d)` to `xi + v` the closed form of `phi`
/// is replaced by its finite-sum form.
const SINGULAR_RATIO: f64 = 1e-4;

pub(super) fn cdf(mean: f64, k: i64) -> f64 {
    poisson_cdf(mean, k).expect("non-negative finite Poisson mean")
}

pub(super) fn sf(mean: f64, k: i64) -> f64 {
    poisson_sf(mean, k).expect("non-negative finite Poisson mean")
}

/// `theta* = theta + lambda - lambda g(z l(v) m)`, written as
/// `theta + lambda (1 - s) / (1 - b s)` to avoid cancellation near `s = 1`.
fn theta_star(q: &TransformQuery, p: &ModelParams) -> f64 {
    let xi = p.weight_rate();
    let s = q.z() * q.m_beta() * xi / (xi + q.v());
    q.theta() + p.attack_rate() * (1.0 - s) / (1.0 - p.geom_q() * s)
}

/// `1 - gamma(z, v, theta, beta)`.
fn one_minus_gamma(q: &TransformQuery, p: &ModelParams) -> f64 {
    let ts = theta_star(q, p);
    ts / (p.observation_rate() + ts)
}

/// Joint transform of one observation epoch's increment,
/// `E[z^X e^{-vY} e^{-theta Delta} m^X] = mu / (mu + theta*)`.
pub fn gamma_transform(q: &TransformQuery, p: &ModelParams) -> f64 {
    let mu = p.observation_rate();
    mu / (mu + theta_star(q, p))
}

/// `(d, 1 - d)` with `d = z m (lambda + b theta) / (lambda + theta)`.
fn d_pair(q: &TransformQuery, p: &ModelParams) -> (f64, f64) {
    let lambda = p.attack_rate();
    let b = p.geom_q();
    let theta = q.theta();
    let zm = q.z() * q.m_beta();
    let num = lambda + b * theta;
    let den = lambda + theta;
    let d = zm * num / den;
    let one_minus_d = ((1.0 - zm) * num + p.geom_p() * theta) / den;
    (d, one_minus_d)
}

/// The auxiliary function `phi(z, v, theta, beta)` of the joint functional.
///
/// Uses the closed form with stable Poisson sums away from the line
/// `v + xi(1 - d) = 0`. Close to it the closed form is `0/0`, and the
/// equivalent finite sum [`phi_series`] is used instead; at `z = m = 1`,
/// `theta = v = 0` that sum is the analytic limit.
pub fn phi(q: &TransformQuery, p: &ModelParams) -> f64 {
    let xi = p.weight_rate();
    let v = q.v();
    let (d, one_minus_d) = d_pair(q, p);
    let u = xi + v;
    let s = v + xi * one_minus_d;
    if s <= SINGULAR_RATIO * u {
        return phi_series(q, p);
    }
    let big_v = p.weight_threshold();
    let m = p.node_threshold();
    let k = m as i64 - 2;
    let c = d * xi;
    let lead = u / s;
    let overshoot = u * (c / u).powf(m as f64) * sf(u * big_v, k) / s;
    // d xi e^{-uV} sum_{j<=M-2} (d xi V)^j / j! = c e^{-sV} P{Poisson(cV) <= M-2}
    let early = c * (-s * big_v).exp() * cdf(c * big_v, k) / s;
    lead - overshoot - early
}

/// `phi` as `sum_{r=0}^{M-1} (d xi / (xi + v))^r P{Poisson((xi + v) V) >= r}`.
///
/// This is the inverse transform of the truncated geometric series before it
/// is summed in closed form. All terms are non-negative, so it is accurate
/// everywhere, including on the singular line.
pub fn phi_series(q: &TransformQuery, p: &ModelParams) -> f64 {
    let xi = p.weight_rate();
    let (d, _) = d_pair(q, p);
    let u = xi + q.v();
    let ratio = d * xi / u;
    let mean = u * p.weight_threshold();
    let mut sum = 0.0;
    let mut power = 1.0;
    for r in 0..p.node_threshold() {
        if power == 0.0 {
            break;
        }
        sum += power * sf(mean, r as i64 - 1);
        power *= ratio;
    }
    sum
}

/// `E[z^{N_rho} e^{-v W_rho} e^{-theta tau_rho} m(beta)^{N_rho}]`.
pub fn joint_functional(q: &TransformQuery, p: &ModelParams) -> f64 {
    let lambda = p.attack_rate();
    let mu = p.observation_rate();
    let a = p.geom_p();
    let b = p.geom_q();
    let theta = q.theta();
    let omg = one_minus_gamma(q, p);
    if omg == 0.0 {
        return 1.0;
    }
    let slow = lambda + b * theta;
    let bracket = 1.0 + b * mu / slow + a * lambda * mu / (slow * (lambda + theta)) * phi(q, p);
    (1.0 - omg * bracket).clamp(0.0, 1.0)
}

fn check_unit(name: &'static str, value: f64) -> Result<(), AnalyticError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(AnalyticError::InvalidQuery { name, value })
    }
}

fn check_nonneg(name: &'static str, value: f64) -> Result<(), AnalyticError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(AnalyticError::InvalidQuery { name, value })
    }
}

/// PGF of the node count at the first observed passage, `E[z^{N_rho}]`.
pub fn pgf_nodes(z: f64, p: &ModelParams) -> Result<f64, AnalyticError> {
    check_unit("z", z)?;
    let lambda = p.attack_rate();
    let mu = p.observation_rate();
    let a = p.geom_p();
    let b = p.geom_q();
    let m = p.node_threshold();
    let x = p.weight_rate() * p.weight_threshold();
    let k = m as i64 - 2;
    // 1 - phi*(z) = z^M (1 - K) + e^{-x} sum_{j<=M-2} x^j z^{j+1} / j!
    let one_minus_phi_star =
        z.powf(m as f64) * sf(x, k) + z * (-x * (1.0 - z)).exp() * cdf(x * z, k);
    Ok(a * mu * one_minus_phi_star / (lambda + mu - (lambda + b * mu) * z))
}

/// LST of the cumulative weight at the first observed passage, `E[e^{-v W_rho}]`.
pub fn lst_weight(v: f64, p: &ModelParams) -> Result<f64, AnalyticError> {
    check_nonneg("v", v)?;
    let lambda = p.attack_rate();
    let mu = p.observation_rate();
    let xi = p.weight_rate();
    let big_v = p.weight_threshold();
    let m = p.node_threshold();
    let k_small = (lambda + mu) / (p.geom_p() * mu * xi);
    let k_big = cdf(xi * big_v, m as i64 - 2);
    let u = xi + v;
    // sum_j V^j/j! xi^{M-1} e^{-uV} / u^{M-1-j} = (xi/u)^{M-1} P{Poisson(uV) <= M-2}
    let scaled = (xi / u).powf(m as f64 - 1.0) * sf(u * big_v, m as i64 - 2);
    Ok((k_big * (-v * big_v).exp() + scaled) / (1.0 + k_small * v))
}

/// LST of the first observed passage time, `E[e^{-theta tau_rho}]`.
pub fn lst_time(theta: f64, p: &ModelParams) -> Result<f64, AnalyticError> {
    check_nonneg("theta", theta)?;
    if theta == 0.0 {
        return Ok(1.0);
    }
    let lambda = p.attack_rate();
    let mu = p.observation_rate();
    let a = p.geom_p();
    let b = p.geom_q();
    let m = p.node_threshold();
    let x = p.weight_rate() * p.weight_threshold();
    let k = m as i64 - 2;
    let slow = lambda + b * theta;
    let d = slow / (lambda + theta);
    let one_minus_d = a * theta / (lambda + theta);
    let phi_1 = if one_minus_d <= SINGULAR_RATIO {
        // The closed form divides a cancelling difference by 1 - d.
        let mut sum = 0.0;
        let mut power = 1.0;
        for r in 0..m {
            sum += power * sf(x, r as i64 - 1);
            power *= d;
        }
        sum
    } else {
        // e^{-x} sum_{j<=M-2} (d x)^j / j! = e^{-x(1-d)} P{Poisson(dx) <= M-2}
        (1.0 - d.powf(m as f64) * sf(x, k) - d * (-x * one_minus_d).exp() * cdf(d * x, k))
            / one_minus_d
    };
    let bracket = 1.0 + b * mu / slow + a * lambda * mu / (slow * (lambda + theta)) * phi_1;
    Ok((1.0 - theta / (mu + theta) * bracket).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambda: f64, mu: f64, a: f64, xi: f64, m: i64, v: f64) -> ModelParams {
        ModelParams::new(lambda, mu, a, xi, m, v).unwrap()
    }

    fn q(z: f64, v: f64, theta: f64, m: f64) -> TransformQuery {
        TransformQuery::new(z, v, theta, m).unwrap()
    }

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn gamma_hand_values() {
        let p = params(1.0, 2.0, 0.5, 1.0, 3, 2.0);
        assert_eq!(gamma_transform(&TransformQuery::origin(), &p), 1.0);
        // g(0.5) = 1/3, theta* = 2/3, gamma = 2 / (8/3) = 0.75
        let got = gamma_transform(&q(0.5, 0.0, 0.0, 1.0), &p);
        assert!((got - 0.75).abs() < 1e-15);
        let far = gamma_transform(&q(0.5, 0.0, 1e6, 1.0), &p);
        assert!(far < 1e-5);
        let mut last = 1.0;
        for i in 0..100 {
            let g = gamma_transform(&q(0.7, 0.3, i as f64 * 0.5, 1.0), &p);
            assert!(g <= last);
            last = g;
        }
    }

    /// phi(1, v, 0, 0) exactly as displayed with raw factorial sums.
    fn phi_d_one_raw(v: f64, xi: f64, m: i32, big_v: f64) -> f64 {
        let u = xi + v;
        let s1: f64 = (0..=m - 2)
            .map(|j| (u * big_v).powi(j) / factorial(j as u32))
            .sum();
        let s2: f64 = (0..=m - 2)
            .map(|j| (xi * big_v).powi(j) / factorial(j as u32))
            .sum();
        u / v - xi.powi(m) * (1.0 - (-u * big_v).exp() * s1) / (v * u.powi(m - 1))
            - xi * (-u * big_v).exp() * s2 / v
    }

    #[test]
    fn phi_on_unit_d_matches_displayed_form() {
        let p = params(1.3, 2.0, 0.4, 0.8, 6, 3.0);
        for &v in &[0.05, 0.3, 1.0, 4.0] {
            let got = phi(&q(1.0, v, 0.0, 1.0), &p);
            let want = phi_d_one_raw(v, 0.8, 6, 3.0);
            assert!((got - want).abs() < 1e-9 * want.abs(), "v={v}: {got} vs {want}");
        }
    }

    #[test]
    fn phi_empty_sums_when_single_node_threshold() {
        let p = params(1.0, 2.0, 0.5, 1.0, 1, 2.0);
        for &(z, v, t) in &[(0.2, 0.0, 0.0), (0.9, 0.1, 0.2), (1.0, 0.0, 0.0), (1.0, 2.0, 3.0)] {
            assert!((phi(&q(z, v, t, 1.0), &p) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn closed_form_and_series_agree() {
        let p = params(0.7, 1.9, 0.35, 1.2, 9, 4.5);
        for &(z, v, t) in &[(0.1, 0.0, 0.0), (0.9, 0.1, 0.2), (0.5, 2.0, 0.7), (1.0, 0.01, 3.0)] {
            let query = q(z, v, t, 0.8);
            let closed = phi(&query, &p);
            let series = phi_series(&query, &p);
            assert!((closed - series).abs() < 1e-10 * series, "{closed} vs {series}");
        }
    }

    #[test]
    fn singular_point_is_finite_and_continuous() {
        let p = params(1.0, 2.0, 0.5, 1.0, 5, 5.0);
        let at = phi(&TransformQuery::origin(), &p);
        assert!(at.is_finite());
        let near = phi(&q(1.0 - 1e-3, 0.0, 0.0, 1.0), &p);
        assert!((at - near).abs() < 1e-2 * at);
        assert_eq!(joint_functional(&TransformQuery::origin(), &p), 1.0);
    }

    #[test]
    fn pgf_single_threshold_reduction() {
        // M = 1, a = 1, lambda = mu: E[z^N] = z / (2 - z).
        let p = params(1.5, 1.5, 1.0, 1.0, 1, 3.0);
        assert!((pgf_nodes(0.5, &p).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(pgf_nodes(1.0, &p).unwrap() == 1.0);
        assert!(pgf_nodes(1.1, &p).is_err());
    }

    #[test]
    fn weight_lst_single_threshold_is_exponential() {
        let p = params(1.0, 2.0, 0.5, 1.5, 1, 3.0);
        let k = 3.0 / (0.5 * 2.0 * 1.5);
        for &v in &[0.0, 0.1, 1.0, 10.0] {
            let got = lst_weight(v, &p).unwrap();
            assert!((got - 1.0 / (1.0 + k * v)).abs() < 1e-15);
        }
        assert!(lst_weight(-0.1, &p).is_err());
    }

    #[test]
    fn time_lst_large_theta() {
        let p = params(1.0, 2.0, 0.5, 1.0, 5, 5.0);
        let theta = 1e6;
        // Direct substitution, written out independently.
        let (lambda, mu, a, b, x) = (1.0f64, 2.0f64, 0.5f64, 0.5f64, 5.0f64);
        let d = (lambda + b * theta) / (lambda + theta);
        let kk: f64 = (0..=3).map(|j| (-x).exp() * x.powi(j) / factorial(j as u32)).sum();
        let tail: f64 = (0..=3)
            .map(|j| (-x).exp() * (d * x).powi(j) / factorial(j as u32))
            .sum();
        let phi1 = (1.0 - d.powi(5) * (1.0 - kk) - d * tail) / (1.0 - d);
        let want = 1.0
            - theta / (mu + theta)
                * (1.0 + b * mu / (lambda + b * theta)
                    + a * lambda * mu / ((lambda + b * theta) * (lambda + theta)) * phi1);
        let got = lst_time(theta, &p).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        assert!(got < 1e-5);
        assert_eq!(lst_time(0.0, &p).unwrap(), 1.0);
    }

    #[test]
    fn lst_time_small_theta_branches_agree() {
        // 1 - d = a theta / (lambda + theta) crosses the switch near theta = 2e-4.
        let p = params(1.0, 2.0, 0.5, 1.0, 40, 30.0);
        // Just below the switch the closed form still holds to ~1e-15 once
        // scaled by theta / (mu + theta).
        let theta = 1.999e-4;
        let (lambda, mu, a, b, x) = (1.0f64, 2.0f64, 0.5f64, 0.5f64, 30.0f64);
        let d = (lambda + b * theta) / (lambda + theta);
        let one_minus_d = a * theta / (lambda + theta);
        let phi1 = (1.0 - d.powi(40) * sf(x, 38) - d * (-x * one_minus_d).exp() * cdf(d * x, 38))
            / one_minus_d;
        let want = 1.0
            - theta / (mu + theta)
                * (1.0 + b * mu / (lambda + b * theta)
                    + a * lambda * mu / ((lambda + b * theta) * (lambda + theta)) * phi1);
        assert!((lst_time(theta, &p).unwrap() - want).abs() < 1e-12);
        for theta in [1e-9, 1e-6, 1.999e-4, 2.001e-4, 1e-2] {
            let joint = joint_functional(&q(1.0, 0.0, theta, 1.0), &p);
            let got = lst_time(theta, &p).unwrap();
            assert!((got - joint).abs() < 1e-12, "theta={theta}: {got} vs {joint}");
        }
    }

    #[test]
    fn passive_mgf_scales_z() {
        let p = params(0.8, 1.7, 0.6, 1.1, 7, 4.0);
        let with_m = joint_functional(&q(0.9, 0.2, 0.3, 0.5), &p);
        let folded = joint_functional(&q(0.45, 0.2, 0.3, 1.0), &p);
        assert!((with_m - folded).abs() < 1e-14);
    }
}
