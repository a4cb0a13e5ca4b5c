use super::transforms::cdf;
use crate::model::ModelParams;

/// `E[N_rho]`.
///
/// With `x = xi V`, the sum `e^-x sum_{j=0}^{M-2} x^j/(j-1)!` has a zero
/// `j = 0` term and re-indexes to `x P{Poisson(x) <= M-3}`.
pub fn mean_nodes_at_crossing(p: &ModelParams) -> f64 {
    let lambda = p.attack_rate();
    let mu = p.observation_rate();
    let a = p.geom_p();
    let b = p.geom_q();
    let m = p.node_threshold();
    let x = p.weight_rate() * p.weight_threshold();
    let k_big = cdf(x, m as i64 - 2);
    (lambda + b * mu) / (a * mu) + m as f64 - (m as f64 - 1.0) * k_big + x * cdf(x, m as i64 - 3)
}

/// `E[W_rho] = E[N_rho] / xi`.
pub fn mean_weight_at_crossing(p: &ModelParams) -> f64 {
    mean_nodes_at_crossing(p) / p.weight_rate()
}
