//! Closed-form transforms, means and the crossing-time distribution of the
//! first observed passage out of `[0, M) x [0, V)`.
//!
//! Every Poisson partial sum `e^-x sum_{j<=k} x^j/j!` goes through
//! [`poisson_cdf`] / [`poisson_sf`], so the thresholds used in practice
//! (`xi V` and `M` in the thousands) evaluate without overflow.

mod cdf;
mod moments;
mod oracle;
mod poisson;
mod transforms;

pub use cdf::{
    crossing_time_cdf, crossing_time_curve, phi_i, CdfCurve, CdfOptions, CrossingTimeCdf,
    MAX_SAFE_CDF_THRESHOLD,
};
pub use moments::{mean_nodes_at_crossing, mean_weight_at_crossing};
pub use oracle::{operator_inversion_oracle, stehfest_coefficients, stehfest_invert, ORACLE_MAX_NODES, ORACLE_MAX_WEIGHT_SCALE, STEHFEST_TERMS};
pub use poisson::{poisson_cdf, poisson_sf};
pub use transforms::{gamma_transform, joint_functional, lst_time, lst_weight, pgf_nodes, phi, phi_series};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error("Poisson mean must be finite and >= 0, got {0}")]
    NegativeMean(f64),

    #[error("transform argument {name} = {value} is outside its domain")]
    InvalidQuery { name: &'static str, value: f64 },

    #[error("rates {first} and {second} are too close for the crossing-time CDF")]
    RatesTooClose { first: &'static str, second: &'static str },

    #[error("node threshold {m} exceeds the crossing-time CDF cap of {cap}")]
    ThresholdTooLargeForCdf { m: u64, cap: u64 },

    #[error("operator inversion oracle only handles M <= {max_nodes} and xi*V <= {max_scale}")]
    OracleScaleExceeded { max_nodes: u64, max_scale: f64 },
}

/// Evaluation point for the transforms: `E[z^N e^{-vW} e^{-theta tau} m^N]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransformQuery {
    z: f64,
    v: f64,
    theta: f64,
    m_beta: f64,
}

impl TransformQuery {
    pub fn new(z: f64, v: f64, theta: f64, m_beta: f64) -> Result<Self, AnalyticError> {
        if !(0.0..=1.0).contains(&z) {
            return Err(AnalyticError::InvalidQuery { name: "z", value: z });
        }
        if !(v >= 0.0 && v.is_finite()) {
            return Err(AnalyticError::InvalidQuery { name: "v", value: v });
        }
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(AnalyticError::InvalidQuery {
                name: "theta",
                value: theta,
            });
        }
        if !(m_beta > 0.0 && m_beta <= 1.0) {
            return Err(AnalyticError::InvalidQuery {
                name: "m_beta",
                value: m_beta,
            });
        }
        Ok(Self { z, v, theta, m_beta })
    }

    /// The total-mass point `(1, 0, 0, 1)`.
    pub fn origin() -> Self {
        Self {
            z: 1.0,
            v: 0.0,
            theta: 0.0,
            m_beta: 1.0,
        }
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn m_beta(&self) -> f64 {
        self.m_beta
    }
}
