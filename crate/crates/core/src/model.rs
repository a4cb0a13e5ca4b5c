//! Model parameters and the three primitive samplers.
//!
//! Attacks arrive as a Poisson stream of rate `attack_rate`. Each attack
//! destroys a geometric number of nodes on the support `{1, 2, 3, ...}`
//! (PGF `a z / (1 - b z)`, so an attack always takes at least one node), and
//! every destroyed node carries an exponential weight of rate `weight_rate`.
//! The damage is only seen at observation epochs whose gaps are exponential
//! with rate `observation_rate`. The process starts empty at time zero.
//!
//! Getting the geometric support wrong (starting at 0 instead of 1) shifts
//! every downstream number, so [`sample_geometric`] and the analytic code
//! share the same convention.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;
use thiserror::Error;

/// Parameter validation failures. `name` is the parameter's field name.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{name} must be a finite rate > 0, got {value}")]
    NonPositiveRate { name: &'static str, value: f64 },

    #[error("{name} must lie in (0, 1], got {value}")]
    ParameterOutOfRange { name: &'static str, value: f64 },

    #[error("{name} is not a valid threshold: {value}")]
    ThresholdInvalid { name: &'static str, value: f64 },
}

impl ParamError {
    pub fn name(&self) -> &'static str {
        match self {
            ParamError::NonPositiveRate { name, .. }
            | ParamError::ParameterOutOfRange { name, .. }
            | ParamError::ThresholdInvalid { name, .. } => name,
        }
    }
}

/// Validated model parameters. Immutable once built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    attack_rate: f64,
    observation_rate: f64,
    geom_p: f64,
    weight_rate: f64,
    node_threshold: u64,
    weight_threshold: f64,
    passive_mgf: f64,
}

impl ModelParams {
    /// Builds parameters with the passive-component MGF value fixed at 1.
    pub fn new(
        attack_rate: f64,
        observation_rate: f64,
        geom_p: f64,
        weight_rate: f64,
        node_threshold: i64,
        weight_threshold: f64,
    ) -> Result<Self, ParamError> {
        validate_params(
            attack_rate,
            observation_rate,
            geom_p,
            weight_rate,
            node_threshold,
            weight_threshold,
            None,
        )
    }

    /// Replaces the passive-component MGF value `m(beta)`.
    pub fn with_passive_mgf(self, passive_mgf: f64) -> Result<Self, ParamError> {
        check_unit_interval("m_beta", passive_mgf)?;
        Ok(Self {
            passive_mgf,
            ..self
        })
    }

    /// Attack rate (lambda).
    pub fn attack_rate(&self) -> f64 {
        self.attack_rate
    }

    /// Observation rate (mu).
    pub fn observation_rate(&self) -> f64 {
        self.observation_rate
    }

    /// Geometric success probability `a` of the per-attack node count.
    pub fn geom_p(&self) -> f64 {
        self.geom_p
    }

    /// `b = 1 - a`.
    pub fn geom_q(&self) -> f64 {
        1.0 - self.geom_p
    }

    /// Exponential rate (xi) of a single node's weight.
    pub fn weight_rate(&self) -> f64 {
        self.weight_rate
    }

    /// Node-loss threshold M.
    pub fn node_threshold(&self) -> u64 {
        self.node_threshold
    }

    /// Weight-loss threshold V.
    pub fn weight_threshold(&self) -> f64 {
        self.weight_threshold
    }

    /// Passive-component MGF value m(beta).
    pub fn passive_mgf(&self) -> f64 {
        self.passive_mgf
    }
}

fn check_rate(name: &'static str, value: f64) -> Result<(), ParamError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ParamError::NonPositiveRate { name, value })
    }
}

fn check_unit_interval(name: &'static str, value: f64) -> Result<(), ParamError> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(ParamError::ParameterOutOfRange { name, value })
    }
}

/// Validates raw scalars and builds [`ModelParams`].
///
/// Checks run in field order, so the first violated bound is the one reported.
pub fn validate_params(
    attack_rate: f64,
    observation_rate: f64,
    geom_p: f64,
    weight_rate: f64,
    node_threshold: i64,
    weight_threshold: f64,
    passive_mgf: Option<f64>,
) -> Result<ModelParams, ParamError> {
    check_rate("lambda", attack_rate)?;
    check_rate("mu", observation_rate)?;
    check_unit_interval("a", geom_p)?;
    check_rate("xi", weight_rate)?;
    if node_threshold < 1 {
        return Err(ParamError::ThresholdInvalid {
            name: "M",
            value: node_threshold as f64,
        });
    }
    if !(weight_threshold.is_finite() && weight_threshold > 0.0) {
        return Err(ParamError::ThresholdInvalid {
            name: "V",
            value: weight_threshold,
        });
    }
    let passive_mgf = passive_mgf.unwrap_or(1.0);
    check_unit_interval("m_beta", passive_mgf)?;
    Ok(ModelParams {
        attack_rate,
        observation_rate,
        geom_p,
        weight_rate,
        node_threshold: node_threshold as u64,
        weight_threshold,
        passive_mgf,
    })
}

/// Inverse-CDF map from a uniform `u` in `[0, 1)` to an exponential variate.
pub fn exponential_from_uniform(rate: f64, u: f64) -> f64 {
    -(-u).ln_1p() / rate
}

/// Draws an exponential variate with the given rate.
pub fn sample_exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    debug_assert!(rate > 0.0);
    exponential_from_uniform(rate, rng.random::<f64>())
}

/// Draws the number of nodes lost in one attack: `P(n = k) = a b^(k-1)`, `k >= 1`.
pub fn sample_geometric<R: Rng + ?Sized>(a: f64, rng: &mut R) -> u64 {
    debug_assert!(a > 0.0 && a <= 1.0);
    if a >= 1.0 {
        return 1;
    }
    // U in (0, 1]; floor(ln U / ln b) + 1 has P(X >= k) = b^(k-1).
    let u = 1.0 - rng.random::<f64>();
    let k = (u.ln() / (1.0 - a).ln()).floor();
    if k >= u64::MAX as f64 {
        u64::MAX
    } else {
        k as u64 + 1
    }
}

/// Means below this use sequential inversion; above it, PTRS rejection.
const POISSON_INVERSION_LIMIT: f64 = 12.0;

/// Draws a Poisson count with the given mean.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    debug_assert!(mean >= 0.0 && mean.is_finite());
    if mean <= 0.0 {
        return 0;
    }
    if mean < POISSON_INVERSION_LIMIT {
        let u: f64 = rng.random();
        let mut k = 0u64;
        let mut pmf = (-mean).exp();
        let mut cdf = pmf;
        while u > cdf {
            k += 1;
            pmf *= mean / k as f64;
            let next = cdf + pmf;
            if next == cdf {
                break;
            }
            cdf = next;
        }
        k
    } else {
        let dist = Poisson::new(mean).expect("finite positive mean");
        dist.sample(rng) as u64
    }
}
