//! Seeded Monte Carlo realizations of the observed attack process, run until
//! the first observation epoch at which `N >= M` or `W >= V`.
//!
//! Each realization owns a ChaCha8 stream selected by `(master_seed, index)`,
//! so a batch gives the same records whatever the thread count or order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{sample_exponential, sample_geometric, sample_poisson, ModelParams};

/// Hard cap on observation epochs per realization.
pub const MAX_EPOCHS: u64 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("no exit after {epochs} observation epochs")]
    NonTermination { epochs: u64 },

    #[error("empty sample")]
    EmptySample,
}

/// Order in which randomness is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Strategy {
    /// Draw the epoch length, then the Poisson number of attacks inside it.
    #[default]
    EpochFirst,
    /// Run the attack stream on its own clock and read it off at each epoch.
    AttackFirst,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealizationConfig {
    pub params: ModelParams,
    pub master_seed: u64,
    pub strategy: Strategy,
}

impl RealizationConfig {
    pub fn new(params: ModelParams, master_seed: u64) -> Self {
        Self {
            params,
            master_seed,
            strategy: Strategy::EpochFirst,
        }
    }

    pub fn with_strategy(self, strategy: Strategy) -> Self {
        Self { strategy, ..self }
    }
}

/// State at the last observation inside the rectangle and at the exit epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossingRecord {
    pub rho: u64,
    pub tau_pre: f64,
    pub tau_post: f64,
    pub nodes_pre: u64,
    pub nodes_post: u64,
    pub weight_pre: f64,
    pub weight_post: f64,
}

/// Attacks and node weights drawn in the exit epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochTrace {
    pub nodes_per_attack: Vec<u64>,
    pub node_weights: Vec<f64>,
}

/// splitmix64 finalizer, used to derive independent master seeds.
pub fn derive_seed(master_seed: u64, salt: u64) -> u64 {
    let mut z = master_seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stream of realization `index`.
pub fn realization_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

struct Damage<'a> {
    params: &'a ModelParams,
    nodes: u64,
    weight: f64,
}

impl Damage<'_> {
    fn strike(&mut self, rng: &mut ChaCha8Rng, trace: &mut Option<&mut EpochTrace>) {
        let lost = sample_geometric(self.params.geom_p(), rng);
        self.nodes += lost;
        if let Some(t) = trace.as_deref_mut() {
            t.nodes_per_attack.push(lost);
        }
        for _ in 0..lost {
            let w = sample_exponential(self.params.weight_rate(), rng);
            self.weight += w;
            if let Some(t) = trace.as_deref_mut() {
                t.node_weights.push(w);
            }
        }
    }

    fn exited(&self) -> bool {
        self.nodes >= self.params.node_threshold() || self.weight >= self.params.weight_threshold()
    }
}

fn run(
    cfg: &RealizationConfig,
    index: u64,
    max_epochs: u64,
    mut trace: Option<&mut EpochTrace>,
) -> Result<CrossingRecord, SimError> {
    let p = &cfg.params;
    let mut rng = realization_rng(cfg.master_seed, index);
    let mut state = Damage {
        params: p,
        nodes: 0,
        weight: 0.0,
    };
    let mut tau = 0.0;
    // AttackFirst only: absolute time of the next attack not yet observed.
    let mut next_attack = match cfg.strategy {
        Strategy::EpochFirst => f64::NAN,
        Strategy::AttackFirst => sample_exponential(p.attack_rate(), &mut rng),
    };
    for rho in 1..=max_epochs {
        if let Some(t) = trace.as_deref_mut() {
            t.nodes_per_attack.clear();
            t.node_weights.clear();
        }
        let (nodes_pre, weight_pre, tau_pre) = (state.nodes, state.weight, tau);
        let gap = sample_exponential(p.observation_rate(), &mut rng);
        tau += gap;
        match cfg.strategy {
            Strategy::EpochFirst => {
                let attacks = sample_poisson(p.attack_rate() * gap, &mut rng);
                for _ in 0..attacks {
                    state.strike(&mut rng, &mut trace);
                }
            }
            Strategy::AttackFirst => {
                while next_attack <= tau {
                    state.strike(&mut rng, &mut trace);
                    next_attack += sample_exponential(p.attack_rate(), &mut rng);
                }
            }
        }
        if state.exited() {
            return Ok(CrossingRecord {
                rho,
                tau_pre,
                tau_post: tau,
                nodes_pre,
                nodes_post: state.nodes,
                weight_pre,
                weight_post: state.weight,
            });
        }
    }
    Err(SimError::NonTermination { epochs: max_epochs })
}

/// One realization, fully determined by `(cfg.master_seed, index, cfg.strategy)`.
pub fn simulate_realization(cfg: &RealizationConfig, index: u64) -> Result<CrossingRecord, SimError> {
    run(cfg, index, MAX_EPOCHS, None)
}

/// Same as [`simulate_realization`], also returning the exit epoch's draws.
pub fn simulate_realization_traced(
    cfg: &RealizationConfig,
    index: u64,
) -> Result<(CrossingRecord, EpochTrace), SimError> {
    let mut trace = EpochTrace::default();
    let record = run(cfg, index, MAX_EPOCHS, Some(&mut trace))?;
    Ok((record, trace))
}

/// Means and standard errors (unbiased variance) of the crossing values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryStats {
    pub count: u64,
    pub mean_nodes: f64,
    pub mean_weight: f64,
    pub mean_tau: f64,
    pub se_nodes: f64,
    pub se_weight: f64,
    pub se_tau: f64,
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1) as f64 / n as f64).sqrt())
}

impl SummaryStats {
    pub fn from_records(records: &[CrossingRecord]) -> Result<Self, SimError> {
        let n = records.len();
        if n == 0 {
            return Err(SimError::EmptySample);
        }
        let (mean_nodes, se_nodes) = mean_and_se(records.iter().map(|r| r.nodes_post as f64), n);
        let (mean_weight, se_weight) = mean_and_se(records.iter().map(|r| r.weight_post), n);
        let (mean_tau, se_tau) = mean_and_se(records.iter().map(|r| r.tau_post), n);
        Ok(Self {
            count: n as u64,
            mean_nodes,
            mean_weight,
            mean_tau,
            se_nodes,
            se_weight,
            se_tau,
        })
    }
}

/// Realizations `0..n`, generated in parallel and returned in index order.
pub fn simulate_batch(
    cfg: &RealizationConfig,
    n: u64,
) -> Result<(SummaryStats, Vec<CrossingRecord>), SimError> {
    if n == 0 {
        return Err(SimError::EmptySample);
    }
    let records = (0..n)
        .into_par_iter()
        .map(|i| simulate_realization(cfg, i))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = SummaryStats::from_records(&records)?;
    Ok((summary, records))
}

/// Right-continuous empirical distribution function.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64]) -> Result<Self, SimError> {
        if samples.is_empty() {
            return Err(SimError::EmptySample);
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn support(&self) -> &[f64] {
        &self.sorted
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|s| *s <= x) as f64 / self.sorted.len() as f64
    }

    /// `sup_x |F_n(x) - cdf(x)|` for a continuous `cdf`, checked on both
    /// sides of every jump.
    pub fn ks_distance(&self, cdf: impl Fn(f64) -> f64) -> f64 {
        let n = self.sorted.len() as f64;
        let mut sup = 0.0f64;
        let mut i = 0;
        while i < self.sorted.len() {
            let x = self.sorted[i];
            let mut j = i;
            while j < self.sorted.len() && self.sorted[j] == x {
                j += 1;
            }
            let f = cdf(x);
            sup = sup.max((f - i as f64 / n).abs()).max((j as f64 / n - f).abs());
            i = j;
        }
        sup
    }
}

/// Two-sample Kolmogorov-Smirnov statistic; ties are handled exactly.
pub fn ks_two_sample(first: &EmpiricalCdf, second: &EmpiricalCdf) -> f64 {
    let (xs, ys) = (first.support(), second.support());
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut sup = 0.0f64;
    while i < xs.len() || j < ys.len() {
        let next = match (xs.get(i), ys.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < xs.len() && xs[i] <= next {
            i += 1;
        }
        while j < ys.len() && ys[j] <= next {
            j += 1;
        }
        sup = sup.max((i as f64 / nx - j as f64 / ny).abs());
    }
    sup
}

/// Asymptotic two-sample KS critical value at level 1%.
pub fn ks_critical_1pct(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    1.628 * ((n + m) / (n * m)).sqrt()
}

/// KS statistics between the two generation strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrategyComparison {
    pub n: u64,
    pub ks_nodes: f64,
    pub ks_weight: f64,
    pub ks_tau: f64,
    pub critical_1pct: f64,
}

impl StrategyComparison {
    pub fn passes(&self) -> bool {
        self.ks_nodes < self.critical_1pct
            && self.ks_weight < self.critical_1pct
            && self.ks_tau < self.critical_1pct
    }
}

/// Runs `n` realizations with each strategy and compares the crossing values.
///
/// The attack-first batch uses a seed derived from `seed`, so the two samples
/// are independent.
pub fn strategy_equivalence_check(
    p: &ModelParams,
    n: u64,
    seed: u64,
) -> Result<StrategyComparison, SimError> {
    let epoch = RealizationConfig::new(*p, seed);
    let attack = RealizationConfig::new(*p, derive_seed(seed, 1)).with_strategy(Strategy::AttackFirst);
    let (_, a) = simulate_batch(&epoch, n)?;
    let (_, b) = simulate_batch(&attack, n)?;
    let ks = |f: fn(&CrossingRecord) -> f64| -> Result<f64, SimError> {
        let x: Vec<f64> = a.iter().map(f).collect();
        let y: Vec<f64> = b.iter().map(f).collect();
        Ok(ks_two_sample(&EmpiricalCdf::new(&x)?, &EmpiricalCdf::new(&y)?))
    };
    Ok(StrategyComparison {
        n,
        ks_nodes: ks(|r| r.nodes_post as f64)?,
        ks_weight: ks(|r| r.weight_post)?,
        ks_tau: ks(|r| r.tau_post)?,
        critical_1pct: ks_critical_1pct(n as usize, n as usize),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambda: f64, mu: f64, a: f64, xi: f64, m: i64, v: f64) -> ModelParams {
        ModelParams::new(lambda, mu, a, xi, m, v).unwrap()
    }

    fn check_record(r: &CrossingRecord, p: &ModelParams) {
        assert!(r.rho >= 1);
        assert!(r.nodes_pre < p.node_threshold() && r.weight_pre < p.weight_threshold());
        assert!(r.nodes_post >= p.node_threshold() || r.weight_post >= p.weight_threshold());
        assert!(r.nodes_post > r.nodes_pre);
        assert!(r.weight_post > r.weight_pre);
        assert!(r.tau_post > r.tau_pre && r.tau_pre >= 0.0);
    }

    #[test]
    fn records_satisfy_exit_invariants() {
        let p = params(1.0, 2.0, 0.5, 1.0, 5, 5.0);
        for strategy in [Strategy::EpochFirst, Strategy::AttackFirst] {
            let cfg = RealizationConfig::new(p, 99).with_strategy(strategy);
            for i in 0..2000 {
                check_record(&simulate_realization(&cfg, i).unwrap(), &p);
            }
        }
    }

    #[test]
    fn single_node_threshold_exits_on_first_attack() {
        let p = params(0.3, 2.0, 0.5, 1.0, 1, 1e12);
        let cfg = RealizationConfig::new(p, 5);
        for i in 0..500 {
            let r = simulate_realization(&cfg, i).unwrap();
            assert_eq!(r.nodes_pre, 0);
            assert!(r.nodes_post >= 1);
            assert_eq!(r.weight_pre, 0.0);
        }
    }

    #[test]
    fn exit_epoch_weight_comes_from_its_nodes() {
        let p = params(1.0, 0.5, 0.3, 2.0, 20, 8.0);
        for strategy in [Strategy::EpochFirst, Strategy::AttackFirst] {
            let cfg = RealizationConfig::new(p, 3).with_strategy(strategy);
            for i in 0..300 {
                let (r, t) = simulate_realization_traced(&cfg, i).unwrap();
                assert_eq!(simulate_realization(&cfg, i).unwrap(), r);
                assert_eq!(t.node_weights.len() as u64, r.nodes_post - r.nodes_pre);
                assert_eq!(t.nodes_per_attack.iter().sum::<u64>(), r.nodes_post - r.nodes_pre);
                let added: f64 = t.node_weights.iter().sum();
                assert!((added - (r.weight_post - r.weight_pre)).abs() < 1e-9 * r.weight_post);
            }
        }
    }

    #[test]
    fn epoch_cap_raises_non_termination() {
        let p = params(1e-6, 1.0, 0.5, 1.0, 10, 10.0);
        let cfg = RealizationConfig::new(p, 1);
        assert_eq!(
            run(&cfg, 0, 100, None),
            Err(SimError::NonTermination { epochs: 100 })
        );
    }

    #[test]
    fn batch_is_deterministic_and_order_free() {
        let p = params(1.0, 2.0, 0.5, 1.0, 30, 25.0);
        let cfg = RealizationConfig::new(p, 2024);
        let (s1, r1) = simulate_batch(&cfg, 500).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (s2, r2) = pool.install(|| simulate_batch(&cfg, 500)).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(s1, s2);
        // Realization 17 does not depend on the batch it was run in.
        assert_eq!(r1[17], simulate_realization(&cfg, 17).unwrap());
        assert!(simulate_batch(&cfg, 0).is_err());
    }

    #[test]
    fn single_run_summary() {
        let p = params(1.0, 2.0, 0.5, 1.0, 5, 5.0);
        let (s, r) = simulate_batch(&RealizationConfig::new(p, 7), 1).unwrap();
        assert_eq!(s.count, 1);
        assert_eq!(s.mean_nodes, r[0].nodes_post as f64);
        assert_eq!(s.mean_weight, r[0].weight_post);
        assert_eq!(s.mean_tau, r[0].tau_post);
        assert_eq!((s.se_nodes, s.se_weight, s.se_tau), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empirical_cdf_definition() {
        let e = EmpiricalCdf::new(&[3.0, 1.0, 2.0]).unwrap();
        assert!((e.eval(2.0) - 2.0 / 3.0).abs() < 1e-15);
        let e = EmpiricalCdf::new(&[5.0]).unwrap();
        assert_eq!(e.eval(4.9), 0.0);
        assert_eq!(e.eval(5.0), 1.0);
        assert_eq!(EmpiricalCdf::new(&[]), Err(SimError::EmptySample));
    }

    #[test]
    fn ks_statistics() {
        let a = EmpiricalCdf::new(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        let b = EmpiricalCdf::new(&[5.0, 6.0]).unwrap();
        assert_eq!(ks_two_sample(&a, &b), 1.0);
        // Ties across samples: F_a(2) = 0.5 while F_c(2) = 1.
        let c = EmpiricalCdf::new(&[2.0, 2.0]).unwrap();
        assert_eq!(ks_two_sample(&a, &c), 0.5);
        // Uniform cdf on [0, 4] against {1, 2, 3, 4}: sup is 0.25.
        assert!((a.ks_distance(|x| (x / 4.0).clamp(0.0, 1.0)) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn degenerate_strategies_agree() {
        let p = params(1.0, 2.0, 1.0, 1.0, 1, 1e6);
        let cmp = strategy_equivalence_check(&p, 20_000, 8).unwrap();
        assert!(cmp.ks_weight.max(cmp.ks_nodes).max(cmp.ks_tau) < cmp.critical_1pct);
    }
}
