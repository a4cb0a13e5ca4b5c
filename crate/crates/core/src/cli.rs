//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a `compare` or `cdf` check fails, 2 on a
//! usage or parameter error. Numbers are printed in shortest round-trip form
//! so that a fixed configuration always produces the same bytes.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::analytic::{
    joint_functional, lst_time, lst_weight, mean_nodes_at_crossing, mean_weight_at_crossing,
    pgf_nodes, AnalyticError, CdfOptions, CrossingTimeCdf, TransformQuery,
};
use crate::model::{validate_params, ModelParams, ParamError};
use crate::simulator::{simulate_batch, CrossingRecord, RealizationConfig, SimError, Strategy};
use crate::validate::{
    cdf_validation, paper_table, reproduce_table, table_passes, CdfReport, ComparisonRow,
    RowStatus, ValidateError, CDF_TERMINAL_SCALE, CDF_TERMINAL_TOLERANCE,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Default number of realizations for `simulate` and `compare`.
pub const DEFAULT_RUNS: u64 = 1000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{flag}: {message}")]
    Usage { flag: String, message: String },

    #[error(transparent)]
    Clap(#[from] clap::Error),

    #[error("--{flag}: {source}")]
    Param { flag: String, source: ParamError },

    #[error(transparent)]
    Analytic(#[from] AnalyticError),

    #[error(transparent)]
    Sim(#[from] SimError),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    fn usage(flag: &str, message: impl Into<String>) -> Self {
        CliError::Usage {
            flag: flag.to_string(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Clap(e) => e.exit_code(),
            _ => EXIT_USAGE,
        }
    }
}

impl From<ParamError> for CliError {
    fn from(e: ParamError) -> Self {
        let flag = match e.name() {
            "m_beta" => "m-beta".to_string(),
            other => other.to_string(),
        };
        CliError::Param { flag, source: e }
    }
}

impl From<ValidateError> for CliError {
    fn from(e: ValidateError) -> Self {
        match e {
            ValidateError::Param(e) => e.into(),
            ValidateError::Analytic(e) => e.into(),
            ValidateError::Sim(e) => e.into(),
            ValidateError::InvalidGrid => CliError::usage("--grid", e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "netexit", version, about = "First observed passage analytics and simulation")]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Debug, Subcommand)]
enum CliCommand {
    /// Mean node and weight loss at the first observed passage.
    Analytic {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// PGF, LSTs or the joint functional on a query grid.
    Transform {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, value_enum)]
        kind: Option<TransformKind>,
        /// Node PGF argument: a value or start:stop:step.
        #[arg(long)]
        z: Option<String>,
        /// Weight LST argument: a value or start:stop:step.
        #[arg(long)]
        v: Option<String>,
        /// Time LST argument: a value or start:stop:step.
        #[arg(long)]
        theta: Option<String>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Distribution function of the first observed passage time.
    Cdf {
        #[command(flatten)]
        params: ParamArgs,
        /// Evaluation times as start:stop:step.
        #[arg(long)]
        grid: Option<String>,
        /// Also compare against this many simulated crossing times.
        #[arg(long)]
        runs: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Lift the cap on M for the crossing-time CDF.
        #[arg(long)]
        unsafe_cdf: bool,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Seeded realizations and their summary.
    Simulate {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Analytic means against simulation; the published rows by default.
    Compare {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
}

#[derive(Debug, Default, Args)]
struct ParamArgs {
    /// Attack rate.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Observation rate.
    #[arg(long, allow_negative_numbers = true)]
    mu: Option<f64>,
    /// Geometric parameter of nodes lost per attack.
    #[arg(long, allow_negative_numbers = true)]
    a: Option<f64>,
    /// Exponential rate of each node's weight.
    #[arg(long, allow_negative_numbers = true)]
    xi: Option<f64>,
    /// Node-loss threshold.
    #[arg(long = "M", allow_negative_numbers = true)]
    m: Option<i64>,
    /// Weight-loss threshold.
    #[arg(long = "V", allow_negative_numbers = true)]
    v_threshold: Option<f64>,
    /// Passive-component MGF value.
    #[arg(long, allow_negative_numbers = true)]
    m_beta: Option<f64>,
    /// File of `key = value` lines; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
struct SimArgs {
    #[arg(long)]
    runs: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Default, Args)]
struct OutputArgs {
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Write to this file (atomically) instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads for simulation; output does not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Csv,
    JsonLines,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum TransformKind {
    #[default]
    Pgf,
    LstWeight,
    LstTime,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    EpochFirst,
    AttackFirst,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::EpochFirst => Strategy::EpochFirst,
            StrategyArg::AttackFirst => Strategy::AttackFirst,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Analytic,
    Transform {
        kind: TransformKind,
        z: Vec<f64>,
        v: Vec<f64>,
        theta: Vec<f64>,
    },
    Cdf {
        grid: Vec<f64>,
        opts: CdfOptions,
        /// Simulated sample size and seed for the KS check, if requested.
        simulate: Option<(u64, u64)>,
    },
    Simulate {
        strategy: Strategy,
    },
    Compare,
}

/// A fully validated invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    /// `None` only for `compare` over the built-in table.
    pub params: Option<ModelParams>,
    pub n_runs: u64,
    pub seed: u64,
    pub format: OutputFormat,
    pub output_path: Option<PathBuf>,
    pub threads: Option<usize>,
}

/// Rendered output and whether every check passed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub body: String,
    pub passed: bool,
}

/// `key = value` pairs from a config file. Keys use the flag spelling without
/// dashes (`m_beta` and `m-beta` both work); `#` starts a comment.
#[derive(Debug, Default)]
struct ConfigFile {
    values: BTreeMap<String, String>,
}

const CONFIG_KEYS: &[&str] = &[
    "lambda", "mu", "a", "xi", "M", "V", "m-beta", "runs", "seed", "grid", "z", "v", "theta",
    "kind", "format", "strategy",
];

impl ConfigFile {
    fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::usage(
                    "--config",
                    format!("line {}: expected `key = value`", n + 1),
                ));
            };
            let key = key.trim().replace('_', "-");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(CliError::usage(
                    "--config",
                    format!("line {}: unknown key `{}`", n + 1, key),
                ));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    /// Flag value if present, else the parsed config value.
    fn pick<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| CliError::usage(&format!("--{key}"), format!("cannot parse `{raw}`"))),
        }
    }

    fn pick_string(&self, flag: Option<String>, key: &str) -> Option<String> {
        flag.or_else(|| self.values.get(key).cloned())
    }

    fn pick_enum<T: ValueEnum>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => T::from_str(raw, false)
                .map(Some)
                .map_err(|_| CliError::usage(&format!("--{key}"), format!("invalid value `{raw}`"))),
        }
    }
}

fn load_config(params: &ParamArgs) -> Result<ConfigFile, CliError> {
    match &params.config {
        Some(path) => ConfigFile::load(path),
        None => Ok(ConfigFile::default()),
    }
}

fn resolve_params(args: &ParamArgs, cfg: &ConfigFile) -> Result<ModelParams, CliError> {
    let need = |value: Option<f64>, key: &str| {
        value.ok_or_else(|| CliError::usage(&format!("--{key}"), "required"))
    };
    let lambda = need(cfg.pick(args.lambda, "lambda")?, "lambda")?;
    let mu = need(cfg.pick(args.mu, "mu")?, "mu")?;
    let a = need(cfg.pick(args.a, "a")?, "a")?;
    let xi = need(cfg.pick(args.xi, "xi")?, "xi")?;
    let m = cfg
        .pick(args.m, "M")?
        .ok_or_else(|| CliError::usage("--M", "required"))?;
    let v = need(cfg.pick(args.v_threshold, "V")?, "V")?;
    let m_beta = cfg.pick(args.m_beta, "m-beta")?;
    Ok(validate_params(lambda, mu, a, xi, m, v, m_beta)?)
}

fn any_param_given(args: &ParamArgs, cfg: &ConfigFile) -> bool {
    args.lambda.is_some()
        || args.mu.is_some()
        || args.a.is_some()
        || args.xi.is_some()
        || args.m.is_some()
        || args.v_threshold.is_some()
        || args.m_beta.is_some()
        || ["lambda", "mu", "a", "xi", "M", "V", "m-beta"]
            .iter()
            .any(|k| cfg.values.contains_key(*k))
}

/// Parses a single value or an inclusive `start:stop:step` range.
pub fn parse_axis(raw: &str, flag: &str) -> Result<Vec<f64>, CliError> {
    let bad = |msg: &str| CliError::usage(flag, format!("{msg} in `{raw}`"));
    let parts: Vec<&str> = raw.split(':').collect();
    let nums = parts
        .iter()
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| bad("not a number"))?;
    if nums.iter().any(|x| !x.is_finite()) {
        return Err(bad("non-finite value"));
    }
    match nums[..] {
        [x] => Ok(vec![x]),
        [start, stop, step] => {
            if step <= 0.0 || stop < start {
                return Err(bad("need step > 0 and stop >= start"));
            }
            let span = (stop - start) / step;
            // Absorb rounding so `0:20:0.1` includes 20.
            let n = (span + 1e-9 * span.max(1.0)).floor();
            if n > 1e7 {
                return Err(bad("more than 10^7 points"));
            }
            let n = n as u64;
            Ok((0..=n)
                .map(|i| {
                    let t = start + i as f64 * step;
                    if i == n && (t - stop).abs() <= 1e-9 * step {
                        stop
                    } else {
                        t
                    }
                })
                .collect())
        }
        _ => Err(bad("expected a value or start:stop:step")),
    }
}

fn resolve_output(out: OutputArgs, cfg: &ConfigFile) -> Result<(OutputFormat, Option<PathBuf>, Option<usize>), CliError> {
    let format = cfg.pick_enum(out.format, "format")?.unwrap_or_default();
    if out.threads == Some(0) {
        return Err(CliError::usage("--threads", "must be at least 1"));
    }
    Ok((format, out.output, out.threads))
}

fn require_seed(seed: Option<u64>) -> Result<u64, CliError> {
    seed.ok_or_else(|| CliError::usage("--seed", "required for simulation"))
}

fn resolve_runs(runs: Option<u64>) -> Result<u64, CliError> {
    match runs {
        Some(0) => Err(CliError::usage("--runs", "must be at least 1")),
        Some(n) => Ok(n),
        None => Ok(DEFAULT_RUNS),
    }
}

/// Parses `argv` (program name first) into a validated configuration.
pub fn parse_args<I, T>(argv: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    match cli.command {
        CliCommand::Analytic { params, out } => {
            let cfg = load_config(&params)?;
            let p = resolve_params(&params, &cfg)?;
            let (format, output_path, threads) = resolve_output(out, &cfg)?;
            Ok(RunConfig {
                command: Command::Analytic,
                params: Some(p),
                n_runs: 0,
                seed: 0,
                format,
                output_path,
                threads,
            })
        }
        CliCommand::Transform {
            params,
            kind,
            z,
            v,
            theta,
            out,
        } => {
            let cfg = load_config(&params)?;
            let p = resolve_params(&params, &cfg)?;
            let kind = cfg.pick_enum(kind, "kind")?.unwrap_or_default();
            let axis = |flag: Option<String>, key: &str, default: f64| -> Result<Vec<f64>, CliError> {
                match cfg.pick_string(flag, key) {
                    Some(raw) => parse_axis(&raw, &format!("--{key}")),
                    None => Ok(vec![default]),
                }
            };
            let z = axis(z, "z", 1.0)?;
            let v = axis(v, "v", 0.0)?;
            let theta = axis(theta, "theta", 0.0)?;
            // Domain checks up front so the error names the flag.
            for (values, name) in [(&z, "z"), (&v, "v"), (&theta, "theta")] {
                for &x in values.iter() {
                    let (zz, vv, tt) = match name {
                        "z" => (x, 0.0, 0.0),
                        "v" => (1.0, x, 0.0),
                        _ => (1.0, 0.0, x),
                    };
                    if let Err(e) = TransformQuery::new(zz, vv, tt, 1.0) {
                        return Err(CliError::usage(&format!("--{name}"), e.to_string()));
                    }
                }
            }
            let (format, output_path, threads) = resolve_output(out, &cfg)?;
            Ok(RunConfig {
                command: Command::Transform { kind, z, v, theta },
                params: Some(p),
                n_runs: 0,
                seed: 0,
                format,
                output_path,
                threads,
            })
        }
        CliCommand::Cdf {
            params,
            grid,
            runs,
            seed,
            unsafe_cdf,
            out,
        } => {
            let cfg = load_config(&params)?;
            let p = resolve_params(&params, &cfg)?;
            let raw = cfg
                .pick_string(grid, "grid")
                .ok_or_else(|| CliError::usage("--grid", "required for cdf"))?;
            let grid = parse_axis(&raw, "--grid")?;
            if grid[0] < 0.0 {
                return Err(CliError::usage("--grid", "times must be >= 0"));
            }
            let runs = cfg.pick(runs, "runs")?;
            let seed = cfg.pick(seed, "seed")?;
            let simulate = match runs {
                None => None,
                Some(_) => Some((resolve_runs(runs)?, require_seed(seed)?)),
            };
            let (format, output_path, threads) = resolve_output(out, &cfg)?;
            Ok(RunConfig {
                command: Command::Cdf {
                    grid,
                    opts: CdfOptions {
                        allow_large_threshold: unsafe_cdf,
                    },
                    simulate,
                },
                params: Some(p),
                n_runs: simulate.map_or(0, |s| s.0),
                seed: simulate.map_or(0, |s| s.1),
                format,
                output_path,
                threads,
            })
        }
        CliCommand::Simulate {
            params,
            sim,
            strategy,
            out,
        } => {
            let cfg = load_config(&params)?;
            let p = resolve_params(&params, &cfg)?;
            let n_runs = resolve_runs(cfg.pick(sim.runs, "runs")?)?;
            let seed = require_seed(cfg.pick(sim.seed, "seed")?)?;
            let strategy = cfg
                .pick_enum(strategy, "strategy")?
                .map_or(Strategy::EpochFirst, Strategy::from);
            let (format, output_path, threads) = resolve_output(out, &cfg)?;
            Ok(RunConfig {
                command: Command::Simulate { strategy },
                params: Some(p),
                n_runs,
                seed,
                format,
                output_path,
                threads,
            })
        }
        CliCommand::Compare { params, sim, out } => {
            let cfg = load_config(&params)?;
            let p = if any_param_given(&params, &cfg) {
                Some(resolve_params(&params, &cfg)?)
            } else {
                None
            };
            let n_runs = resolve_runs(cfg.pick(sim.runs, "runs")?)?;
            let seed = require_seed(cfg.pick(sim.seed, "seed")?)?;
            let (format, output_path, threads) = resolve_output(out, &cfg)?;
            Ok(RunConfig {
                command: Command::Compare,
                params: p,
                n_runs,
                seed,
                format,
                output_path,
                threads,
            })
        }
    }
}

/// Shortest round-trip decimal; exponent form outside a readable range.
pub fn fmt_f64(x: f64) -> String {
    let mag = x.abs();
    if x == 0.0 || (1e-5..1e16).contains(&mag) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn params_csv(p: &ModelParams) -> String {
    format!(
        "{},{},{},{},{},{}",
        fmt_f64(p.attack_rate()),
        fmt_f64(p.observation_rate()),
        fmt_f64(p.geom_p()),
        fmt_f64(p.weight_rate()),
        p.node_threshold(),
        fmt_f64(p.weight_threshold())
    )
}

fn params_tuple(p: &ModelParams) -> String {
    format!("({})", params_csv(p).replace(',', ", "))
}

fn params_json(p: &ModelParams) -> serde_json::Value {
    json!({
        "lambda": p.attack_rate(),
        "mu": p.observation_rate(),
        "a": p.geom_p(),
        "xi": p.weight_rate(),
        "M": p.node_threshold(),
        "V": p.weight_threshold(),
        "m_beta": p.passive_mgf(),
    })
}

fn push_json(buf: &mut String, value: &impl Serialize) {
    // Serializing plain numbers and strings cannot fail.
    buf.push_str(&serde_json::to_string(value).expect("serializable"));
    buf.push('\n');
}

fn render_analytic(p: &ModelParams, format: OutputFormat) -> String {
    let n = mean_nodes_at_crossing(p);
    let w = mean_weight_at_crossing(p);
    let mut out = String::new();
    match format {
        OutputFormat::Csv => {
            out.push_str("lambda,mu,a,xi,M,V,E_N,E_W\n");
            let _ = writeln!(out, "{},{},{}", params_csv(p), fmt_f64(n), fmt_f64(w));
        }
        OutputFormat::JsonLines => push_json(
            &mut out,
            &json!({"params": params_json(p), "mean_nodes": n, "mean_weight": w}),
        ),
        OutputFormat::Text => {
            let _ = writeln!(out, "params {}", params_tuple(p));
            let _ = writeln!(out, "E[N_rho] = {} ({n:.2})", fmt_f64(n));
            let _ = writeln!(out, "E[W_rho] = {} ({w:.2})", fmt_f64(w));
        }
    }
    out
}

fn render_transform(
    p: &ModelParams,
    kind: TransformKind,
    z: &[f64],
    v: &[f64],
    theta: &[f64],
    format: OutputFormat,
) -> Result<String, CliError> {
    // (column name, argument values, value) per point
    let (column, points): (&str, Vec<(Vec<f64>, f64)>) = match kind {
        TransformKind::Pgf => (
            "z",
            z.iter().map(|&x| Ok((vec![x], pgf_nodes(x, p)?))).collect::<Result<_, CliError>>()?,
        ),
        TransformKind::LstWeight => (
            "v",
            v.iter().map(|&x| Ok((vec![x], lst_weight(x, p)?))).collect::<Result<_, CliError>>()?,
        ),
        TransformKind::LstTime => (
            "theta",
            theta.iter().map(|&x| Ok((vec![x], lst_time(x, p)?))).collect::<Result<_, CliError>>()?,
        ),
        TransformKind::Joint => {
            let mut pts = Vec::with_capacity(z.len() * v.len() * theta.len());
            for &zz in z {
                for &vv in v {
                    for &tt in theta {
                        let q = TransformQuery::new(zz, vv, tt, p.passive_mgf())?;
                        pts.push((vec![zz, vv, tt, p.passive_mgf()], joint_functional(&q, p)));
                    }
                }
            }
            ("z,v,theta,m_beta", pts)
        }
    };
    let names: Vec<&str> = column.split(',').collect();
    let mut out = String::new();
    match format {
        OutputFormat::Csv => {
            let _ = writeln!(out, "{column},value");
            for (args, value) in &points {
                let cols: Vec<String> = args.iter().map(|x| fmt_f64(*x)).collect();
                let _ = writeln!(out, "{},{}", cols.join(","), fmt_f64(*value));
            }
        }
        OutputFormat::JsonLines => {
            for (args, value) in &points {
                let mut obj = serde_json::Map::new();
                for (name, x) in names.iter().zip(args) {
                    obj.insert((*name).to_string(), json!(x));
                }
                obj.insert("value".into(), json!(value));
                push_json(&mut out, &obj);
            }
        }
        OutputFormat::Text => {
            let _ = writeln!(out, "params {}", params_tuple(p));
            for (args, value) in &points {
                let cols: Vec<String> = names
                    .iter()
                    .zip(args)
                    .map(|(n, x)| format!("{n}={}", fmt_f64(*x)))
                    .collect();
                let _ = writeln!(out, "{}  value={}", cols.join(" "), fmt_f64(*value));
            }
        }
    }
    Ok(out)
}

/// Analytic CDF checks that need no simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct CurveChecks {
    starts_at_zero: Option<bool>,
    monotone: bool,
    terminal_time: f64,
    terminal_value: f64,
}

impl CurveChecks {
    fn passes(&self) -> bool {
        self.starts_at_zero != Some(false)
            && self.monotone
            && (1.0 - self.terminal_value).abs() < CDF_TERMINAL_TOLERANCE
    }
}

fn render_cdf(
    p: &ModelParams,
    grid: &[f64],
    opts: CdfOptions,
    simulate: Option<(u64, u64)>,
    format: OutputFormat,
) -> Result<Outcome, CliError> {
    let f = CrossingTimeCdf::new(p, opts)?;
    let values = grid.iter().map(|&t| f.eval(t)).collect::<Result<Vec<_>, _>>()?;
    let terminal_time = CDF_TERMINAL_SCALE / p.attack_rate().min(p.observation_rate());
    let checks = CurveChecks {
        starts_at_zero: grid
            .iter()
            .position(|&t| t == 0.0)
            .map(|i| values[i] == 0.0),
        monotone: values.windows(2).all(|w| w[0] <= w[1]),
        terminal_time,
        terminal_value: f.eval(terminal_time)?,
    };
    let report: Option<CdfReport> = match simulate {
        Some((n, seed)) => Some(cdf_validation(p, n, grid, seed, opts)?),
        None => None,
    };
    let passed = checks.passes() && report.is_none_or(|r| r.passes());

    let mut out = String::new();
    let mut summary = vec![
        format!("monotone={}", checks.monotone),
        format!("terminal_time={}", fmt_f64(terminal_time)),
        format!("terminal_F={}", fmt_f64(checks.terminal_value)),
    ];
    if let Some(z) = checks.starts_at_zero {
        summary.insert(0, format!("F(0)=0:{z}"));
    }
    if let Some(r) = &report {
        summary.push(format!("runs={}", r.n_runs));
        summary.push(format!("ks_distance={}", fmt_f64(r.ks_distance)));
        summary.push(format!("grid_distance={}", fmt_f64(r.grid_distance)));
    }
    summary.push(format!("pass={passed}"));
    match format {
        OutputFormat::Csv | OutputFormat::Text => {
            if format == OutputFormat::Text {
                let _ = writeln!(out, "# params {}", params_tuple(p));
            }
            out.push_str("theta,F\n");
            for (t, v) in grid.iter().zip(&values) {
                let _ = writeln!(out, "{},{}", fmt_f64(*t), fmt_f64(*v));
            }
            for line in &summary {
                let _ = writeln!(out, "# {line}");
            }
        }
        OutputFormat::JsonLines => {
            for (t, v) in grid.iter().zip(&values) {
                push_json(&mut out, &json!({"theta": t, "F": v}));
            }
            push_json(
                &mut out,
                &json!({"summary": {"checks": checks, "simulation": report, "pass": passed}}),
            );
        }
    }
    Ok(Outcome { body: out, passed })
}

fn record_csv(index: usize, r: &CrossingRecord) -> String {
    format!(
        "{index},{},{},{},{},{},{},{}",
        r.rho,
        fmt_f64(r.tau_pre),
        fmt_f64(r.tau_post),
        r.nodes_pre,
        r.nodes_post,
        fmt_f64(r.weight_pre),
        fmt_f64(r.weight_post)
    )
}

fn render_simulate(cfg: &RealizationConfig, n: u64, format: OutputFormat) -> Result<String, CliError> {
    let (stats, records) = simulate_batch(cfg, n)?;
    let mut out = String::new();
    let summary = [
        ("count", stats.count.to_string()),
        ("mean_nodes", fmt_f64(stats.mean_nodes)),
        ("se_nodes", fmt_f64(stats.se_nodes)),
        ("mean_weight", fmt_f64(stats.mean_weight)),
        ("se_weight", fmt_f64(stats.se_weight)),
        ("mean_tau", fmt_f64(stats.mean_tau)),
        ("se_tau", fmt_f64(stats.se_tau)),
    ];
    match format {
        OutputFormat::Csv | OutputFormat::Text => {
            if format == OutputFormat::Text {
                let _ = writeln!(
                    out,
                    "# params {} seed {} strategy {:?}",
                    params_tuple(&cfg.params),
                    cfg.master_seed,
                    cfg.strategy
                );
            }
            out.push_str("index,rho,tau_pre,tau_post,nodes_pre,nodes_post,weight_pre,weight_post\n");
            for (i, r) in records.iter().enumerate() {
                out.push_str(&record_csv(i, r));
                out.push('\n');
            }
            for (k, v) in &summary {
                let _ = writeln!(out, "# {k}={v}");
            }
        }
        OutputFormat::JsonLines => {
            for (i, r) in records.iter().enumerate() {
                push_json(&mut out, &json!({"index": i, "record": r}));
            }
            push_json(&mut out, &json!({"summary": stats}));
        }
    }
    Ok(out)
}

fn render_compare(
    rows: &[(Option<usize>, ModelParams)],
    n_runs: u64,
    seed: u64,
    skipped: &[(usize, ModelParams, f64, f64)],
    format: OutputFormat,
) -> Result<Outcome, CliError> {
    let params: Vec<ModelParams> = rows.iter().map(|r| r.1).collect();
    let result: Vec<ComparisonRow> = reproduce_table(&params, n_runs, seed)?;
    let passed = table_passes(&result);
    let n_pass = result.iter().filter(|r| r.pass).count();
    let mut out = String::new();
    match format {
        OutputFormat::Csv => {
            out.push_str("lambda,mu,a,xi,M,V,analytic_N,sample_N,err_N,analytic_W,sample_W,err_W,pass\n");
            for r in &result {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    params_csv(&r.params),
                    fmt_f64(r.analytic_nodes),
                    fmt_f64(r.sample_nodes),
                    fmt_f64(r.error_nodes),
                    fmt_f64(r.analytic_weight),
                    fmt_f64(r.sample_weight),
                    fmt_f64(r.error_weight),
                    r.pass
                );
            }
        }
        OutputFormat::JsonLines => {
            for ((row, _), r) in rows.iter().zip(&result) {
                push_json(&mut out, &json!({"row": row, "comparison": r}));
            }
            for (row, p, n, w) in skipped {
                push_json(
                    &mut out,
                    &json!({
                        "row": row,
                        "params": params_json(p),
                        "published_nodes": n,
                        "published_weight": w,
                        "status": RowStatus::ParameterDuplicate.label(),
                    }),
                );
            }
            push_json(
                &mut out,
                &json!({"summary": {"rows": result.len(), "passed": n_pass, "runs": n_runs, "seed": seed, "pass": passed}}),
            );
            return Ok(Outcome { body: out, passed });
        }
        OutputFormat::Text => {
            let _ = writeln!(
                out,
                "{:>4} {:<34} {:>10} {:>10} {:>7} {:>10} {:>10} {:>7}  pass",
                "row", "(lambda, mu, a, xi, M, V)", "E[N]", "sample", "err", "E[W]", "sample", "err"
            );
            for ((row, _), r) in rows.iter().zip(&result) {
                let label = row.map_or("-".to_string(), |i| i.to_string());
                let _ = writeln!(
                    out,
                    "{label:>4} {:<34} {:>10.2} {:>10.2} {:>7.2} {:>10.2} {:>10.2} {:>7.2}  {}",
                    params_tuple(&r.params),
                    r.analytic_nodes,
                    r.sample_nodes,
                    r.error_nodes,
                    r.analytic_weight,
                    r.sample_weight,
                    r.error_weight,
                    r.pass
                );
            }
        }
    }
    for (row, p, n, w) in skipped {
        let _ = writeln!(
            out,
            "# row {row} {}: {}; published E[N]={} E[W]={}; excluded",
            params_tuple(p),
            RowStatus::ParameterDuplicate.label(),
            fmt_f64(*n),
            fmt_f64(*w)
        );
    }
    let _ = writeln!(
        out,
        "# runs={n_runs} seed={seed} passed={n_pass}/{} pass={passed}",
        result.len()
    );
    Ok(Outcome { body: out, passed })
}

/// Executes a configuration and renders its output.
pub fn run(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let go = || -> Result<Outcome, CliError> {
        let ok = |body: String| Outcome { body, passed: true };
        match (&cfg.command, cfg.params) {
            (Command::Analytic, Some(p)) => Ok(ok(render_analytic(&p, cfg.format))),
            (Command::Transform { kind, z, v, theta }, Some(p)) => {
                Ok(ok(render_transform(&p, *kind, z, v, theta, cfg.format)?))
            }
            (Command::Cdf { grid, opts, simulate }, Some(p)) => {
                render_cdf(&p, grid, *opts, *simulate, cfg.format)
            }
            (Command::Simulate { strategy }, Some(p)) => {
                let rc = RealizationConfig::new(p, cfg.seed).with_strategy(*strategy);
                Ok(ok(render_simulate(&rc, cfg.n_runs, cfg.format)?))
            }
            (Command::Compare, Some(p)) => render_compare(&[(None, p)], cfg.n_runs, cfg.seed, &[], cfg.format),
            (Command::Compare, None) => {
                let mut rows = Vec::new();
                let mut skipped = Vec::new();
                for r in paper_table() {
                    match r.status {
                        RowStatus::Reconstructible => rows.push((Some(r.row), r.params)),
                        RowStatus::ParameterDuplicate => skipped.push((r.row, r.params, r.nodes, r.weight)),
                    }
                }
                render_compare(&rows, cfg.n_runs, cfg.seed, &skipped, cfg.format)
            }
            (_, None) => Err(CliError::usage("--lambda", "model parameters are required")),
        }
    };
    match cfg.threads {
        None => go(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::usage("--threads", e.to_string()))?
            .install(go),
    }
}

/// Writes `body` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, body: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(body.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Full pipeline; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match parse_args(argv) {
        Ok(cfg) => cfg,
        Err(CliError::Clap(e)) => {
            let _ = e.print();
            return e.exit_code();
        }
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let outcome = match run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let written = match &cfg.output_path {
        Some(path) => write_atomic(path, &outcome.body).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        }),
        None => std::io::stdout()
            .lock()
            .write_all(outcome.body.as_bytes())
            .map_err(|source| CliError::Io {
                path: "stdout".into(),
                source,
            }),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    if outcome.passed {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &str) -> Result<RunConfig, CliError> {
        parse_args(std::iter::once("netexit").chain(args.split_whitespace()))
    }

    const ROW2: &str = "--lambda 1 --mu 2 --a 0.5 --xi 1 --M 1000 --V 1000";

    #[test]
    fn analytic_command() {
        let cfg = parse(&format!("analytic {ROW2}")).unwrap();
        assert_eq!(cfg.command, Command::Analytic);
        assert_eq!(cfg.params.unwrap().node_threshold(), 1000);
        assert_eq!(cfg.format, OutputFormat::Csv);
    }

    #[test]
    fn cdf_command_grid() {
        let cfg = parse("cdf --lambda 1 --mu 2 --a 0.5 --xi 1 --M 5 --V 5 --grid 0:20:0.1").unwrap();
        let Command::Cdf { grid, simulate, .. } = cfg.command else {
            panic!("wrong command")
        };
        assert_eq!(grid.len(), 201);
        assert_eq!((grid[0], grid[200]), (0.0, 20.0));
        assert_eq!(simulate, None);
    }

    #[test]
    fn bad_threshold_names_flag() {
        let err = parse("simulate --lambda 1 --mu 2 --a 0.5 --xi 1 --M 0 --V 10 --seed 1").unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
        assert!(err.to_string().contains("--M"), "{err}");
        let err = parse("analytic --lambda 1 --mu 2 --a 0.5 --xi 1 --M 3 --V 10 --m-beta 2").unwrap_err();
        assert!(err.to_string().contains("--m-beta"), "{err}");
    }

    #[test]
    fn usage_errors() {
        for (args, flag) in [
            ("simulate --lambda 1 --mu 2 --a 0.5 --xi 1 --M 3 --V 10", "--seed"),
            ("compare --runs 10", "--seed"),
            ("cdf --lambda 1 --mu 2 --a 0.5 --xi 1 --M 3 --V 10", "--grid"),
            ("cdf --lambda 1 --mu 2 --a 0.5 --xi 1 --M 3 --V 10 --grid 5:1:1", "--grid"),
            ("analytic --mu 2 --a 0.5 --xi 1 --M 3 --V 10", "--lambda"),
            ("transform --lambda 1 --mu 2 --a 0.5 --xi 1 --M 3 --V 10 --z 1.5", "--z"),
            ("simulate --lambda 1 --mu 2 --a 0.5 --xi 1 --M 3 --V 10 --seed 1 --runs 0", "--runs"),
        ] {
            let err = parse(args).unwrap_err();
            assert_eq!(err.exit_code(), EXIT_USAGE, "{args}");
            assert!(err.to_string().contains(flag), "{args}: {err}");
        }
        let err = parse(&format!("analytic {ROW2} --bogus 1")).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
    }

    #[test]
    fn axis_parsing() {
        assert_eq!(parse_axis("0.5", "--z").unwrap(), vec![0.5]);
        assert_eq!(parse_axis("0:1:0.25", "--z").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_axis("0:1:0.3", "--z").unwrap().len(), 4);
        assert!(parse_axis("0:1", "--z").is_err());
        assert!(parse_axis("0:1:0", "--z").is_err());
        assert!(parse_axis("x", "--z").is_err());
    }

    #[test]
    fn shortest_round_trip() {
        for x in [0.1, 989.0811834070983, 1.0 / 3.0, 2.5e-9, 6.02e23, 0.0, 1000.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(1000.0), "1000");
        assert_eq!(fmt_f64(0.1), "0.1");
    }

    #[test]
    fn config_file_with_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("row.conf");
        std::fs::write(
            &path,
            "# published row 1\nlambda = 0.2\nmu = 2\na = 0.5\nxi = 1\nM = 1000\nV = 1000\nseed = 4\n",
        )
        .unwrap();
        let cfg = parse(&format!("simulate --config {} --lambda 3", path.display())).unwrap();
        let p = cfg.params.unwrap();
        assert_eq!(p.attack_rate(), 3.0);
        assert_eq!(p.observation_rate(), 2.0);
        assert_eq!(cfg.seed, 4);

        std::fs::write(&path, "lambda = 1\nfoo = 2\n").unwrap();
        let err = parse(&format!("analytic --config {}", path.display())).unwrap_err();
        assert!(err.to_string().contains("foo"));
    }

    #[test]
    fn analytic_row_one_shows_value_twice() {
        let cfg = parse("analytic --lambda .2 --mu 2 --a .5 --xi 1 --M 1000 --V 1000").unwrap();
        let out = run(&cfg).unwrap();
        let line = out.body.lines().nth(1).unwrap();
        assert_eq!(line.matches("989.08").count(), 2, "{line}");
        let cfg = parse("analytic --lambda .2 --mu 2 --a .5 --xi 1 --M 1000 --V 1000 --format text").unwrap();
        assert!(run(&cfg).unwrap().body.contains("(989.08)"));
    }

    #[test]
    fn transform_identities() {
        for kind in ["pgf", "lst-weight", "lst-time", "joint"] {
            let cfg = parse(&format!("transform {ROW2} --kind {kind}")).unwrap();
            let body = run(&cfg).unwrap().body;
            let value: f64 = body.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
            assert!((value - 1.0).abs() < 1e-12, "{kind}: {body}");
        }
        let cfg = parse(&format!("transform {ROW2} --kind joint --z 0:1:0.5 --v 0:1:1")).unwrap();
        assert_eq!(run(&cfg).unwrap().body.lines().count(), 1 + 3 * 2);
    }

    #[test]
    fn cdf_checks_and_large_threshold_guard() {
        let cfg = parse("cdf --lambda 1 --mu 2 --a 0.5 --xi 1 --M 5 --V 5 --grid 0:20:1").unwrap();
        let out = run(&cfg).unwrap();
        assert!(out.passed);
        assert!(out.body.starts_with("theta,F\n0,0\n"));
        let cfg = parse(&format!("cdf {ROW2} --grid 0:5:1")).unwrap();
        assert_eq!(run(&cfg).unwrap_err().exit_code(), EXIT_USAGE);
    }

    #[test]
    fn simulate_is_deterministic_across_threads() {
        let base = "simulate --lambda 1 --mu 2 --a 0.5 --xi 1 --M 5 --V 5 --seed 7 --runs 200";
        let one = run(&parse(&format!("{base} --threads 1")).unwrap()).unwrap();
        let four = run(&parse(&format!("{base} --threads 4")).unwrap()).unwrap();
        assert_eq!(one, four);
        assert!(one.body.starts_with("index,rho,tau_pre,tau_post,nodes_pre,nodes_post,weight_pre,weight_post\n"));
        assert!(one.body.contains("# count=200\n"));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        std::fs::write(&path, "old").unwrap();
        write_atomic(&path, "new\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "new\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
