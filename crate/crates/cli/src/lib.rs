//! Batch front end: run configuration, the seeded simulation pipeline and
//! output staging. The binary in `main.rs` only parses flags and dispatches.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use sysrisk_core::clearing::{brute_force_oracle, gamma_list_serde, solve, FixedPointSelection, Objective};
use sysrisk_core::csrm::{check_axiom, Axiom, PropertyReport};
use sysrisk_core::metrics::{coes_from_values, covar_from_values, dip, rank, ses_j, MetricResult};
use sysrisk_core::network_sim::{gen_network_with, gen_shocks, run_mc, ExposureLaw, McResult, McSummary, Network, NetworkParams, ScenarioSet, RNG_ID};
use sysrisk_core::risk_measures::empirical_var;
use sysrisk_core::{ClearingProblem, ClearingSolution, Csrm};

/// Failure of a command, carrying its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub kind: String,
    pub message: String,
    pub code: i32,
    pub details: Option<Value>,
}

impl CliError {
    pub fn input(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
            code: 1,
            details: None,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({ "error": { "kind": self.kind, "message": self.message } });
        if let Some(d) = &self.details {
            v["error"]["details"] = d.clone();
        }
        v
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<sysrisk_core::Error> for CliError {
    fn from(e: sysrisk_core::Error) -> Self {
        let debug = format!("{e:?}");
        let kind = debug.split(['(', ' ', '{']).next().unwrap_or("Error").to_string();
        Self::input(&kind, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::input("Io", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::input("Parse", e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::input("Csv", e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// A metric evaluated on the simulated scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum MetricSpec {
    /// CoVaR of every institution on the CM2 aggregate, per cost.
    CoVaR { q: f64 },
    /// CoES of every institution on the CM2 aggregate, per cost.
    CoES { q: f64 },
    /// SES of every institution against the summed system.
    SES { q: f64 },
    /// DIP with loss threshold `theta`.
    DIP { theta: f64 },
}

fn default_d() -> usize {
    10
}
fn default_p() -> f64 {
    0.35
}
fn default_exposure_scale() -> f64 {
    50.0
}
fn default_equity_ratio() -> f64 {
    0.05
}
fn default_el_multiple() -> f64 {
    1.0
}
fn default_n() -> usize {
    3000
}
fn default_corr() -> f64 {
    0.3
}
fn default_vol_ratio() -> f64 {
    0.08
}
fn default_gammas() -> Vec<f64> {
    vec![1.6, 2.6, f64::INFINITY]
}
fn default_rank_q() -> f64 {
    0.1
}
fn default_min_conditioning() -> usize {
    sysrisk_core::metrics::DEFAULT_MIN_CONDITIONING
}
fn default_metrics() -> Vec<MetricSpec> {
    vec![
        MetricSpec::CoVaR { q: 0.1 },
        MetricSpec::CoES { q: 0.1 },
        MetricSpec::SES { q: 0.05 },
        MetricSpec::DIP { theta: -100.0 },
    ]
}

/// Configuration of a `simulate` run. Every field except `seed` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_exposure_scale")]
    pub exposure_scale: f64,
    #[serde(default = "default_equity_ratio")]
    pub equity_ratio: f64,
    #[serde(default = "default_el_multiple")]
    pub external_liability_multiple: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_corr")]
    pub corr: f64,
    #[serde(default = "default_vol_ratio")]
    pub vol_ratio: f64,
    #[serde(default = "default_gammas", with = "gamma_list_serde")]
    pub gammas: Vec<f64>,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricSpec>,
    #[serde(default = "default_rank_q")]
    pub rank_q: f64,
    #[serde(default = "default_min_conditioning")]
    pub min_conditioning: usize,
    /// Where `simulate` writes; not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::input("Io", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn network_params(&self) -> NetworkParams {
        NetworkParams {
            institutions: self.d,
            edge_probability: self.p,
            exposure: ExposureLaw::HalfNormal {
                scale: self.exposure_scale,
            },
            equity_ratio: self.equity_ratio,
            external_liability_multiple: self.external_liability_multiple,
        }
    }

    /// Checks every field and fixes the seed; the result is what gets hashed.
    pub fn resolve(&self) -> CliResult<ResolvedConfig> {
        let seed = self
            .seed
            .ok_or_else(|| CliError::input("MissingSeed", "a seed is required (config key `seed` or --seed)"))?;
        self.network_params().validate()?;
        if self.n == 0 {
            return Err(CliError::input("InvalidParams", "n must be at least 1"));
        }
        if self.gammas.is_empty() {
            return Err(CliError::input("InvalidParams", "gamma list is empty"));
        }
        for &g in &self.gammas {
            sysrisk_core::clearing::check_gamma(g)?;
        }
        for m in &self.metrics {
            match m {
                MetricSpec::CoVaR { q } | MetricSpec::CoES { q } | MetricSpec::SES { q } => {
                    sysrisk_core::risk_measures::check_level(*q)?
                }
                MetricSpec::DIP { theta } if !theta.is_finite() => {
                    return Err(CliError::input("InvalidParams", "DIP threshold must be finite"))
                }
                MetricSpec::DIP { .. } => {}
            }
        }
        sysrisk_core::risk_measures::check_level(self.rank_q)?;
        let mut config = self.clone();
        config.output_dir = None;
        let canonical = serde_json::to_string(&config)?;
        let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
        Ok(ResolvedConfig {
            config,
            seed,
            hash,
            output_dir: self.output_dir.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    /// The full configuration, without the output directory.
    pub config: RunConfig,
    pub seed: u64,
    /// Hex SHA-256 of the canonical JSON of `config`.
    pub hash: String,
    pub output_dir: Option<PathBuf>,
}

impl ResolvedConfig {
    pub fn network_seed(&self) -> u64 {
        self.seed
    }

    pub fn shock_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }
}

/// Label used for a cost in file names and CSV cells.
pub fn gamma_label(gamma: f64) -> String {
    if gamma.is_finite() {
        format!("{gamma}")
    } else {
        "inf".into()
    }
}

fn gamma_json(gamma: f64) -> Value {
    if gamma.is_finite() {
        json!(gamma)
    } else {
        json!("inf")
    }
}

/// One row of `ranking.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingRow {
    pub gamma: f64,
    pub institution: usize,
    pub covar: f64,
    pub neg_var: f64,
    pub liabilities: f64,
    pub conditioning_event_size: usize,
}

/// A metric value, or the reason it is missing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricEntry {
    pub metric: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub institution: Option<usize>,
    pub value: Option<f64>,
    pub conditioning_event_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl MetricEntry {
    fn new(metric: &str, gamma: Option<f64>, institution: Option<usize>) -> Self {
        Self {
            metric: metric.into(),
            gamma: gamma.map(gamma_json),
            q: None,
            theta: None,
            institution,
            value: None,
            conditioning_event_size: 0,
            warning: None,
        }
    }

    fn fill(mut self, outcome: sysrisk_core::Result<(f64, usize)>, min_size: usize) -> CliResult<Self> {
        match outcome {
            Ok((v, size)) => {
                self.value = Some(v);
                self.conditioning_event_size = size;
                if size < min_size {
                    self.warning = Some(format!("conditioning event has only {size} scenarios (< {min_size})"));
                }
            }
            Err(sysrisk_core::Error::EmptyConditioningEvent) => {
                self.warning = Some("conditioning event is empty".into());
            }
            Err(e) => return Err(e.into()),
        }
        Ok(self)
    }
}

fn metric_pair(m: sysrisk_core::Result<MetricResult>) -> sysrisk_core::Result<(f64, usize)> {
    m.map(|r| (r.value(), r.conditioning_event_size))
}

/// Everything a `simulate` run computes.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub resolved: ResolvedConfig,
    pub network: Network,
    pub scenarios: ScenarioSet,
    /// Runs with the configured objective, one per cost.
    pub runs: Vec<McResult>,
    pub ranking: Vec<RankingRow>,
    pub metrics: Vec<MetricEntry>,
}

impl Simulation {
    pub fn summaries(&self) -> Vec<McSummary> {
        self.runs.iter().map(|r| r.summary.clone()).collect()
    }
}

pub fn simulate(resolved: &ResolvedConfig) -> CliResult<Simulation> {
    let cfg = &resolved.config;
    let network = gen_network_with(&cfg.network_params(), resolved.network_seed())?;
    let scenarios = gen_shocks(&network, cfg.n, cfg.corr, cfg.vol_ratio, resolved.shock_seed())?;
    let liabilities = network.liabilities();

    let mut runs = Vec::with_capacity(cfg.gammas.len());
    let mut cm2_values = Vec::with_capacity(cfg.gammas.len());
    for &gamma in &cfg.gammas {
        let run = run_mc(&scenarios, &network.clearing_spec(cfg.objective, gamma))?;
        let cm2: Vec<f64> = if cfg.objective == Objective::Cm2 {
            run.records.iter().map(|r| r.value).collect()
        } else {
            run_mc(&scenarios, &network.clearing_spec(Objective::Cm2, gamma))?
                .records
                .iter()
                .map(|r| r.value)
                .collect()
        };
        runs.push(run);
        cm2_values.push(cm2);
    }

    let d = network.dim();
    let columns: Vec<Vec<f64>> = (0..d).map(|j| scenarios.column(j)).collect();
    let mut ranking = Vec::new();
    for (&gamma, values) in cfg.gammas.iter().zip(&cm2_values) {
        let rows = (0..d)
            .map(|j| {
                let (covar, size) = covar_from_values(values, &columns[j], cfg.rank_q)?;
                Ok(RankingRow {
                    gamma,
                    institution: j + 1,
                    covar,
                    neg_var: -empirical_var(&columns[j], cfg.rank_q)?,
                    liabilities: liabilities[j],
                    conditioning_event_size: size,
                })
            })
            .collect::<sysrisk_core::Result<Vec<_>>>()?;
        let covars: Vec<f64> = rows.iter().map(|r| r.covar).collect();
        ranking.extend(rank(&covars, true).into_iter().map(|k| rows[k].clone()));
    }

    let min = cfg.min_conditioning;
    let mut metrics = Vec::new();
    for spec in &cfg.metrics {
        match *spec {
            MetricSpec::CoVaR { q } | MetricSpec::CoES { q } => {
                let name = if matches!(spec, MetricSpec::CoVaR { .. }) { "CoVaR" } else { "CoES" };
                for (&gamma, values) in cfg.gammas.iter().zip(&cm2_values) {
                    for (j, column) in columns.iter().enumerate() {
                        let outcome = if name == "CoVaR" {
                            covar_from_values(values, column, q)
                        } else {
                            coes_from_values(values, Some(column), q)
                        };
                        let mut e = MetricEntry::new(name, Some(gamma), Some(j + 1));
                        e.q = Some(q);
                        metrics.push(e.fill(outcome, min)?);
                    }
                }
            }
            MetricSpec::SES { q } => {
                for j in 0..d {
                    let mut e = MetricEntry::new("SES", None, Some(j + 1));
                    e.q = Some(q);
                    metrics.push(e.fill(metric_pair(ses_j(&scenarios, j, q)), min)?);
                }
            }
            MetricSpec::DIP { theta } => {
                let mut e = MetricEntry::new("DIP", None, None);
                e.theta = Some(theta);
                metrics.push(e.fill(metric_pair(dip(&scenarios, theta, None)), min)?);
            }
        }
    }

    Ok(Simulation {
        resolved: resolved.clone(),
        network,
        scenarios,
        runs,
        ranking,
        metrics,
    })
}

fn json_bytes(v: &Value) -> CliResult<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v)?;
    out.push(b'\n');
    Ok(out)
}

fn csv_bytes(hash: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    let mut out = format!("# config_hash={hash}\n").into_bytes();
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut out);
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
    }
    Ok(out)
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Output files of a simulation as `(file name, contents)`, in writing order.
pub fn render_outputs(sim: &Simulation) -> CliResult<Vec<(String, Vec<u8>)>> {
    let r = &sim.resolved;
    let hash = &r.hash;
    let mut files = Vec::new();

    files.push((
        "network.json".to_string(),
        json_bytes(&json!({
            "config_hash": hash,
            "rng": RNG_ID,
            "seed": r.network_seed(),
            "network": sim.network,
            "liabilities": sim.network.liabilities(),
        }))?,
    ));
    files.push((
        "scenarios.json".to_string(),
        json_bytes(&json!({
            "config_hash": hash,
            "generator": sim.scenarios.generator,
            "seed": sim.scenarios.seed,
            "count": sim.scenarios.len(),
            "institutions": sim.scenarios.dim(),
            "correlation": sim.scenarios.params.correlation,
            "vol_ratio": sim.scenarios.params.vol_ratio,
            "files": r.config.gammas.iter().map(|&g| format!("scenarios_gamma_{}.csv", gamma_label(g))).collect::<Vec<_>>(),
        }))?,
    ));
    for run in &sim.runs {
        let rows: Vec<Vec<String>> = run
            .records
            .iter()
            .enumerate()
            .map(|(k, rec)| {
                vec![
                    k.to_string(),
                    num(rec.value),
                    num(rec.injections),
                    num(rec.shortfall),
                    rec.initial_defaults.to_string(),
                    rec.contagion_defaults.to_string(),
                ]
            })
            .collect();
        files.push((
            format!("scenarios_gamma_{}.csv", gamma_label(run.summary.gamma)),
            csv_bytes(
                hash,
                &["scenario", "value", "injections", "shortfall", "initial_defaults", "contagion_defaults"],
                &rows,
            )?,
        ));
    }
    files.push((
        "summary.json".to_string(),
        json_bytes(&json!({
            "config_hash": hash,
            "config": r.config,
            "rng": RNG_ID,
            "network_seed": r.network_seed(),
            "shock_seed": r.shock_seed(),
            "table": sim.summaries(),
            "metrics": sim.metrics,
        }))?,
    ));
    let rows: Vec<Vec<String>> = sim
        .ranking
        .iter()
        .map(|row| {
            vec![
                gamma_label(row.gamma),
                row.institution.to_string(),
                num(row.covar),
                num(row.neg_var),
                num(row.liabilities),
                row.conditioning_event_size.to_string(),
            ]
        })
        .collect();
    files.push((
        "ranking.csv".to_string(),
        csv_bytes(
            hash,
            &["gamma", "institution", "CoVaR", "neg_VaR", "L", "conditioning_event_size"],
            &rows,
        )?,
    ));
    files.push((
        "graph.dot".to_string(),
        sim.network.to_dot(Some(&format!("config_hash={hash}"))).into_bytes(),
    ));
    Ok(files)
}

/// Writes all files into a staging directory inside `dir` and then moves
/// them into place, so a failure leaves no partial output behind.
pub fn write_outputs(dir: &Path, files: &[(String, Vec<u8>)]) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let stage = tempfile::Builder::new().prefix(".sysrisk-stage-").tempdir_in(dir)?;
    for (name, bytes) in files {
        fs::write(stage.path().join(name), bytes)?;
    }
    for (name, _) in files {
        fs::rename(stage.path().join(name), dir.join(name))?;
    }
    Ok(())
}

/// Outcome of `clear`: the solution, and the oracle solution when requested.
#[derive(Debug, Clone, Serialize)]
pub struct ClearReport {
    pub objective: Objective,
    pub solution: ClearingSolution,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<ClearingSolution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

pub fn clear(problem: &ClearingProblem, objective: Objective, oracle_step: Option<f64>) -> CliResult<ClearReport> {
    let solution = solve(problem, objective, FixedPointSelection::Least)?;
    let Some(step) = oracle_step else {
        return Ok(ClearReport {
            objective,
            solution,
            oracle: None,
            tolerance: None,
        });
    };
    let oracle = brute_force_oracle(problem, objective, step)?;
    let c = problem.dim() as f64 * if problem.gamma.is_finite() { problem.gamma.max(1.0) } else { 1.0 };
    let tolerance = 1e-4 + c * step;
    let report = ClearReport {
        objective,
        solution,
        oracle: Some(oracle),
        tolerance: Some(tolerance),
    };
    let gap = (report.solution.value - report.oracle.as_ref().map_or(0.0, |o| o.value)).abs();
    if gap > tolerance {
        return Err(CliError {
            kind: "OracleMismatch".into(),
            message: format!("solver and grid oracle differ by {gap:e} (tolerance {tolerance:e})"),
            code: 2,
            details: Some(serde_json::to_value(&report)?),
        });
    }
    Ok(report)
}

/// CSV of the CoVaR ranking for one cost with the columns of the importance table.
pub fn ranking_csv(hash: &str, rows: &[RankingRow]) -> CliResult<Vec<u8>> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.institution.to_string(), num(r.covar), num(r.neg_var), num(r.liabilities)])
        .collect();
    csv_bytes(hash, &["institution", "CoVaR", "neg_VaR", "L"], &body)
}

/// Order of institutions (one-based) by ascending value.
pub fn rank_values(values: &[f64]) -> Vec<usize> {
    rank(values, true).into_iter().map(|k| k + 1).collect()
}

pub fn parse_axioms(list: &str) -> CliResult<Vec<Axiom>> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(Axiom::ALL.to_vec());
    }
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<Axiom>().map_err(CliError::from))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct AxiomRun {
    pub trials: usize,
    pub seed: u64,
    pub all_passed: bool,
    pub reports: Vec<PropertyReport>,
}

pub fn check_axioms(csrm_json: &str, axioms: &[Axiom], trials: usize, seed: u64) -> CliResult<AxiomRun> {
    let rho: Csrm = serde_json::from_str(csrm_json)?;
    rho.validate()?;
    if trials == 0 {
        return Err(CliError::input("InvalidParams", "trials must be positive"));
    }
    let reports = axioms
        .iter()
        .map(|&a| check_axiom(&rho, a, trials, seed))
        .collect::<sysrisk_core::Result<Vec<_>>>()?;
    Ok(AxiomRun {
        trials,
        seed,
        all_passed: reports.iter().all(|r| r.passed),
        reports,
    })
}

/// Parses `1.6,2.6,inf`.
pub fn parse_gammas(list: &str) -> CliResult<Vec<f64>> {
    list.split(',')
        .map(|s| {
            let s = s.trim();
            if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
                Ok(f64::INFINITY)
            } else {
                s.parse::<f64>()
                    .map_err(|_| CliError::input("InvalidParams", format!("cannot parse cost `{s}`")))
            }
        })
        .collect()
}
