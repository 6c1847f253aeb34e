//! Random interbank networks, correlated equity shocks and the Monte Carlo
//! evaluation of the clearing aggregates over a scenario set.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationSpec;
use crate::clearing::{check_gamma, FixedPointSelection, LiabilityStructure, Objective};
use crate::error::{Error, Result};
use crate::numeric::{cholesky, neg_part, CompensatedSum};
use crate::risk_measures::empirical_var;

/// Identifier of the random number generator embedded in every artifact.
pub const RNG_ID: &str = "ChaCha20Rng::seed_from_u64 (rand_chacha 0.9)";

/// Threshold below which a post-contagion equity counts as a default.
pub const DEFAULT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExposureLaw {
    /// `|N(0, scale^2)|`
    HalfNormal { scale: f64 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub institutions: usize,
    pub edge_probability: f64,
    pub exposure: ExposureLaw,
    pub equity_ratio: f64,
    /// External liabilities as a multiple of interbank liabilities.
    pub external_liability_multiple: f64,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self {
            institutions: 10,
            edge_probability: 0.35,
            exposure: ExposureLaw::HalfNormal { scale: 50.0 },
            equity_ratio: 0.05,
            external_liability_multiple: 1.0,
        }
    }
}

impl NetworkParams {
    pub fn validate(&self) -> Result<()> {
        if self.institutions < 2 {
            return Err(Error::InvalidParams("a network needs at least two institutions".into()));
        }
        if !(0.0..=1.0).contains(&self.edge_probability) {
            return Err(Error::InvalidParams(format!(
                "edge probability must lie in [0,1], got {}",
                self.edge_probability
            )));
        }
        match self.exposure {
            ExposureLaw::HalfNormal { scale } if !(scale.is_finite() && scale > 0.0) => {
                return Err(Error::InvalidParams(format!("exposure scale must be positive, got {scale}")));
            }
            ExposureLaw::Constant { value } if !(value.is_finite() && value >= 0.0) => {
                return Err(Error::InvalidParams(format!("constant exposure must be nonnegative, got {value}")));
            }
            _ => {}
        }
        if !(self.equity_ratio > 0.0 && self.equity_ratio < 1.0) {
            return Err(Error::InvalidParams(format!(
                "equity ratio must lie in (0,1), got {}",
                self.equity_ratio
            )));
        }
        if !(self.external_liability_multiple.is_finite() && self.external_liability_multiple >= 0.0) {
            return Err(Error::InvalidParams("external liability multiple must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Interbank network with stylised balance sheets.
///
/// `exposures[i][j]` is the amount institution `i` owes to `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub exposures: Vec<Vec<f64>>,
    pub external_assets: Vec<f64>,
    pub external_liabilities: Vec<f64>,
    pub equity: Vec<f64>,
}

impl Network {
    pub fn dim(&self) -> usize {
        self.equity.len()
    }

    /// `L_i = sum_j E_ij`
    pub fn liabilities(&self) -> Vec<f64> {
        self.exposures.iter().map(|row| row.iter().sum()).collect()
    }

    /// `A_i = sum_j E_ji`
    pub fn interbank_assets(&self) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|i| (0..d).map(|j| self.exposures[j][i]).sum()).collect()
    }

    /// `Pi_ij = E_ij / L_i`, zero rows for institutions without interbank debt.
    pub fn relative_liabilities(&self) -> Vec<Vec<f64>> {
        self.exposures
            .iter()
            .map(|row| {
                let l: f64 = row.iter().sum();
                if l > 0.0 {
                    row.iter().map(|e| e / l).collect()
                } else {
                    vec![0.0; row.len()]
                }
            })
            .collect()
    }

    pub fn structure(&self) -> Result<LiabilityStructure> {
        LiabilityStructure::new(&self.relative_liabilities(), self.liabilities())
    }

    /// Clearing aggregate parameterised by this network.
    pub fn clearing_spec(&self, objective: Objective, gamma: f64) -> AggregationSpec {
        let (pi, liabilities) = (self.relative_liabilities(), self.liabilities());
        match objective {
            Objective::Cm1 => AggregationSpec::Cm1 { pi, liabilities, gamma },
            Objective::Cm2 => AggregationSpec::Cm2 { pi, liabilities, gamma },
        }
    }

    /// Largest violation of `EA + A = equity + EL + L` over institutions.
    pub fn balance_residual(&self) -> f64 {
        let (l, a) = (self.liabilities(), self.interbank_assets());
        (0..self.dim())
            .map(|i| {
                (self.external_assets[i] + a[i] - self.equity[i] - self.external_liabilities[i] - l[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0
            || self.exposures.len() != d
            || self.exposures.iter().any(|r| r.len() != d)
            || self.external_assets.len() != d
            || self.external_liabilities.len() != d
        {
            return Err(Error::DimensionMismatch("network arrays have inconsistent sizes".into()));
        }
        for (i, row) in self.exposures.iter().enumerate() {
            if row[i] != 0.0 || row.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
                return Err(Error::InvalidParams(format!("exposure row {i} is invalid")));
            }
        }
        let scale = 1.0
            + self
                .external_assets
                .iter()
                .chain(&self.external_liabilities)
                .fold(0.0_f64, |m, v| m.max(v.abs()));
        if self.balance_residual() > 1e-8 * scale {
            return Err(Error::InvalidParams("balance sheets do not balance".into()));
        }
        Ok(())
    }

    /// Exposure graph in Graphviz DOT format; edge `i -> j` carries `E_ij`.
    pub fn to_dot(&self, comment: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(c) = comment {
            for line in c.lines() {
                let _ = writeln!(out, "// {line}");
            }
        }
        out.push_str("digraph interbank {\n  rankdir=LR;\n");
        let l = self.liabilities();
        for i in 0..self.dim() {
            let _ = writeln!(
                out,
                "  b{} [label=\"{}\\nequity {:.2}\\nL {:.2}\"];",
                i + 1,
                i + 1,
                self.equity[i],
                l[i]
            );
        }
        for (i, row) in self.exposures.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                if e > 0.0 {
                    let _ = writeln!(out, "  b{} -> b{} [label=\"{:.2}\"];", i + 1, j + 1, e);
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

pub fn gen_network(d: usize, p: f64, exposure_scale: f64, equity_ratio: f64, seed: u64) -> Result<Network> {
    gen_network_with(
        &NetworkParams {
            institutions: d,
            edge_probability: p,
            exposure: ExposureLaw::HalfNormal { scale: exposure_scale },
            equity_ratio,
            ..NetworkParams::default()
        },
        seed,
    )
}

/// Erdos-Renyi exposures completed to balanced stylised balance sheets.
///
/// With `r` the equity ratio and `EL = m * L`, total assets are
/// `T = (EL + L) / (1 - r)`, equity `r * T` and external assets `T - A`.
/// When interbank assets alone exceed `T`, external assets are set to zero,
/// `T = A`, and external liabilities absorb the difference.
pub fn gen_network_with(params: &NetworkParams, seed: u64) -> Result<Network> {
    params.validate()?;
    let d = params.institutions;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut exposures = vec![vec![0.0; d]; d];
    for (i, row) in exposures.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate() {
            if i == j {
                continue;
            }
            let edge: f64 = rng.random();
            if edge < params.edge_probability {
                *e = match params.exposure {
                    ExposureLaw::HalfNormal { scale } => {
                        let n = Normal::new(0.0, scale).map_err(|e| Error::InvalidParams(e.to_string()))?;
                        n.sample(&mut rng).abs()
                    }
                    ExposureLaw::Constant { value } => value,
                };
            }
        }
    }
    let mut net = Network {
        exposures,
        external_assets: vec![0.0; d],
        external_liabilities: vec![0.0; d],
        equity: vec![0.0; d],
    };
    let (l, a) = (net.liabilities(), net.interbank_assets());
    let r = params.equity_ratio;
    for i in 0..d {
        let el = params.external_liability_multiple * l[i];
        let total = (el + l[i]) / (1.0 - r);
        if total >= a[i] {
            net.external_liabilities[i] = el;
            net.external_assets[i] = total - a[i];
            net.equity[i] = r * total;
        } else {
            net.external_assets[i] = 0.0;
            net.equity[i] = r * a[i];
            net.external_liabilities[i] = (a[i] - net.equity[i] - l[i]).max(0.0);
        }
    }
    Ok(net)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockParams {
    pub correlation: f64,
    pub vol_ratio: f64,
}

/// Post-shock equity, one row per scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub shocked_equity: Vec<Vec<f64>>,
    pub generator: String,
    pub seed: u64,
    pub params: ShockParams,
}

impl ScenarioSet {
    /// Wraps externally supplied scenarios.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let set = Self {
            shocked_equity: rows,
            generator: "external".into(),
            seed: 0,
            params: ShockParams {
                correlation: 0.0,
                vol_ratio: 0.0,
            },
        };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.shocked_equity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shocked_equity.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.shocked_equity.first().map_or(0, Vec::len)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.shocked_equity.iter().map(|r| r[j]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.is_empty() || d == 0 {
            return Err(Error::InvalidParams("scenario set is empty".into()));
        }
        if self.shocked_equity.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParams("scenario rows are ragged or not finite".into()));
        }
        Ok(())
    }
}

/// Gaussian shocks with equicorrelation `corr` and standard deviations
/// `vol_ratio * (external assets + external liabilities)` added to equity.
pub fn gen_shocks(net: &Network, n: usize, corr: f64, vol_ratio: f64, seed: u64) -> Result<ScenarioSet> {
    if n == 0 {
        return Err(Error::InvalidParams("need at least one scenario".into()));
    }
    if !(0.0..1.0).contains(&corr) {
        return Err(Error::InvalidParams(format!("correlation must lie in [0,1), got {corr}")));
    }
    if !(vol_ratio.is_finite() && vol_ratio >= 0.0) {
        return Err(Error::InvalidParams(format!("vol ratio must be nonnegative, got {vol_ratio}")));
    }
    let d = net.dim();
    let mut r = vec![corr; d * d];
    for i in 0..d {
        r[i * d + i] = 1.0;
    }
    let chol = cholesky(&r, d).ok_or_else(|| Error::InvalidParams("correlation matrix is not positive definite".into()))?;
    let sigma: Vec<f64> = (0..d)
        .map(|i| vol_ratio * (net.external_assets[i] + net.external_liabilities[i]))
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut z = vec![0.0; d];
    let rows = (0..n)
        .map(|_| {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            (0..d)
                .map(|i| {
                    let corr_z: f64 = (0..=i).map(|k| chol[i * d + k] * z[k]).sum();
                    net.equity[i] + sigma[i] * corr_z
                })
                .collect()
        })
        .collect();
    Ok(ScenarioSet {
        shocked_equity: rows,
        generator: RNG_ID.into(),
        seed,
        params: ShockParams {
            correlation: corr,
            vol_ratio,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McRecord {
    pub value: f64,
    pub injections: f64,
    pub shortfall: f64,
    pub initial_defaults: usize,
    pub contagion_defaults: usize,
}

/// Summary statistics mirroring the columns of the contagion study table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub objective: Objective,
    #[serde(
        serialize_with = "crate::clearing::serialize_gamma",
        deserialize_with = "crate::clearing::deserialize_gamma"
    )]
    pub gamma: f64,
    pub scenarios: usize,
    /// `-E[Lambda(X)]`
    pub neg_mean_value: f64,
    /// `VaR_0.05(Lambda(X))`
    pub var_05: f64,
    pub mean_injections: f64,
    pub mean_shortfall: f64,
    pub mean_initial_defaults: f64,
    pub mean_contagion_defaults: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub records: Vec<McRecord>,
    pub summary: McSummary,
}

/// Solves the clearing aggregate in every scenario.
///
/// `spec` must be `CM1` or `CM2`. Scenarios are solved in parallel, but the
/// records are kept in scenario order and reduced serially with compensated
/// sums, so results do not depend on the thread count.
pub fn run_mc(scen: &ScenarioSet, spec: &AggregationSpec) -> Result<McResult> {
    scen.validate()?;
    let (objective, pi, liabilities, gamma) = match spec {
        AggregationSpec::Cm1 { pi, liabilities, gamma } => (Objective::Cm1, pi, liabilities, *gamma),
        AggregationSpec::Cm2 { pi, liabilities, gamma } => (Objective::Cm2, pi, liabilities, *gamma),
        other => {
            return Err(Error::InvalidParams(format!(
                "Monte Carlo runs need a clearing aggregate, got {other:?}"
            )))
        }
    };
    check_gamma(gamma)?;
    let s = LiabilityStructure::new(pi, liabilities.clone())?;
    if s.dim() != scen.dim() {
        return Err(Error::DimensionMismatch(format!(
            "network has {} institutions, scenarios have {}",
            s.dim(),
            scen.dim()
        )));
    }
    let records = scen
        .shocked_equity
        .par_iter()
        .map(|x| {
            let sol = s.optimize(x, gamma, objective, FixedPointSelection::Least)?;
            let inflow = s.incoming(&sol.y);
            Ok(McRecord {
                value: sol.value,
                injections: sol.b.iter().sum(),
                shortfall: x.iter().map(|&v| neg_part(v)).sum(),
                initial_defaults: x.iter().filter(|&&v| v < 0.0).count(),
                contagion_defaults: x.iter().zip(&inflow).filter(|(xi, f)| *xi - *f < -DEFAULT_EPS).count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&records, objective, gamma)?;
    Ok(McResult { records, summary })
}

pub fn summarize(records: &[McRecord], objective: Objective, gamma: f64) -> Result<McSummary> {
    let n = records.len();
    if n == 0 {
        return Err(Error::InvalidParams("no scenarios".into()));
    }
    let mean = |f: &dyn Fn(&McRecord) -> f64| records.iter().map(f).collect::<CompensatedSum>().value() / n as f64;
    let values: Vec<f64> = records.iter().map(|r| r.value).collect();
    Ok(McSummary {
        objective,
        gamma,
        scenarios: n,
        neg_mean_value: -mean(&|r| r.value),
        var_05: empirical_var(&values, 0.05)?,
        mean_injections: mean(&|r| r.injections),
        mean_shortfall: mean(&|r| r.shortfall),
        mean_initial_defaults: mean(&|r| r.initial_defaults as f64),
        mean_contagion_defaults: mean(&|r| r.contagion_defaults as f64),
    })
}
