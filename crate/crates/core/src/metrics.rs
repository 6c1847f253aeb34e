//! Empirical systemic risk metrics on scenario sets: CoVaR, CoES, SES, DIP,
//! and the ranking of institutions by systemic importance.
//!
//! Every quantile is the uniform empirical VaR with the strict convention of
//! [`empirical_var`]; conditioning events use the weak inequality `<= -VaR`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationSpec;
use crate::error::{Error, Result};
use crate::network_sim::ScenarioSet;
use crate::numeric::{neg_part, CompensatedSum};
use crate::prob_space::{RandomVariable, RandomVector};
use crate::risk_measures::empirical_var;

pub const DEFAULT_MIN_CONDITIONING: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_institution: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scalar: Option<f64>,
    pub conditioning_event_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl MetricResult {
    fn scalar(name: &str, value: f64, size: usize, min_size: usize) -> Self {
        Self {
            name: name.to_string(),
            per_institution: None,
            scalar: Some(value),
            conditioning_event_size: size,
            warning: small_event_warning(size, min_size),
        }
    }

    pub fn value(&self) -> f64 {
        self.scalar.unwrap_or(f64::NAN)
    }
}

fn small_event_warning(size: usize, min_size: usize) -> Option<String> {
    (size < min_size).then(|| format!("conditioning event has only {size} scenarios (< {min_size})"))
}

/// `Lambda(x_k)` for every scenario, evaluated in parallel.
pub fn aggregate_scenarios(scen: &ScenarioSet, agg: &AggregationSpec) -> Result<Vec<f64>> {
    scen.validate()?;
    agg.validate()?;
    if agg.is_deterministic() {
        scen.shocked_equity
            .par_iter()
            .map(|x| agg.aggregate_at(x, 0))
            .collect()
    } else {
        let x = RandomVector::from_rows(scen.shocked_equity.clone())?;
        Ok(agg.extend(&x)?.into_inner())
    }
}

/// Scenario indices of `{X_j <= -VaR_q(X_j)}`.
pub fn distress_event(column: &[f64], q: f64) -> Result<Vec<usize>> {
    let threshold = -empirical_var(column, q)?;
    let event: Vec<usize> = (0..column.len()).filter(|&k| column[k] <= threshold).collect();
    if event.is_empty() {
        return Err(Error::EmptyConditioningEvent);
    }
    Ok(event)
}

fn pick(values: &[f64], event: &[usize]) -> Vec<f64> {
    event.iter().map(|&k| values[k]).collect()
}

/// `VaR_q(aggregated | column <= -VaR_q(column))` and the size of the event.
pub fn covar_from_values(aggregated: &[f64], column: &[f64], q: f64) -> Result<(f64, usize)> {
    let event = distress_event(column, q)?;
    Ok((empirical_var(&pick(aggregated, &event), q)?, event.len()))
}

fn check_institution(scen: &ScenarioSet, j: usize) -> Result<()> {
    if j >= scen.dim() {
        return Err(Error::DimensionMismatch(format!(
            "institution {j} out of range for {} institutions",
            scen.dim()
        )));
    }
    Ok(())
}

pub fn covar_j(scen: &ScenarioSet, j: usize, q: f64, agg: &AggregationSpec) -> Result<MetricResult> {
    covar_j_with(scen, j, q, agg, DEFAULT_MIN_CONDITIONING)
}

pub fn covar_j_with(scen: &ScenarioSet, j: usize, q: f64, agg: &AggregationSpec, min_size: usize) -> Result<MetricResult> {
    check_institution(scen, j)?;
    let values = aggregate_scenarios(scen, agg)?;
    let (v, size) = covar_from_values(&values, &scen.column(j), q)?;
    Ok(MetricResult::scalar("CoVaR", v, size, min_size))
}

/// CoVaR of every institution, sharing one aggregation pass.
pub fn covar_all(scen: &ScenarioSet, q: f64, agg: &AggregationSpec, min_size: usize) -> Result<Vec<MetricResult>> {
    let values = aggregate_scenarios(scen, agg)?;
    (0..scen.dim())
        .map(|j| {
            let (v, size) = covar_from_values(&values, &scen.column(j), q)?;
            Ok(MetricResult::scalar("CoVaR", v, size, min_size))
        })
        .collect()
}

/// Mean loss `-Lambda` over `{Lambda <= -CoVaR} & {X_j <= -VaR_q(X_j)}`, or over
/// `{Lambda <= -VaR_q(Lambda)}` when no institution is given.
pub fn coes_from_values(aggregated: &[f64], column: Option<&[f64]>, q: f64) -> Result<(f64, usize)> {
    let base: Vec<usize> = match column {
        Some(c) => distress_event(c, q)?,
        None => (0..aggregated.len()).collect(),
    };
    if base.is_empty() {
        return Err(Error::EmptyConditioningEvent);
    }
    let threshold = -empirical_var(&pick(aggregated, &base), q)?;
    let tail: Vec<f64> = base
        .iter()
        .map(|&k| aggregated[k])
        .filter(|&v| v <= threshold)
        .map(|v| -v)
        .collect();
    if tail.is_empty() {
        return Err(Error::EmptyConditioningEvent);
    }
    let n = tail.len();
    Ok((tail.into_iter().collect::<CompensatedSum>().value() / n as f64, n))
}

pub fn coes(scen: &ScenarioSet, j: Option<usize>, q: f64, agg: &AggregationSpec) -> Result<MetricResult> {
    if let Some(j) = j {
        check_institution(scen, j)?;
    }
    let values = aggregate_scenarios(scen, agg)?;
    let column = j.map(|j| scen.column(j));
    let (v, size) = coes_from_values(&values, column.as_deref(), q)?;
    Ok(MetricResult::scalar("CoES", v, size, DEFAULT_MIN_CONDITIONING))
}

/// Mean of `-X_j` over the system distress event `{sum X <= -VaR_q(sum X)}`.
pub fn ses_j(scen: &ScenarioSet, j: usize, q: f64) -> Result<MetricResult> {
    check_institution(scen, j)?;
    let totals: Vec<f64> = scen.shocked_equity.iter().map(|r| r.iter().sum()).collect();
    let event = distress_event(&totals, q)?;
    let n = event.len();
    let v = event
        .iter()
        .map(|&k| -scen.shocked_equity[k][j])
        .collect::<CompensatedSum>()
        .value()
        / n as f64;
    Ok(MetricResult::scalar("SES", v, n, DEFAULT_MIN_CONDITIONING))
}

/// Weighted mean of `sum_i X_i^-` over `{Lambda_loss(X) <= theta}`.
pub fn dip(scen: &ScenarioSet, theta: f64, density: Option<&[f64]>) -> Result<MetricResult> {
    scen.validate()?;
    if let Some(w) = density {
        if w.len() != scen.len() || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParams("scenario weights must be nonnegative, one per scenario".into()));
        }
    }
    let weight = |k: usize| density.map_or(1.0, |w| w[k]);
    let mut num = CompensatedSum::new();
    let mut den = CompensatedSum::new();
    let mut size = 0;
    for (k, row) in scen.shocked_equity.iter().enumerate() {
        let losses: f64 = row.iter().map(|&v| neg_part(v)).sum();
        if -losses <= theta && weight(k) > 0.0 {
            num.add(weight(k) * losses);
            den.add(weight(k));
            size += 1;
        }
    }
    if size == 0 || den.value() <= 0.0 {
        return Err(Error::EmptyConditioningEvent);
    }
    Ok(MetricResult::scalar("DIP", num.value() / den.value(), size, DEFAULT_MIN_CONDITIONING))
}

/// Institution indices ordered by `values`; ties keep index order.
pub fn rank(values: &[f64], ascending: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    if ascending {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    } else {
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    }
    order
}

/// One row of the systemic importance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    /// One-based institution label.
    pub institution: usize,
    pub covar: f64,
    /// `-VaR_q(X_j)`
    pub neg_var: f64,
    pub liabilities: f64,
    pub conditioning_event_size: usize,
}

/// CoVaR ranking of all institutions, ascending in CoVaR.
pub fn importance_table(
    scen: &ScenarioSet,
    q: f64,
    agg: &AggregationSpec,
    liabilities: &[f64],
) -> Result<Vec<ImportanceRow>> {
    if liabilities.len() != scen.dim() {
        return Err(Error::DimensionMismatch("liabilities do not match the scenario dimension".into()));
    }
    let values = aggregate_scenarios(scen, agg)?;
    let rows = (0..scen.dim())
        .map(|j| {
            let column = scen.column(j);
            let (covar, size) = covar_from_values(&values, &column, q)?;
            Ok(ImportanceRow {
                institution: j + 1,
                covar,
                neg_var: -empirical_var(&column, q)?,
                liabilities: liabilities[j],
                conditioning_event_size: size,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let covars: Vec<f64> = rows.iter().map(|r| r.covar).collect();
    Ok(rank(&covars, true).into_iter().map(|k| rows[k].clone()).collect())
}

/// Empirical correlation of two samples.
pub fn sample_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Scenario values as a random variable on the uniform scenario space.
pub fn as_random_variable(values: &[f64]) -> RandomVariable {
    RandomVariable::new(values.to_vec())
}
