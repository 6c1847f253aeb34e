//! Python bindings. Specs are passed as dicts (or JSON strings) in the same
//! shape the library serializes them; structured results come back as dicts.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyAny, PyString};
use serde::de::DeserializeOwned;
use serde::Serialize;

use sysrisk_core::clearing::{self, FixedPointSelection};
use sysrisk_core::csrm::{self, Axiom, RiskMap};
use sysrisk_core::network_sim::{self, NetworkParams};
use sysrisk_core::{metrics, risk_measures, AggregationSpec, Error, FiniteProbSpace, Objective, Partition, RandomVariable, RandomVector};

fn err(e: Error) -> PyErr {
    match e {
        Error::NonConvergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = if obj.is_instance_of::<PyString>() {
        obj.extract()?
    } else {
        obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn objective(name: &str) -> PyResult<Objective> {
    match name.to_ascii_lowercase().as_str() {
        "cm1" => Ok(Objective::Cm1),
        "cm2" => Ok(Objective::Cm2),
        other => Err(PyValueError::new_err(format!("unknown objective '{other}'"))),
    }
}

fn space_of(probs: Option<Vec<f64>>, n: usize) -> PyResult<FiniteProbSpace> {
    match probs {
        Some(p) => FiniteProbSpace::new(p).map_err(err),
        None => Ok(FiniteProbSpace::uniform(n)),
    }
}

fn partition_of(blocks: Option<Vec<Vec<usize>>>, n: usize) -> PyResult<Partition> {
    match blocks {
        Some(b) => Partition::new(n, b).map_err(err),
        None => Ok(Partition::trivial(n)),
    }
}

/// Value at risk of `values` (uniform weights unless `probs` is given).
#[pyfunction]
#[pyo3(signature = (values, q, probs=None))]
fn var(values: Vec<f64>, q: f64, probs: Option<Vec<f64>>) -> PyResult<f64> {
    let space = space_of(probs, values.len())?;
    risk_measures::var(&space, &RandomVariable::new(values), q).map_err(err)
}

/// Average value at risk of `values`.
#[pyfunction]
#[pyo3(signature = (values, q, probs=None))]
fn avar(values: Vec<f64>, q: f64, probs: Option<Vec<f64>>) -> PyResult<f64> {
    let space = space_of(probs, values.len())?;
    let n = values.len();
    let r = risk_measures::conditional_avar(&space, &RandomVariable::new(values), &Partition::trivial(n), q).map_err(err)?;
    Ok(r[0])
}

/// Conditional base risk measure, one value per atom.
#[pyfunction]
#[pyo3(signature = (measure, values, probs=None, blocks=None))]
fn conditional_risk(
    measure: &Bound<'_, PyAny>,
    values: Vec<f64>,
    probs: Option<Vec<f64>>,
    blocks: Option<Vec<Vec<usize>>>,
) -> PyResult<Vec<f64>> {
    let spec: risk_measures::RiskMeasureSpec = from_py(measure)?;
    let n = values.len();
    let space = space_of(probs, n)?;
    let g = partition_of(blocks, n)?;
    Ok(spec.evaluate(&space, &RandomVariable::new(values), &g).map_err(err)?.into_inner())
}

/// Applies an aggregation spec state by state to rows `x[atom][institution]`.
#[pyfunction]
fn aggregate(spec: &Bound<'_, PyAny>, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let spec: AggregationSpec = from_py(spec)?;
    let x = RandomVector::from_rows(rows).map_err(err)?;
    Ok(spec.extend(&x).map_err(err)?.into_inner())
}

/// Liability clearing problem `y = clip(Pi^T y - x - b, 0, L)`.
#[pyclass(module = "sysrisk")]
struct ClearingProblem {
    inner: clearing::ClearingProblem,
}

#[pymethods]
impl ClearingProblem {
    #[new]
    #[pyo3(signature = (x, pi, liabilities, gamma=f64::INFINITY))]
    fn new(x: Vec<f64>, pi: Vec<Vec<f64>>, liabilities: Vec<f64>, gamma: f64) -> PyResult<Self> {
        let inner = clearing::ClearingProblem::new(x, pi, liabilities, gamma).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(obj: &Bound<'_, PyAny>) -> PyResult<Self> {
        let inner: clearing::ClearingProblem = from_py(obj)?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Least clearing vector for injections `b` (zero by default).
    #[pyo3(signature = (b=None))]
    fn clear(&self, b: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        let b = b.unwrap_or_else(|| vec![0.0; self.inner.dim()]);
        clearing::clear_fixed_point(&self.inner, &b).map_err(err)
    }

    /// Optimal injections; returns `{"y", "b", "value"}`.
    #[pyo3(signature = (objective="cm1"))]
    fn solve<'py>(&self, py: Python<'py>, objective: &str) -> PyResult<Bound<'py, PyAny>> {
        let obj = self::objective(objective)?;
        let sol = py
            .detach(|| clearing::solve(&self.inner, obj, FixedPointSelection::Least))
            .map_err(err)?;
        to_py(py, &sol)
    }

    /// Grid-search reference solution (at most three institutions).
    #[pyo3(signature = (objective="cm1", grid_step=0.01))]
    fn oracle<'py>(&self, py: Python<'py>, objective: &str, grid_step: f64) -> PyResult<Bound<'py, PyAny>> {
        let obj = self::objective(objective)?;
        let sol = py
            .detach(|| clearing::brute_force_oracle(&self.inner, obj, grid_step))
            .map_err(err)?;
        to_py(py, &sol)
    }

    fn __repr__(&self) -> String {
        format!("ClearingProblem(d={}, gamma={})", self.inner.dim(), self.inner.gamma)
    }
}

/// Composed systemic risk measure `rho = eta(Lambda(X))`.
#[pyclass(module = "sysrisk")]
struct Csrm {
    inner: csrm::Csrm,
}

#[pymethods]
impl Csrm {
    #[new]
    #[pyo3(signature = (eta, aggregation, dim, probs=None, blocks=None, atoms=None))]
    fn new(
        eta: &Bound<'_, PyAny>,
        aggregation: &Bound<'_, PyAny>,
        dim: usize,
        probs: Option<Vec<f64>>,
        blocks: Option<Vec<Vec<usize>>>,
        atoms: Option<usize>,
    ) -> PyResult<Self> {
        let n = match (&probs, atoms) {
            (Some(p), _) => p.len(),
            (None, Some(n)) => n,
            (None, None) => return Err(PyValueError::new_err("give either probs or atoms")),
        };
        let space = space_of(probs, n)?;
        let g = partition_of(blocks, n)?;
        let inner = csrm::Csrm::new(space, g, from_py(eta)?, from_py(aggregation)?, dim).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(obj: &Bound<'_, PyAny>) -> PyResult<Self> {
        let inner: csrm::Csrm = from_py(obj)?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    /// `rho(X)` for rows `x[atom][institution]`, one value per atom.
    fn evaluate(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let x = RandomVector::from_rows(rows).map_err(err)?;
        Ok(self.inner.evaluate(&x).map_err(err)?.into_inner())
    }

    /// Recovered aggregation `-rho(const x)(omega)`.
    fn lambda_hat(&self, x: Vec<f64>, atom: usize) -> PyResult<f64> {
        csrm::lambda_hat(&self.inner, &x, atom).map_err(err)
    }

    /// Randomized axiom checks; `axioms` is a list of names or `"all"`.
    #[pyo3(signature = (axioms, trials=500, seed=0))]
    fn check_axioms<'py>(
        &self,
        py: Python<'py>,
        axioms: &Bound<'py, PyAny>,
        trials: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let names: Vec<String> = if let Ok(s) = axioms.extract::<String>() {
            vec![s]
        } else {
            axioms.extract()?
        };
        let list: Vec<Axiom> = if names.len() == 1 && names[0] == "all" {
            Axiom::ALL.to_vec()
        } else {
            names.iter().map(|n| n.parse::<Axiom>()).collect::<Result<_, _>>().map_err(err)?
        };
        let reports = py
            .detach(|| csrm::check_axioms(&self.inner, &list, trials, seed))
            .map_err(err)?;
        to_py(py, &reports)
    }
}

/// Random interbank network with closed balance sheets.
#[pyclass(module = "sysrisk")]
struct Network {
    inner: network_sim::Network,
}

#[pymethods]
impl Network {
    #[staticmethod]
    #[pyo3(signature = (seed, d=10, p=0.35, exposure_scale=50.0, equity_ratio=0.05, external_liability_multiple=1.0))]
    fn generate(
        seed: u64,
        d: usize,
        p: f64,
        exposure_scale: f64,
        equity_ratio: f64,
        external_liability_multiple: f64,
    ) -> PyResult<Self> {
        let params = NetworkParams {
            institutions: d,
            edge_probability: p,
            exposure: network_sim::ExposureLaw::HalfNormal { scale: exposure_scale },
            equity_ratio,
            external_liability_multiple,
        };
        let inner = network_sim::gen_network_with(&params, seed).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn liabilities(&self) -> Vec<f64> {
        self.inner.liabilities()
    }

    fn relative_liabilities(&self) -> Vec<Vec<f64>> {
        self.inner.relative_liabilities()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn to_dot(&self) -> String {
        self.inner.to_dot(None)
    }

    /// Clearing aggregate of this network as an aggregation spec dict.
    #[pyo3(signature = (objective="cm1", gamma=f64::INFINITY))]
    fn clearing_spec<'py>(&self, py: Python<'py>, objective: &str, gamma: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.clearing_spec(self::objective(objective)?, gamma))
    }

    /// Correlated shocked-equity scenarios.
    #[pyo3(signature = (n, seed, corr=0.3, vol_ratio=0.08))]
    fn shocks(&self, py: Python<'_>, n: usize, seed: u64, corr: f64, vol_ratio: f64) -> PyResult<Scenarios> {
        let inner = py
            .detach(|| network_sim::gen_shocks(&self.inner, n, corr, vol_ratio, seed))
            .map_err(err)?;
        Ok(Scenarios { inner })
    }

    /// Monte Carlo summary of the clearing aggregate over `scenarios`.
    #[pyo3(signature = (scenarios, objective="cm1", gamma=f64::INFINITY))]
    fn run_mc<'py>(
        &self,
        py: Python<'py>,
        scenarios: &Scenarios,
        objective: &str,
        gamma: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let spec = self.inner.clearing_spec(self::objective(objective)?, gamma);
        let res = py.detach(|| network_sim::run_mc(&scenarios.inner, &spec)).map_err(err)?;
        to_py(py, &res.summary)
    }
}

/// Scenario set `x[scenario][institution]`.
#[pyclass(module = "sysrisk")]
struct Scenarios {
    inner: network_sim::ScenarioSet,
}

#[pymethods]
impl Scenarios {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = network_sim::ScenarioSet::from_rows(rows).map_err(err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.shocked_equity.clone()
    }

    /// CoVaR of institution `j` for the given aggregation (default: Sum).
    #[pyo3(signature = (j, q, aggregation=None))]
    fn covar(&self, py: Python<'_>, j: usize, q: f64, aggregation: Option<&Bound<'_, PyAny>>) -> PyResult<f64> {
        let agg = aggregation.map(from_py).transpose()?.unwrap_or(AggregationSpec::Sum);
        let r = py.detach(|| metrics::covar_j(&self.inner, j, q, &agg)).map_err(err)?;
        Ok(r.value())
    }

    /// CoES, conditioned on institution `j` or unconditional when `j` is None.
    #[pyo3(signature = (q, j=None, aggregation=None))]
    fn coes(&self, py: Python<'_>, q: f64, j: Option<usize>, aggregation: Option<&Bound<'_, PyAny>>) -> PyResult<f64> {
        let agg = aggregation.map(from_py).transpose()?.unwrap_or(AggregationSpec::Sum);
        let r = py.detach(|| metrics::coes(&self.inner, j, q, &agg)).map_err(err)?;
        Ok(r.value())
    }

    fn ses(&self, j: usize, q: f64) -> PyResult<f64> {
        Ok(metrics::ses_j(&self.inner, j, q).map_err(err)?.value())
    }

    #[pyo3(signature = (theta, density=None))]
    fn dip(&self, theta: f64, density: Option<Vec<f64>>) -> PyResult<f64> {
        Ok(metrics::dip(&self.inner, theta, density.as_deref()).map_err(err)?.value())
    }
}

/// 0-based institution order by value (ascending unless told otherwise).
#[pyfunction]
#[pyo3(signature = (values, ascending=true))]
fn rank(values: Vec<f64>, ascending: bool) -> Vec<usize> {
    metrics::rank(&values, ascending)
}

#[pymodule]
fn sysrisk(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(var, m)?)?;
    m.add_function(wrap_pyfunction!(avar, m)?)?;
    m.add_function(wrap_pyfunction!(conditional_risk, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(rank, m)?)?;
    m.add_class::<ClearingProblem>()?;
    m.add_class::<Csrm>()?;
    m.add_class::<Network>()?;
    m.add_class::<Scenarios>()?;
    Ok(())
}
