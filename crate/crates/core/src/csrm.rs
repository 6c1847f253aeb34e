//! Composition `rho = eta o Lambda`, recovery of both components from a risk
//! map, and randomised checks of the systemic risk measure axioms.
//!
//! All spaces are finite, so every almost-sure statement is checked on every
//! atom. The pointwise risk of `X` is `r_X(omega) = rho(X(omega))(omega)`, the
//! risk of the constant vector `X(omega)` read off in state `omega`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationSpec;
use crate::error::{Error, Result};
use crate::prob_space::{FiniteProbSpace, Partition, RandomVariable, RandomVector};
use crate::risk_measures::RiskMeasureSpec;

/// Absolute slack (scaled by the magnitude of the compared values) in axiom verdicts.
pub const AXIOM_TOL: f64 = 1e-9;

/// A map from `d`-dimensional random vectors to G-measurable random variables.
pub trait RiskMap: Sync {
    fn space(&self) -> &FiniteProbSpace;
    fn partition(&self) -> &Partition;
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &RandomVector) -> Result<RandomVariable>;

    fn evaluate_constant(&self, x: &[f64]) -> Result<RandomVariable> {
        self.evaluate(&RandomVector::constant(self.space().len(), x))
    }

    /// `rho(x)(omega)` for the constant vector `x`.
    fn pointwise_risk(&self, x: &[f64], atom: usize) -> Result<f64> {
        Ok(self.evaluate_constant(x)?[atom])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Csrm {
    pub space: FiniteProbSpace,
    pub partition: Partition,
    pub eta: RiskMeasureSpec,
    pub lambda: AggregationSpec,
    pub dim: usize,
}

impl Csrm {
    pub fn new(
        space: FiniteProbSpace,
        partition: Partition,
        eta: RiskMeasureSpec,
        lambda: AggregationSpec,
        dim: usize,
    ) -> Result<Self> {
        let rho = Self {
            space,
            partition,
            eta,
            lambda,
            dim,
        };
        rho.validate()?;
        Ok(rho)
    }

    pub fn validate(&self) -> Result<()> {
        if self.partition.atoms() != self.space.len() {
            return Err(Error::DimensionMismatch(format!(
                "partition covers {} atoms, space has {}",
                self.partition.atoms(),
                self.space.len()
            )));
        }
        if let Some(d) = self.lambda.natural_dim() {
            if d != self.dim {
                return Err(Error::DimensionMismatch(format!(
                    "aggregation expects {d} institutions, CSRM declares {}",
                    self.dim
                )));
            }
        }
        self.eta.validate(&self.space)?;
        self.lambda.validate()?;
        self.lambda.check_measurable(&self.partition)?;
        let defect = self.constancy_defect(8, 0)?;
        if defect > 1e-10 {
            return Err(Error::InvalidParams(format!(
                "base risk measure is not constant on the aggregation (defect {defect:e})"
            )));
        }
        Ok(())
    }

    /// Largest `|eta(Lambda(x)) + Lambda(x)|` over sampled constants `x`.
    pub fn constancy_defect(&self, samples: usize, rng_seed: u64) -> Result<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
        let mut worst = 0.0_f64;
        for k in 0..samples {
            let x: Vec<f64> = if k == 0 {
                vec![0.0; self.dim]
            } else {
                (0..self.dim).map(|_| rng.random_range(-5.0..5.0)).collect()
            };
            let f = self.lambda.extend(&RandomVector::constant(self.space.len(), &x))?;
            let r = self.eta.evaluate(&self.space, &f, &self.partition)?;
            let scale = 1.0 + f.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            worst = worst.max(r.zip_with(&f, |a, b| a + b).values().iter().fold(0.0_f64, |m, v| m.max(v.abs())) / scale);
        }
        Ok(worst)
    }
}

impl RiskMap for Csrm {
    fn space(&self) -> &FiniteProbSpace {
        &self.space
    }

    fn partition(&self) -> &Partition {
        &self.partition
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &RandomVector) -> Result<RandomVariable> {
        self.space.check_vector(x)?;
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch(format!("expected {} institutions, got {}", self.dim, x.dim())));
        }
        let f = self.lambda.extend(x)?;
        self.eta.evaluate(&self.space, &f, &self.partition)
    }
}

/// `Lambda_hat(x, omega) = -rho(x)(omega)`.
pub fn lambda_hat(rho: &dyn RiskMap, x: &[f64], atom: usize) -> Result<f64> {
    Ok(-rho.pointwise_risk(x, atom)?)
}

/// Sampled extracted aggregation: `values[k][omega] = Lambda_hat(points[k], omega)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationTable {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl AggregationTable {
    /// True when no sampled value depends on the state.
    pub fn is_state_independent(&self, tol: f64) -> bool {
        self.values
            .iter()
            .all(|row| row.iter().all(|v| (v - row[0]).abs() <= tol))
    }

    /// Largest deviation from `spec` over all grid points and atoms.
    pub fn max_deviation(&self, spec: &AggregationSpec) -> Result<f64> {
        let mut worst = 0.0_f64;
        for (x, row) in self.points.iter().zip(&self.values) {
            for (atom, v) in row.iter().enumerate() {
                worst = worst.max((spec.aggregate_at(x, atom)? - v).abs());
            }
        }
        Ok(worst)
    }
}

/// The lattice `{-2,...,2}^d` followed by 32 uniform points in `[-5,5]^d`.
pub fn default_probe_grid(d: usize, rng_seed: u64) -> Vec<Vec<f64>> {
    let mut grid = vec![Vec::new()];
    for _ in 0..d {
        grid = grid
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                (-2..=2).map(move |k| {
                    let mut q = p.clone();
                    q.push(k as f64);
                    q
                })
            })
            .collect();
    }
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    grid.extend((0..32).map(|_| (0..d).map(|_| rng.random_range(-5.0..=5.0)).collect::<Vec<_>>()));
    grid
}

pub fn extract_aggregation(rho: &dyn RiskMap, probe_grid: &[Vec<f64>]) -> Result<AggregationTable> {
    if probe_grid.is_empty() {
        return Err(Error::InvalidParams("probe grid is empty".into()));
    }
    let values = probe_grid
        .par_iter()
        .map(|x| Ok(rho.evaluate_constant(x)?.values().iter().map(|v| -v).collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(AggregationTable {
        points: probe_grid.to_vec(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseEntry {
    pub image: RandomVariable,
    pub risk: RandomVariable,
}

/// Sampled extracted base risk measure `eta_hat(F) = rho(X)` with `F = Lambda_hat(X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseTable {
    pub entries: Vec<BaseEntry>,
    /// Probe pairs whose images coincided and whose risks were compared.
    pub matched_pairs: usize,
    /// Whether `F >= G` implied `eta_hat(F) <= eta_hat(G)` on every probed pair.
    pub antitone_on_probes: bool,
}

fn scale_of(values: &[f64]) -> f64 {
    1.0 + values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Image tolerance under which two probes are treated as having the same aggregate.
pub const IMAGE_TOL: f64 = 1e-9;

/// Builds `eta_hat` on the images of the probes and verifies that probes
/// with equal images have equal risk.
pub fn extract_base<F>(rho: &dyn RiskMap, lambda_hat: F, probe_points: &[RandomVector]) -> Result<BaseTable>
where
    F: Fn(&[f64], usize) -> Result<f64> + Sync,
{
    let entries = probe_points
        .par_iter()
        .map(|x| {
            let image: Vec<f64> = x
                .rows()
                .enumerate()
                .map(|(atom, row)| lambda_hat(row, atom))
                .collect::<Result<_>>()?;
            Ok(BaseEntry {
                image: RandomVariable::new(image),
                risk: rho.evaluate(x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut matched_pairs = 0;
    let mut antitone = true;
    for a in 0..entries.len() {
        for b in (a + 1)..entries.len() {
            let (ea, eb) = (&entries[a], &entries[b]);
            let scale = scale_of(ea.image.values()).max(scale_of(eb.image.values()));
            let gap = ea.image.max_abs_diff(&eb.image);
            let risk_scale = scale_of(ea.risk.values()).max(scale_of(eb.risk.values()));
            if gap <= IMAGE_TOL * scale {
                matched_pairs += 1;
                if ea.risk.max_abs_diff(&eb.risk) > AXIOM_TOL * risk_scale {
                    return Err(Error::InconsistentRho { first: a, second: b });
                }
            }
            for (hi, lo) in [(ea, eb), (eb, ea)] {
                let dominates = hi.image.values().iter().zip(lo.image.values()).all(|(u, v)| u >= v);
                let violated = hi
                    .risk
                    .values()
                    .iter()
                    .zip(lo.risk.values())
                    .any(|(u, v)| *u > v + AXIOM_TOL * risk_scale);
                if dominates && violated {
                    antitone = false;
                }
            }
        }
    }
    Ok(BaseTable {
        entries,
        matched_pairs,
        antitone_on_probes: antitone,
    })
}

/// A probe with the same extracted image as `x`: in every state the row is
/// `s * (1,...,1)` with `s` found by bisection on `Lambda_hat(s * 1, omega)`.
pub fn matched_probe<F>(lambda_hat: F, x: &RandomVector) -> Result<Option<RandomVector>>
where
    F: Fn(&[f64], usize) -> Result<f64>,
{
    let d = x.dim();
    let mut rows = Vec::with_capacity(x.atoms());
    for (atom, row) in x.rows().enumerate() {
        let target = lambda_hat(row, atom)?;
        let phi = |s: f64| lambda_hat(&vec![s; d], atom);
        match solve_monotone(&phi, target, true)? {
            Some(s) => rows.push(vec![s; d]),
            None => return Ok(None),
        }
    }
    Ok(Some(RandomVector::from_rows(rows)?))
}

/// Permutes the coordinates inside every row; preserves symmetric aggregates.
pub fn permuted_probe(x: &RandomVector, rng: &mut impl Rng) -> RandomVector {
    let mut out = x.clone();
    for atom in 0..x.atoms() {
        let row = out.row_mut(atom);
        for i in (1..row.len()).rev() {
            let j = rng.random_range(0..=i);
            row.swap(i, j);
        }
    }
    out
}

/// Finds `s` with `phi(s) == target` for a monotone `phi` (isotone when
/// `increasing`), or `None` when the target is out of reach.
fn solve_monotone(phi: &dyn Fn(f64) -> Result<f64>, target: f64, increasing: bool) -> Result<Option<f64>> {
    let sign = if increasing { 1.0 } else { -1.0 };
    let g = |s: f64| -> Result<f64> { Ok(sign * (phi(s)? - target)) };
    let g0 = g(0.0)?;
    if g0 == 0.0 {
        return Ok(Some(0.0));
    }
    let (mut lo, mut hi);
    let mut step = 1.0;
    if g0 < 0.0 {
        lo = 0.0;
        loop {
            hi = step;
            if g(hi)? >= 0.0 {
                break;
            }
            lo = hi;
            step *= 2.0;
            if step > 1e12 {
                return Ok(None);
            }
        }
    } else {
        hi = 0.0;
        loop {
            lo = -step;
            if g(lo)? <= 0.0 {
                break;
            }
            hi = lo;
            step *= 2.0;
            if step > 1e12 {
                return Ok(None);
            }
        }
    }
    bisect(&g, lo, hi).map(Some)
}

/// Root of `g` on `[lo, hi]` given `g(lo) <= 0 <= g(hi)`; returns the end
/// point with the smaller residual.
fn bisect(g: &dyn Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64) -> Result<f64> {
    let (mut glo, mut ghi) = (g(lo)?, g(hi)?);
    for _ in 0..200 {
        if glo == 0.0 {
            return Ok(lo);
        }
        if ghi == 0.0 {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid)?;
        if gm <= 0.0 {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
            ghi = gm;
        }
    }
    Ok(if glo.abs() <= ghi.abs() { lo } else { hi })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axiom {
    AntitoneOnConstants,
    ConvexOnConstants,
    PosHomOnConstants,
    RiskAntitone,
    RiskConvex,
    RiskQuasiconvex,
    RiskPosHom,
    RiskRegular,
    Antitone,
    Convex,
    Quasiconvex,
    PosHom,
}

impl Axiom {
    pub const ALL: [Axiom; 12] = [
        Axiom::AntitoneOnConstants,
        Axiom::ConvexOnConstants,
        Axiom::PosHomOnConstants,
        Axiom::RiskAntitone,
        Axiom::RiskConvex,
        Axiom::RiskQuasiconvex,
        Axiom::RiskPosHom,
        Axiom::RiskRegular,
        Axiom::Antitone,
        Axiom::Convex,
        Axiom::Quasiconvex,
        Axiom::PosHom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axiom::AntitoneOnConstants => "antitone_on_constants",
            Axiom::ConvexOnConstants => "convex_on_constants",
            Axiom::PosHomOnConstants => "pos_hom_on_constants",
            Axiom::RiskAntitone => "risk_antitone",
            Axiom::RiskConvex => "risk_convex",
            Axiom::RiskQuasiconvex => "risk_quasiconvex",
            Axiom::RiskPosHom => "risk_pos_hom",
            Axiom::RiskRegular => "risk_regular",
            Axiom::Antitone => "antitone",
            Axiom::Convex => "convex",
            Axiom::Quasiconvex => "quasiconvex",
            Axiom::PosHom => "pos_hom",
        }
    }
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axiom {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        let key = key.replace("positive_homogeneity", "pos_hom").replace("positive_homogeneous", "pos_hom");
        Axiom::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| Error::UnknownAxiom(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub trial: usize,
    pub description: String,
    pub violation: f64,
    pub inputs: BTreeMap<String, serde_json::Value>,
}

impl Counterexample {
    pub fn new(description: impl Into<String>) -> Self {
        Self {
            trial: 0,
            description: description.into(),
            violation: 0.0,
            inputs: BTreeMap::new(),
        }
    }

    pub fn with<T: Serialize + ?Sized>(mut self, name: &str, value: &T) -> Self {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.inputs.insert(name.to_string(), v);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: String,
    pub passed: bool,
    pub trials: usize,
    /// Trials whose hypothesis could not be constructed; they carry no verdict.
    pub vacuous: usize,
    pub violations: usize,
    pub max_violation: f64,
    pub counterexample: Option<Counterexample>,
}

impl PropertyReport {
    pub fn new(property: impl Into<String>) -> Self {
        Self {
            property: property.into(),
            passed: true,
            trials: 0,
            vacuous: 0,
            violations: 0,
            max_violation: 0.0,
            counterexample: None,
        }
    }

    /// Records one checked trial; `violation > tol` fails the property and
    /// keeps the worst counterexample.
    pub fn record(&mut self, trial: usize, violation: f64, tol: f64, make: impl FnOnce() -> Counterexample) {
        self.trials += 1;
        let excess = if violation.is_nan() { f64::INFINITY } else { violation };
        if excess > tol {
            self.passed = false;
            self.violations += 1;
            if excess > self.max_violation || self.counterexample.is_none() {
                let mut c = make();
                c.trial = trial;
                c.violation = excess;
                self.counterexample = Some(c);
            }
        }
        self.max_violation = self.max_violation.max(excess.max(0.0));
    }

    pub fn record_vacuous(&mut self) {
        self.trials += 1;
        self.vacuous += 1;
    }
}

enum Outcome {
    Vacuous,
    Checked {
        violation: f64,
        tol: f64,
        counterexample: Option<Counterexample>,
    },
}

struct Harness<'a> {
    rho: &'a dyn RiskMap,
    n: usize,
    d: usize,
}

fn draw_entry(rng: &mut ChaCha20Rng) -> f64 {
    match rng.random_range(0..4) {
        0 => 0.0,
        1 => rng.random_range(-15.0..-5.0),
        _ => rng.random_range(-5.0..5.0),
    }
}

impl Harness<'_> {
    fn random_vector(&self, rng: &mut ChaCha20Rng) -> RandomVector {
        let data = (0..self.n * self.d).map(|_| draw_entry(rng)).collect();
        RandomVector::from_flat(self.n, self.d, data)
    }

    fn random_point(&self, rng: &mut ChaCha20Rng) -> Vec<f64> {
        (0..self.d).map(|_| draw_entry(rng)).collect()
    }

    fn measurable_vector(&self, rng: &mut ChaCha20Rng) -> RandomVector {
        let g = self.rho.partition();
        let mut x = RandomVector::from_flat(self.n, self.d, vec![0.0; self.n * self.d]);
        for block in g.blocks() {
            let p = self.random_point(rng);
            for &w in block {
                x.row_mut(w).copy_from_slice(&p);
            }
        }
        x
    }

    fn measurable_scalar(&self, rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> RandomVariable {
        let g = self.rho.partition();
        let mut out = vec![0.0; self.n];
        for block in g.blocks() {
            let v = match rng.random_range(0..5) {
                0 => lo,
                1 => hi,
                _ => rng.random_range(lo..hi),
            };
            for &w in block {
                out[w] = v;
            }
        }
        RandomVariable::new(out)
    }

    fn pointwise(&self, x: &RandomVector) -> Result<RandomVariable> {
        let vals = x
            .rows()
            .enumerate()
            .map(|(atom, row)| self.rho.pointwise_risk(row, atom))
            .collect::<Result<Vec<_>>>()?;
        Ok(RandomVariable::new(vals))
    }

    /// A vector `z` with `r(z, atom) == target` (or `>= target` when `at_least`),
    /// trying `w + s * 1` for each starting point and the segment between the
    /// two given anchors.
    fn hit(
        &self,
        atom: usize,
        target: f64,
        at_least: bool,
        starts: &[Vec<f64>],
        segment: Option<(&[f64], &[f64])>,
    ) -> Result<Option<Vec<f64>>> {
        let tol = 1e-11 * (1.0 + target.abs());
        let accept = |v: f64| if at_least { v >= target } else { (v - target).abs() <= tol };
        for w in starts {
            if accept(self.rho.pointwise_risk(w, atom)?) {
                return Ok(Some(w.clone()));
            }
            let shifted = |s: f64| -> Vec<f64> { w.iter().map(|v| v + s).collect() };
            // risk decreases as every coordinate increases
            let phi = |s: f64| self.rho.pointwise_risk(&shifted(s), atom);
            let Some(s) = solve_monotone(&phi, target, false)? else { continue };
            // move toward higher risk until the inequality holds exactly
            let mut z = shifted(s);
            let mut r = self.rho.pointwise_risk(&z, atom)?;
            if at_least {
                let mut back = 1e-13 * (1.0 + s.abs());
                for _ in 0..40 {
                    if r >= target {
                        break;
                    }
                    z = shifted(s - back);
                    r = self.rho.pointwise_risk(&z, atom)?;
                    back *= 2.0;
                }
            }
            if accept(r) {
                return Ok(Some(z));
            }
        }
        if let (Some((a, b)), false) = (segment, at_least) {
            let point = |t: f64| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| t * u + (1.0 - t) * v).collect() };
            let (ra, rb) = (self.rho.pointwise_risk(a, atom)?, self.rho.pointwise_risk(b, atom)?);
            if (ra - target) * (rb - target) <= 0.0 {
                let sign = if ra >= rb { 1.0 } else { -1.0 };
                let g = |t: f64| -> Result<f64> { Ok(sign * (self.rho.pointwise_risk(&point(t), atom)? - target)) };
                let t = bisect(&g, 0.0, 1.0)?;
                let z = point(t);
                if accept(self.rho.pointwise_risk(&z, atom)?) {
                    return Ok(Some(z));
                }
            }
        }
        Ok(None)
    }

    /// Builds `Z` with pointwise risk `targets`, or `None` if some state is unreachable.
    fn construct(
        &self,
        rng: &mut ChaCha20Rng,
        targets: &RandomVariable,
        at_least: bool,
        natural: Option<&RandomVector>,
        anchors: Option<(&RandomVector, &RandomVector)>,
    ) -> Result<Option<RandomVector>> {
        let mut z = RandomVector::from_flat(self.n, self.d, vec![0.0; self.n * self.d]);
        for atom in 0..self.n {
            let mut starts = vec![self.random_point(rng)];
            if let Some(nat) = natural {
                starts.push(nat.row(atom).to_vec());
            }
            starts.push(vec![0.0; self.d]);
            let segment = anchors.map(|(a, b)| (a.row(atom), b.row(atom)));
            match self.hit(atom, targets[atom], at_least, &starts, segment)? {
                Some(row) => z.row_mut(atom).copy_from_slice(&row),
                None => return Ok(None),
            }
        }
        Ok(Some(z))
    }
}

fn tol_for(values: &[&RandomVariable]) -> f64 {
    AXIOM_TOL * values.iter().map(|v| scale_of(v.values())).fold(1.0, f64::max)
}

fn max_excess(lhs: &RandomVariable, rhs: &RandomVariable) -> f64 {
    lhs.values()
        .iter()
        .zip(rhs.values())
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn rows(x: &RandomVector) -> Vec<Vec<f64>> {
    x.to_rows()
}

fn run_trial(h: &Harness<'_>, axiom: Axiom, rng: &mut ChaCha20Rng) -> Result<Outcome> {
    let rho = h.rho;
    let n = h.n;
    let checked = |violation: f64, tol: f64, make: &dyn Fn() -> Counterexample| Outcome::Checked {
        violation,
        tol,
        counterexample: (violation > tol || violation.is_nan()).then(make),
    };
    Ok(match axiom {
        Axiom::AntitoneOnConstants => {
            let x = h.random_point(rng);
            let y: Vec<f64> = x.iter().map(|v| v - rng.random_range(0.0..3.0) * rng.random_range(0..2) as f64).collect();
            let (rx, ry) = (rho.evaluate_constant(&x)?, rho.evaluate_constant(&y)?);
            checked(max_excess(&rx, &ry), tol_for(&[&rx, &ry]), &|| {
                Counterexample::new("x >= y but rho(x) > rho(y)")
                    .with("x", &x)
                    .with("y", &y)
                    .with("rho_x", &rx)
                    .with("rho_y", &ry)
            })
        }
        Axiom::ConvexOnConstants => {
            let (x, y) = (h.random_point(rng), h.random_point(rng));
            let lambda: f64 = rng.random_range(0.0..=1.0);
            let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            let (rx, ry, rz) = (rho.evaluate_constant(&x)?, rho.evaluate_constant(&y)?, rho.evaluate_constant(&z)?);
            let bound = rx.zip_with(&ry, |a, b| lambda * a + (1.0 - lambda) * b);
            checked(max_excess(&rz, &bound), tol_for(&[&rx, &ry, &rz]), &|| {
                Counterexample::new("rho(lambda x + (1-lambda) y) exceeds the chord")
                    .with("x", &x)
                    .with("y", &y)
                    .with("lambda", &lambda)
                    .with("rho_mix", &rz)
                    .with("chord", &bound)
            })
        }
        Axiom::PosHomOnConstants => {
            let x = h.random_point(rng);
            let lambda: f64 = rng.random_range(0.0..3.0);
            let y: Vec<f64> = x.iter().map(|v| lambda * v).collect();
            let (rx, ry) = (rho.evaluate_constant(&x)?, rho.evaluate_constant(&y)?);
            let scaled = rx.map(|v| lambda * v);
            let gap = ry.max_abs_diff(&scaled);
            checked(gap, tol_for(&[&ry, &scaled]), &|| {
                Counterexample::new("rho(lambda x) != lambda rho(x)")
                    .with("x", &x)
                    .with("lambda", &lambda)
                    .with("rho_x", &rx)
                    .with("rho_scaled", &ry)
            })
        }
        Axiom::RiskAntitone => {
            let y = h.random_vector(rng);
            let ry_pt = h.pointwise(&y)?;
            let bump: Vec<f64> = (0..n)
                .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..3.0) })
                .collect();
            let targets = RandomVariable::new(ry_pt.values().iter().zip(&bump).map(|(a, b)| a + b).collect());
            let Some(x) = h.construct(rng, &targets, true, Some(&y), None)? else {
                return Ok(Outcome::Vacuous);
            };
            let rx_pt = h.pointwise(&x)?;
            if rx_pt.values().iter().zip(ry_pt.values()).any(|(a, b)| a < b) {
                return Ok(Outcome::Vacuous);
            }
            let (rx, ry) = (rho.evaluate(&x)?, rho.evaluate(&y)?);
            checked(max_excess(&ry, &rx), tol_for(&[&rx, &ry]), &|| {
                Counterexample::new("pointwise risk of X dominates that of Y but rho(X) < rho(Y)")
                    .with("X", &rows(&x))
                    .with("Y", &rows(&y))
                    .with("rho_X", &rx)
                    .with("rho_Y", &ry)
            })
        }
        Axiom::RiskConvex | Axiom::RiskQuasiconvex => {
            let (x, y) = (h.random_vector(rng), h.random_vector(rng));
            let alpha = h.measurable_scalar(rng, 0.0, 1.0);
            let (px, py) = (h.pointwise(&x)?, h.pointwise(&y)?);
            let targets = RandomVariable::new(
                (0..n)
                    .map(|w| alpha[w] * px[w] + (1.0 - alpha[w]) * py[w])
                    .collect(),
            );
            let natural = RandomVector::from_flat(
                n,
                h.d,
                (0..n * h.d)
                    .map(|k| {
                        let w = k / h.d;
                        alpha[w] * x.row(w)[k % h.d] + (1.0 - alpha[w]) * y.row(w)[k % h.d]
                    })
                    .collect(),
            );
            let Some(z) = h.construct(rng, &targets, false, Some(&natural), Some((&x, &y)))? else {
                return Ok(Outcome::Vacuous);
            };
            let (rx, ry, rz) = (rho.evaluate(&x)?, rho.evaluate(&y)?, rho.evaluate(&z)?);
            let bound = if axiom == Axiom::RiskConvex {
                RandomVariable::new((0..n).map(|w| alpha[w] * rx[w] + (1.0 - alpha[w]) * ry[w]).collect())
            } else {
                rx.zip_with(&ry, f64::max)
            };
            checked(max_excess(&rz, &bound), tol_for(&[&rx, &ry, &rz]), &|| {
                Counterexample::new(
                    "pointwise risk of Z mixes those of X and Y with G-measurable alpha, but rho(Z) exceeds the bound",
                )
                .with("X", &rows(&x))
                .with("Y", &rows(&y))
                .with("Z", &rows(&z))
                .with("alpha", &alpha)
                .with("rho_X", &rx)
                .with("rho_Y", &ry)
                .with("rho_Z", &rz)
                .with("bound", &bound)
            })
        }
        Axiom::RiskPosHom => {
            let x = h.random_vector(rng);
            let alpha = h.measurable_scalar(rng, 0.0, 3.0);
            let px = h.pointwise(&x)?;
            let targets = RandomVariable::new((0..n).map(|w| alpha[w] * px[w]).collect());
            let natural = RandomVector::from_flat(
                n,
                h.d,
                (0..n * h.d).map(|k| alpha[k / h.d] * x.row(k / h.d)[k % h.d]).collect(),
            );
            let Some(y) = h.construct(rng, &targets, false, Some(&natural), None)? else {
                return Ok(Outcome::Vacuous);
            };
            let (rx, ry) = (rho.evaluate(&x)?, rho.evaluate(&y)?);
            let scaled = RandomVariable::new((0..n).map(|w| alpha[w] * rx[w]).collect());
            checked(ry.max_abs_diff(&scaled), tol_for(&[&ry, &scaled]), &|| {
                Counterexample::new("pointwise risk of Y is alpha times that of X but rho(Y) != alpha rho(X)")
                    .with("X", &rows(&x))
                    .with("Y", &rows(&y))
                    .with("alpha", &alpha)
                    .with("rho_X", &rx)
                    .with("rho_Y", &ry)
            })
        }
        Axiom::RiskRegular => {
            let x = h.measurable_vector(rng);
            let (rx, px) = (rho.evaluate(&x)?, h.pointwise(&x)?);
            checked(rx.max_abs_diff(&px), tol_for(&[&rx, &px]), &|| {
                Counterexample::new("rho(X) differs from the pointwise risk for G-measurable X")
                    .with("X", &rows(&x))
                    .with("rho_X", &rx)
                    .with("pointwise", &px)
            })
        }
        Axiom::Antitone => {
            let y = h.random_vector(rng);
            let mut x = y.clone();
            for w in 0..n {
                for v in x.row_mut(w) {
                    if rng.random_bool(0.6) {
                        *v += rng.random_range(0.0..4.0);
                    }
                }
            }
            let (rx, ry) = (rho.evaluate(&x)?, rho.evaluate(&y)?);
            checked(max_excess(&rx, &ry), tol_for(&[&rx, &ry]), &|| {
                Counterexample::new("X >= Y but rho(X) > rho(Y)")
                    .with("X", &rows(&x))
                    .with("Y", &rows(&y))
                    .with("rho_X", &rx)
                    .with("rho_Y", &ry)
            })
        }
        Axiom::Convex | Axiom::Quasiconvex => {
            let (x, y) = (h.random_vector(rng), h.random_vector(rng));
            let alpha = h.measurable_scalar(rng, 0.0, 1.0);
            let z = RandomVector::from_flat(
                n,
                h.d,
                (0..n * h.d)
                    .map(|k| {
                        let w = k / h.d;
                        alpha[w] * x.row(w)[k % h.d] + (1.0 - alpha[w]) * y.row(w)[k % h.d]
                    })
                    .collect(),
            );
            let (rx, ry, rz) = (rho.evaluate(&x)?, rho.evaluate(&y)?, rho.evaluate(&z)?);
            let bound = if axiom == Axiom::Convex {
                RandomVariable::new((0..n).map(|w| alpha[w] * rx[w] + (1.0 - alpha[w]) * ry[w]).collect())
            } else {
                rx.zip_with(&ry, f64::max)
            };
            checked(max_excess(&rz, &bound), tol_for(&[&rx, &ry, &rz]), &|| {
                Counterexample::new("rho(alpha X + (1-alpha) Y) exceeds the bound")
                    .with("X", &rows(&x))
                    .with("Y", &rows(&y))
                    .with("alpha", &alpha)
                    .with("rho_Z", &rz)
                    .with("bound", &bound)
            })
        }
        Axiom::PosHom => {
            let x = h.random_vector(rng);
            let alpha = h.measurable_scalar(rng, 0.0, 3.0);
            let y = RandomVector::from_flat(
                n,
                h.d,
                (0..n * h.d).map(|k| alpha[k / h.d] * x.row(k / h.d)[k % h.d]).collect(),
            );
            let (rx, ry) = (rho.evaluate(&x)?, rho.evaluate(&y)?);
            let scaled = RandomVariable::new((0..n).map(|w| alpha[w] * rx[w]).collect());
            checked(ry.max_abs_diff(&scaled), tol_for(&[&ry, &scaled]), &|| {
                Counterexample::new("rho(alpha X) != alpha rho(X)")
                    .with("X", &rows(&x))
                    .with("alpha", &alpha)
                    .with("rho_X", &rx)
                    .with("rho_alpha_X", &ry)
            })
        }
    })
}

/// Randomised test of one axiom; trial `k` draws from the ChaCha stream `k` of `rng_seed`.
pub fn check_axiom(rho: &dyn RiskMap, axiom: Axiom, trials: usize, rng_seed: u64) -> Result<PropertyReport> {
    let h = Harness {
        rho,
        n: rho.space().len(),
        d: rho.dim(),
    };
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
            rng.set_stream(trial as u64);
            run_trial(&h, axiom, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = PropertyReport::new(axiom.name());
    for (trial, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Outcome::Vacuous => report.record_vacuous(),
            Outcome::Checked {
                violation,
                tol,
                counterexample,
            } => report.record(trial, violation, tol, || counterexample.expect("built on violation")),
        }
    }
    Ok(report)
}

pub fn check_axioms(rho: &dyn RiskMap, axioms: &[Axiom], trials: usize, rng_seed: u64) -> Result<Vec<PropertyReport>> {
    axioms.iter().map(|&a| check_axiom(rho, a, trials, rng_seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_csrm(n: usize, eta: RiskMeasureSpec, lambda: AggregationSpec, d: usize) -> Csrm {
        Csrm::new(FiniteProbSpace::uniform(n), Partition::trivial(n), eta, lambda, d).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let rho = uniform_csrm(2, RiskMeasureSpec::NegExpectation { density: None }, AggregationSpec::Sum, 2);
        let x = RandomVector::from_rows(vec![vec![1.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        assert_eq!(rho.evaluate(&x).unwrap().values(), &[0.0, 0.0]);

        let rho = uniform_csrm(4, RiskMeasureSpec::AVaR { q: 0.25 }, AggregationSpec::Sum, 2);
        let x = RandomVector::from_rows(vec![vec![-1.0, 0.0], vec![-1.0, -1.0], vec![-3.0, 0.0], vec![-2.0, -2.0]]).unwrap();
        assert!(rho.evaluate(&x).unwrap().values().iter().all(|v| (v - 4.0).abs() < 1e-12));

        let c = rho.evaluate_constant(&[1.5, -4.0]).unwrap();
        assert_eq!(c.values(), &[2.5; 4]);
    }

    #[test]
    fn extraction_of_discounted_sum() {
        let space = FiniteProbSpace::uniform(4);
        let g = Partition::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let lambda = AggregationSpec::Discounted {
            inner: Box::new(AggregationSpec::Sum),
            discount: vec![2.0, 2.0, 0.5, 0.5],
        };
        let rho = Csrm::new(space, g, RiskMeasureSpec::NegExpectation { density: None }, lambda.clone(), 2).unwrap();
        let table = extract_aggregation(&rho, &default_probe_grid(2, 1)).unwrap();
        assert_eq!(table.points.len(), 25 + 32);
        assert!(table.max_deviation(&lambda).unwrap() < 1e-12);
        assert!(!table.is_state_independent(1e-12));
    }

    #[test]
    fn deterministic_aggregation_is_state_independent() {
        let rho = uniform_csrm(3, RiskMeasureSpec::AVaR { q: 0.3 }, AggregationSpec::Loss, 2);
        let table = extract_aggregation(&rho, &default_probe_grid(2, 5)).unwrap();
        assert!(table.is_state_independent(0.0));
        assert!(table.max_deviation(&AggregationSpec::Loss).unwrap() < 1e-12);
    }

    #[test]
    fn axiom_names_parse() {
        for a in Axiom::ALL {
            assert_eq!(a.name().parse::<Axiom>().unwrap(), a);
        }
        assert_eq!("risk-convex".parse::<Axiom>().unwrap(), Axiom::RiskConvex);
        assert_eq!("Positive-Homogeneity".parse::<Axiom>().unwrap(), Axiom::PosHom);
        assert!(matches!("monotone".parse::<Axiom>(), Err(Error::UnknownAxiom(_))));
    }

    #[test]
    fn inconsistent_constancy_is_rejected() {
        // VaR on a non-constant density-free setup is fine; a density that does
        // not integrate to one is rejected before constancy is checked
        let bad = Csrm::new(
            FiniteProbSpace::uniform(2),
            Partition::trivial(2),
            RiskMeasureSpec::NegExpectation {
                density: Some(RandomVariable::new(vec![2.0, 2.0])),
            },
            AggregationSpec::Sum,
            1,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn var_fails_risk_convexity() {
        let rho = uniform_csrm(4, RiskMeasureSpec::VaR { q: 0.25 }, AggregationSpec::Sum, 2);
        let report = check_axiom(&rho, Axiom::RiskConvex, 300, 11).unwrap();
        assert!(!report.passed);
        assert!(report.counterexample.is_some());
        let report = check_axiom(&rho, Axiom::RiskPosHom, 100, 11).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn avar_passes_risk_convexity() {
        let rho = uniform_csrm(5, RiskMeasureSpec::AVaR { q: 0.3 }, AggregationSpec::Loss, 3);
        for axiom in [Axiom::RiskConvex, Axiom::RiskRegular, Axiom::RiskAntitone, Axiom::Convex] {
            let report = check_axiom(&rho, axiom, 100, 3).unwrap();
            assert!(report.passed, "{report:?}");
            assert!(report.vacuous < report.trials / 10, "{report:?}");
        }
    }
}
