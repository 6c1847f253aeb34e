//! Contagion clearing with limited liability and lender-of-last-resort
//! capital injections.
//!
//! Given post-shock equity `x`, relative liabilities `Pi` (row `i` holds the
//! shares of `i`'s interbank liabilities owed to each counterparty) and total
//! interbank liabilities `L`, the liability reductions `y` solve
//!
//! ```text
//! y = max(min(Pi^T y - x - b, L), 0)
//! ```
//!
//! for an injection vector `b >= 0`. The CM1 aggregate maximises
//! `sum_i -(x_i + b_i - (Pi^T y)_i)^- - gamma * b_i` over `b`, CM2 maximises
//! `sum_i -y_i - gamma * b_i`. The clearing vector is the least fixed point
//! unless [`FixedPointSelection::Greatest`] is requested.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{neg_part, pos_part, solve_dense};

/// Termination tolerance of the Picard iteration.
pub const FIXED_POINT_EPS: f64 = 1e-10;
/// Maximum fixed-point residual accepted for a returned clearing vector.
pub const RESIDUAL_TOL: f64 = 1e-8;

const MAX_SWEEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Shortfall of every institution (total system loss).
    #[default]
    Cm1,
    /// Only the losses passed on to interbank creditors.
    Cm2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FixedPointSelection {
    /// Smallest reductions, iterated upward from `y = 0`.
    #[default]
    Least,
    /// Largest reductions, iterated downward from `y = L`.
    Greatest,
}

/// JSON form `{"x": [...], "Pi": [[...]], "L": [...], "gamma": g}`.
///
/// `gamma` may be the string `"inf"`, which disables injections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingProblem {
    pub x: Vec<f64>,
    #[serde(rename = "Pi")]
    pub pi: Vec<Vec<f64>>,
    #[serde(rename = "L")]
    pub liabilities: Vec<f64>,
    #[serde(with = "gamma_serde")]
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingSolution {
    pub y: Vec<f64>,
    pub b: Vec<f64>,
    pub value: f64,
}

impl ClearingProblem {
    pub fn new(x: Vec<f64>, pi: Vec<Vec<f64>>, liabilities: Vec<f64>, gamma: f64) -> Result<Self> {
        let p = Self {
            x,
            pi,
            liabilities,
            gamma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.structure().map(|_| ())?;
        if let Some(v) = self.x.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite equity {v}")));
        }
        check_gamma(self.gamma)
    }

    pub fn structure(&self) -> Result<LiabilityStructure> {
        if self.x.len() != self.liabilities.len() {
            return Err(Error::DimensionMismatch(format!(
                "x has {} entries, L has {}",
                self.x.len(),
                self.liabilities.len()
            )));
        }
        LiabilityStructure::new(&self.pi, self.liabilities.clone())
    }
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_nan() || gamma <= 1.0 {
        return Err(Error::InvalidParams(format!(
            "injection cost gamma must exceed 1, got {gamma}"
        )));
    }
    Ok(())
}

/// Validated `(Pi, L)` pair, stored flat for repeated solves.
#[derive(Debug, Clone, PartialEq)]
pub struct LiabilityStructure {
    dim: usize,
    pi: Vec<f64>,
    liabilities: Vec<f64>,
}

impl LiabilityStructure {
    pub fn new(pi: &[Vec<f64>], liabilities: Vec<f64>) -> Result<Self> {
        let d = liabilities.len();
        if d == 0 {
            return Err(Error::InvalidParams("no institutions".into()));
        }
        if pi.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "Pi has {} rows, expected {d}",
                pi.len()
            )));
        }
        let mut flat = Vec::with_capacity(d * d);
        for (i, row) in pi.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "Pi row {i} has {} entries, expected {d}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidParams(format!("Pi row {i} has a negative entry")));
            }
            if row[i] != 0.0 {
                return Err(Error::InvalidParams(format!("Pi[{i}][{i}] must be zero")));
            }
            let s: f64 = row.iter().sum();
            if s > 1.0 + 1e-12 {
                return Err(Error::InvalidParams(format!("Pi row {i} sums to {s} > 1")));
            }
            flat.extend_from_slice(row);
        }
        if let Some(v) = liabilities.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParams(format!("liability {v} is negative")));
        }
        Ok(Self {
            dim: d,
            pi: flat,
            liabilities,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn liabilities(&self) -> &[f64] {
        &self.liabilities
    }

    #[inline]
    pub fn pi(&self, i: usize, j: usize) -> f64 {
        self.pi[i * self.dim + j]
    }

    pub fn pi_rows(&self) -> Vec<Vec<f64>> {
        self.pi.chunks_exact(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// `(Pi^T y)_j = sum_i Pi_ij y_i`: reductions received by `j`.
    pub fn incoming(&self, y: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d];
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            let row = &self.pi[i * d..(i + 1) * d];
            for (o, &p) in out.iter_mut().zip(row) {
                *o += p * yi;
            }
        }
        out
    }

    /// `Pi^T y - x - b`, the unclipped argument of the clearing map.
    pub fn pressure(&self, x: &[f64], b: &[f64], y: &[f64]) -> Vec<f64> {
        let mut v = self.incoming(y);
        for ((vi, xi), bi) in v.iter_mut().zip(x).zip(b) {
            *vi -= xi + bi;
        }
        v
    }

    fn clip(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.liabilities)
            .map(|(&vi, &li)| vi.min(li).max(0.0))
            .collect()
    }

    pub fn residual(&self, x: &[f64], b: &[f64], y: &[f64]) -> f64 {
        let phi = self.clip(&self.pressure(x, b, y));
        phi.iter()
            .zip(y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Upper bound on useful injections: `x_i^- + (Pi^T L)_i`.
    pub fn injection_bounds(&self, x: &[f64]) -> Vec<f64> {
        let inflow = self.incoming(&self.liabilities);
        x.iter().zip(inflow).map(|(&xi, f)| neg_part(xi) + f).collect()
    }

    fn iteration_cap(&self) -> usize {
        let l_inf = self.liabilities.iter().copied().fold(0.0, f64::max);
        let steps = 1.0 + (1.0 + l_inf / FIXED_POINT_EPS).log2();
        (10.0 * self.dim as f64 * steps).ceil() as usize
    }

    /// Clearing vector for injections `b`.
    ///
    /// Picard iteration from the selected extreme point. Each step also tries
    /// to jump to the solution of the affine system defined by the current
    /// regime (each institution either unaffected, fully defaulting or
    /// partially paying). Because the iterates are monotone and bracket the
    /// selected fixed point, an admissible jump lands exactly on it, so the
    /// piecewise-linear map is solved in at most `2d` regime changes.
    pub fn clear(&self, x: &[f64], b: &[f64], selection: FixedPointSelection) -> Result<Vec<f64>> {
        let scale = 1.0
            + x.iter()
                .chain(b)
                .chain(&self.liabilities)
                .fold(0.0_f64, |m, v| m.max(v.abs()));
        let tol = 1e-12 * scale;
        let mut y = match selection {
            FixedPointSelection::Least => vec![0.0; self.dim],
            FixedPointSelection::Greatest => self.liabilities.clone(),
        };
        let cap = self.iteration_cap();
        let mut previous: Option<Vec<Regime>> = None;
        for _ in 0..cap {
            let v = self.pressure(x, b, &y);
            if let Some(z) = self.regime_jump(x, b, &y, &v, selection, tol) {
                return Ok(z);
            }
            let regime = self.regime(&v, tol);
            if previous.as_ref() == Some(&regime) {
                if let Some(z) = self.gallop(x, b, &y, &regime, tol) {
                    y = z;
                    previous = None;
                    continue;
                }
            }
            previous = Some(regime);
            let next = self.clip(&v);
            let change = next
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            y = next;
            if change <= FIXED_POINT_EPS * 1e-3 {
                break;
            }
        }
        let residual = self.residual(x, b, &y);
        if residual <= FIXED_POINT_EPS * scale {
            Ok(y)
        } else {
            Err(Error::NonConvergence {
                iterations: cap,
                residual,
            })
        }
    }

    /// Regime of each institution, with values within `tol` of a kink
    /// assigned to the kink.
    fn regime(&self, v: &[f64], tol: f64) -> Vec<Regime> {
        v.iter()
            .zip(&self.liabilities)
            .map(|(&vi, &li)| {
                if vi <= tol {
                    Regime::Solvent
                } else if vi >= li - tol {
                    Regime::Saturated
                } else {
                    Regime::Partial
                }
            })
            .collect()
    }

    /// Skips ahead along the Picard sequence while the regime stays fixed.
    ///
    /// Inside one regime a Picard step is the affine map `y -> A y + r`, so
    /// `2^k` steps are obtained by repeated squaring. The iterates are monotone,
    /// hence an unchanged regime at the end point means every skipped step
    /// used the same affine map and the jump reproduces the Picard iterate.
    /// This matters for closed groups of partially paying institutions, where
    /// the iterates drift linearly for a long time before one saturates.
    fn gallop(&self, x: &[f64], b: &[f64], y: &[f64], regime: &[Regime], tol: f64) -> Option<Vec<f64>> {
        let d = self.dim;
        let mut a = vec![0.0; d * d];
        let mut r = vec![0.0; d];
        for i in 0..d {
            match regime[i] {
                Regime::Solvent => {}
                Regime::Saturated => r[i] = self.liabilities[i],
                Regime::Partial => {
                    for k in 0..d {
                        a[i * d + k] = self.pi(k, i);
                    }
                    r[i] = -x[i] - b[i];
                }
            }
        }
        let mut best = None;
        for _ in 0..60 {
            let mut a2 = vec![0.0; d * d];
            for i in 0..d {
                for k in 0..d {
                    let aik = a[i * d + k];
                    if aik != 0.0 {
                        for j in 0..d {
                            a2[i * d + j] += aik * a[k * d + j];
                        }
                    }
                }
            }
            let r2: Vec<f64> = (0..d).map(|i| r[i] + (0..d).map(|k| a[i * d + k] * r[k]).sum::<f64>()).collect();
            a = a2;
            r = r2;
            let z: Vec<f64> = (0..d).map(|i| r[i] + (0..d).map(|k| a[i * d + k] * y[k]).sum::<f64>()).collect();
            if z.iter().any(|v| !v.is_finite()) || self.regime(&self.pressure(x, b, &z), tol) != regime {
                break;
            }
            best = Some(z);
        }
        best
    }

    fn regime_jump(
        &self,
        x: &[f64],
        b: &[f64],
        y: &[f64],
        v: &[f64],
        selection: FixedPointSelection,
        tol: f64,
    ) -> Option<Vec<f64>> {
        let d = self.dim;
        let l = &self.liabilities;
        let partial: Vec<usize> = (0..d).filter(|&i| v[i] > 0.0 && v[i] < l[i]).collect();
        let mut z: Vec<f64> = (0..d).map(|i| if v[i] >= l[i] && v[i] > 0.0 { l[i] } else { 0.0 }).collect();
        if !partial.is_empty() {
            // (I - Pi_SS^T) z_S = (Pi^T z_fixed)_S - x_S - b_S
            let base = self.incoming(&z);
            let m = partial.len();
            let mut a = vec![0.0; m * m];
            let mut rhs = vec![0.0; m];
            for (r, &i) in partial.iter().enumerate() {
                for (c, &k) in partial.iter().enumerate() {
                    a[r * m + c] = if r == c { 1.0 } else { 0.0 } - self.pi(k, i);
                }
                rhs[r] = base[i] - x[i] - b[i];
            }
            let sol = solve_dense(a, rhs, 1e-12)?;
            for (&i, s) in partial.iter().zip(sol) {
                z[i] = s;
            }
        }
        let ordered = match selection {
            FixedPointSelection::Least => z.iter().zip(y).all(|(zi, yi)| *zi >= yi - tol),
            FixedPointSelection::Greatest => z.iter().zip(y).all(|(zi, yi)| *zi <= yi + tol),
        };
        if !ordered {
            return None;
        }
        let vz = self.pressure(x, b, &z);
        for i in 0..d {
            let consistent = if v[i] <= 0.0 {
                vz[i] <= tol
            } else if v[i] >= l[i] {
                vz[i] >= l[i] - tol
            } else {
                vz[i] >= -tol && vz[i] <= l[i] + tol
            };
            if !consistent {
                return None;
            }
        }
        let z = self.clip(&z);
        (self.residual(x, b, &z) <= tol * 10.0).then_some(z)
    }

    pub fn objective_value(&self, objective: Objective, x: &[f64], b: &[f64], y: &[f64], gamma: f64) -> f64 {
        let injection_cost = if gamma.is_finite() {
            gamma * b.iter().sum::<f64>()
        } else {
            0.0
        };
        let loss = match objective {
            Objective::Cm1 => self.pressure(x, b, y).into_iter().map(pos_part).sum::<f64>(),
            Objective::Cm2 => y.iter().sum(),
        };
        -loss - injection_cost
    }

    fn evaluate(&self, ctx: &SolveContext<'_>, b: &[f64]) -> Result<(f64, Vec<f64>)> {
        let y = self.clear(ctx.x, b, ctx.selection)?;
        let value = self.objective_value(ctx.objective, ctx.x, b, &y, ctx.gamma);
        Ok((value, y))
    }

    /// Exact maximisation of the objective along `base + t * dir`,
    /// `t in [0, t_max]`, `dir >= 0`.
    ///
    /// Walks the breakpoints of the piecewise-linear path `t -> y(t)`; the
    /// objective is affine between consecutive breakpoints, so its maximum is
    /// attained at one of them.
    fn line_search(&self, ctx: &SolveContext<'_>, base: &[f64], dir: &[f64], t_max: f64) -> Result<(f64, f64)> {
        let d = self.dim;
        let l = &self.liabilities;
        let point = |t: f64| -> Vec<f64> { base.iter().zip(dir).map(|(b, w)| b + t * w).collect() };
        let (mut best_value, mut y) = self.evaluate(ctx, base)?;
        let mut best_t = 0.0;
        if t_max <= 0.0 {
            return Ok((best_t, best_value));
        }
        let min_step = 1e-12 * (1.0 + t_max);
        let mut t = 0.0;
        let mut consider = |t: f64, value: f64| {
            if value > best_value + 1e-12 * (1.0 + best_value.abs()) {
                best_value = value;
                best_t = t;
            }
        };
        for _ in 0..(4 * d + 8) {
            if t >= t_max {
                return Ok((best_t, best_value));
            }
            let b = point(t);
            let v = self.pressure(ctx.x, &b, &y);
            let tol = 1e-12 * (1.0 + v.iter().fold(0.0_f64, |m, x| m.max(x.abs())));
            // Once every institution being injected into is solvent, further
            // injections change nothing but the cost.
            if (0..d).all(|i| dir[i] == 0.0 || v[i] <= tol) {
                return Ok((best_t, best_value));
            }
            // Regime on the segment to the right of t: a coordinate sitting on
            // the cap moves into the partial regime, one sitting on zero stays.
            let partial: Vec<usize> = (0..d).filter(|&i| v[i] > tol && v[i] <= l[i] + tol).collect();
            let mut dy = vec![0.0; d];
            if !partial.is_empty() {
                let m = partial.len();
                let mut a = vec![0.0; m * m];
                let mut rhs = vec![0.0; m];
                for (r, &i) in partial.iter().enumerate() {
                    for (c, &k) in partial.iter().enumerate() {
                        a[r * m + c] = if r == c { 1.0 } else { 0.0 } - self.pi(k, i);
                    }
                    rhs[r] = -dir[i];
                }
                match solve_dense(a, rhs, 1e-12) {
                    Some(sol) => {
                        for (&i, s) in partial.iter().zip(sol) {
                            dy[i] = s;
                        }
                    }
                    None => {
                        // Degenerate closed cycle: fall back to a uniform scan.
                        for k in 1..=64 {
                            let tk = t + (t_max - t) * k as f64 / 64.0;
                            let (value, _) = self.evaluate(ctx, &point(tk))?;
                            consider(tk, value);
                        }
                        return Ok((best_t, best_value));
                    }
                }
            }
            let mut dv = self.incoming(&dy);
            for (dvi, w) in dv.iter_mut().zip(dir) {
                *dvi -= w;
            }
            let slope_eps = 1e-14;
            let mut step = f64::INFINITY;
            for i in 0..d {
                let in_partial = v[i] > tol && v[i] <= l[i] + tol;
                let capped = v[i] > l[i] + tol;
                if dv[i] < -slope_eps {
                    let target = if capped { l[i] } else if in_partial { 0.0 } else { continue };
                    step = step.min((v[i] - target) / -dv[i]);
                } else if dv[i] > slope_eps {
                    let target = if in_partial { l[i] } else if !capped { 0.0 } else { continue };
                    step = step.min((target - v[i]) / dv[i]);
                }
            }
            let next = (t + step.max(min_step)).min(t_max);
            let (value, y_next) = self.evaluate(ctx, &point(next))?;
            consider(next, value);
            t = next;
            y = y_next;
        }
        if t < t_max {
            let (value, _) = self.evaluate(ctx, &point(t_max))?;
            consider(t_max, value);
        }
        Ok((best_t, best_value))
    }

    /// Maximises the selected objective over injections `b >= 0`.
    ///
    /// Coordinate ascent with exact breakpoint line searches over each
    /// coordinate's full box and over pairwise diagonal directions, started
    /// from `b = 0`, from `b = x^-` and from two greedy rescue sets; the best
    /// result is returned.
    pub fn optimize(
        &self,
        x: &[f64],
        gamma: f64,
        objective: Objective,
        selection: FixedPointSelection,
    ) -> Result<ClearingSolution> {
        check_gamma(gamma)?;
        let d = self.dim;
        let ctx = SolveContext {
            x,
            gamma,
            objective,
            selection,
        };
        let zero = vec![0.0; d];
        let (value0, y0) = self.evaluate(&ctx, &zero)?;
        let nothing_to_fix = self
            .pressure(x, &zero, &y0)
            .iter()
            .all(|&v| v <= 0.0);
        if !gamma.is_finite() || nothing_to_fix {
            return Ok(ClearingSolution {
                y: y0,
                b: zero,
                value: value0,
            });
        }
        let bounds = self.injection_bounds(x);
        let start_shortfall: Vec<f64> = x.iter().map(|&xi| neg_part(xi)).collect();
        let defaulting: Vec<bool> = y0.iter().map(|&v| v > 0.0).collect();
        let mut starts = vec![zero.clone(), start_shortfall];
        starts.push(self.greedy_rescue(&ctx, defaulting.clone(), &defaulting, false)?);
        starts.push(self.greedy_rescue(&ctx, vec![false; d], &defaulting, true)?);
        starts.dedup();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for start in starts {
            let (value, b) = self.ascend(&ctx, start, &bounds)?;
            if best.as_ref().is_none_or(|(bv, _)| value > *bv + 1e-12 * (1.0 + bv.abs())) {
                best = Some((value, b));
            }
        }
        let (_, b) = best.expect("at least one start");
        let (value, y) = self.evaluate(&ctx, &b)?;
        Ok(ClearingSolution { y, b, value })
    }

    /// Injections that make exactly the banks in `rescued` solvent, with
    /// the rest clearing on their own.
    fn rescue(&self, x: &[f64], rescued: &[bool], selection: FixedPointSelection) -> Result<Vec<f64>> {
        let big: Vec<f64> = self
            .injection_bounds(x)
            .iter()
            .zip(rescued)
            .map(|(&u, &r)| if r { u + 1.0 } else { 0.0 })
            .collect();
        let y = self.clear(x, &big, selection)?;
        let incoming = self.incoming(&y);
        Ok((0..self.dim)
            .map(|j| if rescued[j] { pos_part(incoming[j] - x[j]) } else { 0.0 })
            .collect())
    }

    /// Greedy search over rescue sets: drops (or adds, when `grow`) one
    /// candidate bank at a time while the objective improves.
    fn greedy_rescue(
        &self,
        ctx: &SolveContext<'_>,
        mut set: Vec<bool>,
        candidates: &[bool],
        grow: bool,
    ) -> Result<Vec<f64>> {
        let mut b = self.rescue(ctx.x, &set, ctx.selection)?;
        let (mut value, _) = self.evaluate(ctx, &b)?;
        loop {
            let mut step: Option<(f64, usize, Vec<f64>)> = None;
            for j in 0..self.dim {
                if !candidates[j] || set[j] == grow {
                    continue;
                }
                set[j] = grow;
                let trial = self.rescue(ctx.x, &set, ctx.selection)?;
                set[j] = !grow;
                let (v, _) = self.evaluate(ctx, &trial)?;
                let threshold = step.as_ref().map_or(value + 1e-12 * (1.0 + value.abs()), |s| s.0);
                if v > threshold {
                    step = Some((v, j, trial));
                }
            }
            match step {
                Some((v, j, trial)) => {
                    set[j] = grow;
                    value = v;
                    b = trial;
                }
                None => return Ok(b),
            }
        }
    }

    fn ascend(&self, ctx: &SolveContext<'_>, mut b: Vec<f64>, bounds: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.dim;
        let (mut value, _) = self.evaluate(ctx, &b)?;
        let improves = |new: f64, old: f64| new > old + 1e-12 * (1.0 + old.abs());
        for _ in 0..MAX_SWEEPS {
            let mut improved = false;
            for j in 0..d {
                if bounds[j] <= 0.0 {
                    continue;
                }
                let mut base = b.clone();
                base[j] = 0.0;
                let mut dir = vec![0.0; d];
                dir[j] = 1.0;
                let (t, v) = self.line_search(ctx, &base, &dir, bounds[j])?;
                if improves(v, value) {
                    b[j] = t;
                    value = v;
                    improved = true;
                }
            }
            // Joint moves: raise or lower two injections together.
            for j in 0..d {
                for k in (j + 1)..d {
                    if bounds[j] <= 0.0 || bounds[k] <= 0.0 {
                        continue;
                    }
                    let mut dir = vec![0.0; d];
                    dir[j] = 1.0;
                    dir[k] = 1.0;
                    let up = (bounds[j] - b[j]).min(bounds[k] - b[k]);
                    let down = b[j].min(b[k]);
                    let mut base = b.clone();
                    base[j] -= down;
                    base[k] -= down;
                    let (t, v) = self.line_search(ctx, &base, &dir, down + up)?;
                    if improves(v, value) {
                        b[j] = base[j] + t;
                        b[k] = base[k] + t;
                        value = v;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        Ok((value, b))
    }
}

struct SolveContext<'a> {
    x: &'a [f64],
    gamma: f64,
    objective: Objective,
    selection: FixedPointSelection,
}

/// Least clearing vector of `p` for injections `b`.
pub fn clear_fixed_point(p: &ClearingProblem, b: &[f64]) -> Result<Vec<f64>> {
    clear_fixed_point_with(p, b, FixedPointSelection::Least)
}

pub fn clear_fixed_point_with(p: &ClearingProblem, b: &[f64], selection: FixedPointSelection) -> Result<Vec<f64>> {
    p.validate()?;
    if b.len() != p.dim() {
        return Err(Error::DimensionMismatch(format!(
            "b has {} entries, expected {}",
            b.len(),
            p.dim()
        )));
    }
    if let Some(v) = b.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidParams(format!("injection {v} is negative")));
    }
    p.structure()?.clear(&p.x, b, selection)
}

pub fn solve(p: &ClearingProblem, objective: Objective, selection: FixedPointSelection) -> Result<ClearingSolution> {
    p.validate()?;
    p.structure()?.optimize(&p.x, p.gamma, objective, selection)
}

pub fn solve_cm1(p: &ClearingProblem) -> Result<ClearingSolution> {
    solve(p, Objective::Cm1, FixedPointSelection::Least)
}

pub fn solve_cm2(p: &ClearingProblem) -> Result<ClearingSolution> {
    solve(p, Objective::Cm2, FixedPointSelection::Least)
}

/// Exhaustive grid search over `b in [0, b_max]^d`, `b_max = max_i(x_i^- + (Pi^T L)_i)`,
/// with a plain Picard solve of the clearing map at every grid point.
///
/// Independent of the optimiser above; only meant for `d <= 3`.
pub fn brute_force_oracle(p: &ClearingProblem, objective: Objective, grid_step: f64) -> Result<ClearingSolution> {
    p.validate()?;
    let d = p.dim();
    if d > 3 {
        return Err(Error::DimensionTooLarge(d));
    }
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(Error::InvalidParams(format!("grid step must be positive, got {grid_step}")));
    }
    let pi = &p.pi;
    let l = &p.liabilities;
    let x = &p.x;
    let mut b_max = 0.0_f64;
    for j in 0..d {
        let inflow: f64 = (0..d).map(|i| pi[i][j] * l[i]).sum();
        b_max = b_max.max(neg_part(x[j]) + inflow);
    }
    if !p.gamma.is_finite() {
        b_max = 0.0;
    }
    let n = (b_max / grid_step).ceil() as usize;
    let axis: Vec<f64> = (0..=n).map(|k| (k as f64 * grid_step).min(b_max)).collect();

    let picard = |b: &[f64]| -> Vec<f64> {
        let mut y = vec![0.0; d];
        for _ in 0..200_000 {
            let mut change = 0.0_f64;
            let mut next = vec![0.0; d];
            for j in 0..d {
                let inflow: f64 = (0..d).map(|i| pi[i][j] * y[i]).sum();
                next[j] = (inflow - x[j] - b[j]).min(l[j]).max(0.0);
                change = change.max((next[j] - y[j]).abs());
            }
            y = next;
            if change <= 1e-14 {
                break;
            }
        }
        y
    };
    let score = |b: &[f64]| -> (f64, Vec<f64>) {
        let y = picard(b);
        let cost = if p.gamma.is_finite() { p.gamma * b.iter().sum::<f64>() } else { 0.0 };
        let loss: f64 = match objective {
            Objective::Cm1 => (0..d)
                .map(|j| {
                    let inflow: f64 = (0..d).map(|i| pi[i][j] * y[i]).sum();
                    neg_part(x[j] + b[j] - inflow)
                })
                .sum(),
            Objective::Cm2 => y.iter().sum(),
        };
        (-loss - cost, y)
    };
    let outer = if d >= 1 { axis.len() } else { 1 };
    let best = (0..outer)
        .into_par_iter()
        .map(|k0| {
            let mut best: Option<ClearingSolution> = None;
            let inner1 = if d >= 2 { axis.len() } else { 1 };
            let inner2 = if d >= 3 { axis.len() } else { 1 };
            let mut b = vec![0.0; d];
            for k1 in 0..inner1 {
                for k2 in 0..inner2 {
                    for (slot, k) in [k0, k1, k2].into_iter().take(d).enumerate() {
                        b[slot] = axis[k];
                    }
                    let (value, y) = score(&b);
                    if best.as_ref().is_none_or(|s| value > s.value) {
                        best = Some(ClearingSolution {
                            y,
                            b: b.clone(),
                            value,
                        });
                    }
                }
            }
            best.expect("non-empty grid")
        })
        .reduce_with(|a, b| if b.value > a.value { b } else { a })
        .expect("non-empty grid");
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Regime {
    Solvent,
    Partial,
    Saturated,
}

/// Random small clearing instance: liabilities in `[0, 0.5]`, equity in
/// `[-0.6, 0.3]`, sparse relative liability rows summing to at most one and
/// an injection cost in `(1.1, 3)` (infinite one time in ten).
pub fn sample_problem<R: rand::Rng>(rng: &mut R, d: usize) -> ClearingProblem {
    let mut pi = vec![vec![0.0; d]; d];
    for (i, row) in pi.iter_mut().enumerate() {
        if d == 1 || rng.random_bool(0.15) {
            continue;
        }
        let mut total = 0.0;
        for (j, p) in row.iter_mut().enumerate() {
            if j != i && rng.random_bool(0.8) {
                *p = rng.random_range(0.05..1.0);
                total += *p;
            }
        }
        if total > 0.0 {
            let mass = if rng.random_bool(0.3) { 1.0 } else { rng.random_range(0.3..0.95) };
            row.iter_mut().for_each(|p| *p *= mass / total);
            // keep the row sum at most one after rounding
            let s: f64 = row.iter().sum();
            if s > 1.0 {
                row.iter_mut().for_each(|p| *p /= s);
            }
        }
    }
    let liabilities = (0..d).map(|_| rng.random_range(0.0..0.5)).collect();
    let x = (0..d).map(|_| rng.random_range(-0.6..0.3)).collect();
    let gamma = if rng.random_bool(0.1) { f64::INFINITY } else { rng.random_range(1.1..3.0) };
    ClearingProblem {
        x,
        pi,
        liabilities,
        gamma,
    }
}

mod gamma_serde {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(gamma: &f64, s: S) -> Result<S::Ok, S::Error> {
        if gamma.is_infinite() && *gamma > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*gamma)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct GammaVisitor;
        impl Visitor<'_> for GammaVisitor {
            type Value = f64;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                match v.to_ascii_lowercase().as_str() {
                    "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
                    other => other
                        .parse::<f64>()
                        .map_err(|_| E::custom(format!("invalid gamma '{v}'"))),
                }
            }
        }
        d.deserialize_any(GammaVisitor)
    }
}

/// Serde helper for optional `f64` fields that may hold `"inf"`.
pub mod gamma_list_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(transparent)]
    struct Wrapped(#[serde(with = "super::gamma_serde")] f64);

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        values.iter().map(|&v| Wrapped(v)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Wrapped>::deserialize(d)?.into_iter().map(|w| w.0).collect())
    }
}

pub use gamma_serde::{deserialize as deserialize_gamma, serialize as serialize_gamma};

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bank(gamma: f64) -> ClearingProblem {
        ClearingProblem::new(
            vec![-3.0, 10.0],
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            vec![5.0, 0.0],
            gamma,
        )
        .unwrap()
    }

    fn chain(gamma: f64) -> ClearingProblem {
        ClearingProblem::new(
            vec![-4.0, 1.0, 1.0],
            vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 0.0]],
            vec![4.0, 4.0, 0.0],
            gamma,
        )
        .unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(u, v)| (u - v).abs() <= tol)
    }

    #[test]
    fn closed_cycle_drifts_to_saturation() {
        let pi = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        let s = LiabilityStructure::new(&pi, vec![100.0; 3]).unwrap();
        let y = s.clear(&[-0.5, 0.2, 0.2], &[0.0; 3], FixedPointSelection::Least).unwrap();
        for (a, b) in y.iter().zip([100.0, 99.8, 99.6]) {
            assert!((a - b).abs() < 1e-9, "{y:?}");
        }
    }

    #[test]
    fn fixed_point_examples() {
        let isolated = ClearingProblem::new(vec![1.0, 2.0], vec![vec![0.0; 2]; 2], vec![3.0, 3.0], 2.0).unwrap();
        assert_eq!(clear_fixed_point(&isolated, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(close(&clear_fixed_point(&two_bank(2.0), &[0.0, 0.0]).unwrap(), &[3.0, 0.0], 1e-12));
        assert!(close(&clear_fixed_point(&chain(2.0), &[3.0, 0.0, 0.0]).unwrap(), &[1.0, 0.0, 0.0], 1e-12));
    }

    #[test]
    fn cm1_examples() {
        let isolated = ClearingProblem::new(vec![1.0, 2.0], vec![vec![0.0; 2]; 2], vec![3.0, 3.0], 2.0).unwrap();
        let s = solve_cm1(&isolated).unwrap();
        assert_eq!((s.value, s.b.clone(), s.y.clone()), (0.0, vec![0.0; 2], vec![0.0; 2]));

        let s = solve_cm1(&two_bank(10.0)).unwrap();
        assert!(close(&s.b, &[0.0, 0.0], 1e-9) && close(&s.y, &[3.0, 0.0], 1e-9));
        assert!((s.value + 3.0).abs() < 1e-9);

        let s = solve_cm1(&chain(1.5)).unwrap();
        assert!(close(&s.b, &[3.0, 0.0, 0.0], 1e-9), "b = {:?}", s.b);
        assert!(close(&s.y, &[1.0, 0.0, 0.0], 1e-9));
        assert!((s.value + 5.5).abs() < 1e-9);
    }

    #[test]
    fn cm2_examples() {
        let isolated = ClearingProblem::new(vec![1.0, 2.0], vec![vec![0.0; 2]; 2], vec![3.0, 3.0], 2.0).unwrap();
        assert_eq!(solve_cm2(&isolated).unwrap().value, 0.0);
        assert!((solve_cm2(&two_bank(10.0)).unwrap().value + 3.0).abs() < 1e-9);
        let s = solve_cm2(&chain(1e6)).unwrap();
        assert!(close(&s.b, &[0.0; 3], 1e-12));
        assert!(close(&s.y, &[4.0, 3.0, 0.0], 1e-12));
        assert!((s.value + 7.0).abs() < 1e-9);
    }

    #[test]
    fn infinite_gamma_forbids_injections() {
        let s = solve_cm1(&chain(f64::INFINITY)).unwrap();
        assert_eq!(s.b, vec![0.0; 3]);
        assert!((s.value + 9.0).abs() < 1e-12);
    }

    #[test]
    fn greatest_fixed_point_differs_on_a_closed_cycle() {
        // Two banks owing everything to each other with zero net shock: any
        // y1 = y2 in [0, L] is a fixed point.
        let p = ClearingProblem::new(vec![0.0, 0.0], vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![2.0, 2.0], 2.0).unwrap();
        let least = clear_fixed_point_with(&p, &[0.0, 0.0], FixedPointSelection::Least).unwrap();
        let greatest = clear_fixed_point_with(&p, &[0.0, 0.0], FixedPointSelection::Greatest).unwrap();
        assert!(close(&least, &[0.0, 0.0], 1e-12));
        assert!(close(&greatest, &[2.0, 2.0], 1e-12));
    }

    #[test]
    fn validation_errors() {
        assert!(ClearingProblem::new(vec![0.0], vec![vec![0.0]], vec![1.0], 1.0).is_err());
        assert!(ClearingProblem::new(vec![0.0, 0.0], vec![vec![0.5, 0.5], vec![0.0, 0.0]], vec![1.0, 1.0], 2.0).is_err());
        assert!(ClearingProblem::new(vec![0.0, 0.0], vec![vec![0.0, 1.5], vec![0.0, 0.0]], vec![1.0, 1.0], 2.0).is_err());
        assert!(ClearingProblem::new(vec![0.0, 0.0], vec![vec![0.0, 1.0], vec![0.0, 0.0]], vec![-1.0, 1.0], 2.0).is_err());
        assert!(clear_fixed_point(&two_bank(2.0), &[-1.0, 0.0]).is_err());
        let big = ClearingProblem::new(vec![0.0; 4], vec![vec![0.0; 4]; 4], vec![0.0; 4], 2.0).unwrap();
        assert_eq!(brute_force_oracle(&big, Objective::Cm1, 0.1).unwrap_err(), Error::DimensionTooLarge(4));
    }

    #[test]
    fn json_shape() {
        let p: ClearingProblem =
            serde_json::from_str(r#"{"x":[-3,10],"Pi":[[0,1],[0,0]],"L":[5,0],"gamma":"inf"}"#).unwrap();
        assert!(p.gamma.is_infinite());
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains(r#""gamma":"inf""#));
        let q: ClearingProblem = serde_json::from_str(&text).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn oracle_agrees_on_fixtures() {
        let s = brute_force_oracle(&two_bank(10.0), Objective::Cm1, 0.01).unwrap();
        assert!((s.value + 3.0).abs() < 1e-9);
        let s = brute_force_oracle(&chain(1.5), Objective::Cm1, 0.05).unwrap();
        assert!((s.value + 5.5).abs() < 1e-9, "{s:?}");
    }
}
