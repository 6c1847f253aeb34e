//! Deterministic and conditional aggregation functions `Lambda(x, omega)` and
//! their state-wise extension to random vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::clearing::{check_gamma, FixedPointSelection, LiabilityStructure, Objective};
use crate::csrm::{Counterexample, PropertyReport};
use crate::error::{Error, Result};
use crate::numeric::neg_part;
use crate::prob_space::{Partition, RandomVariable, RandomVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum AggregationSpec {
    /// `sum_i x_i`
    Sum,
    /// `sum_i -x_i^-`
    Loss,
    /// Losses beyond `theta_i <= 0` are counted exponentially with rate `gamma_i > 0`.
    Exp { theta: Vec<f64>, gamma: Vec<f64> },
    /// `sum_i -alpha_i(omega) x_i^- + beta_i (theta_i - x_i)^-`.
    ///
    /// `alpha` holds either one row used in every state or one row per atom.
    BC {
        alpha: Vec<Vec<f64>>,
        beta: Vec<f64>,
        theta: Vec<f64>,
    },
    /// `-sum_{i in split} w(omega) x_i^- - sum_{i not in split} x_i^-` with
    /// `w = alpha` on the distress event and `1` elsewhere.
    Countercyclical {
        alpha: f64,
        distress_event: Vec<usize>,
        split: Vec<usize>,
    },
    /// `D(omega) * inner(x, omega)`; `D` holds one value or one per atom.
    Discounted {
        inner: Box<AggregationSpec>,
        #[serde(rename = "D")]
        discount: Vec<f64>,
    },
    #[serde(rename = "CM1")]
    Cm1 {
        #[serde(rename = "Pi")]
        pi: Vec<Vec<f64>>,
        #[serde(rename = "L")]
        liabilities: Vec<f64>,
        #[serde(
            serialize_with = "crate::clearing::serialize_gamma",
            deserialize_with = "crate::clearing::deserialize_gamma"
        )]
        gamma: f64,
    },
    #[serde(rename = "CM2")]
    Cm2 {
        #[serde(rename = "Pi")]
        pi: Vec<Vec<f64>>,
        #[serde(rename = "L")]
        liabilities: Vec<f64>,
        #[serde(
            serialize_with = "crate::clearing::serialize_gamma",
            deserialize_with = "crate::clearing::deserialize_gamma"
        )]
        gamma: f64,
    },
    /// `u^{-1}(sum_i x_i)` with `u(c) = c` for `c <= 0` and `slope * c` above.
    Utility { slope: f64 },
}

/// Relative liability sizes `L_i / sum_j L_j`, the loss weights of [`AggregationSpec::BC`].
pub fn bc_weights(liabilities: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = liabilities.iter().sum();
    if !(total > 0.0) || liabilities.iter().any(|l| *l < 0.0) {
        return Err(Error::InvalidParams("liabilities must be nonnegative with a positive total".into()));
    }
    Ok(liabilities.iter().map(|l| l / total).collect())
}

fn per_atom<T>(values: &[T], atom: usize, what: &str) -> Result<usize> {
    match values.len() {
        1 => Ok(0),
        n if atom < n => Ok(atom),
        n => Err(Error::DimensionMismatch(format!("{what} has {n} states, atom {atom} requested"))),
    }
}

impl AggregationSpec {
    /// Number of institutions implied by the parameters, if any.
    pub fn natural_dim(&self) -> Option<usize> {
        match self {
            Self::Sum | Self::Loss | Self::Utility { .. } | Self::Countercyclical { .. } => None,
            Self::Exp { theta, .. } => Some(theta.len()),
            Self::BC { beta, .. } => Some(beta.len()),
            Self::Discounted { inner, .. } => inner.natural_dim(),
            Self::Cm1 { liabilities, .. } | Self::Cm2 { liabilities, .. } => Some(liabilities.len()),
        }
    }

    /// True when the aggregate does not depend on the state.
    pub fn is_deterministic(&self) -> bool {
        match self {
            Self::BC { alpha, .. } => alpha.len() <= 1 || alpha.windows(2).all(|w| w[0] == w[1]),
            Self::Countercyclical { distress_event, alpha, .. } => distress_event.is_empty() || *alpha == 1.0,
            Self::Discounted { inner, discount } => {
                inner.is_deterministic() && discount.windows(2).all(|w| w[0] == w[1])
            }
            _ => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Sum | Self::Loss => Ok(()),
            Self::Exp { theta, gamma } => {
                if theta.len() != gamma.len() {
                    return Err(Error::DimensionMismatch("Exp theta and gamma lengths differ".into()));
                }
                if theta.iter().any(|t| !(t.is_finite() && *t <= 0.0)) {
                    return Err(Error::InvalidParams("Exp thresholds must satisfy theta_i <= 0".into()));
                }
                if gamma.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
                    return Err(Error::InvalidParams("Exp rates must satisfy gamma_i > 0".into()));
                }
                Ok(())
            }
            Self::BC { alpha, beta, theta } => {
                let d = beta.len();
                if theta.len() != d {
                    return Err(Error::DimensionMismatch("BC beta and theta lengths differ".into()));
                }
                if alpha.is_empty() {
                    return Err(Error::InvalidParams("BC needs at least one weight row".into()));
                }
                for (k, row) in alpha.iter().enumerate() {
                    if row.len() != d {
                        return Err(Error::DimensionMismatch(format!("BC alpha row {k} has {} entries", row.len())));
                    }
                    if row.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                        return Err(Error::InvalidParams(format!("BC alpha row {k} has a negative weight")));
                    }
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > 1e-9 {
                        return Err(Error::InvalidParams(format!("BC alpha row {k} sums to {s}")));
                    }
                }
                if beta.iter().chain(theta).any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidParams("BC beta and theta must be nonnegative".into()));
                }
                Ok(())
            }
            Self::Countercyclical { alpha, .. } => {
                if (0.0..1.0).contains(alpha) {
                    Ok(())
                } else {
                    Err(Error::InvalidParams(format!("countercyclical alpha must lie in [0,1), got {alpha}")))
                }
            }
            Self::Discounted { inner, discount } => {
                if discount.is_empty() || discount.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::InvalidParams("discount factors must be positive".into()));
                }
                inner.validate()
            }
            Self::Cm1 { pi, liabilities, gamma } | Self::Cm2 { pi, liabilities, gamma } => {
                LiabilityStructure::new(pi, liabilities.clone())?;
                check_gamma(*gamma)
            }
            Self::Utility { slope } => {
                if slope.is_finite() && *slope > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParams(format!("utility slope must be positive, got {slope}")))
                }
            }
        }
    }

    /// Checks that every state-dependent parameter is constant on the blocks of `g`.
    pub fn check_measurable(&self, g: &Partition) -> Result<()> {
        let constant_on_blocks = |len: usize, same: &dyn Fn(usize, usize) -> bool| -> bool {
            len <= 1
                || (len == g.atoms()
                    && g.blocks().iter().all(|b| b.windows(2).all(|w| same(w[0], w[1]))))
        };
        match self {
            Self::BC { alpha, .. } => {
                if !constant_on_blocks(alpha.len(), &|a, b| alpha[a] == alpha[b]) {
                    return Err(Error::InvalidParams("BC weights are not constant on the conditioning blocks".into()));
                }
            }
            Self::Countercyclical { distress_event, .. } => {
                let mut inside = vec![false; g.atoms()];
                for &w in distress_event {
                    if w >= g.atoms() {
                        return Err(Error::InvalidParams(format!("distress atom {w} out of range")));
                    }
                    inside[w] = true;
                }
                if !constant_on_blocks(g.atoms(), &|a, b| inside[a] == inside[b]) {
                    return Err(Error::InvalidParams("distress event is not a union of conditioning blocks".into()));
                }
            }
            Self::Discounted { inner, discount } => {
                if !constant_on_blocks(discount.len(), &|a, b| discount[a] == discount[b]) {
                    return Err(Error::InvalidParams("discount factor is not constant on the conditioning blocks".into()));
                }
                inner.check_measurable(g)?;
            }
            _ => {}
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if let Some(d) = self.natural_dim() {
            if x.len() != d {
                return Err(Error::DimensionMismatch(format!("expected {d} institutions, got {}", x.len())));
            }
        }
        if let Self::Countercyclical { split, .. } = self {
            if let Some(i) = split.iter().find(|&&i| i >= x.len()) {
                return Err(Error::DimensionMismatch(format!("split index {i} out of range")));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("aggregation input is not finite".into()));
        }
        Ok(())
    }

    /// `Lambda(x, omega)` for a deterministic vector `x` in state `atom`.
    pub fn aggregate_at(&self, x: &[f64], atom: usize) -> Result<f64> {
        self.validate()?;
        self.check_input(x)?;
        self.eval(x, atom, None)
    }

    fn eval(&self, x: &[f64], atom: usize, structure: Option<&LiabilityStructure>) -> Result<f64> {
        Ok(match self {
            Self::Sum => x.iter().sum(),
            Self::Loss => -x.iter().map(|&v| neg_part(v)).sum::<f64>(),
            Self::Exp { theta, gamma } => x
                .iter()
                .zip(theta.iter().zip(gamma))
                .map(|(&xi, (&t, &g))| {
                    if xi > t {
                        -neg_part(xi)
                    } else {
                        (1.0 - (g * (neg_part(xi) + t)).exp()) / g + t
                    }
                })
                .sum(),
            Self::BC { alpha, beta, theta } => {
                let a = &alpha[per_atom(alpha, atom, "BC alpha")?];
                (0..x.len())
                    .map(|i| -a[i] * neg_part(x[i]) + beta[i] * neg_part(theta[i] - x[i]))
                    .sum()
            }
            Self::Countercyclical {
                alpha,
                distress_event,
                split,
            } => {
                let w = if distress_event.contains(&atom) { *alpha } else { 1.0 };
                -(0..x.len())
                    .map(|i| if split.contains(&i) { w } else { 1.0 } * neg_part(x[i]))
                    .sum::<f64>()
            }
            Self::Discounted { inner, discount } => {
                discount[per_atom(discount, atom, "discount factor")?] * inner.eval(x, atom, structure)?
            }
            Self::Cm1 { pi, liabilities, gamma } | Self::Cm2 { pi, liabilities, gamma } => {
                let objective = if matches!(self, Self::Cm1 { .. }) { Objective::Cm1 } else { Objective::Cm2 };
                let owned;
                let s = match structure {
                    Some(s) => s,
                    None => {
                        owned = LiabilityStructure::new(pi, liabilities.clone())?;
                        &owned
                    }
                };
                s.optimize(x, *gamma, objective, FixedPointSelection::Least)?.value
            }
            Self::Utility { slope } => {
                let s: f64 = x.iter().sum();
                if s > 0.0 {
                    s / slope
                } else {
                    s
                }
            }
        })
    }

    fn structure(&self) -> Result<Option<LiabilityStructure>> {
        match self {
            Self::Cm1 { pi, liabilities, .. } | Self::Cm2 { pi, liabilities, .. } => {
                Ok(Some(LiabilityStructure::new(pi, liabilities.clone())?))
            }
            Self::Discounted { inner, .. } => inner.structure(),
            _ => Ok(None),
        }
    }

    /// `Lambda(X)(omega) = Lambda(X(omega), omega)`.
    pub fn extend(&self, x: &RandomVector) -> Result<RandomVariable> {
        let atoms: Vec<usize> = (0..x.atoms()).collect();
        self.extend_on(x, &atoms)
    }

    /// Extension of a vector whose row `k` lives in state `atoms[k]`.
    pub fn extend_on(&self, x: &RandomVector, atoms: &[usize]) -> Result<RandomVariable> {
        if atoms.len() != x.atoms() {
            return Err(Error::DimensionMismatch(format!(
                "{} rows but {} state labels",
                x.atoms(),
                atoms.len()
            )));
        }
        self.validate()?;
        let structure = self.structure()?;
        let mut out = Vec::with_capacity(x.atoms());
        for (row, &atom) in x.rows().zip(atoms) {
            self.check_input(row)?;
            out.push(self.eval(row, atom, structure.as_ref())?);
        }
        Ok(RandomVariable::new(out))
    }
}

/// Randomised verdicts for the three aggregation-function properties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DafReport {
    pub isotone: PropertyReport,
    pub concave: PropertyReport,
    pub positive_homogeneous: PropertyReport,
}

impl DafReport {
    pub fn reports(&self) -> [&PropertyReport; 3] {
        [&self.isotone, &self.concave, &self.positive_homogeneous]
    }
}

fn close_rel(a: f64, b: f64) -> f64 {
    1e-9 * 1f64.max(a.abs()).max(b.abs())
}

fn draw_point(rng: &mut ChaCha20Rng, d: usize) -> Vec<f64> {
    (0..d)
        .map(|_| match rng.random_range(0..4) {
            0 => 0.0,
            1 => rng.random_range(-15.0..-5.0),
            _ => rng.random_range(-5.0..5.0),
        })
        .collect()
}

/// Randomised three-point checks of isotonicity, concavity and positive
/// homogeneity in every sampled state.
pub fn check_daf_properties(spec: &AggregationSpec, dim: usize, atoms: usize, trials: usize, rng_seed: u64) -> Result<DafReport> {
    spec.validate()?;
    let d = spec.natural_dim().unwrap_or(dim);
    let atoms = atoms.max(1);
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let mut iso = PropertyReport::new("isotone");
    let mut conc = PropertyReport::new("concave");
    let mut hom = PropertyReport::new("positive_homogeneous");
    for trial in 0..trials.max(1) {
        let atom = rng.random_range(0..atoms);
        let x = draw_point(&mut rng, d);
        let y = draw_point(&mut rng, d);

        let lower: Vec<f64> = x.iter().map(|v| v - rng.random_range(0.0..3.0)).collect();
        let (fx, fl) = (spec.aggregate_at(&x, atom)?, spec.aggregate_at(&lower, atom)?);
        iso.record(trial, fl - fx, close_rel(fx, fl), || {
            Counterexample::new(format!("Lambda(y) > Lambda(x) although x >= y in state {atom}"))
                .with("x", &x)
                .with("y", &lower)
                .with("values", &[fx, fl])
        });

        let lambda: f64 = rng.random_range(0.0..1.0);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        let (fy, fm) = (spec.aggregate_at(&y, atom)?, spec.aggregate_at(&mix, atom)?);
        let chord = lambda * fx + (1.0 - lambda) * fy;
        conc.record(trial, chord - fm, close_rel(chord, fm), || {
            Counterexample::new(format!("Lambda of the mixture lies below the chord in state {atom}"))
                .with("x", &x)
                .with("y", &y)
                .with("lambda", &lambda)
                .with("values", &[fx, fy, fm])
        });

        let scale: f64 = rng.random_range(0.0..3.0);
        let scaled: Vec<f64> = x.iter().map(|v| scale * v).collect();
        let fs = spec.aggregate_at(&scaled, atom)?;
        hom.record(trial, (fs - scale * fx).abs(), close_rel(fs, scale * fx), || {
            Counterexample::new(format!("Lambda(lambda x) != lambda Lambda(x) in state {atom}"))
                .with("x", &x)
                .with("lambda", &scale)
                .with("values", &[fx, fs])
        });
    }
    Ok(DafReport {
        isotone: iso,
        concave: conc,
        positive_homogeneous: hom,
    })
}
