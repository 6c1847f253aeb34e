//! Conditional base risk measures on a finite space.
//!
//! Every measure acts blockwise: on a block `B` of the conditioning partition
//! it sees `F` restricted to `B` under the renormalised measure `P(. | B)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::neg_part;
use crate::prob_space::{check_density, conditional_expectation, FiniteProbSpace, Partition, RandomVariable};

/// Relative slack used when comparing cumulative probabilities with `q`.
pub const CDF_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum RiskMeasureSpec {
    VaR {
        q: f64,
    },
    AVaR {
        q: f64,
    },
    NegExpectation {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        density: Option<RandomVariable>,
    },
    /// Certainty-equivalent loss `-u^{-1}(E[u(F) | G])` for the piecewise
    /// linear utility `u(c) = c` (c <= 0), `slope * c` (c > 0).
    UtilityEquivalent {
        slope: f64,
    },
}

impl RiskMeasureSpec {
    pub fn validate(&self, space: &FiniteProbSpace) -> Result<()> {
        match self {
            Self::VaR { q } | Self::AVaR { q } => check_level(*q),
            Self::NegExpectation { density } => match density {
                Some(den) => check_density(space, den),
                None => Ok(()),
            },
            Self::UtilityEquivalent { slope } => {
                if slope.is_finite() && *slope > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParams(format!("utility slope must be positive, got {slope}")))
                }
            }
        }
    }

    /// `eta_G(F)` as a G-measurable random variable.
    pub fn evaluate(&self, space: &FiniteProbSpace, f: &RandomVariable, g: &Partition) -> Result<RandomVariable> {
        self.validate(space)?;
        match self {
            Self::VaR { q } => conditional_var(space, f, g, *q),
            Self::AVaR { q } => conditional_avar(space, f, g, *q),
            Self::NegExpectation { density } => neg_conditional_expectation(space, f, g, density.as_ref()),
            Self::UtilityEquivalent { slope } => utility_equivalent(space, f, g, *slope),
        }
    }
}

pub fn check_level(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("level q must lie in (0,1), got {q}")))
    }
}

/// `inf{x : P(F <= x) > q}` for the discrete law with the given (unnormalised) weights.
pub fn lower_quantile_strict(values: &[f64], weights: &[f64], q: f64) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let threshold = q * total + CDF_TOL * total;
    let mut cum = 0.0;
    let mut k = 0;
    while k < order.len() {
        // Accumulate ties together: the CDF jumps once per distinct value.
        let v = values[order[k]];
        while k < order.len() && values[order[k]] == v {
            cum += weights[order[k]];
            k += 1;
        }
        if cum > threshold {
            return v;
        }
    }
    values[order[order.len() - 1]]
}

/// `VaR_q(F) = -inf{x : P(F <= x) > q}` on the whole space.
pub fn var(space: &FiniteProbSpace, f: &RandomVariable, q: f64) -> Result<f64> {
    check_level(q)?;
    space.check_variable(f)?;
    Ok(-lower_quantile_strict(f.values(), space.probs(), q))
}

/// Uniform-weight VaR of a sample, counting atoms exactly.
pub fn empirical_var(sample: &[f64], q: f64) -> Result<f64> {
    check_level(q)?;
    if sample.is_empty() {
        return Err(Error::EmptyConditioningEvent);
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    // smallest k with k > q n, treating q n within 1e-9 of an integer as exact
    let k = ((q * sorted.len() as f64 + 1e-9).floor() as usize + 1).min(sorted.len());
    Ok(-sorted[k - 1])
}

fn blockwise(
    space: &FiniteProbSpace,
    f: &RandomVariable,
    g: &Partition,
    mut per_block: impl FnMut(&[f64], &[f64]) -> f64,
) -> Result<RandomVariable> {
    space.check_variable(f)?;
    if g.atoms() != space.len() {
        return Err(Error::DimensionMismatch(format!(
            "partition covers {} atoms, space has {}",
            g.atoms(),
            space.len()
        )));
    }
    let mut out = vec![0.0; space.len()];
    for block in g.blocks() {
        let values: Vec<f64> = block.iter().map(|&w| f[w]).collect();
        let weights: Vec<f64> = block.iter().map(|&w| space.prob(w)).collect();
        let r = per_block(&values, &weights);
        for &w in block {
            out[w] = r;
        }
    }
    Ok(RandomVariable::new(out))
}

pub fn conditional_var(space: &FiniteProbSpace, f: &RandomVariable, g: &Partition, q: f64) -> Result<RandomVariable> {
    check_level(q)?;
    blockwise(space, f, g, |v, w| -lower_quantile_strict(v, w, q))
}

/// `AVaR_q(F | G) = (1/q) E[(F + VaR_q(F|G))^- | G] + VaR_q(F|G)`.
pub fn conditional_avar(space: &FiniteProbSpace, f: &RandomVariable, g: &Partition, q: f64) -> Result<RandomVariable> {
    check_level(q)?;
    blockwise(space, f, g, |v, w| avar_block(v, w, q))
}

fn avar_block(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let var = -lower_quantile_strict(values, weights, q);
    let total: f64 = weights.iter().sum();
    let tail: f64 = values.iter().zip(weights).map(|(v, w)| w * neg_part(v + var)).sum();
    tail / total / q + var
}

pub fn neg_conditional_expectation(
    space: &FiniteProbSpace,
    f: &RandomVariable,
    g: &Partition,
    density: Option<&RandomVariable>,
) -> Result<RandomVariable> {
    if let Some(den) = density {
        check_density(space, den)?;
    }
    Ok(conditional_expectation(space, f, g, density)?.map(|v| -v))
}

pub fn utility_equivalent(space: &FiniteProbSpace, f: &RandomVariable, g: &Partition, slope: f64) -> Result<RandomVariable> {
    let u = |c: f64| if c > 0.0 { slope * c } else { c };
    let u_inv = |z: f64| if z > 0.0 { z / slope } else { z };
    let utilities = f.map(u);
    let expected = conditional_expectation(space, &utilities, g, None)?;
    Ok(expected.map(|z| -u_inv(z)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f4() -> RandomVariable {
        RandomVariable::new(vec![-1.0, -2.0, -3.0, -4.0])
    }

    fn halves() -> Partition {
        Partition::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap()
    }

    #[test]
    fn var_examples() {
        let s = FiniteProbSpace::uniform(4);
        assert_eq!(var(&s, &f4(), 0.3).unwrap(), 3.0);
        assert_eq!(var(&s, &f4(), 0.5).unwrap(), 2.0);
        assert_eq!(var(&s, &RandomVariable::constant(4, 2.5), 0.1).unwrap(), -2.5);
        assert!(var(&s, &f4(), 1.0).is_err());
        assert!(var(&s, &f4(), 0.0).is_err());
    }

    #[test]
    fn conditional_var_examples() {
        let s = FiniteProbSpace::uniform(4);
        assert_eq!(conditional_var(&s, &f4(), &halves(), 0.5).unwrap().values(), &[1.0, 1.0, 3.0, 3.0]);
        let trivial = conditional_var(&s, &f4(), &Partition::trivial(4), 0.3).unwrap();
        assert_eq!(trivial.values(), &[3.0; 4]);
        let discrete = conditional_var(&s, &f4(), &Partition::discrete(4), 0.7).unwrap();
        assert_eq!(discrete.values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn avar_examples() {
        let s = FiniteProbSpace::uniform(4);
        let whole = conditional_avar(&s, &f4(), &Partition::trivial(4), 0.25).unwrap();
        assert!(whole.values().iter().all(|v| (v - 4.0).abs() < 1e-12));
        let blocks = conditional_avar(&s, &f4(), &halves(), 0.5).unwrap();
        assert!(blocks.max_abs_diff(&RandomVariable::new(vec![2.0, 2.0, 4.0, 4.0])) < 1e-12);
        let c = conditional_avar(&s, &RandomVariable::constant(4, -7.0), &halves(), 0.3).unwrap();
        assert!(c.values().iter().all(|v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn neg_expectation_examples() {
        let s = FiniteProbSpace::uniform(4);
        let f = RandomVariable::new(vec![1.0, 3.0, 5.0, 7.0]);
        let r = neg_conditional_expectation(&s, &f, &Partition::trivial(4), None).unwrap();
        assert_eq!(r.values(), &[-4.0; 4]);
        // density tilted toward the smaller outcome of each block
        let den = RandomVariable::new(vec![1.5, 0.5, 1.5, 0.5]);
        let tilted = neg_conditional_expectation(&s, &f, &halves(), Some(&den)).unwrap();
        let plain = neg_conditional_expectation(&s, &f, &halves(), None).unwrap();
        assert!(tilted.values().iter().zip(plain.values()).all(|(a, b)| a > b));
    }

    #[test]
    fn empirical_var_counts_atoms() {
        let sample: Vec<f64> = (1..=20).map(|k| -(k as f64)).collect();
        // 0.1 * 20 = 2 atoms at or below -19; need strictly more than 2
        assert_eq!(empirical_var(&sample, 0.1).unwrap(), 18.0);
        let s = FiniteProbSpace::uniform(20);
        assert_eq!(var(&s, &RandomVariable::new(sample.clone()), 0.1).unwrap(), 18.0);
    }

    #[test]
    fn utility_equivalent_is_expectation_on_losses() {
        let s = FiniteProbSpace::uniform(2);
        let f = RandomVariable::new(vec![-1.0, -3.0]);
        let r = utility_equivalent(&s, &f, &Partition::trivial(2), 2.0).unwrap();
        assert_eq!(r.values(), &[2.0, 2.0]);
        let g = RandomVariable::new(vec![2.0, -1.0]);
        // E[u] = (4 - 1)/2 = 1.5 > 0 -> u^{-1} = 0.75
        let r = utility_equivalent(&s, &g, &Partition::trivial(2), 2.0).unwrap();
        assert_eq!(r.values(), &[-0.75, -0.75]);
    }

    #[test]
    fn json_tags() {
        let spec: RiskMeasureSpec = serde_json::from_str(r#"{"kind":"AVaR","q":0.05}"#).unwrap();
        assert_eq!(spec, RiskMeasureSpec::AVaR { q: 0.05 });
        let spec: RiskMeasureSpec = serde_json::from_str(r#"{"kind":"NegExpectation"}"#).unwrap();
        assert_eq!(spec, RiskMeasureSpec::NegExpectation { density: None });
    }
}
