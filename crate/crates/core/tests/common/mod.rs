#![allow(dead_code)]

use rand::Rng;
use sysrisk_core::aggregation::AggregationSpec;
use sysrisk_core::prob_space::{FiniteProbSpace, Partition, RandomVariable, RandomVector};
use sysrisk_core::risk_measures::RiskMeasureSpec;

pub fn random_space(rng: &mut impl Rng, n: usize) -> FiniteProbSpace {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = w.iter().sum();
    FiniteProbSpace::new(w.iter().map(|v| v / total).collect()).unwrap()
}

/// Random partition of `n` atoms into at most `max_blocks` nonempty blocks.
pub fn random_partition(rng: &mut impl Rng, n: usize, max_blocks: usize) -> Partition {
    let k = rng.random_range(1..=max_blocks.min(n));
    let mut labels: Vec<usize> = (0..n).map(|w| if w < k { w } else { rng.random_range(0..k) }).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    let blocks = (0..k).map(|b| (0..n).filter(|&w| labels[w] == b).collect()).collect();
    Partition::new(n, blocks).unwrap()
}

pub fn random_vector(rng: &mut impl Rng, atoms: usize, d: usize) -> RandomVector {
    RandomVector::from_rows(
        (0..atoms)
            .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect(),
    )
    .unwrap()
}

/// A positive density with `E[den | G] = 1` on every block.
pub fn block_density(rng: &mut impl Rng, space: &FiniteProbSpace, g: &Partition) -> RandomVariable {
    let mut den = vec![0.0; space.len()];
    for block in g.blocks() {
        let raw: Vec<f64> = block.iter().map(|_| rng.random_range(0.3..2.0)).collect();
        let mass: f64 = block.iter().map(|&w| space.prob(w)).sum();
        let mean: f64 = block.iter().zip(&raw).map(|(&w, r)| space.prob(w) * r).sum::<f64>() / mass;
        for (&w, r) in block.iter().zip(&raw) {
            den[w] = r / mean;
        }
    }
    RandomVariable::new(den)
}

/// A G-measurable positive discount factor.
pub fn block_discount(rng: &mut impl Rng, g: &Partition) -> Vec<f64> {
    let mut d = vec![0.0; g.atoms()];
    for block in g.blocks() {
        let v = rng.random_range(0.5..1.5);
        for &w in block {
            d[w] = v;
        }
    }
    d
}

pub fn base_measures(rng: &mut impl Rng, space: &FiniteProbSpace, g: &Partition) -> Vec<RiskMeasureSpec> {
    vec![
        RiskMeasureSpec::VaR { q: 0.25 },
        RiskMeasureSpec::AVaR { q: 0.3 },
        RiskMeasureSpec::NegExpectation { density: None },
        RiskMeasureSpec::NegExpectation {
            density: Some(block_density(rng, space, g)),
        },
    ]
}

pub fn aggregations(rng: &mut impl Rng, d: usize, g: &Partition) -> Vec<AggregationSpec> {
    vec![
        AggregationSpec::Sum,
        AggregationSpec::Loss,
        AggregationSpec::Exp {
            theta: (0..d).map(|_| rng.random_range(-2.0..0.0)).collect(),
            gamma: (0..d).map(|_| rng.random_range(0.2..1.0)).collect(),
        },
        AggregationSpec::Discounted {
            inner: Box::new(AggregationSpec::Sum),
            discount: block_discount(rng, g),
        },
    ]
}
