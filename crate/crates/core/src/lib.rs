//! Conditional systemic risk measures on finite probability spaces.
//!
//! A systemic risk measure here is the composition `rho(X) = eta(Lambda(X))` of a
//! state-wise conditional aggregation `Lambda` (see [`aggregation`], [`clearing`])
//! and a univariate conditional base risk measure `eta` (see [`risk_measures`]).
//! [`csrm`] composes the two, recovers them from an arbitrary risk map and checks
//! the axioms; [`network_sim`] and [`metrics`] provide the Monte Carlo interbank
//! simulation and the CoVaR / CoES / SES / DIP statistics computed on it.

pub mod aggregation;
pub mod clearing;
pub mod csrm;
pub mod error;
pub mod metrics;
pub mod network_sim;
pub mod numeric;
pub mod prob_space;
pub mod risk_measures;

pub use aggregation::AggregationSpec;
pub use clearing::{ClearingProblem, ClearingSolution, Objective};
pub use csrm::{Axiom, Csrm, PropertyReport, RiskMap};
pub use error::{Error, Result};
pub use prob_space::{FiniteProbSpace, Partition, RandomVariable, RandomVector};
pub use risk_measures::RiskMeasureSpec;
