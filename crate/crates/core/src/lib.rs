//! Fairness auditing on differentially private synthetic tabular data.
//!
//! The pipeline has two halves. The synthesis half selects marginals with a
//! mutual-information maximum spanning tree, measures them with the Gaussian
//! mechanism, fits a tree-structured Markov random field to the noisy
//! measurements and samples synthetic rows from it. The auditing half
//! evaluates six group-fairness measures on both the original and the
//! synthetic data and reports how far apart they are.
//!
//! ```text
//! dataset ─► select ─► privacy ─► model ─► sample
//!    │                                       │
//!    └──────────► fairness ◄── predictor ◄───┘
//!                     │
//!                   audit
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod audit;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod fairness;
pub mod marginal;
pub mod model;
pub mod predictor;
pub mod privacy;
pub mod rng;
pub mod select;

pub use audit::{run_audit, AuditComparison, AuditOptions, PredictorSource};
pub use dataset::{AttributeDomain, DomainKind, EncodedDatabase};
pub use error::{Error, Result};
pub use fairness::{Category, FairnessReport, Measure, PredicateSpec, PredictionVector};
pub use marginal::Marginal;
pub use model::TreeModel;
pub use predictor::{LogisticModel, TrainConfig};
pub use privacy::{BudgetAllocation, NoiseMode, NoisyMeasurement};
pub use rng::StreamRng;
pub use select::SelectionPlan;
