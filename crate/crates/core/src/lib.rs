//! Example-based explainability: four training-data attribution methods
//! (influence functions, relative influence, TraceIn, DataModels) over small
//! differentiable classifiers, and the metrics used to judge them:
//! relevance, distinguishability (popularity, active domain, overlap) and
//! rule-based correctness.
//!
//! The modules are layered bottom-up:
//!
//! * [`dataset`]: labeled feature vectors, file loaders, synthetic generators
//!   and class-outlier injection.
//! * [`model`]: logistic regression and a one-hidden-layer tanh MLP with exact
//!   gradients, Hessian-vector products, a CG inverse-HVP solver and
//!   checkpointed SGD.
//! * [`explainers`]: IF, RIF, TraceIn and DataModels behind one trait.
//! * [`metrics`]: relevance, popularity, active domain, overlap.
//! * [`rules`]: labeling-rule injection, rule-learning checks and correctness.
//! * [`loo`]: brute-force leave-one-out retraining used as ground truth.
//! * [`pipeline`]: config-driven end-to-end runs with on-disk reports.

pub mod dataset;
pub mod error;
pub mod explainers;
pub mod linalg;
pub mod loo;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rules;
pub mod seed;
pub mod stats;

mod par;

pub use dataset::{Dataset, ExampleId, LabeledExample, OutlierMode, OutlierSpec};
pub use error::{Error, Result};
pub use explainers::{Explanandum, Explanation, Member, Method};
pub use metrics::MetricReport;
pub use model::{Arch, Checkpoint, ModelParams, TrainConfig};
pub use rules::{Condition, Rule, RuleVerification};
