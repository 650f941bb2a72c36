//! Pre-deployment audit engine for binary classifiers.
//!
//! A model is audited on five dimensions (reliability, inclusivity,
//! sensitivity, equity, deployability). Each gating metric is reported with
//! a bootstrap confidence interval and a PASS / FAIL / INCONCLUSIVE verdict;
//! equity is reported as DIAGNOSTIC. The deployment gate is the conjunction
//! of the four gating dimensions.

pub mod cohort;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod model;
pub mod perturb;
pub mod report;
pub mod runner;
pub mod stats;
pub mod verdict;

pub use cohort::{Cohort, CohortGenConfig, FeatureMatrix, Partition};
pub use error::{Error, Result};
pub use model::{LogisticBaseline, ScoreSet, Scorer};
pub use perturb::PerturbationBattery;
pub use report::ScorecardDocument;
pub use runner::{evaluate_all, Evaluation, EvaluationPlan, LatencyPolicy, Scoring};
pub use stats::{BootstrapConfig, Direction, IntervalEstimate};
pub use verdict::{CriterionId, Dimension, Scorecard, Verdict};
