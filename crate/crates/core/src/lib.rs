//! Audit binary multi-label classifiers for *who* they misclassify and
//! selectively flip the predictions most likely to be wrong.
//!
//! The pipeline, in the order the modules build on each other:
//!
//! - [`data`]: studies (clinical covariates + 14 radiologist findings),
//!   per-(model, task) output scores, and the label hierarchy.
//! - [`metrics`]: AUROC, Youden-optimal thresholds, strict binarization,
//!   misclassification ground truth, and F1 with explicit conventions.
//! - [`bootstrap`]: seeded percentile bootstrap intervals.
//! - [`glm`]: logistic-regression audits (IRLS + Wald tests) of which
//!   clinical features and co-occurring findings predict misclassification.
//! - [`gbdt`]: a from-scratch gradient-boosted-trees backend.
//! - [`identifiers`]: the four misclassification identifiers and their
//!   repeated-split AUROC evaluation loop.
//! - [`flipping`]: confusion sub-matrices, the flipping rule with its F1
//!   guarantee, and the k-grid flip search.
//!
//! Everything that draws random numbers takes an explicit seed and derives
//! per-purpose streams through [`seeding::derive_seed`], so identical
//! inputs give byte-identical outputs.

pub mod bootstrap;
pub mod data;
pub mod error;
pub mod flipping;
pub mod gbdt;
pub mod glm;
pub mod identifiers;
pub mod metrics;
mod numeric;
pub mod seeding;
pub mod split;

pub use bootstrap::{bootstrap_ci, BootstrapCi};
pub use data::{load_dataset, write_dataset, Dataset, FindingName, LabelHierarchy, StudyRecord, TaskName};
pub use error::{Error, ErrorCategory, Result};
pub use flipping::{
    apply_flip, default_k_grid, f1_after_from_matrices, flip_search, flipping_rule, sub_matrices,
    FlipDecision, FlipF1, FlipOutcome, FlipSubMatrices, FoldEval,
};
pub use gbdt::{fit_gbdt, GbdtModel, GbdtParams};
pub use glm::{
    aggregate_across_models, audit_age_comorbidity, audit_clinical, audit_findings, fit_logistic,
    AggregateReport, AuditFit, AuditKind, DesignSpec, FitConfig, FitReport,
};
pub use identifiers::{
    build_features, evaluate_identifiers, feature_names, naive_score, train_identifier,
    ClassifierBackendSpec, EvalSpec, IdentifierEvalReport, IdentifierKind, TrainedIdentifier,
};
pub use metrics::{
    auroc, binarize, f1, f1_from_counts, misclass_ground_truth, youden_threshold, MisclassMatrix,
    PrfScores, ThresholdResult,
};
pub use seeding::{derive_seed, seeded_rng};
pub use split::{split_three, split_two, ThreeWaySplit, TwoWaySplit};
