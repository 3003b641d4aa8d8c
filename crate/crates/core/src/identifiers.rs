//! Misclassification identifiers: rank studies by how likely a given
//! model misclassified them. Four kinds — an untrained score-distance
//! baseline and three trained classifiers over clinical and model-output
//! features — plus the repeated-split evaluation loop that scores them
//! by held-out AUROC with bootstrap intervals.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_ci, BootstrapCi};
use crate::data::{Dataset, TaskName};
use crate::error::{Error, Result};
use crate::gbdt::{fit_gbdt, GbdtModel, GbdtParams};
use crate::glm::{fit_logistic, FitConfig};
use crate::metrics::{auroc, misclass_ground_truth, youden_threshold, ThresholdResult};
use crate::numeric::sigmoid;
use crate::seeding::derive_seed;
use crate::split::split_two;

/// The identifier families, ordered from least to most informed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentifierKind {
    /// Negative absolute distance of the model score from the decision
    /// threshold; untrained.
    Naive,
    /// The five clinical covariates.
    ClinicalOnly,
    /// Clinical covariates plus the model's score for the task (6 features).
    SameLabel,
    /// Clinical covariates plus the model's scores for all five tasks
    /// (10 features).
    AllLabels,
}

impl IdentifierKind {
    pub const ALL: [IdentifierKind; 4] = [
        IdentifierKind::Naive,
        IdentifierKind::ClinicalOnly,
        IdentifierKind::SameLabel,
        IdentifierKind::AllLabels,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IdentifierKind::Naive => "naive",
            IdentifierKind::ClinicalOnly => "clinical_only",
            IdentifierKind::SameLabel => "same_label",
            IdentifierKind::AllLabels => "all_labels",
        }
    }

    pub fn parse(s: &str) -> Option<IdentifierKind> {
        IdentifierKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn index(self) -> usize {
        IdentifierKind::ALL
            .iter()
            .position(|&k| k == self)
            .expect("kind is in ALL")
    }

    /// Number of features the kind's vector carries; 0 for the untrained
    /// naive ranking.
    pub fn n_features(self) -> usize {
        match self {
            IdentifierKind::Naive => 0,
            IdentifierKind::ClinicalOnly => 5,
            IdentifierKind::SameLabel => 6,
            IdentifierKind::AllLabels => 10,
        }
    }
}

impl std::fmt::Display for IdentifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which classifier family backs the trained identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierBackendSpec {
    GradientBoostedTrees(GbdtParams),
    Logistic {
        /// L2 strength; plain maximum likelihood when omitted.
        #[serde(default)]
        ridge: f64,
    },
}

impl Default for ClassifierBackendSpec {
    fn default() -> Self {
        ClassifierBackendSpec::GradientBoostedTrees(GbdtParams::default())
    }
}

/// Feature names for a kind, in the exact order [`build_features`] emits
/// values. The clinical block is shared verbatim across trained kinds;
/// score features are named `score:<finding>`.
pub fn feature_names(kind: IdentifierKind, task: TaskName) -> Vec<String> {
    let clinical = crate::glm::CLINICAL_FEATURE_NAMES.map(String::from);
    match kind {
        IdentifierKind::Naive => Vec::new(),
        IdentifierKind::ClinicalOnly => clinical.to_vec(),
        IdentifierKind::SameLabel => {
            let mut names = clinical.to_vec();
            names.push(format!("score:{}", task.finding().as_str()));
            names
        }
        IdentifierKind::AllLabels => {
            let mut names = clinical.to_vec();
            for t in TaskName::ALL {
                names.push(format!("score:{}", t.finding().as_str()));
            }
            names
        }
    }
}

/// The untrained baseline's ranking score: negative absolute distance of
/// the model output from the decision threshold. Higher means closer to
/// the threshold, hence more likely misclassified.
pub fn naive_score(score: f64, threshold: f64) -> f64 {
    -(score - threshold).abs()
}

/// The feature vector of one study for one (kind, model, task).
/// The naive kind has no feature vector (it is untrained) and is an error.
pub fn build_features(
    dataset: &Dataset,
    model_index: usize,
    study_index: usize,
    kind: IdentifierKind,
    task: TaskName,
) -> Result<Vec<f64>> {
    if kind == IdentifierKind::Naive {
        return Err(Error::invalid(
            "the naive identifier is untrained and has no feature vector",
        ));
    }
    let study = dataset.study(study_index);
    let mut features = study.clinical_features().to_vec();
    match kind {
        IdentifierKind::Naive | IdentifierKind::ClinicalOnly => {}
        IdentifierKind::SameLabel => {
            features.push(dataset.score(model_index, task, study_index));
        }
        IdentifierKind::AllLabels => {
            for t in TaskName::ALL {
                features.push(dataset.score(model_index, t, study_index));
            }
        }
    }
    Ok(features)
}

/// Fitted backend state of a trained identifier.
#[derive(Debug, Clone)]
enum BackendState {
    Gbdt(GbdtModel),
    /// Coefficients with the intercept first, applied via the sigmoid.
    Logistic(Vec<f64>),
}

/// A misclassification identifier fitted on one train fold for one
/// (model, task).
#[derive(Debug, Clone)]
pub struct TrainedIdentifier {
    pub kind: IdentifierKind,
    pub model_id: String,
    pub task: TaskName,
    /// The disease-prediction threshold its training ground truth was
    /// binarized with (fit on the train fold only).
    pub threshold_used: ThresholdResult,
    backend: BackendState,
}

impl TrainedIdentifier {
    /// Predicted misclassification likelihood in [0, 1] for a feature
    /// vector laid out per [`build_features`].
    pub fn predict_likelihood(&self, features: &[f64]) -> f64 {
        match &self.backend {
            BackendState::Gbdt(model) => model.predict_proba(features),
            BackendState::Logistic(beta) => {
                assert_eq!(
                    features.len() + 1,
                    beta.len(),
                    "feature vector has {} values, logistic backend expects {}",
                    features.len(),
                    beta.len() - 1
                );
                let eta = beta[0]
                    + beta[1..]
                        .iter()
                        .zip(features)
                        .map(|(b, x)| b * x)
                        .sum::<f64>();
                sigmoid(eta)
            }
        }
    }

    /// Likelihood for one study of the dataset the identifier was built
    /// against.
    pub fn predict_study(&self, dataset: &Dataset, study_index: usize) -> Result<f64> {
        let model_index = dataset
            .model_index(&self.model_id)
            .ok_or_else(|| Error::invalid(format!("unknown model_id '{}'", self.model_id)))?;
        let features = build_features(dataset, model_index, study_index, self.kind, self.task)?;
        Ok(self.predict_likelihood(&features))
    }
}

/// Train an identifier on a train fold: fit the fold's own Youden
/// threshold, derive misclassification ground truth from it, and fit the
/// backend to that target. `kind` must not be naive (which is untrained).
pub fn train_identifier(
    dataset: &Dataset,
    train_indices: &[usize],
    kind: IdentifierKind,
    model_index: usize,
    task: TaskName,
    backend: &ClassifierBackendSpec,
    seed: u64,
) -> Result<TrainedIdentifier> {
    if kind == IdentifierKind::Naive {
        return Err(Error::invalid(
            "the naive identifier is untrained; use naive_score directly",
        ));
    }
    if train_indices.is_empty() {
        return Err(Error::invalid("train fold is empty"));
    }
    let scores = dataset.scores_for(model_index, task);
    let labels = dataset.task_labels(task);
    let fold_scores: Vec<f64> = train_indices.iter().map(|&i| scores[i]).collect();
    let fold_labels: Vec<u8> = train_indices.iter().map(|&i| labels[i]).collect();
    let threshold = youden_threshold(&fold_scores, &fold_labels)?;
    let predictions = crate::metrics::binarize(&fold_scores, threshold.threshold);
    let target = misclass_ground_truth(&predictions, &fold_labels)?;
    let mistakes = target.iter().map(|&m| usize::from(m)).sum::<usize>();
    if mistakes == 0 || mistakes == target.len() {
        return Err(Error::DegenerateTarget(format!(
            "train fold of {} studies has {mistakes} misclassifications; \
             both outcomes are needed to fit an identifier",
            target.len()
        )));
    }

    let n_features = kind.n_features();
    let mut flat = Vec::with_capacity(train_indices.len() * n_features);
    for &i in train_indices {
        flat.extend(build_features(dataset, model_index, i, kind, task)?);
    }

    let backend = match backend {
        ClassifierBackendSpec::GradientBoostedTrees(params) => {
            BackendState::Gbdt(fit_gbdt(&flat, n_features, &target, params, seed)?)
        }
        ClassifierBackendSpec::Logistic { ridge } => {
            let n = train_indices.len();
            let x = DMatrix::from_fn(n, n_features, |r, c| flat[r * n_features + c]);
            let config = FitConfig {
                ridge: *ridge,
                ..FitConfig::default()
            };
            let report = fit_logistic(&x, &target, &feature_names(kind, task), &config)?;
            BackendState::Logistic(report.features.iter().map(|f| f.coefficient).collect())
        }
    };

    Ok(TrainedIdentifier {
        kind,
        model_id: dataset.model_ids()[model_index].clone(),
        task,
        threshold_used: threshold,
        backend,
    })
}

/// Evaluation-loop settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSpec {
    /// Number of repeated random train/test splits.
    pub n_splits: usize,
    pub train_fraction: f64,
    /// Bootstrap resamples for each held-out AUROC interval.
    pub n_resamples: usize,
    /// Tasks to evaluate (default: all five).
    pub tasks: Vec<TaskName>,
    /// Identifier kinds to evaluate (default: all four).
    pub kinds: Vec<IdentifierKind>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            n_splits: 5,
            train_fraction: 0.72,
            n_resamples: 1000,
            tasks: TaskName::ALL.to_vec(),
            kinds: IdentifierKind::ALL.to_vec(),
        }
    }
}

/// Held-out AUROC of one identifier on one (task, model, split).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalCell {
    pub task: TaskName,
    pub kind: IdentifierKind,
    pub model_id: String,
    pub split: usize,
    pub auroc: BootstrapCi,
}

/// Mean held-out AUROC of one identifier kind on one task, averaged over
/// the (model, split) cells that evaluated cleanly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub task: TaskName,
    pub kind: IdentifierKind,
    pub n_cells: usize,
    pub mean_auroc: f64,
    pub mean_ci_lower: f64,
    pub mean_ci_upper: f64,
}

/// The full evaluation-loop output: per-cell AUROCs and per-(task, kind)
/// means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentifierEvalReport {
    pub cells: Vec<EvalCell>,
    pub summary: Vec<EvalSummary>,
}

impl IdentifierEvalReport {
    pub fn summary_for(&self, task: TaskName, kind: IdentifierKind) -> Option<&EvalSummary> {
        self.summary
            .iter()
            .find(|s| s.task == task && s.kind == kind)
    }
}

/// Evaluate the configured identifier kinds over repeated random splits:
/// per (task, model, split), fit the Youden threshold on the train fold,
/// binarize both folds with it, train each identifier on the train fold,
/// score the test fold, and report held-out AUROC with a bootstrap
/// interval. Degenerate folds (a class missing, or a backend target that
/// cannot be fit) are skipped with a logged warning and excluded from
/// the summary means.
pub fn evaluate_identifiers(
    dataset: &Dataset,
    backend: &ClassifierBackendSpec,
    spec: &EvalSpec,
    seed: u64,
) -> Result<IdentifierEvalReport> {
    if spec.n_splits == 0 {
        return Err(Error::invalid("n_splits must be at least 1"));
    }
    if spec.tasks.is_empty() || spec.kinds.is_empty() {
        return Err(Error::invalid("tasks and kinds must be non-empty"));
    }
    let n = dataset.n_studies();
    let splits: Vec<_> = (0..spec.n_splits)
        .map(|s| {
            split_two(
                n,
                spec.train_fraction,
                derive_seed(seed, "identify/split", &[s as u64]),
            )
        })
        .collect::<Result<_>>()?;

    // One work item per (task, model, split); kinds share its threshold
    // and ground truth. Items are pure given derived seeds, so they can
    // run in any order; the final sort restores canonical order.
    let items: Vec<(usize, usize, usize)> = spec
        .tasks
        .iter()
        .enumerate()
        .flat_map(|(t, _)| {
            (0..dataset.n_models())
                .flat_map(move |m| (0..spec.n_splits).map(move |s| (t, m, s)))
        })
        .collect();

    let cell_groups: Vec<Vec<EvalCell>> = items
        .par_iter()
        .map(|&(task_pos, model_index, split_index)| {
            evaluate_cell_group(
                dataset,
                backend,
                spec,
                seed,
                spec.tasks[task_pos],
                model_index,
                &splits[split_index],
                split_index,
            )
        })
        .collect();

    let mut cells: Vec<EvalCell> = cell_groups.into_iter().flatten().collect();
    cells.sort_by(|a, b| {
        (a.task.index(), a.kind.index(), &a.model_id, a.split).cmp(&(
            b.task.index(),
            b.kind.index(),
            &b.model_id,
            b.split,
        ))
    });

    let mut summary = Vec::new();
    for &task in &spec.tasks {
        for &kind in &spec.kinds {
            let group: Vec<&EvalCell> = cells
                .iter()
                .filter(|c| c.task == task && c.kind == kind)
                .collect();
            if group.is_empty() {
                continue;
            }
            let m = group.len() as f64;
            summary.push(EvalSummary {
                task,
                kind,
                n_cells: group.len(),
                mean_auroc: group.iter().map(|c| c.auroc.point).sum::<f64>() / m,
                mean_ci_lower: group.iter().map(|c| c.auroc.lower).sum::<f64>() / m,
                mean_ci_upper: group.iter().map(|c| c.auroc.upper).sum::<f64>() / m,
            });
        }
    }

    Ok(IdentifierEvalReport { cells, summary })
}

/// Evaluate every configured kind for one (task, model, split), returning
/// the cells that evaluated cleanly.
#[allow(clippy::too_many_arguments)]
fn evaluate_cell_group(
    dataset: &Dataset,
    backend: &ClassifierBackendSpec,
    spec: &EvalSpec,
    seed: u64,
    task: TaskName,
    model_index: usize,
    split: &crate::split::TwoWaySplit,
    split_index: usize,
) -> Vec<EvalCell> {
    let model_id = &dataset.model_ids()[model_index];
    let scores = dataset.scores_for(model_index, task);
    let labels = dataset.task_labels(task);
    let skip = |what: &str, why: &dyn std::fmt::Display| {
        log::warn!(
            "skipping {what} for task {task}, model {model_id}, split {split_index}: {why}"
        );
    };

    let train_scores: Vec<f64> = split.train.iter().map(|&i| scores[i]).collect();
    let train_labels: Vec<u8> = split.train.iter().map(|&i| labels[i]).collect();
    let threshold = match youden_threshold(&train_scores, &train_labels) {
        Ok(t) => t,
        Err(e) => {
            skip("all identifier kinds", &e);
            return Vec::new();
        }
    };

    let test_scores: Vec<f64> = split.test.iter().map(|&i| scores[i]).collect();
    let test_predictions = crate::metrics::binarize(&test_scores, threshold.threshold);
    let test_labels: Vec<u8> = split.test.iter().map(|&i| labels[i]).collect();
    let test_truth = match misclass_ground_truth(&test_predictions, &test_labels) {
        Ok(t) => t,
        Err(e) => {
            skip("all identifier kinds", &e);
            return Vec::new();
        }
    };

    let mut cells = Vec::with_capacity(spec.kinds.len());
    for &kind in &spec.kinds {
        let likelihoods: Vec<f64> = match kind {
            IdentifierKind::Naive => test_scores
                .iter()
                .map(|&s| naive_score(s, threshold.threshold))
                .collect(),
            _ => {
                let fit_seed = derive_seed(
                    seed,
                    "identify/fit",
                    &[
                        task.index() as u64,
                        kind.index() as u64,
                        model_index as u64,
                        split_index as u64,
                    ],
                );
                let trained = match train_identifier(
                    dataset,
                    &split.train,
                    kind,
                    model_index,
                    task,
                    backend,
                    fit_seed,
                ) {
                    Ok(t) => t,
                    // Degenerate targets and unfittable designs on this
                    // fold are exactly the "degenerate fold" skip case.
                    Err(e) => {
                        skip(kind.as_str(), &e);
                        continue;
                    }
                };
                match split
                    .test
                    .iter()
                    .map(|&i| trained.predict_study(dataset, i))
                    .collect::<Result<Vec<f64>>>()
                {
                    Ok(l) => l,
                    Err(e) => {
                        skip(kind.as_str(), &e);
                        continue;
                    }
                }
            }
        };

        let ci_seed = derive_seed(
            seed,
            "identify/bootstrap",
            &[
                task.index() as u64,
                kind.index() as u64,
                model_index as u64,
                split_index as u64,
            ],
        );
        let truth = &test_truth;
        let likes = &likelihoods;
        let ci = bootstrap_ci(likes.len(), spec.n_resamples, ci_seed, |idx| {
            let s: Vec<f64> = idx.iter().map(|&i| likes[i]).collect();
            let y: Vec<u8> = idx.iter().map(|&i| truth[i]).collect();
            auroc(&s, &y).ok()
        });
        match ci {
            Ok(auroc_ci) => cells.push(EvalCell {
                task,
                kind,
                model_id: model_id.clone(),
                split: split_index,
                auroc: auroc_ci,
            }),
            Err(e) => skip(kind.as_str(), &e),
        }
    }
    cells
}
