//! Logistic-regression audits of misclassification: which clinical
//! features and which co-occurring radiological findings predict that a
//! model misclassifies a study, reported as Wald odds ratios with
//! per-model fits and cross-model aggregation.

mod irls;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FindingName, TaskName};
use crate::error::{Error, Result};
use crate::metrics::MisclassMatrix;

/// IRLS fitting knobs. `ridge` = 0 is plain maximum likelihood; a small
/// positive value (e.g. 1e−6) stabilizes near-separable designs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub ridge: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
            ridge: 0.0,
        }
    }
}

/// Wald statistics for one fitted coefficient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureStat {
    pub name: String,
    pub coefficient: f64,
    pub std_error: f64,
    pub z_value: f64,
    pub p_value: f64,
    /// Exactly `exp(coefficient)`.
    pub odds_ratio: f64,
    /// `exp(coefficient − 1.96·SE)`.
    pub or_ci_lower: f64,
    /// `exp(coefficient + 1.96·SE)`.
    pub or_ci_upper: f64,
}

/// One logistic fit. `features[0]` is always the intercept row, named
/// `(intercept)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub features: Vec<FeatureStat>,
    pub converged: bool,
    pub n_iterations: usize,
    pub log_likelihood: f64,
    /// True when a coefficient diverged past the separation bound or the
    /// weighted information collapsed; the fit is reported anyway, with
    /// infinite standard errors, rather than silently passed off as sound.
    pub separation_detected: bool,
}

impl FitReport {
    /// Statistics for a feature by name, if present.
    pub fn feature(&self, name: &str) -> Option<&FeatureStat> {
        self.features.iter().find(|f| f.name == name)
    }
}

/// Which predictor family an audit design uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    Clinical,
    Findings,
    AgePlusComorbidity,
}

impl AuditKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditKind::Clinical => "clinical",
            AuditKind::Findings => "findings",
            AuditKind::AgePlusComorbidity => "age_plus_comorbidity",
        }
    }
}

/// The design matrix recipe behind an audit fit: which columns, for which
/// task, and (in findings mode) which findings were excluded because the
/// label hierarchy ties them to the task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignSpec {
    pub feature_kind: AuditKind,
    pub task: TaskName,
    pub feature_names: Vec<String>,
    pub excluded: Vec<FindingName>,
}

/// An audit fit together with the design that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditFit {
    pub design: DesignSpec,
    pub report: FitReport,
}

/// Fit a logistic regression of binary `y` on `x` (no intercept column;
/// one is prepended and reported as `(intercept)`).
pub fn fit_logistic(
    x: &DMatrix<f64>,
    y: &[u8],
    names: &[String],
    config: &FitConfig,
) -> Result<FitReport> {
    irls::fit(x, y, names, config)
}

pub(crate) const CLINICAL_FEATURE_NAMES: [&str; 5] = [
    "age",
    "sex",
    "has_lateral_view",
    "num_ap_views",
    "num_pa_views",
];

fn check_matrix(dataset: &Dataset, matrix: &MisclassMatrix) -> Result<()> {
    if matrix.misclassified.len() != dataset.n_studies() {
        return Err(Error::invalid(format!(
            "misclassification matrix covers {} studies, dataset has {}",
            matrix.misclassified.len(),
            dataset.n_studies()
        )));
    }
    Ok(())
}

/// Audit the five clinical features — age, sex, lateral-view presence,
/// AP view count, PA view count — as predictors of misclassification.
pub fn audit_clinical(
    dataset: &Dataset,
    matrix: &MisclassMatrix,
    config: &FitConfig,
) -> Result<AuditFit> {
    check_matrix(dataset, matrix)?;
    let n = dataset.n_studies();
    let mut x = DMatrix::<f64>::zeros(n, 5);
    for (i, study) in dataset.studies().iter().enumerate() {
        for (j, v) in study.clinical_features().into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    let names: Vec<String> = CLINICAL_FEATURE_NAMES.map(String::from).to_vec();
    let report = fit_logistic(&x, &matrix.misclassified, &names, config)?;
    Ok(AuditFit {
        design: DesignSpec {
            feature_kind: AuditKind::Clinical,
            task: matrix.task,
            feature_names: names,
            excluded: Vec::new(),
        },
        report,
    })
}

/// Audit co-occurring radiological findings as predictors of
/// misclassification. The task's own finding and everything the label
/// hierarchy connects to it (ancestors and descendants) are excluded
/// from the design.
pub fn audit_findings(
    dataset: &Dataset,
    matrix: &MisclassMatrix,
    config: &FitConfig,
) -> Result<AuditFit> {
    check_matrix(dataset, matrix)?;
    let excluded = dataset.hierarchy().excluded_features(matrix.task);
    let columns: Vec<FindingName> = FindingName::ALL
        .iter()
        .copied()
        .filter(|f| !excluded.contains(f))
        .collect();
    let n = dataset.n_studies();
    let mut x = DMatrix::<f64>::zeros(n, columns.len());
    for (i, study) in dataset.studies().iter().enumerate() {
        for (j, &finding) in columns.iter().enumerate() {
            x[(i, j)] = f64::from(study.label(finding));
        }
    }
    let names: Vec<String> = columns.iter().map(|f| f.as_str().to_string()).collect();
    let report = fit_logistic(&x, &matrix.misclassified, &names, config)?;
    Ok(AuditFit {
        design: DesignSpec {
            feature_kind: AuditKind::Findings,
            task: matrix.task,
            feature_names: names,
            excluded,
        },
        report,
    })
}

/// Audit the joint model of age and comorbidity count (positive findings
/// excluding No Finding and the task's own finding).
pub fn audit_age_comorbidity(
    dataset: &Dataset,
    matrix: &MisclassMatrix,
    config: &FitConfig,
) -> Result<AuditFit> {
    check_matrix(dataset, matrix)?;
    let n = dataset.n_studies();
    let mut x = DMatrix::<f64>::zeros(n, 2);
    for (i, study) in dataset.studies().iter().enumerate() {
        x[(i, 0)] = study.age;
        x[(i, 1)] = f64::from(study.comorbidity_count(matrix.task));
    }
    let names = vec!["age".to_string(), "comorbidity_count".to_string()];
    let report = fit_logistic(&x, &matrix.misclassified, &names, config)?;
    Ok(AuditFit {
        design: DesignSpec {
            feature_kind: AuditKind::AgePlusComorbidity,
            task: matrix.task,
            feature_names: names,
            excluded: Vec::new(),
        },
        report,
    })
}

/// Cross-model summary for one feature of one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateFeature {
    pub name: String,
    /// Models whose Wald p-value for this feature is below 0.05.
    pub n_significant_models: usize,
    pub mean_odds_ratio: f64,
    /// Arithmetic mean of the per-model lower CI bounds.
    pub agg_ci_lower: f64,
    /// Arithmetic mean of the per-model upper CI bounds.
    pub agg_ci_upper: f64,
}

/// Per-task aggregation of one audit family across models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub task: TaskName,
    pub n_models: usize,
    pub features: Vec<AggregateFeature>,
}

/// Aggregate per-model fit reports for one task: count significant
/// models per feature, average odds ratios, and average the Wald bounds.
pub fn aggregate_across_models(reports: &[FitReport], task: TaskName) -> Result<AggregateReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("no reports to aggregate"))?;
    let names: Vec<&str> = first.features.iter().map(|f| f.name.as_str()).collect();
    for (k, report) in reports.iter().enumerate() {
        let these: Vec<&str> = report.features.iter().map(|f| f.name.as_str()).collect();
        if these != names {
            return Err(Error::invalid(format!(
                "report {k} has feature set {these:?}, expected {names:?}"
            )));
        }
    }
    let n_models = reports.len();
    let features = (0..names.len())
        .map(|j| {
            let stats: Vec<&FeatureStat> = reports.iter().map(|r| &r.features[j]).collect();
            AggregateFeature {
                name: names[j].to_string(),
                n_significant_models: stats.iter().filter(|s| s.p_value < 0.05).count(),
                mean_odds_ratio: stats.iter().map(|s| s.odds_ratio).sum::<f64>() / n_models as f64,
                agg_ci_lower: stats.iter().map(|s| s.or_ci_lower).sum::<f64>() / n_models as f64,
                agg_ci_upper: stats.iter().map(|s| s.or_ci_upper).sum::<f64>() / n_models as f64,
            }
        })
        .collect();
    Ok(AggregateReport {
        task,
        n_models,
        features,
    })
}
