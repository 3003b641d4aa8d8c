//! Synthetic dataset generation with plantable misclassification signals.
//!
//! The generator works in two stages per (model, task, study). First it
//! draws whether the model misclassifies the study from a logistic model
//! over the planted clinical and finding effects. Then it draws the
//! model's score on the side of 0.5 that realizes that outcome, at a
//! distance from 0.5 whose distribution depends on the outcome: correct
//! scores sit uniformly in the full half-interval, misclassified scores
//! are squeezed into a band of width `0.5·(1 − score_distance_effect)`
//! next to the threshold. At the planted threshold the score-distance
//! baseline therefore has a closed-form AUROC of
//! `0.5 + score_distance_effect / 2`, and the clinical effects remain
//! recoverable by the logistic audit in expectation.

use std::collections::BTreeMap;

use flipaudit_core::{
    seeded_rng, Dataset, Error, FindingName, LabelHierarchy, Result, StudyRecord, TaskName,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Ages are drawn uniformly from this range (then rounded to years), and
/// the age effect applies to `age − AGE_CENTER`.
pub const AGE_RANGE: (f64, f64) = (20.0, 90.0);
pub const AGE_CENTER: f64 = 55.0;

/// Planted misclassification probabilities are clamped into this range so
/// extreme recipes cannot produce deterministic outcomes.
const P_MIS_RANGE: (f64, f64) = (0.005, 0.995);

/// Marginal P(finding = 1) used for the radiologist labels.
fn prevalence(finding: FindingName) -> f64 {
    match finding {
        FindingName::Atelectasis => 0.30,
        FindingName::Cardiomegaly => 0.25,
        FindingName::PleuralEffusion => 0.35,
        FindingName::Consolidation => 0.15,
        FindingName::Edema => 0.25,
        FindingName::NoFinding => 0.0, // derived, never sampled
        FindingName::EnlargedCardiomediastinum => 0.10,
        FindingName::LungOpacity => 0.40,
        FindingName::LungLesion => 0.08,
        FindingName::Pneumonia => 0.06,
        FindingName::Pneumothorax => 0.08,
        FindingName::PleuralOther => 0.04,
        FindingName::Fracture => 0.06,
        FindingName::SupportDevices => 0.45,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// The planted misclassification signal for one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalRecipe {
    /// Misclassification probability at age [`AGE_CENTER`] with no
    /// lateral view and no comorbid findings.
    pub base_misclass_rate: f64,
    /// Log-odds of misclassification per year of age.
    pub age_effect: f64,
    /// Log-odds shift when the study has a lateral view.
    pub lateral_effect: f64,
    /// Log-odds per positive co-occurring finding (the comorbidity
    /// count: positives other than No Finding and the task's disease).
    pub finding_effect: f64,
    /// How strongly misclassified scores crowd the threshold, in [0, 1):
    /// 0 plants no distance signal, values near 1 pin misclassified
    /// scores to 0.5. The score-distance baseline's AUROC at the planted
    /// threshold is `0.5 + score_distance_effect / 2`.
    pub score_distance_effect: f64,
}

impl Default for SignalRecipe {
    fn default() -> Self {
        Self {
            base_misclass_rate: 0.15,
            age_effect: 0.03,
            lateral_effect: -0.8,
            finding_effect: 0.1,
            score_distance_effect: 0.7,
        }
    }
}

impl SignalRecipe {
    fn validate(&self) -> Result<()> {
        if !(self.base_misclass_rate > 0.0 && self.base_misclass_rate < 1.0) {
            return Err(Error::invalid(format!(
                "base_misclass_rate must be in (0, 1), got {}",
                self.base_misclass_rate
            )));
        }
        if !(0.0..1.0).contains(&self.score_distance_effect) {
            return Err(Error::invalid(format!(
                "score_distance_effect must be in [0, 1), got {}",
                self.score_distance_effect
            )));
        }
        for (name, v) in [
            ("age_effect", self.age_effect),
            ("lateral_effect", self.lateral_effect),
            ("finding_effect", self.finding_effect),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite, got {v}")));
            }
        }
        Ok(())
    }

    /// The closed-form AUROC of the score-distance baseline at the
    /// planted threshold.
    pub fn theoretical_naive_auroc(&self) -> f64 {
        0.5 + self.score_distance_effect / 2.0
    }
}

/// The `[synth]` config section: cohort size plus the signal recipe,
/// optionally overridden per task.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_studies: usize,
    pub n_models: usize,
    /// Recipe applied to every task not listed in `task_recipes`.
    pub recipe: SignalRecipe,
    /// Per-task recipe overrides, keyed by task name.
    pub task_recipes: BTreeMap<TaskName, SignalRecipe>,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            n_studies: 700,
            n_models: 10,
            recipe: SignalRecipe::default(),
            task_recipes: BTreeMap::new(),
        }
    }
}

impl SynthSection {
    pub fn validate(&self) -> Result<()> {
        if self.n_studies < 10 {
            return Err(Error::invalid(format!(
                "synth.n_studies must be at least 10, got {}",
                self.n_studies
            )));
        }
        if self.n_models == 0 {
            return Err(Error::invalid("synth.n_models must be at least 1"));
        }
        self.recipe.validate()?;
        for recipe in self.task_recipes.values() {
            recipe.validate()?;
        }
        Ok(())
    }

    /// The recipe in force for one task.
    pub fn recipe_for(&self, task: TaskName) -> SignalRecipe {
        self.task_recipes.get(&task).copied().unwrap_or(self.recipe)
    }
}

/// What was actually planted, written alongside the dataset so oracle
/// checks can recompute expectations.
#[derive(Debug, Clone, Serialize)]
pub struct RecipeRecord {
    pub n_studies: usize,
    pub n_models: usize,
    pub seed: u64,
    pub age_center: f64,
    pub tasks: Vec<TaskRecipeRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskRecipeRecord {
    pub task: TaskName,
    #[serde(flatten)]
    pub recipe: SignalRecipe,
    pub theoretical_naive_auroc: f64,
}

/// Generate a dataset per the section's recipes. The cohort (studies and
/// labels) is drawn from one seeded stream and each (model, task) score
/// column from its own derived stream, so changing `n_models` leaves the
/// cohort untouched.
pub fn generate(section: &SynthSection, seed: u64) -> Result<(Dataset, RecipeRecord)> {
    section.validate()?;
    let n = section.n_studies;

    let mut rng = seeded_rng(seed, "synth/cohort", &[]);
    let mut studies = Vec::with_capacity(n);
    for i in 0..n {
        let age = rng.random_range(AGE_RANGE.0..AGE_RANGE.1).round();
        let sex = u8::from(rng.random::<f64>() < 0.5);
        let has_lateral_view = rng.random::<f64>() < 0.3;
        let mut num_ap_views = rng.random_range(0..3u32);
        let num_pa_views = rng.random_range(0..3u32);
        if num_ap_views + num_pa_views + u32::from(has_lateral_view) == 0 {
            num_ap_views = 1;
        }
        let mut labels = [0u8; 14];
        for finding in FindingName::ALL {
            if finding != FindingName::NoFinding {
                labels[finding.index()] = u8::from(rng.random::<f64>() < prevalence(finding));
            }
        }
        let any_positive = FindingName::ALL
            .iter()
            .any(|&f| f != FindingName::NoFinding && labels[f.index()] == 1);
        labels[FindingName::NoFinding.index()] = u8::from(!any_positive);
        studies.push(StudyRecord {
            study_id: format!("synth-{i:05}"),
            age,
            sex,
            has_lateral_view,
            num_ap_views,
            num_pa_views,
            labels,
        });
    }

    let n_tasks = TaskName::ALL.len();
    let mut scores = vec![0.0; section.n_models * n_tasks * n];
    for m in 0..section.n_models {
        for (t, &task) in TaskName::ALL.iter().enumerate() {
            let recipe = section.recipe_for(task);
            let mis_width = 0.5 * (1.0 - recipe.score_distance_effect);
            let base_logit = logit(recipe.base_misclass_rate);
            let mut stream = seeded_rng(seed, "synth/outputs", &[m as u64, t as u64]);
            for (i, study) in studies.iter().enumerate() {
                let eta = base_logit
                    + recipe.age_effect * (study.age - AGE_CENTER)
                    + recipe.lateral_effect * f64::from(u8::from(study.has_lateral_view))
                    + recipe.finding_effect * f64::from(study.comorbidity_count(task));
                let p_mis = sigmoid(eta).clamp(P_MIS_RANGE.0, P_MIS_RANGE.1);
                let mis = u8::from(stream.random::<f64>() < p_mis);
                let width = if mis == 1 { mis_width } else { 0.5 };
                let distance = stream.random::<f64>() * width;
                let predicted_side = study.label(task.finding()) ^ mis;
                scores[(m * n_tasks + t) * n + i] = if predicted_side == 1 {
                    0.5 + distance
                } else {
                    0.5 - distance
                };
            }
        }
    }

    let model_ids = (0..section.n_models)
        .map(|m| format!("model-{m:03}"))
        .collect();
    let dataset = Dataset::new(
        studies,
        model_ids,
        scores,
        LabelHierarchy::default_chexpert(),
    )?;

    let record = RecipeRecord {
        n_studies: n,
        n_models: section.n_models,
        seed,
        age_center: AGE_CENTER,
        tasks: TaskName::ALL
            .iter()
            .map(|&task| {
                let recipe = section.recipe_for(task);
                TaskRecipeRecord {
                    task,
                    recipe,
                    theoretical_naive_auroc: recipe.theoretical_naive_auroc(),
                }
            })
            .collect(),
    };
    Ok((dataset, record))
}
