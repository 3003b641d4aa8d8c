//! Core data model: the 14 findings, the 5 audited tasks, per-study
//! records, and the validated [`Dataset`] joining studies with model
//! output scores.

mod hierarchy;
mod io;

pub use hierarchy::LabelHierarchy;
pub use io::{load_dataset, write_dataset};

use std::collections::HashSet;
use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of findings every study is labeled with.
pub const N_FINDINGS: usize = 14;

/// Number of audited prediction tasks.
pub const N_TASKS: usize = 5;

/// The 14 findings a study carries labels for. The order of
/// [`FindingName::ALL`] is the canonical column order everywhere (CSV
/// columns, design matrices, feature vectors).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FindingName {
    Atelectasis,
    Cardiomegaly,
    PleuralEffusion,
    Consolidation,
    Edema,
    NoFinding,
    EnlargedCardiomediastinum,
    LungOpacity,
    LungLesion,
    Pneumonia,
    Pneumothorax,
    PleuralOther,
    Fracture,
    SupportDevices,
}

impl FindingName {
    pub const ALL: [FindingName; N_FINDINGS] = [
        FindingName::Atelectasis,
        FindingName::Cardiomegaly,
        FindingName::PleuralEffusion,
        FindingName::Consolidation,
        FindingName::Edema,
        FindingName::NoFinding,
        FindingName::EnlargedCardiomediastinum,
        FindingName::LungOpacity,
        FindingName::LungLesion,
        FindingName::Pneumonia,
        FindingName::Pneumothorax,
        FindingName::PleuralOther,
        FindingName::Fracture,
        FindingName::SupportDevices,
    ];

    /// Display name, as used in CSV headers and the hierarchy file.
    pub fn as_str(self) -> &'static str {
        match self {
            FindingName::Atelectasis => "Atelectasis",
            FindingName::Cardiomegaly => "Cardiomegaly",
            FindingName::PleuralEffusion => "Pleural Effusion",
            FindingName::Consolidation => "Consolidation",
            FindingName::Edema => "Edema",
            FindingName::NoFinding => "No Finding",
            FindingName::EnlargedCardiomediastinum => "Enlarged Cardiomediastinum",
            FindingName::LungOpacity => "Lung Opacity",
            FindingName::LungLesion => "Lung Lesion",
            FindingName::Pneumonia => "Pneumonia",
            FindingName::Pneumothorax => "Pneumothorax",
            FindingName::PleuralOther => "Pleural Other",
            FindingName::Fracture => "Fracture",
            FindingName::SupportDevices => "Support Devices",
        }
    }

    pub fn parse(s: &str) -> Option<FindingName> {
        FindingName::ALL.into_iter().find(|f| f.as_str() == s)
    }

    /// Position in [`FindingName::ALL`].
    pub fn index(self) -> usize {
        FindingName::ALL
            .iter()
            .position(|&f| f == self)
            .expect("finding is in ALL")
    }

    /// The task predicting this finding, if it is one of the 5 tasks.
    pub fn as_task(self) -> Option<TaskName> {
        TaskName::ALL.into_iter().find(|t| t.finding() == self)
    }
}

impl fmt::Display for FindingName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The 5 disease-prediction tasks whose outputs are audited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskName {
    Atelectasis,
    Cardiomegaly,
    PleuralEffusion,
    Consolidation,
    Edema,
}

impl TaskName {
    pub const ALL: [TaskName; N_TASKS] = [
        TaskName::Atelectasis,
        TaskName::Cardiomegaly,
        TaskName::PleuralEffusion,
        TaskName::Consolidation,
        TaskName::Edema,
    ];

    pub fn as_str(self) -> &'static str {
        self.finding().as_str()
    }

    pub fn parse(s: &str) -> Option<TaskName> {
        TaskName::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Position in [`TaskName::ALL`].
    pub fn index(self) -> usize {
        TaskName::ALL
            .iter()
            .position(|&t| t == self)
            .expect("task is in ALL")
    }

    /// The finding this task predicts.
    pub fn finding(self) -> FindingName {
        match self {
            TaskName::Atelectasis => FindingName::Atelectasis,
            TaskName::Cardiomegaly => FindingName::Cardiomegaly,
            TaskName::PleuralEffusion => FindingName::PleuralEffusion,
            TaskName::Consolidation => FindingName::Consolidation,
            TaskName::Edema => FindingName::Edema,
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

macro_rules! serde_by_name {
    ($ty:ident, $expecting:literal) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                struct V;
                impl<'de> Visitor<'de> for V {
                    type Value = $ty;
                    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                        f.write_str($expecting)
                    }
                    fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<$ty, E> {
                        $ty::parse(v).ok_or_else(|| {
                            E::custom(format!(concat!("unknown ", $expecting, " '{}'"), v))
                        })
                    }
                }
                d.deserialize_str(V)
            }
        }
    };
}

serde_by_name!(FindingName, "finding name");
serde_by_name!(TaskName, "task name");

/// One study: clinical covariates plus the 14 radiologist labels, in
/// [`FindingName::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRecord {
    pub study_id: String,
    /// Age in raw years.
    pub age: f64,
    /// Sex encoded 0/1 (coding convention is the data producer's).
    pub sex: u8,
    pub has_lateral_view: bool,
    pub num_ap_views: u32,
    pub num_pa_views: u32,
    /// 0/1 label per finding, indexed by [`FindingName::index`].
    pub labels: [u8; N_FINDINGS],
}

impl StudyRecord {
    pub fn label(&self, finding: FindingName) -> u8 {
        self.labels[finding.index()]
    }

    /// Number of positive findings other than No Finding and the task's
    /// own disease.
    pub fn comorbidity_count(&self, task: TaskName) -> u32 {
        FindingName::ALL
            .iter()
            .filter(|&&f| f != FindingName::NoFinding && f != task.finding())
            .map(|&f| u32::from(self.label(f)))
            .sum()
    }

    /// The five clinical covariates as numbers, in the fixed order
    /// `[age, sex, has_lateral_view, num_ap_views, num_pa_views]` shared
    /// by the audit designs and the identifier feature vectors.
    pub fn clinical_features(&self) -> [f64; 5] {
        [
            self.age,
            f64::from(self.sex),
            f64::from(u8::from(self.has_lateral_view)),
            f64::from(self.num_ap_views),
            f64::from(self.num_pa_views),
        ]
    }

    fn validate(&self) -> Result<()> {
        let id = &self.study_id;
        if id.is_empty() {
            return Err(Error::invalid("study_id must not be empty"));
        }
        if !self.age.is_finite() || self.age < 0.0 {
            return Err(Error::invalid(format!(
                "study '{id}': age must be a finite non-negative number, got {}",
                self.age
            )));
        }
        if self.sex > 1 {
            return Err(Error::invalid(format!(
                "study '{id}': sex must be 0 or 1, got {}",
                self.sex
            )));
        }
        if self.labels.iter().any(|&v| v > 1) {
            return Err(Error::invalid(format!(
                "study '{id}': labels must be 0 or 1"
            )));
        }
        let views = self.num_ap_views + self.num_pa_views + u32::from(self.has_lateral_view);
        if views == 0 {
            return Err(Error::invalid(format!(
                "study '{id}': must have at least one view (AP, PA, or lateral)"
            )));
        }
        Ok(())
    }
}

/// A validated, immutable collection of studies and per-(model, task)
/// output scores, plus the label hierarchy in force.
///
/// Scores are stored flat as `[model][task][study]`, so the per-(model,
/// task) slice consumed by the metrics is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    studies: Vec<StudyRecord>,
    model_ids: Vec<String>,
    scores: Vec<f64>,
    hierarchy: LabelHierarchy,
}

impl Dataset {
    /// Assemble and validate a dataset. `model_ids` is sorted internally;
    /// `scores` must be laid out `[model][task][study]` with models in the
    /// *sorted* id order and tasks in [`TaskName::ALL`] order.
    pub fn new(
        studies: Vec<StudyRecord>,
        model_ids: Vec<String>,
        scores: Vec<f64>,
        hierarchy: LabelHierarchy,
    ) -> Result<Dataset> {
        if studies.is_empty() {
            return Err(Error::invalid("dataset has no studies"));
        }
        if model_ids.is_empty() {
            return Err(Error::invalid("dataset has no models"));
        }
        let mut sorted_ids = model_ids;
        sorted_ids.sort();
        if sorted_ids.windows(2).any(|w| w[0] == w[1]) {
            let dup = sorted_ids
                .windows(2)
                .find(|w| w[0] == w[1])
                .map(|w| w[0].clone())
                .unwrap_or_default();
            return Err(Error::invalid(format!("duplicate model_id '{dup}'")));
        }
        {
            let mut seen = HashSet::with_capacity(studies.len());
            for study in &studies {
                study.validate()?;
                if !seen.insert(study.study_id.as_str()) {
                    return Err(Error::invalid(format!(
                        "duplicate study_id '{}'",
                        study.study_id
                    )));
                }
            }
        }
        let expected = sorted_ids.len() * N_TASKS * studies.len();
        if scores.len() != expected {
            return Err(Error::invalid(format!(
                "expected {expected} scores ({} models x {N_TASKS} tasks x {} studies), got {}",
                sorted_ids.len(),
                studies.len(),
                scores.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite() || !(0.0..=1.0).contains(*s)) {
            return Err(Error::invalid(format!(
                "scores must be finite and in [0, 1], got {bad}"
            )));
        }
        Ok(Dataset {
            studies,
            model_ids: sorted_ids,
            scores,
            hierarchy,
        })
    }

    pub fn n_studies(&self) -> usize {
        self.studies.len()
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn studies(&self) -> &[StudyRecord] {
        &self.studies
    }

    pub fn study(&self, index: usize) -> &StudyRecord {
        &self.studies[index]
    }

    /// Model identifiers, sorted ascending.
    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn model_index(&self, model_id: &str) -> Option<usize> {
        self.model_ids.binary_search_by(|m| m.as_str().cmp(model_id)).ok()
    }

    pub fn hierarchy(&self) -> &LabelHierarchy {
        &self.hierarchy
    }

    /// All scores of one model on one task, indexed by study.
    pub fn scores_for(&self, model_index: usize, task: TaskName) -> &[f64] {
        let n = self.n_studies();
        let start = (model_index * N_TASKS + task.index()) * n;
        &self.scores[start..start + n]
    }

    pub fn score(&self, model_index: usize, task: TaskName, study_index: usize) -> f64 {
        self.scores_for(model_index, task)[study_index]
    }

    /// The 0/1 disease labels for one task across all studies.
    pub fn task_labels(&self, task: TaskName) -> Vec<u8> {
        let finding = task.finding();
        self.studies.iter().map(|s| s.label(finding)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn study(id: &str, labels: [u8; N_FINDINGS]) -> StudyRecord {
        StudyRecord {
            study_id: id.to_string(),
            age: 60.0,
            sex: 1,
            has_lateral_view: false,
            num_ap_views: 1,
            num_pa_views: 0,
            labels,
        }
    }

    fn tiny_dataset() -> Dataset {
        let studies = vec![study("s1", [0; N_FINDINGS]), study("s2", [1; N_FINDINGS])];
        let scores = vec![0.5; 2 * N_TASKS * 2];
        Dataset::new(
            studies,
            vec!["m2".into(), "m1".into()],
            scores,
            LabelHierarchy::empty(),
        )
        .unwrap()
    }

    #[test]
    fn canonical_orders_are_fixed() {
        assert_eq!(FindingName::ALL.len(), N_FINDINGS);
        assert_eq!(TaskName::ALL.len(), N_TASKS);
        assert_eq!(FindingName::ALL[0], FindingName::Atelectasis);
        assert_eq!(FindingName::ALL[13], FindingName::SupportDevices);
        for (i, f) in FindingName::ALL.into_iter().enumerate() {
            assert_eq!(f.index(), i);
            assert_eq!(FindingName::parse(f.as_str()), Some(f));
        }
        for (i, t) in TaskName::ALL.into_iter().enumerate() {
            assert_eq!(t.index(), i);
            assert_eq!(TaskName::parse(t.as_str()), Some(t));
            assert_eq!(t.finding().as_task(), Some(t));
        }
        assert_eq!(FindingName::NoFinding.as_task(), None);
        assert_eq!(TaskName::parse("Pleural Effusion"), Some(TaskName::PleuralEffusion));
        assert_eq!(TaskName::parse("Fracture"), None);
    }

    #[test]
    fn serde_round_trips_display_names() {
        let json = serde_json::to_string(&FindingName::PleuralOther).unwrap();
        assert_eq!(json, "\"Pleural Other\"");
        let back: FindingName = serde_json::from_str(&json).unwrap();
        assert_eq!(back, FindingName::PleuralOther);
        assert!(serde_json::from_str::<FindingName>("\"Bad Name\"").is_err());
    }

    #[test]
    fn comorbidity_count_excludes_no_finding_and_task() {
        let mut labels = [0u8; N_FINDINGS];
        labels[FindingName::NoFinding.index()] = 1;
        assert_eq!(study("s", labels).comorbidity_count(TaskName::Edema), 0);

        let mut labels = [0u8; N_FINDINGS];
        labels[FindingName::Fracture.index()] = 1;
        labels[FindingName::Pneumonia.index()] = 1;
        labels[FindingName::SupportDevices.index()] = 1;
        labels[FindingName::Edema.index()] = 1; // the task's own disease
        let s = study("s", labels);
        assert_eq!(s.comorbidity_count(TaskName::Edema), 3);
        assert_eq!(s.comorbidity_count(TaskName::Cardiomegaly), 4);
    }

    #[test]
    fn model_ids_are_sorted_and_searchable() {
        let ds = tiny_dataset();
        assert_eq!(ds.model_ids(), ["m1".to_string(), "m2".to_string()]);
        assert_eq!(ds.model_index("m2"), Some(1));
        assert_eq!(ds.model_index("zz"), None);
    }

    #[test]
    fn score_layout_is_model_task_study() {
        let studies = vec![study("a", [0; N_FINDINGS]), study("b", [0; N_FINDINGS])];
        let mut scores = Vec::new();
        for model in 0..2 {
            for task in 0..N_TASKS {
                for study in 0..2 {
                    scores.push((model as f64 * 0.4) + (task as f64 * 0.05) + study as f64 * 0.01);
                }
            }
        }
        let ds = Dataset::new(
            studies,
            vec!["m1".into(), "m2".into()],
            scores,
            LabelHierarchy::empty(),
        )
        .unwrap();
        assert_eq!(ds.score(1, TaskName::Cardiomegaly, 0), 0.4 + 0.05);
        assert_eq!(ds.scores_for(0, TaskName::Atelectasis), &[0.0, 0.01]);
    }

    #[test]
    fn validation_rejects_bad_records() {
        let bad_age = StudyRecord {
            age: f64::NAN,
            ..study("s", [0; N_FINDINGS])
        };
        assert!(bad_age.validate().is_err());

        let no_views = StudyRecord {
            num_ap_views: 0,
            num_pa_views: 0,
            has_lateral_view: false,
            ..study("s", [0; N_FINDINGS])
        };
        assert!(no_views.validate().is_err());

        let bad_label = study("s", {
            let mut l = [0u8; N_FINDINGS];
            l[3] = 2;
            l
        });
        assert!(bad_label.validate().is_err());
    }

    #[test]
    fn dataset_rejects_duplicates_and_bad_score_shapes() {
        let studies = vec![study("s1", [0; N_FINDINGS]), study("s1", [0; N_FINDINGS])];
        let err = Dataset::new(
            studies,
            vec!["m".into()],
            vec![0.5; N_TASKS * 2],
            LabelHierarchy::empty(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate study_id"));

        let err = Dataset::new(
            vec![study("s1", [0; N_FINDINGS])],
            vec!["m".into()],
            vec![0.5; N_TASKS + 1],
            LabelHierarchy::empty(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("scores"));

        let err = Dataset::new(
            vec![study("s1", [0; N_FINDINGS])],
            vec!["m".into()],
            vec![1.5; N_TASKS],
            LabelHierarchy::empty(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("[0, 1]"));
    }
}
