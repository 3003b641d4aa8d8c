//! Run configuration: a single TOML file drives every command. Unknown
//! keys are rejected so typos fail loudly, every setting has a default,
//! and a run is fully reproducible from (config file, input files).

use std::fs;
use std::path::{Path, PathBuf};

use flipaudit_core::{
    ClassifierBackendSpec, Error, EvalSpec, FitConfig, IdentifierKind, Result, TaskName,
};
use serde::{Deserialize, Serialize};

use crate::synth::SynthSection;

/// Where the input dataset lives. Required by every command except
/// `synth` (which produces these files).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputsSection {
    pub studies: PathBuf,
    pub outputs: PathBuf,
    /// Optional label-hierarchy file; the built-in CheXpert ontology
    /// applies when absent.
    #[serde(default)]
    pub hierarchy: Option<PathBuf>,
}

/// Settings shared by every command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Master seed; every internal stream is derived from it by labeled
    /// hashing.
    pub seed: u64,
    /// Directory all reports are written into.
    pub out_dir: PathBuf,
    /// Tasks to process; all five when empty.
    pub tasks: Vec<TaskName>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            tasks: Vec::new(),
        }
    }
}

/// Identifier evaluation-loop settings (`identify` command).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifySection {
    pub n_splits: usize,
    pub train_fraction: f64,
    pub n_resamples: usize,
    /// Identifier kinds to evaluate; all four when empty.
    pub kinds: Vec<IdentifierKind>,
}

impl Default for IdentifySection {
    fn default() -> Self {
        Self {
            n_splits: 5,
            train_fraction: 0.72,
            n_resamples: 1000,
            kinds: Vec::new(),
        }
    }
}

/// Logistic-audit settings (`audit` command).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSection {
    pub max_iter: usize,
    pub tol: f64,
    pub ridge: f64,
}

impl Default for AuditSection {
    fn default() -> Self {
        let base = FitConfig::default();
        Self {
            max_iter: base.max_iter,
            tol: base.tol,
            ridge: base.ridge,
        }
    }
}

impl AuditSection {
    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            max_iter: self.max_iter,
            tol: self.tol,
            ridge: self.ridge,
        }
    }
}

/// Flip-search settings (`flip` command).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlipSection {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub n_resamples: usize,
    /// Explicit k grid; the built-in grid for the train-fold size when
    /// empty.
    pub k_grid: Vec<usize>,
    /// Identifier kinds to flip with; same_label and all_labels when
    /// empty.
    pub kinds: Vec<IdentifierKind>,
}

impl Default for FlipSection {
    fn default() -> Self {
        Self {
            train_fraction: 0.5,
            val_fraction: 0.25,
            n_resamples: 1000,
            k_grid: Vec::new(),
            kinds: Vec::new(),
        }
    }
}

/// The whole configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub inputs: Option<InputsSection>,
    pub run: RunSection,
    /// Classifier behind the trained identifiers.
    pub backend: ClassifierBackendSpec,
    pub identify: IdentifySection,
    pub audit: AuditSection,
    pub flip: FlipSection,
    pub synth: SynthSection,
}

impl RunConfig {
    /// Parse a TOML config file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::schema(path.display().to_string(), e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let check_fraction = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{name} must be in (0, 1), got {v}"
                )))
            }
        };
        check_fraction("identify.train_fraction", self.identify.train_fraction)?;
        check_fraction("flip.train_fraction", self.flip.train_fraction)?;
        check_fraction("flip.val_fraction", self.flip.val_fraction)?;
        if self.flip.train_fraction + self.flip.val_fraction >= 1.0 {
            return Err(Error::invalid(format!(
                "flip.train_fraction + flip.val_fraction must be < 1, got {}",
                self.flip.train_fraction + self.flip.val_fraction
            )));
        }
        if self.identify.n_splits == 0 {
            return Err(Error::invalid("identify.n_splits must be at least 1"));
        }
        if self.identify.n_resamples == 0 || self.flip.n_resamples == 0 {
            return Err(Error::invalid("n_resamples must be at least 1"));
        }
        for kind in &self.flip.kinds {
            if *kind == IdentifierKind::Naive {
                return Err(Error::invalid(
                    "flip.kinds cannot include 'naive': flipping needs a trained identifier",
                ));
            }
        }
        self.synth.validate()?;
        Ok(())
    }

    /// The dataset paths, or an input error telling the caller which
    /// section to add.
    pub fn inputs(&self) -> Result<&InputsSection> {
        self.inputs.as_ref().ok_or_else(|| {
            Error::invalid(
                "config has no [inputs] section; point inputs.studies and inputs.outputs \
                 at a dataset (the synth command can generate one)",
            )
        })
    }

    /// Tasks to process: the configured subset, or all five.
    pub fn tasks(&self) -> Vec<TaskName> {
        if self.run.tasks.is_empty() {
            TaskName::ALL.to_vec()
        } else {
            self.run.tasks.clone()
        }
    }

    /// Identifier kinds for the identify command: configured, or all four.
    pub fn identify_kinds(&self) -> Vec<IdentifierKind> {
        if self.identify.kinds.is_empty() {
            IdentifierKind::ALL.to_vec()
        } else {
            self.identify.kinds.clone()
        }
    }

    /// Identifier kinds for the flip command: configured, or the two
    /// score-aware trained kinds.
    pub fn flip_kinds(&self) -> Vec<IdentifierKind> {
        if self.flip.kinds.is_empty() {
            vec![IdentifierKind::SameLabel, IdentifierKind::AllLabels]
        } else {
            self.flip.kinds.clone()
        }
    }

    /// The evaluation spec the identify command hands to the library.
    pub fn eval_spec(&self) -> EvalSpec {
        EvalSpec {
            n_splits: self.identify.n_splits,
            train_fraction: self.identify.train_fraction,
            n_resamples: self.identify.n_resamples,
            tasks: self.tasks(),
            kinds: self.identify_kinds(),
        }
    }
}
