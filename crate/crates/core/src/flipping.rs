//! Selective prediction flipping: partition studies into the top-k most
//! likely misclassified ("flipped") versus the rest, tabulate the eight
//! confusion sub-matrix cells, apply the flipping rule that provably
//! cannot lower F1 on the fold it is computed on, and search k on a
//! validation fold before touching the test fold.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_ci, BootstrapCi};
use crate::error::{Error, Result};
use crate::metrics::{f1_from_counts, misclass_ground_truth};
use crate::seeding::derive_seed;

/// The eight cells of the flip partition. Names: `k`/`r` = flipped /
/// rest partition; `n`/`p` = disease absent / present; first digit = 1
/// iff misclassified; second digit = 1 iff flipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipSubMatrices {
    /// No disease, correctly classified, flipped.
    pub kn01: usize,
    /// No disease, misclassified, flipped.
    pub kn11: usize,
    /// Disease present, correctly classified, flipped.
    pub kp01: usize,
    /// Disease present, misclassified, flipped.
    pub kp11: usize,
    /// No disease, correctly classified, not flipped.
    pub rn00: usize,
    /// No disease, misclassified, not flipped.
    pub rn10: usize,
    /// Disease present, correctly classified, not flipped.
    pub rp00: usize,
    /// Disease present, misclassified, not flipped.
    pub rp10: usize,
}

impl FlipSubMatrices {
    /// Number of flipped studies.
    pub fn k(&self) -> usize {
        self.kn01 + self.kn11 + self.kp01 + self.kp11
    }

    /// Total studies across both partitions.
    pub fn total(&self) -> usize {
        self.k() + self.rn00 + self.rn10 + self.rp00 + self.rp10
    }

    /// Fraction of flipped studies that really were misclassified;
    /// 0 when nothing is flipped.
    pub fn top_k_precision(&self) -> f64 {
        let k = self.k();
        if k == 0 {
            0.0
        } else {
            (self.kn11 + self.kp11) as f64 / k as f64
        }
    }
}

/// The indices of the top-`k` studies by likelihood, ties broken toward
/// the smaller study index.
fn top_k_indices(likelihoods: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..likelihoods.len()).collect();
    order.sort_by(|&a, &b| {
        likelihoods[b]
            .total_cmp(&likelihoods[a])
            .then_with(|| a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Tabulate the eight flip cells: the top-`k` studies by likelihood form
/// the flipped partition, and each partition is broken down by disease
/// presence and misclassification. `misclass_truth` must equal
/// `predictions != labels` element-wise — the cells are meaningless (and
/// rejected) otherwise.
pub fn sub_matrices(
    predictions: &[u8],
    labels: &[u8],
    misclass_truth: &[u8],
    likelihoods: &[f64],
    k: usize,
) -> Result<FlipSubMatrices> {
    let n = predictions.len();
    if labels.len() != n || misclass_truth.len() != n || likelihoods.len() != n {
        return Err(Error::invalid(format!(
            "length mismatch: predictions {n}, labels {}, truth {}, likelihoods {}",
            labels.len(),
            misclass_truth.len(),
            likelihoods.len()
        )));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds {n} studies")));
    }
    if likelihoods.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("likelihoods must not be NaN"));
    }
    let expected = misclass_ground_truth(predictions, labels)?;
    if expected != misclass_truth {
        return Err(Error::invalid(
            "misclass_truth disagrees with predictions vs labels",
        ));
    }

    let mut flipped = vec![false; n];
    for i in top_k_indices(likelihoods, k) {
        flipped[i] = true;
    }

    let mut m = FlipSubMatrices {
        kn01: 0,
        kn11: 0,
        kp01: 0,
        kp11: 0,
        rn00: 0,
        rn10: 0,
        rp00: 0,
        rp10: 0,
    };
    for i in 0..n {
        let cell = match (labels[i] == 1, misclass_truth[i] == 1, flipped[i]) {
            (false, false, true) => &mut m.kn01,
            (false, true, true) => &mut m.kn11,
            (true, false, true) => &mut m.kp01,
            (true, true, true) => &mut m.kp11,
            (false, false, false) => &mut m.rn00,
            (false, true, false) => &mut m.rn10,
            (true, false, false) => &mut m.rp00,
            (true, true, false) => &mut m.rp10,
        };
        *cell += 1;
    }
    Ok(m)
}

/// The flipping rule: flip only when the flipped partition contains more
/// misclassified than correct studies (top-k precision > 0.5) AND at
/// least as many disease-positive misclassified as disease-positive
/// correct studies. Under these conditions flipping cannot lower F1 on
/// the fold the cells were computed from.
pub fn flipping_rule(m: &FlipSubMatrices) -> bool {
    m.kn11 + m.kp11 > m.kn01 + m.kp01 && m.kp11 >= m.kp01
}

/// Negate every prediction whose likelihood is strictly greater than the
/// flipping threshold.
pub fn apply_flip(predictions: &[u8], likelihoods: &[f64], flipping_threshold: f64) -> Vec<u8> {
    predictions
        .iter()
        .zip(likelihoods)
        .map(|(&p, &l)| if l > flipping_threshold { p ^ 1 } else { p })
        .collect()
}

/// F1 before and after flipping, in closed form from the cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipF1 {
    pub before: f64,
    pub after: f64,
}

/// Closed-form F1 on the fold the cells were tabulated from, before and
/// after flipping the flipped partition's predictions.
pub fn f1_after_from_matrices(m: &FlipSubMatrices) -> FlipF1 {
    let before = f1_from_counts(m.kp01 + m.rp00, m.kn11 + m.rn10, m.kp11 + m.rp10).f1;
    let after = f1_from_counts(m.kp11 + m.rp00, m.kn01 + m.rn10, m.kp01 + m.rp10).f1;
    FlipF1 { before, after }
}

/// One fold's worth of inputs to the flip search: binarized predictions
/// (at the train fold's threshold), ground-truth labels, the identifier's
/// misclassification likelihoods, and the study identifiers for
/// reporting which studies were flipped.
#[derive(Debug, Clone)]
pub struct FoldEval {
    pub study_ids: Vec<String>,
    pub predictions: Vec<u8>,
    pub labels: Vec<u8>,
    pub likelihoods: Vec<f64>,
}

impl FoldEval {
    fn validate(&self, name: &str) -> Result<()> {
        let n = self.study_ids.len();
        if self.predictions.len() != n || self.labels.len() != n || self.likelihoods.len() != n {
            return Err(Error::invalid(format!(
                "{name} fold arrays disagree in length: ids {n}, predictions {}, labels {}, likelihoods {}",
                self.predictions.len(),
                self.labels.len(),
                self.likelihoods.len()
            )));
        }
        if n == 0 {
            return Err(Error::invalid(format!("{name} fold is empty")));
        }
        if self.likelihoods.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid(format!("{name} fold has NaN likelihoods")));
        }
        Ok(())
    }

    fn misclass_truth(&self) -> Result<Vec<u8>> {
        misclass_ground_truth(&self.predictions, &self.labels)
    }

    fn f1(&self, predictions: &[u8]) -> f64 {
        crate::metrics::f1(predictions, &self.labels)
            .expect("fold arrays validated")
            .f1
    }
}

/// The outcome of the k-grid search on the train/validation folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipDecision {
    /// Whether any k passed the rule on train AND strictly improved
    /// validation F1.
    pub flip: bool,
    /// The winning k; 0 when not flipping.
    pub k: usize,
    /// The k-th highest train-fold likelihood; −1.0 when not flipping.
    pub flipping_threshold: f64,
    /// Top-k precision on the train fold at the winning k; 0 when not
    /// flipping.
    pub top_k_precision: f64,
}

impl FlipDecision {
    fn no_flip() -> FlipDecision {
        FlipDecision {
            flip: false,
            k: 0,
            flipping_threshold: -1.0,
            top_k_precision: 0.0,
        }
    }
}

/// The full flip-search result on the test fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipOutcome {
    pub decision: FlipDecision,
    pub f1_before: f64,
    pub f1_after: f64,
    /// `f1_after − f1_before` on the point estimate.
    pub f1_change: f64,
    pub f1_change_ci: BootstrapCi,
    pub flipped_study_ids: Vec<String>,
}

/// The default k grid for a train fold of `n_train` studies: every k up
/// to ⌈n/10⌉, plus ⌈n/8⌉ and ⌈n/4⌉. Flips are precision-driven, so the
/// small-k region is covered densely.
pub fn default_k_grid(n_train: usize) -> Vec<usize> {
    let ceil_div = |a: usize, b: usize| a.div_ceil(b);
    let mut grid: Vec<usize> = (1..=ceil_div(n_train, 10)).collect();
    grid.push(ceil_div(n_train, 8));
    grid.push(ceil_div(n_train, 4));
    grid.sort_unstable();
    grid.dedup();
    grid.retain(|&k| k >= 1 && k <= n_train);
    grid
}

/// Search the k grid: for each k, tabulate the train-fold cells and test
/// the flipping rule; if it passes, flip the validation fold at the
/// train fold's k-th-highest likelihood and record the validation F1
/// improvement. The best strictly-positive improvement wins (smallest k
/// on ties); only then is the test fold flipped, and the test F1 change
/// is reported with a percentile-bootstrap interval.
pub fn flip_search(
    train: &FoldEval,
    val: &FoldEval,
    test: &FoldEval,
    k_grid: &[usize],
    n_resamples: usize,
    seed: u64,
) -> Result<FlipOutcome> {
    train.validate("train")?;
    val.validate("val")?;
    test.validate("test")?;
    if k_grid.is_empty() {
        return Err(Error::invalid("k_grid is empty"));
    }
    let train_truth = train.misclass_truth()?;

    // Ascending, deduplicated grid so equal improvements resolve to the
    // smallest k deterministically.
    let mut grid = k_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();

    let val_f1_before = val.f1(&val.predictions);
    let mut best_improvement = 0.0_f64;
    let mut best: Option<(usize, f64, f64)> = None; // (k, threshold, precision)

    for &k in &grid {
        let cells = sub_matrices(
            &train.predictions,
            &train.labels,
            &train_truth,
            &train.likelihoods,
            k,
        )?;
        if !flipping_rule(&cells) {
            continue;
        }
        // The k-th highest likelihood on the train fold (k ≥ 1 because
        // the rule's strict inequality fails for k = 0).
        let threshold = {
            let mut sorted = train.likelihoods.clone();
            sorted.sort_by(f64::total_cmp);
            sorted[sorted.len() - k]
        };
        let val_flipped = apply_flip(&val.predictions, &val.likelihoods, threshold);
        let improvement = val.f1(&val_flipped) - val_f1_before;
        if improvement > best_improvement {
            best_improvement = improvement;
            best = Some((k, threshold, cells.top_k_precision()));
        }
    }

    let f1_before = test.f1(&test.predictions);
    match best {
        Some((k, threshold, precision)) => {
            let flipped = apply_flip(&test.predictions, &test.likelihoods, threshold);
            let f1_after = test.f1(&flipped);
            let test_labels = &test.labels;
            let test_preds = &test.predictions;
            let flipped_ref = &flipped;
            let ci = bootstrap_ci(
                test.labels.len(),
                n_resamples,
                derive_seed(seed, "flip/bootstrap", &[]),
                |idx| {
                    let labels: Vec<u8> = idx.iter().map(|&i| test_labels[i]).collect();
                    let before: Vec<u8> = idx.iter().map(|&i| test_preds[i]).collect();
                    let after: Vec<u8> = idx.iter().map(|&i| flipped_ref[i]).collect();
                    let b = crate::metrics::f1(&before, &labels).ok()?.f1;
                    let a = crate::metrics::f1(&after, &labels).ok()?.f1;
                    Some(a - b)
                },
            )?;
            let flipped_study_ids = test
                .study_ids
                .iter()
                .zip(&test.likelihoods)
                .filter(|(_, &l)| l > threshold)
                .map(|(id, _)| id.clone())
                .collect();
            Ok(FlipOutcome {
                decision: FlipDecision {
                    flip: true,
                    k,
                    flipping_threshold: threshold,
                    top_k_precision: precision,
                },
                f1_before,
                f1_after,
                f1_change: f1_after - f1_before,
                f1_change_ci: ci,
                flipped_study_ids,
            })
        }
        None => Ok(FlipOutcome {
            decision: FlipDecision::no_flip(),
            f1_before,
            f1_after: f1_before,
            f1_change: 0.0,
            f1_change_ci: BootstrapCi {
                point: 0.0,
                lower: 0.0,
                upper: 0.0,
                n_resamples,
                seed: derive_seed(seed, "flip/bootstrap", &[]),
            },
            flipped_study_ids: Vec::new(),
        }),
    }
}
