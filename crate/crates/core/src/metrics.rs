//! Binary-classification metrics: AUROC (Mann–Whitney form, ties counted
//! half), Youden-optimal thresholding, strict-threshold binarization,
//! misclassification ground truth, and precision/recall/F1 with documented
//! degenerate-case conventions.

use crate::data::{Dataset, TaskName};
use crate::error::{Error, Result};

/// A threshold chosen to maximize Youden's J = sensitivity + specificity − 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdResult {
    /// The maximizing cut-point: a midpoint between consecutive distinct
    /// scores, or ±∞ when predicting everything (or nothing) positive wins.
    pub threshold: f64,
    /// J at the chosen threshold.
    pub youden_j: f64,
}

/// Precision, recall, and F1 under the conventions documented on [`f1`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-study misclassification ground truth for one (model, task): the
/// Youden threshold it was binarized with, the binary predictions, and the
/// indicator of disagreement with the radiologist label.
#[derive(Debug, Clone, PartialEq)]
pub struct MisclassMatrix {
    pub model_id: String,
    pub task: TaskName,
    pub threshold: ThresholdResult,
    /// Binarized prediction per study.
    pub predictions: Vec<u8>,
    /// 1 where prediction ≠ label.
    pub misclassified: Vec<u8>,
}

fn check_binary(values: &[u8], what: &str) -> Result<()> {
    if values.iter().any(|&v| v > 1) {
        return Err(Error::invalid(format!("{what} must be 0 or 1")));
    }
    Ok(())
}

fn check_scores_finite(scores: &[f64]) -> Result<()> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    Ok(())
}

fn class_counts(labels: &[u8]) -> Result<(usize, usize)> {
    check_binary(labels, "labels")?;
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateLabels(format!(
            "need both classes, got {positives} positive / {negatives} negative"
        )));
    }
    Ok((positives, negatives))
}

/// Area under the ROC curve: the probability that a uniformly random
/// positive outscores a uniformly random negative, ties counted ½
/// (computed via mid-ranks, which is exactly the pairwise count).
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "scores ({}) and labels ({}) differ in length",
            scores.len(),
            labels.len()
        )));
    }
    check_scores_finite(scores)?;
    let (positives, negatives) = class_counts(labels)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of 1-based mid-ranks over positives; a tie group occupying
    // sorted positions lo+1..=hi+1 all get rank (lo + hi + 2) / 2.
    let mut rank_sum_pos = 0.0;
    let mut lo = 0;
    while lo < order.len() {
        let mut hi = lo;
        while hi + 1 < order.len() && scores[order[hi + 1]] == scores[order[lo]] {
            hi += 1;
        }
        let rank = (lo + hi + 2) as f64 / 2.0;
        for &i in &order[lo..=hi] {
            if labels[i] == 1 {
                rank_sum_pos += rank;
            }
        }
        lo = hi + 1;
    }

    let np = positives as f64;
    let nn = negatives as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Binarize scores at a threshold: 1 iff `score > threshold` (strictly).
pub fn binarize(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s > threshold)).collect()
}

/// The candidate cut-points for threshold selection: −∞, the midpoints
/// between consecutive distinct sorted scores, and +∞.
fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut candidates = Vec::with_capacity(distinct.len() + 1);
    candidates.push(f64::NEG_INFINITY);
    for pair in distinct.windows(2) {
        candidates.push(pair[0] + (pair[1] - pair[0]) / 2.0);
    }
    candidates.push(f64::INFINITY);
    candidates
}

/// Find the threshold maximizing Youden's J over the candidate cut-points,
/// ties broken toward the smallest threshold (favoring sensitivity).
pub fn youden_threshold(scores: &[f64], labels: &[u8]) -> Result<ThresholdResult> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "scores ({}) and labels ({}) differ in length",
            scores.len(),
            labels.len()
        )));
    }
    check_scores_finite(scores)?;
    let (positives, negatives) = class_counts(labels)?;

    let mut best: Option<ThresholdResult> = None;
    for threshold in threshold_candidates(scores) {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (&score, &label) in scores.iter().zip(labels) {
            if score > threshold {
                if label == 1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let youden_j = tp as f64 / positives as f64 - fp as f64 / negatives as f64;
        let improves = match best {
            None => true,
            Some(b) => youden_j > b.youden_j,
        };
        if improves {
            best = Some(ThresholdResult {
                threshold,
                youden_j,
            });
        }
    }
    Ok(best.expect("candidate list is never empty"))
}

/// Element-wise misclassification indicator: 1 where prediction ≠ label.
pub fn misclass_ground_truth(predictions: &[u8], labels: &[u8]) -> Result<Vec<u8>> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "predictions ({}) and labels ({}) differ in length",
            predictions.len(),
            labels.len()
        )));
    }
    check_binary(predictions, "predictions")?;
    check_binary(labels, "labels")?;
    Ok(predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| u8::from(p != y))
        .collect())
}

/// Precision/recall/F1 from confusion counts.
///
/// Conventions for empty denominators: with no true positives and nothing
/// wrong (TP = FP = FN = 0) everything scores 1; with no true positives
/// but some error (TP = 0, FP + FN > 0) F1 is 0, and precision/recall are
/// 0 where their denominator is empty only if the other error kind exists.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> PrfScores {
    if tp == 0 && fp == 0 && fn_ == 0 {
        return PrfScores {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_ as f64)
    };
    PrfScores {
        precision,
        recall,
        f1,
    }
}

/// Precision/recall/F1 of binary predictions against labels.
pub fn f1(predictions: &[u8], labels: &[u8]) -> Result<PrfScores> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "predictions ({}) and labels ({}) differ in length",
            predictions.len(),
            labels.len()
        )));
    }
    check_binary(predictions, "predictions")?;
    check_binary(labels, "labels")?;
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

impl MisclassMatrix {
    /// Build the misclassification ground truth for one (model, task):
    /// fit the Youden threshold on the studies in `threshold_fit` only,
    /// then binarize and compare *all* studies.
    pub fn build(
        ds: &Dataset,
        model_index: usize,
        task: TaskName,
        threshold_fit: &[usize],
    ) -> Result<MisclassMatrix> {
        if model_index >= ds.n_models() {
            return Err(Error::invalid(format!(
                "model index {model_index} out of range ({} models)",
                ds.n_models()
            )));
        }
        if threshold_fit.is_empty() {
            return Err(Error::invalid("threshold_fit subset is empty"));
        }
        if threshold_fit.iter().any(|&i| i >= ds.n_studies()) {
            return Err(Error::invalid("threshold_fit index out of range"));
        }
        let scores = ds.scores_for(model_index, task);
        let labels = ds.task_labels(task);
        let fit_scores: Vec<f64> = threshold_fit.iter().map(|&i| scores[i]).collect();
        let fit_labels: Vec<u8> = threshold_fit.iter().map(|&i| labels[i]).collect();
        let threshold = youden_threshold(&fit_scores, &fit_labels)?;
        let predictions = binarize(scores, threshold.threshold);
        let misclassified = misclass_ground_truth(&predictions, &labels)?;
        Ok(MisclassMatrix {
            model_id: ds.model_ids()[model_index].clone(),
            task,
            threshold,
            predictions,
            misclassified,
        })
    }
}
