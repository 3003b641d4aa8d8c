//! Gradient-boosted decision trees for binary targets, fit to logistic
//! loss by first-order residual boosting: each round grows a depth-limited
//! regression tree on the residuals `y − σ(F)` with exact greedy splits
//! under a variance-reduction criterion, and predictions are the sigmoid
//! of the summed leaf values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{logit, sigmoid};

/// Minimum variance-reduction gain for a split to be kept. Guards against
/// splits whose "improvement" is pure floating-point noise.
const MIN_GAIN: f64 = 1e-12;

/// Boosting hyperparameters. Fields omitted from a config pick up these
/// defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Minimum samples on each side of a split.
    pub min_leaf: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            n_rounds: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    Split {
        feature: usize,
        /// Samples with `x[feature] <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

/// A fitted boosted ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbdtModel {
    n_features: usize,
    /// Empirical P(y = 1) on the training data.
    base_proba: f64,
    /// `logit(base_proba)`; the additive model starts here.
    base_score: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
}

impl GbdtModel {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Predicted misclassification probability for one feature row.
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        assert_eq!(
            row.len(),
            self.n_features,
            "feature row has {} values, model expects {}",
            row.len(),
            self.n_features
        );
        // With no trees the model is the constant base rate, returned
        // exactly rather than via logit/sigmoid round-tripping.
        if self.trees.is_empty() {
            return self.base_proba;
        }
        let mut f = self.base_score;
        for tree in &self.trees {
            f += self.learning_rate * tree.predict(row);
        }
        sigmoid(f)
    }

    /// Predictions for rows laid out row-major in `features`.
    pub fn predict_many(&self, features: &[f64]) -> Vec<f64> {
        assert_eq!(
            features.len() % self.n_features,
            0,
            "flat feature buffer ({}) is not a multiple of n_features ({})",
            features.len(),
            self.n_features
        );
        features
            .chunks_exact(self.n_features)
            .map(|row| self.predict_proba(row))
            .collect()
    }
}

/// One candidate split for one frontier node.
#[derive(Clone, Copy)]
struct SplitCand {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Per-node accumulator state while sweeping one feature's sorted order.
#[derive(Clone, Copy, Default)]
struct Sweep {
    left_sum: f64,
    left_cnt: usize,
    last_value: f64,
    started: bool,
}

/// Grow one regression tree on `residuals` (level-wise, exact greedy
/// splits using the per-feature presorted orders).
fn build_tree(
    features: &[f64],
    n_features: usize,
    sorted: &[Vec<u32>],
    residuals: &[f64],
    params: &GbdtParams,
) -> Tree {
    let n = residuals.len();
    let mut nodes: Vec<Node> = vec![Node::Leaf { value: 0.0 }];
    // Arena index of the node each sample currently sits in.
    let mut node_of: Vec<u32> = vec![0; n];
    let mut frontier: Vec<usize> = vec![0];

    for depth in 0..params.max_depth {
        if frontier.is_empty() {
            break;
        }
        // Dense slot per frontier node for the sweep accumulators.
        let mut slot: Vec<i32> = vec![-1; nodes.len()];
        for (dense, &id) in frontier.iter().enumerate() {
            slot[id] = dense as i32;
        }
        let n_front = frontier.len();

        let mut total_sum = vec![0.0_f64; n_front];
        let mut total_cnt = vec![0usize; n_front];
        for (i, &node) in node_of.iter().enumerate() {
            let s = slot[node as usize];
            if s >= 0 {
                total_sum[s as usize] += residuals[i];
                total_cnt[s as usize] += 1;
            }
        }

        let mut best: Vec<Option<SplitCand>> = vec![None; n_front];
        for feature in 0..n_features {
            let mut sweep = vec![Sweep::default(); n_front];
            for &i32idx in &sorted[feature] {
                let i = i32idx as usize;
                let s = slot[node_of[i] as usize];
                if s < 0 {
                    continue;
                }
                let s = s as usize;
                let value = features[i * n_features + feature];
                let st = &mut sweep[s];
                if st.started && value > st.last_value {
                    let cl = st.left_cnt;
                    let cr = total_cnt[s] - cl;
                    if cl >= params.min_leaf && cr >= params.min_leaf {
                        let sl = st.left_sum;
                        let sr = total_sum[s] - sl;
                        let gain = sl * sl / cl as f64 + sr * sr / cr as f64
                            - total_sum[s] * total_sum[s] / total_cnt[s] as f64;
                        if gain > MIN_GAIN
                            && best[s].map_or(true, |b| gain > b.gain)
                        {
                            // Split at the midpoint between the adjacent
                            // distinct values; if rounding lands the
                            // midpoint on the upper value, fall back to
                            // the lower one so `x <= threshold` carves
                            // off exactly the samples counted as left.
                            let mut threshold =
                                st.last_value + (value - st.last_value) / 2.0;
                            if threshold >= value {
                                threshold = st.last_value;
                            }
                            best[s] = Some(SplitCand {
                                gain,
                                feature,
                                threshold,
                            });
                        }
                    }
                }
                st.left_sum += residuals[i];
                st.left_cnt += 1;
                st.last_value = value;
                st.started = true;
            }
        }

        let mut next_frontier = Vec::new();
        let mut any_split = false;
        for (dense, &id) in frontier.iter().enumerate() {
            match best[dense] {
                Some(cand) => {
                    let left = nodes.len();
                    let right = nodes.len() + 1;
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes[id] = Node::Split {
                        feature: cand.feature,
                        threshold: cand.threshold,
                        left,
                        right,
                    };
                    next_frontier.push(left);
                    next_frontier.push(right);
                    any_split = true;
                }
                None => {
                    nodes[id] = Node::Leaf {
                        value: total_sum[dense] / total_cnt[dense] as f64,
                    };
                }
            }
        }
        if !any_split {
            break;
        }
        // Route samples into the children they now belong to.
        for (i, node) in node_of.iter_mut().enumerate() {
            if let Node::Split {
                feature,
                threshold,
                left,
                right,
            } = nodes[*node as usize]
            {
                *node = if features[i * n_features + feature] <= threshold {
                    left as u32
                } else {
                    right as u32
                };
            }
        }
        frontier = next_frontier;
        if depth + 1 == params.max_depth {
            // Depth budget exhausted: finalize the children as leaves.
            let mut sum = vec![0.0_f64; nodes.len()];
            let mut cnt = vec![0usize; nodes.len()];
            for (i, &node) in node_of.iter().enumerate() {
                sum[node as usize] += residuals[i];
                cnt[node as usize] += 1;
            }
            for &id in &frontier {
                nodes[id] = Node::Leaf {
                    value: if cnt[id] > 0 { sum[id] / cnt[id] as f64 } else { 0.0 },
                };
            }
        }
    }
    Tree { nodes }
}

/// Fit a boosted-trees classifier. `features` is row-major with
/// `n_features` values per sample. The `seed` parameter is part of the
/// backend interface for reproducibility, but the exact greedy fit uses
/// no randomness (there is no stochastic subsampling), so it is unused.
pub fn fit_gbdt(
    features: &[f64],
    n_features: usize,
    y: &[u8],
    params: &GbdtParams,
    seed: u64,
) -> Result<GbdtModel> {
    let _ = seed;
    let n = y.len();
    if n == 0 {
        return Err(Error::invalid("no training samples"));
    }
    if n_features == 0 {
        return Err(Error::invalid("n_features must be at least 1"));
    }
    if features.len() != n * n_features {
        return Err(Error::invalid(format!(
            "expected {} feature values ({n} samples x {n_features}), got {}",
            n * n_features,
            features.len()
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("feature values must be finite"));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::invalid("targets must be 0 or 1"));
    }
    if params.min_leaf == 0
        || params.learning_rate <= 0.0
        || params.learning_rate.is_nan()
        || params.max_depth == 0
    {
        return Err(Error::invalid(
            "params need min_leaf ≥ 1, learning_rate > 0, max_depth ≥ 1",
        ));
    }

    let positives = y.iter().filter(|&&v| v == 1).count();
    let base_proba = positives as f64 / n as f64;
    let base_score = logit(base_proba);

    // Presort each feature once; sorted order never changes across rounds.
    let sorted: Vec<Vec<u32>> = (0..n_features)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| {
                features[a as usize * n_features + f]
                    .total_cmp(&features[b as usize * n_features + f])
            });
            idx
        })
        .collect();

    let mut scores = vec![base_score; n];
    let mut trees = Vec::with_capacity(params.n_rounds);
    let mut residuals = vec![0.0_f64; n];
    for _ in 0..params.n_rounds {
        let mut max_abs = 0.0_f64;
        for i in 0..n {
            residuals[i] = f64::from(y[i]) - sigmoid(scores[i]);
            max_abs = max_abs.max(residuals[i].abs());
        }
        // Residuals this small mean the fit is already (numerically)
        // perfect; further trees would fit noise-free zeros.
        if max_abs < 1e-15 {
            break;
        }
        let tree = build_tree(features, n_features, &sorted, &residuals, params);
        for i in 0..n {
            scores[i] +=
                params.learning_rate * tree.predict(&features[i * n_features..(i + 1) * n_features]);
        }
        trees.push(tree);
    }

    Ok(GbdtModel {
        n_features,
        base_proba,
        base_score,
        learning_rate: params.learning_rate,
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auroc;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_threshold_concept_is_learned_to_high_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let n = 500;
        let mut features = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = rng.random();
            features.push(x);
            y.push(u8::from(x > 0.5));
        }
        let model = fit_gbdt(&features, 1, &y, &GbdtParams::default(), 0).unwrap();
        let correct = features
            .iter()
            .zip(&y)
            .filter(|(&x, &yi)| u8::from(model.predict_proba(&[x]) > 0.5) == yi)
            .count();
        let accuracy = correct as f64 / n as f64;
        assert!(
            accuracy >= 0.99,
            "training accuracy {accuracy} below 0.99 on a single-split concept"
        );
    }

    #[test]
    fn constant_target_predicts_base_rate_everywhere() {
        let features: Vec<f64> = (0..40).map(f64::from).collect();
        let model = fit_gbdt(&features, 1, &[1u8; 40], &GbdtParams::default(), 7).unwrap();
        assert_eq!(model.n_trees(), 0, "constant target should stop boosting");
        for &f in &features {
            assert_eq!(model.predict_proba(&[f]), 1.0);
        }
        let model = fit_gbdt(&features, 1, &[0u8; 40], &GbdtParams::default(), 7).unwrap();
        for &f in &features {
            assert_eq!(model.predict_proba(&[f]), 0.0);
        }
    }

    #[test]
    fn zero_rounds_predicts_exact_base_rate() {
        let features: Vec<f64> = (0..10).map(f64::from).collect();
        let y = [0u8, 1, 0, 1, 1, 0, 1, 1, 0, 1];
        let params = GbdtParams {
            n_rounds: 0,
            ..GbdtParams::default()
        };
        let model = fit_gbdt(&features, 1, &y, &params, 3).unwrap();
        for &f in &features {
            assert_eq!(model.predict_proba(&[f]), 0.6);
        }
    }

    #[test]
    fn xor_is_learned_with_depth_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let n = 401;
        let mut features = Vec::with_capacity(n * 2);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a = u8::from(rng.random::<f64>() < 0.5);
            let b = u8::from(rng.random::<f64>() < 0.5);
            features.push(f64::from(a));
            features.push(f64::from(b));
            y.push(a ^ b);
        }
        let params = GbdtParams {
            max_depth: 2,
            ..GbdtParams::default()
        };
        let model = fit_gbdt(&features, 2, &y, &params, 0).unwrap();
        let probs = model.predict_many(&features);
        let roc = auroc(&probs, &y).unwrap();
        assert!(roc >= 0.95, "training AUROC {roc} below 0.95 on XOR");
    }

    #[test]
    fn refitting_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(909);
        let n = 300;
        let mut features = Vec::with_capacity(n * 3);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            for _ in 0..3 {
                features.push(rng.random::<f64>());
            }
            y.push(u8::from(rng.random::<f64>() < 0.4));
        }
        let a = fit_gbdt(&features, 3, &y, &GbdtParams::default(), 42).unwrap();
        let b = fit_gbdt(&features, 3, &y, &GbdtParams::default(), 42).unwrap();
        let pa = a.predict_many(&features);
        let pb = b.predict_many(&features);
        assert_eq!(pa, pb, "two identical fits must predict bit-identically");
    }

    #[test]
    fn min_leaf_is_respected() {
        // 6 samples with min_leaf 5: no split can satisfy both sides.
        let features: Vec<f64> = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [0u8, 0, 0, 1, 1, 1];
        let model = fit_gbdt(&features, 1, &y, &GbdtParams::default(), 0).unwrap();
        let p0 = model.predict_proba(&[0.0]);
        let p5 = model.predict_proba(&[5.0]);
        assert_eq!(
            p0, p5,
            "with min_leaf unsatisfiable every prediction is the base rate"
        );
    }

    #[test]
    fn split_threshold_never_lands_on_the_upper_value() {
        // Adjacent float values whose midpoint rounds up to the upper one.
        let lo = 1.0_f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let mut features = Vec::new();
        let mut y = Vec::new();
        for _ in 0..10 {
            features.push(lo);
            y.push(0u8);
            features.push(hi);
            y.push(1u8);
        }
        let params = GbdtParams {
            max_depth: 1,
            n_rounds: 1,
            ..GbdtParams::default()
        };
        let model = fit_gbdt(&features, 1, &y, &params, 0).unwrap();
        let p_lo = model.predict_proba(&[lo]);
        let p_hi = model.predict_proba(&[hi]);
        assert!(
            p_lo < p_hi,
            "adjacent-float split must separate the classes: {p_lo} vs {p_hi}"
        );
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(fit_gbdt(&[], 1, &[], &GbdtParams::default(), 0).is_err());
        assert!(fit_gbdt(&[1.0, 2.0], 1, &[0], &GbdtParams::default(), 0).is_err());
        assert!(fit_gbdt(&[1.0], 1, &[2], &GbdtParams::default(), 0).is_err());
        assert!(fit_gbdt(&[f64::NAN], 1, &[0], &GbdtParams::default(), 0).is_err());
        let bad = GbdtParams {
            min_leaf: 0,
            ..GbdtParams::default()
        };
        assert!(fit_gbdt(&[1.0, 2.0], 1, &[0, 1], &bad, 0).is_err());
    }
}
