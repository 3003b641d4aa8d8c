//! Seeded study-level train/validation/test splits.
//!
//! Splits are drawn by shuffling study indices with a seeded RNG and
//! cutting the shuffled order; the returned index lists are sorted so that
//! downstream iteration order is canonical regardless of the shuffle.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeding;

/// A train/test partition of `0..n` study indices, each sorted ascending.
#[derive(Debug, Clone)]
pub struct TwoWaySplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// A train/validation/test partition of `0..n`, each sorted ascending.
#[derive(Debug, Clone)]
pub struct ThreeWaySplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeding::seeded_rng(seed, "split/shuffle", &[]));
    order
}

fn rounded_count(n: usize, fraction: f64) -> usize {
    (fraction * n as f64).round() as usize
}

/// Split `0..n` into train/test with approximately `train_fraction` of the
/// studies in train (rounded, clamped so both sides are non-empty).
pub fn split_two(n: usize, train_fraction: f64, seed: u64) -> Result<TwoWaySplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 studies to split, got {n}"
        )));
    }
    let order = shuffled_indices(n, seed);
    let n_train = rounded_count(n, train_fraction).clamp(1, n - 1);
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(TwoWaySplit { train, test })
}

/// Split `0..n` into train/validation/test by `train_fraction` and
/// `val_fraction` (test takes the remainder; every fold non-empty).
pub fn split_three(
    n: usize,
    train_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<ThreeWaySplit> {
    if !(train_fraction > 0.0 && val_fraction > 0.0) {
        return Err(Error::invalid(format!(
            "fold fractions must be positive, got train {train_fraction}, val {val_fraction}"
        )));
    }
    if train_fraction + val_fraction >= 1.0 {
        return Err(Error::invalid(format!(
            "train_fraction + val_fraction must be < 1, got {}",
            train_fraction + val_fraction
        )));
    }
    if n < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 studies for a three-way split, got {n}"
        )));
    }
    let order = shuffled_indices(n, seed);
    let n_train = rounded_count(n, train_fraction).clamp(1, n - 2);
    let n_val = rounded_count(n, val_fraction).clamp(1, n - n_train - 1);
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(ThreeWaySplit { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn two_way_is_a_partition_with_expected_sizes() {
        let split = split_two(700, 0.72, 41).unwrap();
        assert_eq!(split.train.len(), 504);
        assert_eq!(split.test.len(), 196);
        let all: HashSet<usize> = split.train.iter().chain(&split.test).copied().collect();
        assert_eq!(all.len(), 700);
    }

    #[test]
    fn two_way_is_deterministic_and_seed_sensitive() {
        let a = split_two(100, 0.7, 1).unwrap();
        let b = split_two(100, 0.7, 1).unwrap();
        let c = split_two(100, 0.7, 2).unwrap();
        assert_eq!(a.train, b.train);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn three_way_is_a_partition() {
        let split = split_three(700, 0.6, 0.2, 9).unwrap();
        assert_eq!(split.train.len(), 420);
        assert_eq!(split.val.len(), 140);
        assert_eq!(split.test.len(), 140);
        let all: HashSet<usize> = split
            .train
            .iter()
            .chain(&split.val)
            .chain(&split.test)
            .copied()
            .collect();
        assert_eq!(all.len(), 700);
    }

    #[test]
    fn folds_are_sorted() {
        let split = split_three(50, 0.6, 0.2, 3).unwrap();
        for fold in [&split.train, &split.val, &split.test] {
            assert!(fold.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn tiny_inputs_keep_every_fold_non_empty() {
        let split = split_three(3, 0.6, 0.2, 0).unwrap();
        assert!(!split.train.is_empty());
        assert!(!split.val.is_empty());
        assert!(!split.test.is_empty());
    }

    #[test]
    fn bad_arguments_are_rejected() {
        assert!(split_two(10, 0.0, 0).is_err());
        assert!(split_two(10, 1.0, 0).is_err());
        assert!(split_two(1, 0.5, 0).is_err());
        assert!(split_three(10, 0.8, 0.3, 0).is_err());
        assert!(split_three(2, 0.5, 0.2, 0).is_err());
    }
}
