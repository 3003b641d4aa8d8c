//! Percentile bootstrap confidence intervals over study index resamples.
//!
//! Each resample draws its RNG from a counter-derived seed rather than a
//! shared stream, so results are identical whether resamples are computed
//! sequentially or in parallel, and a statistic that is undefined on some
//! resample (e.g. AUROC on a single-class draw) triggers a bounded redraw
//! instead of poisoning every later resample.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::quantile_sorted;
use crate::seeding;

/// Cap on redraws for a resample whose statistic comes back undefined.
const MAX_REDRAW_ATTEMPTS: usize = 10;

/// A percentile bootstrap interval around a full-sample point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    /// The statistic on the full sample (not a resample aggregate).
    pub point: f64,
    /// 2.5th percentile across resamples.
    pub lower: f64,
    /// 97.5th percentile across resamples.
    pub upper: f64,
    pub n_resamples: usize,
    pub seed: u64,
}

/// Percentile bootstrap of an arbitrary statistic of index subsets.
///
/// `statistic` receives a multiset of indices into `0..n` (the identity
/// subset for the point estimate, uniform draws with replacement for the
/// resamples) and may return `None` when undefined on that draw; such
/// resamples are redrawn up to [`MAX_REDRAW_ATTEMPTS`] times.
pub fn bootstrap_ci<F>(n: usize, n_resamples: usize, seed: u64, statistic: F) -> Result<BootstrapCi>
where
    F: Fn(&[usize]) -> Option<f64>,
{
    if n == 0 {
        return Err(Error::invalid("bootstrap sample size must be at least 1"));
    }
    if n_resamples == 0 {
        return Err(Error::invalid("bootstrap needs at least 1 resample"));
    }

    let identity: Vec<usize> = (0..n).collect();
    let point = statistic(&identity)
        .ok_or_else(|| Error::invalid("statistic is undefined on the full sample"))?;

    let mut stats = Vec::with_capacity(n_resamples);
    let mut indices = vec![0usize; n];
    for resample in 0..n_resamples {
        let mut accepted = None;
        for attempt in 0..MAX_REDRAW_ATTEMPTS {
            let mut rng = seeding::seeded_rng(
                seed,
                "bootstrap/resample",
                &[resample as u64, attempt as u64],
            );
            for slot in indices.iter_mut() {
                *slot = rng.random_range(0..n);
            }
            if let Some(value) = statistic(&indices) {
                accepted = Some(value);
                break;
            }
        }
        match accepted {
            Some(value) => stats.push(value),
            None => {
                return Err(Error::BootstrapDegenerate {
                    resample,
                    attempts: MAX_REDRAW_ATTEMPTS,
                })
            }
        }
    }

    stats.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        point,
        lower: quantile_sorted(&stats, 0.025),
        upper: quantile_sorted(&stats, 0.975),
        n_resamples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_of(values: &[f64]) -> impl Fn(&[usize]) -> Option<f64> + '_ {
        move |idx| Some(idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64)
    }

    #[test]
    fn constant_statistic_collapses_the_interval() {
        let ci = bootstrap_ci(10, 100, 3, |_| Some(0.7)).unwrap();
        assert_eq!(ci.point, 0.7);
        assert_eq!(ci.lower, 0.7);
        assert_eq!(ci.upper, 0.7);
    }

    #[test]
    fn same_seed_is_deterministic_and_seeds_differ() {
        // Enough distinct values that the percentiles form an effectively
        // continuous distribution: separate seeds then (almost surely)
        // give separate intervals, while reruns must match exactly.
        let values: Vec<f64> = (0..30).map(|i| f64::from(i) * 0.1).collect();
        let a = bootstrap_ci(30, 200, 5, mean_of(&values)).unwrap();
        let b = bootstrap_ci(30, 200, 5, mean_of(&values)).unwrap();
        let c = bootstrap_ci(30, 200, 6, mean_of(&values)).unwrap();
        assert_eq!((a.lower, a.upper), (b.lower, b.upper));
        assert_ne!((a.lower, a.upper), (c.lower, c.upper));
        assert_eq!(a.point, 1.45);
    }

    #[test]
    fn uniform_mean_interval_matches_the_clt_width() {
        use rand::Rng;
        let mut rng = crate::seeding::seeded_rng(8, "test/uniform", &[]);
        let values: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let ci = bootstrap_ci(1000, 1000, 21, mean_of(&values)).unwrap();
        assert!(ci.lower <= 0.5 && 0.5 <= ci.upper, "{ci:?}");
        // Mean of 1000 U(0,1) draws has sd (1/√12)/√1000; a 95% percentile
        // interval should be about 2·1.96 of those wide.
        let expected_width = 2.0 * 1.96 * (1.0 / 12.0f64.sqrt()) / 1000.0f64.sqrt();
        let width = ci.upper - ci.lower;
        assert!(
            (width - expected_width).abs() <= 0.2 * expected_width,
            "width {width} vs expected {expected_width}"
        );
    }

    #[test]
    fn undefined_resamples_are_redrawn() {
        // Undefined whenever index 0 is absent from the draw; with n = 2
        // that happens often, and every such resample must be redrawn
        // rather than erroring or being skipped.
        let ci = bootstrap_ci(2, 300, 9, |idx| {
            if idx.contains(&0) {
                Some(idx.iter().filter(|&&i| i == 0).count() as f64)
            } else {
                None
            }
        })
        .unwrap();
        assert_eq!(ci.n_resamples, 300);
        assert!(ci.lower >= 1.0);
    }

    #[test]
    fn hopeless_statistic_errors_after_capped_redraws() {
        // Defined on the point-estimate call only; every resample fails
        // all of its redraw attempts.
        let first = std::cell::Cell::new(true);
        let err = bootstrap_ci(3, 10, 2, |_| {
            if first.replace(false) {
                Some(1.0)
            } else {
                None
            }
        })
        .unwrap_err();
        assert!(matches!(
            err,
            Error::BootstrapDegenerate {
                resample: 0,
                attempts: 10
            }
        ));
    }

    #[test]
    fn degenerate_point_estimate_is_an_error() {
        assert!(bootstrap_ci(3, 10, 2, |_| None).is_err());
        assert!(bootstrap_ci(0, 10, 2, |_| Some(1.0)).is_err());
        assert!(bootstrap_ci(3, 0, 2, |_| Some(1.0)).is_err());
    }
}
