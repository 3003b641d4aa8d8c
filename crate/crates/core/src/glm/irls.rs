//! Iteratively reweighted least squares (Newton–Raphson) for logistic
//! regression, with Wald statistics from the inverse observed information
//! and explicit separation/singularity diagnostics.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{FeatureStat, FitConfig, FitReport};
use crate::error::{Error, Result};
use crate::numeric::sigmoid;

/// Coefficient magnitude past which a fit is declared separated: finite
/// MLEs from plausibly scaled designs stay orders of magnitude below this,
/// while separation sends a coefficient to ±∞ geometrically.
const DIVERGENCE_BOUND: f64 = 1e3;

/// Relative pivot tolerance for declaring a design column linearly
/// dependent on earlier columns.
const DEPENDENCE_TOL: f64 = 1e-10;

/// Columns of the Gram matrix that are linearly dependent on earlier
/// columns, found by an LDLᵀ sweep that skips dead pivots.
fn dependent_columns(gram: &DMatrix<f64>) -> Vec<usize> {
    let p = gram.nrows();
    let mut l = DMatrix::<f64>::zeros(p, p);
    let mut d = vec![0.0_f64; p];
    let mut dependent = Vec::new();
    for j in 0..p {
        let mut dj = gram[(j, j)];
        for k in 0..j {
            if d[k] > 0.0 {
                dj -= l[(j, k)] * l[(j, k)] * d[k];
            }
        }
        if dj <= DEPENDENCE_TOL * gram[(j, j)].max(f64::MIN_POSITIVE) {
            dependent.push(j);
            continue;
        }
        d[j] = dj;
        for i in (j + 1)..p {
            let mut v = gram[(i, j)];
            for k in 0..j {
                if d[k] > 0.0 {
                    v -= l[(i, k)] * l[(j, k)] * d[k];
                }
            }
            l[(i, j)] = v / dj;
        }
    }
    dependent
}

/// Gradient of the (ridge-penalized) log-likelihood at `beta`,
/// `Xᵀ(y − p) − ridge·β`, reusing the caller's probability buffer.
fn gradient(x: &DMatrix<f64>, y: &[u8], probs: &[f64], ridge: f64, beta: &[f64]) -> Vec<f64> {
    let p = x.ncols();
    let mut g = vec![0.0; p];
    for (i, &yi) in y.iter().enumerate() {
        let r = f64::from(yi) - probs[i];
        for (j, gj) in g.iter_mut().enumerate() {
            *gj += x[(i, j)] * r;
        }
    }
    for (j, gj) in g.iter_mut().enumerate() {
        *gj -= ridge * beta[j];
    }
    g
}

/// Observed information `XᵀWX + ridge·I` with `W = diag(p(1−p))`.
fn information(x: &DMatrix<f64>, probs: &[f64], ridge: f64) -> DMatrix<f64> {
    let p = x.ncols();
    let mut h = DMatrix::<f64>::zeros(p, p);
    for (i, &pi) in probs.iter().enumerate() {
        let w = pi * (1.0 - pi);
        for a in 0..p {
            let xa = x[(i, a)] * w;
            for b in a..p {
                h[(a, b)] += xa * x[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
        h[(a, a)] += ridge;
    }
    h
}

fn log_likelihood(y: &[u8], probs: &[f64]) -> f64 {
    y.iter()
        .zip(probs)
        .map(|(&yi, &pi)| {
            let pi = pi.clamp(1e-12, 1.0 - 1e-12);
            if yi == 1 {
                pi.ln()
            } else {
                (1.0 - pi).ln()
            }
        })
        .sum()
}

/// Fit a logistic regression of `y` on `x` (no intercept column in `x`;
/// one is prepended internally). `names` label the columns of `x`.
pub(super) fn fit(
    x: &DMatrix<f64>,
    y: &[u8],
    names: &[String],
    config: &FitConfig,
) -> Result<FitReport> {
    let n = x.nrows();
    let p_features = x.ncols();
    if names.len() != p_features {
        return Err(Error::invalid(format!(
            "{} names for {} design columns",
            names.len(),
            p_features
        )));
    }
    if y.len() != n {
        return Err(Error::invalid(format!(
            "design has {n} rows but y has {}",
            y.len()
        )));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::invalid("responses must be 0 or 1"));
    }
    if config.max_iter == 0 || config.tol <= 0.0 || config.tol.is_nan() || config.ridge < 0.0 {
        return Err(Error::invalid(
            "fit config needs max_iter ≥ 1, tol > 0, ridge ≥ 0",
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("design matrix entries must be finite"));
    }
    let ones = y.iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == n {
        return Err(Error::DegenerateTarget(format!(
            "all {n} responses are {}",
            if ones == 0 { 0 } else { 1 }
        )));
    }
    let p_total = p_features + 1;
    if n <= p_total {
        return Err(Error::invalid(format!(
            "need more rows ({n}) than coefficients ({p_total})"
        )));
    }
    for (j, name) in names.iter().enumerate() {
        let col = x.column(j);
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            return Err(Error::ConstantColumn(name.clone()));
        }
    }

    // Design with the implicit intercept prepended.
    let design = {
        let mut d = DMatrix::<f64>::zeros(n, p_total);
        for i in 0..n {
            d[(i, 0)] = 1.0;
            for j in 0..p_features {
                d[(i, j + 1)] = x[(i, j)];
            }
        }
        d
    };
    let full_names: Vec<String> = std::iter::once("(intercept)".to_string())
        .chain(names.iter().cloned())
        .collect();

    // Exact or near collinearity is detected up front on the unweighted
    // Gram matrix so it is reported as what it is, rather than surfacing
    // later as a numerically failed IRLS step.
    let gram = design.transpose() * &design;
    let dependent = dependent_columns(&gram);
    if !dependent.is_empty() {
        return Err(Error::SingularDesign(
            dependent.iter().map(|&j| full_names[j].clone()).collect(),
        ));
    }

    let mut beta = vec![0.0_f64; p_total];
    let mut probs = vec![0.5_f64; n];
    let mut converged = false;
    let mut separation_detected = false;
    let mut n_iterations = 0;

    for iter in 1..=config.max_iter {
        n_iterations = iter;
        let g = gradient(&design, y, &probs, config.ridge, &beta);
        let h = information(&design, &probs, config.ridge);
        let step = match h.cholesky() {
            Some(chol) => chol.solve(&nalgebra::DVector::from_column_slice(&g)),
            None => {
                // The weighted information lost rank even though the design
                // is full rank: weights have collapsed, which happens when
                // fitted probabilities saturate — i.e. separation.
                separation_detected = true;
                break;
            }
        };
        for (b, s) in beta.iter_mut().zip(step.iter()) {
            *b += s;
        }
        for (i, prob) in probs.iter_mut().enumerate() {
            let mut eta = beta[0];
            for j in 1..p_total {
                eta += design[(i, j)] * beta[j];
            }
            *prob = sigmoid(eta);
        }
        if beta.iter().any(|b| b.abs() > DIVERGENCE_BOUND) {
            separation_detected = true;
            break;
        }
        if step.iter().all(|s| s.abs() < config.tol) {
            converged = true;
            break;
        }
    }

    let log_likelihood = log_likelihood(y, &probs);

    // Wald statistics from the inverse information at the final estimate.
    // Under separation the information is near-singular; report infinite
    // standard errors rather than fabricated finite ones.
    let covariance = information(&design, &probs, config.ridge)
        .cholesky()
        .map(|c| c.inverse());
    let normal = Normal::new(0.0, 1.0).expect("standard normal is valid");
    let features = (0..p_total)
        .map(|j| {
            let coefficient = beta[j];
            let std_error = covariance
                .as_ref()
                .map_or(f64::INFINITY, |c| c[(j, j)].max(0.0).sqrt());
            let (z_value, p_value) = if std_error.is_finite() && std_error > 0.0 {
                let z = coefficient / std_error;
                (z, 2.0 * normal.cdf(-z.abs()))
            } else {
                (0.0, 1.0)
            };
            FeatureStat {
                name: full_names[j].clone(),
                coefficient,
                std_error,
                z_value,
                p_value,
                odds_ratio: coefficient.exp(),
                or_ci_lower: (coefficient - 1.96 * std_error).exp(),
                or_ci_upper: (coefficient + 1.96 * std_error).exp(),
            }
        })
        .collect();

    Ok(FitReport {
        features,
        converged,
        n_iterations,
        log_likelihood,
        separation_detected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    /// Saturated two-group fit with hand-derived closed-form answers:
    /// x ∈ {0, 1}, P(y=1 | x=0) = 1/3 and P(y=1 | x=1) = 2/3 in-sample,
    /// so β₀ = −ln 2, β₁ = 2 ln 2, and the information works out to
    /// w·[[6, 3], [3, 3]] with w = 2/9, giving SEs √1.5 and √3.
    #[test]
    fn two_group_fit_matches_closed_form() {
        let x = DMatrix::from_column_slice(6, 1, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = [0u8, 0, 1, 0, 1, 1];
        let report = fit(&x, &y, &names(&["x1"]), &FitConfig::default()).unwrap();
        assert!(report.converged);
        assert!(!report.separation_detected);

        let b0 = &report.features[0];
        let b1 = &report.features[1];
        assert_eq!(b0.name, "(intercept)");
        assert_eq!(b1.name, "x1");
        assert_abs_diff_eq!(b0.coefficient, -(2.0f64.ln()), epsilon = 1e-8);
        assert_abs_diff_eq!(b1.coefficient, 2.0 * 2.0f64.ln(), epsilon = 1e-8);
        assert_abs_diff_eq!(b0.std_error, 1.5f64.sqrt(), epsilon = 1e-6);
        assert_abs_diff_eq!(b1.std_error, 3.0f64.sqrt(), epsilon = 1e-6);
        assert_abs_diff_eq!(b1.odds_ratio, 4.0, epsilon = 1e-7);
        assert_abs_diff_eq!(b1.z_value, 0.8004, epsilon = 1e-4);
        assert_abs_diff_eq!(b1.p_value, 0.4235, epsilon = 1e-3);
        assert_abs_diff_eq!(b1.or_ci_lower, (-2.0086f64).exp(), epsilon = 1e-3);
        assert_abs_diff_eq!(b1.or_ci_upper, 4.7812f64.exp(), epsilon = 1e-1);
        // Saturated fit: log-likelihood is 6 · (1/3 ln 1/3 + ... ) =
        // 2·ln(1/3) + 4·ln(2/3) per symmetry of the two groups.
        assert_abs_diff_eq!(
            report.log_likelihood,
            2.0 * (1.0f64 / 3.0).ln() + 4.0 * (2.0f64 / 3.0).ln(),
            epsilon = 1e-8
        );
    }

    #[test]
    fn odds_ratio_is_exactly_exp_of_coefficient() {
        let x = DMatrix::from_column_slice(6, 1, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = [0u8, 0, 1, 0, 1, 1];
        let report = fit(&x, &y, &names(&["x1"]), &FitConfig::default()).unwrap();
        for f in &report.features {
            assert_eq!(f.odds_ratio, f.coefficient.exp());
            assert!(f.or_ci_lower < f.odds_ratio && f.odds_ratio < f.or_ci_upper);
        }
    }

    #[test]
    fn score_equations_hold_at_convergence() {
        // A modest non-separable two-feature problem.
        let rows = 40;
        let mut xs = Vec::with_capacity(rows * 2);
        let mut y = Vec::with_capacity(rows);
        for i in 0..rows {
            let a = (i % 5) as f64;
            let b = ((i * 7) % 11) as f64 / 3.0;
            xs.push(a);
            xs.push(b);
            y.push(u8::from((a - b + ((i * 13) % 7) as f64) > 3.0));
        }
        let x = DMatrix::from_row_slice(rows, 2, &xs);
        let config = FitConfig {
            ridge: 0.5,
            ..FitConfig::default()
        };
        let report = fit(&x, &y, &names(&["a", "b"]), &config).unwrap();
        assert!(report.converged);

        let beta: Vec<f64> = report.features.iter().map(|f| f.coefficient).collect();
        let mut residual_sums = [0.0; 3];
        for i in 0..rows {
            let eta = beta[0] + beta[1] * x[(i, 0)] + beta[2] * x[(i, 1)];
            let r = f64::from(y[i]) - sigmoid(eta);
            residual_sums[0] += r;
            residual_sums[1] += r * x[(i, 0)];
            residual_sums[2] += r * x[(i, 1)];
        }
        for (j, sum) in residual_sums.iter().enumerate() {
            assert!(
                (sum - config.ridge * beta[j]).abs() < 1e-6,
                "score equation {j}: {sum} vs {}",
                config.ridge * beta[j]
            );
        }
    }

    #[test]
    fn duplicated_column_is_reported_singular() {
        let mut xs = Vec::new();
        for i in 0..12 {
            let v = (i % 4) as f64;
            xs.push(v);
            xs.push(v);
        }
        let x = DMatrix::from_row_slice(12, 2, &xs);
        let y = [0u8, 1, 0, 1, 1, 0, 1, 0, 0, 1, 1, 0];
        let err = fit(&x, &y, &names(&["first", "copy"]), &FitConfig::default()).unwrap_err();
        match err {
            Error::SingularDesign(cols) => assert_eq!(cols, vec!["copy".to_string()]),
            other => panic!("expected SingularDesign, got {other:?}"),
        }
    }

    #[test]
    fn constant_column_is_rejected_by_name() {
        let x = DMatrix::from_row_slice(6, 2, &[
            1.0, 7.0, 2.0, 7.0, 3.0, 7.0, 4.0, 7.0, 5.0, 7.0, 6.0, 7.0,
        ]);
        let y = [0u8, 1, 0, 1, 0, 1];
        let err = fit(&x, &y, &names(&["varies", "stuck"]), &FitConfig::default()).unwrap_err();
        match err {
            Error::ConstantColumn(name) => assert_eq!(name, "stuck"),
            other => panic!("expected ConstantColumn, got {other:?}"),
        }
    }

    #[test]
    fn separation_fires_without_ridge_and_not_with_it() {
        // y = 1 exactly when x > 0: perfectly separable with margin 1.
        let x = DMatrix::from_column_slice(8, 1, &[-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0]);
        let y = [0u8, 0, 0, 0, 1, 1, 1, 1];
        let report = fit(&x, &y, &names(&["x"]), &FitConfig::default()).unwrap();
        assert!(report.separation_detected);
        assert!(!report.converged);
        // The report is still produced, with honest (non-)statistics.
        assert_eq!(report.features.len(), 2);

        let ridged = FitConfig {
            ridge: 0.1,
            ..FitConfig::default()
        };
        let report = fit(&x, &y, &names(&["x"]), &ridged).unwrap();
        assert!(report.converged, "ridge stabilizes the separable fit");
        assert!(!report.separation_detected);
    }

    #[test]
    fn degenerate_targets_and_shapes_are_rejected() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        assert!(matches!(
            fit(&x, &[1, 1, 1, 1], &names(&["x"]), &FitConfig::default()),
            Err(Error::DegenerateTarget(_))
        ));
        assert!(fit(&x, &[0, 1, 1], &names(&["x"]), &FitConfig::default()).is_err());
        assert!(fit(&x, &[0, 1, 1, 2], &names(&["x"]), &FitConfig::default()).is_err());
        // Too few rows for intercept + 1 feature.
        let tiny = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(fit(&tiny, &[0, 1], &names(&["x"]), &FitConfig::default()).is_err());
    }

    #[test]
    fn doubling_a_column_halves_its_coefficient_and_keeps_significance() {
        let rows = 60;
        let mut x1 = Vec::with_capacity(rows);
        let mut y = Vec::with_capacity(rows);
        for i in 0..rows {
            let v = (i % 10) as f64 - 4.5;
            x1.push(v);
            y.push(u8::from(((i * 17) % 23) as f64 + 2.0 * v > 11.0));
        }
        let x = DMatrix::from_column_slice(rows, 1, &x1);
        let x2 = DMatrix::from_column_slice(rows, 1, &x1.iter().map(|v| 2.0 * v).collect::<Vec<_>>());
        let a = fit(&x, &y, &names(&["v"]), &FitConfig::default()).unwrap();
        let b = fit(&x2, &y, &names(&["v"]), &FitConfig::default()).unwrap();
        let fa = &a.features[1];
        let fb = &b.features[1];
        assert_abs_diff_eq!(fa.coefficient, 2.0 * fb.coefficient, epsilon = 1e-8);
        assert_abs_diff_eq!(fa.std_error, 2.0 * fb.std_error, epsilon = 1e-8);
        assert_abs_diff_eq!(fa.z_value, fb.z_value, epsilon = 1e-8);
        assert_abs_diff_eq!(fa.p_value, fb.p_value, epsilon = 1e-8);
    }
}
