//! Nuisance function fitting and evaluation: propensity scores, outcome
//! regressions, the logistic projection behind the odds-ratio confounding
//! measure, the theta/nu threshold solvers, and the pseudo-outcome
//! second-stage regression.
//!
//! Fitted rules are immutable and cheap to share; estimators fit them on a
//! training split and evaluate them elsewhere, never the same rows.

pub mod logistic;
pub mod smoothers;
pub mod theta;

use std::sync::Arc;

use crate::data::DatasetView;
use crate::error::{Error, Result};

pub use logistic::{fit_logistic, LogisticFit, LogisticProjection};
pub use smoothers::{fit_smoother, PredictFn, SmootherSpec};
pub use theta::{eval_omega, fit_theta, ThetaBundle, ThetaRule, ThetaSign};

/// Propensity estimator menu.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PropensityMethod {
    Logistic,
    /// k = 0 picks k automatically.
    Knn { k: usize },
}

/// Outcome regression menu.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutcomeMethod {
    Linear,
    Knn { k: usize },
    NadarayaWatson,
}

/// Estimator choices plus the propensity truncation bound.
#[derive(Debug, Clone, Copy)]
pub struct NuisanceConfig {
    pub propensity: PropensityMethod,
    pub outcome: OutcomeMethod,
    /// Truncation: predictions are clamped into [epsilon, 1 - epsilon].
    pub epsilon: f64,
    /// Basis smoother for the theta companions (exceedance, f, f~).
    pub theta_companion: SmootherSpec,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            propensity: PropensityMethod::Logistic,
            outcome: OutcomeMethod::Linear,
            epsilon: 0.01,
            theta_companion: SmootherSpec::Linear,
        }
    }
}

/// Fitted treatment-probability rule; predictions truncated into
/// [epsilon, 1 - epsilon] so every weighting stays finite, and
/// pi_0 = 1 - pi_1 exactly.
#[derive(Clone)]
pub struct PropensityRule {
    f: PredictFn,
    pub epsilon: f64,
}

impl std::fmt::Debug for PropensityRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PropensityRule").field("epsilon", &self.epsilon).finish()
    }
}

impl PropensityRule {
    pub fn from_fn(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static, epsilon: f64) -> Self {
        PropensityRule { f: Arc::new(f), epsilon }
    }

    /// pi_1(x), truncated.
    pub fn prob_treated(&self, x: &[f64]) -> f64 {
        (self.f)(x).clamp(self.epsilon, 1.0 - self.epsilon)
    }

    /// pi_a(x) for either arm.
    pub fn prob(&self, arm: u8, x: &[f64]) -> f64 {
        let p1 = self.prob_treated(x);
        if arm == 1 {
            p1
        } else {
            1.0 - p1
        }
    }
}

/// Fitted conditional-mean rule for one arm.
#[derive(Clone)]
pub struct OutcomeRule {
    f: PredictFn,
}

impl std::fmt::Debug for OutcomeRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OutcomeRule").finish()
    }
}

impl OutcomeRule {
    pub fn from_fn(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        OutcomeRule { f: Arc::new(f) }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// Fit pi_1 on the given training rows of a (possibly column-subset) view.
///
/// A zero-column view yields the arm-frequency constant rule, which is how
/// the empty covariate set (leave-one-out at d = 1) is supported.
pub fn fit_propensity(
    view: &DatasetView<'_>,
    rows: &[usize],
    method: PropensityMethod,
    epsilon: f64,
) -> Result<PropensityRule> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon must lie in [0, 0.5), got {epsilon}")));
    }
    let a = view.treatment();
    let n1 = rows.iter().filter(|&&i| a[i] == 1).count();
    if n1 == 0 || n1 == rows.len() {
        return Err(Error::Fit("propensity fit needs both arms in the training split".into()));
    }
    let p = view.d();
    if p == 0 {
        let share = n1 as f64 / rows.len() as f64;
        return Ok(PropensityRule::from_fn(move |_| share, epsilon));
    }
    let x = view.gather(rows);
    match method {
        PropensityMethod::Logistic => {
            let arm: Vec<u8> = rows.iter().map(|&i| a[i]).collect();
            let fit = fit_logistic(&x, rows.len(), p, &arm)?;
            Ok(PropensityRule { f: Arc::new(move |row: &[f64]| fit.predict(row)), epsilon })
        }
        PropensityMethod::Knn { k } => {
            let target: Vec<f64> = rows.iter().map(|&i| f64::from(a[i])).collect();
            let f = fit_smoother(&x, rows.len(), p, &target, SmootherSpec::Knn { k })?;
            Ok(PropensityRule { f, epsilon })
        }
    }
}

/// Fit mu_a on the arm-a subset of the given training rows.
pub fn fit_outcome(
    view: &DatasetView<'_>,
    rows: &[usize],
    arm: u8,
    method: OutcomeMethod,
) -> Result<OutcomeRule> {
    let a = view.treatment();
    let y = view.outcome();
    let arm_rows: Vec<usize> = rows.iter().copied().filter(|&i| a[i] == arm).collect();
    if arm_rows.is_empty() {
        return Err(Error::Fit(format!("outcome fit: arm {arm} is empty in the training split")));
    }
    let targets: Vec<f64> = arm_rows.iter().map(|&i| y[i]).collect();
    let x = view.gather(&arm_rows);
    let spec = match method {
        OutcomeMethod::Linear => SmootherSpec::Linear,
        OutcomeMethod::Knn { k } => SmootherSpec::Knn { k },
        OutcomeMethod::NadarayaWatson => SmootherSpec::NadarayaWatson,
    };
    let f = fit_smoother(&x, arm_rows.len(), view.d(), &targets, spec)?;
    Ok(OutcomeRule { f })
}

/// Fit the logistic projection of the treatment mechanism on training rows.
///
/// Covariates must already be rescaled onto the unit cube so the largest
/// absolute slope reads off the confounding measure directly.
pub fn fit_logistic_projection(view: &DatasetView<'_>, rows: &[usize]) -> Result<LogisticProjection> {
    let p = view.d();
    if p == 0 {
        return Err(Error::Validation("logistic projection needs at least one covariate".into()));
    }
    let x = view.gather(rows);
    let tol = 1e-9;
    if x.iter().any(|&v| !(-tol..=1.0 + tol).contains(&v)) {
        return Err(Error::Validation(
            "logistic projection requires covariates rescaled to [0,1]; run the min-max \
             rescale first"
                .into(),
        ));
    }
    let a: Vec<u8> = rows.iter().map(|&i| view.treatment()[i]).collect();
    let fit = fit_logistic(&x, rows.len(), p, &a)?;
    LogisticProjection::from_fit(fit, &x, rows.len(), p)
}

/// Two-stage rule for E{mu_a(X) | A = 1-a, X_{-S}}: evaluate a fitted
/// mu_a(X) on the opposite-arm training rows, then smooth those values
/// over the reduced covariates.
pub fn fit_pseudo_outcome_regression(
    full_view: &DatasetView<'_>,
    sub_view: &DatasetView<'_>,
    rows: &[usize],
    mu_full: &OutcomeRule,
    arm: u8,
    method: OutcomeMethod,
) -> Result<OutcomeRule> {
    let a = full_view.treatment();
    let other: Vec<usize> = rows.iter().copied().filter(|&i| a[i] == 1 - arm).collect();
    if other.is_empty() {
        return Err(Error::Fit(format!(
            "pseudo-outcome regression: arm {} is empty in the training split",
            1 - arm
        )));
    }
    let mut buf = Vec::new();
    let mut pseudo = Vec::with_capacity(other.len());
    for &i in &other {
        full_view.fill_row(i, &mut buf);
        pseudo.push(mu_full.predict(&buf));
    }
    let x = sub_view.gather(&other);
    let spec = match method {
        OutcomeMethod::Linear => SmootherSpec::Linear,
        OutcomeMethod::Knn { k } => SmootherSpec::Knn { k },
        OutcomeMethod::NadarayaWatson => SmootherSpec::NadarayaWatson,
    };
    let f = fit_smoother(&x, other.len(), sub_view.d(), &pseudo, spec)?;
    Ok(OutcomeRule { f })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn coin_flip_dataset(n: usize, seed: u64) -> Dataset {
        // A independent of X with P(A=1) = 0.5
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let a: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        Dataset::new(x, a, y, vec!["x".into()]).unwrap()
    }

    #[test]
    fn constant_propensity_recovered() {
        let ds = coin_flip_dataset(20_000, 2);
        let rows: Vec<usize> = (0..ds.n()).collect();
        let view = ds.full_view();
        let rule = fit_propensity(&view, &rows, PropensityMethod::Logistic, 0.01).unwrap();
        for &xv in &[0.1, 0.5, 0.9] {
            assert!((rule.prob_treated(&[xv]) - 0.5).abs() < 0.03);
        }
    }

    #[test]
    fn truncation_clamps_predictions() {
        let rule = PropensityRule::from_fn(|_| 0.002, 0.01);
        assert_eq!(rule.prob_treated(&[0.0]), 0.01);
        assert!((rule.prob(0, &[0.0]) - 0.99).abs() < 1e-15);
    }

    #[test]
    fn example_one_propensity_at_zero_is_half() {
        // A ~ Bernoulli((X+W+2)/4) marginalized over W gives pi_1(x) = (x+2)/4
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut x = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        for _ in 0..n {
            let xv = 2.0 * rng.gen::<f64>() - 1.0;
            let wv = 2.0 * rng.gen::<f64>() - 1.0;
            x.push(xv);
            a.push(u8::from(rng.gen::<f64>() < (xv + wv + 2.0) / 4.0));
        }
        let ds = Dataset::new(x, a, y, vec!["x".into()]).unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let view = ds.full_view();
        let rule = fit_propensity(&view, &rows, PropensityMethod::Logistic, 0.01).unwrap();
        assert!((rule.prob_treated(&[0.0]) - 0.5).abs() < 0.02);
    }

    #[test]
    fn constant_outcome_is_exact() {
        let ds = Dataset::new(
            vec![0.0, 1.0, 2.0, 3.0],
            vec![0, 1, 0, 1],
            vec![3.0, 3.0, 3.0, 3.0],
            vec!["x".into()],
        )
        .unwrap();
        let rows: Vec<usize> = (0..4).collect();
        let view = ds.full_view();
        let rule = fit_outcome(&view, &rows, 1, OutcomeMethod::Linear).unwrap();
        assert!((rule.predict(&[9.0]) - 3.0).abs() < 1e-10);
    }

    #[test]
    fn knn_with_k_n_reproduces_arm_mean() {
        let ds = Dataset::new(
            vec![0.0, 1.0, 2.0, 3.0],
            vec![1, 1, 1, 0],
            vec![1.0, 2.0, 6.0, 100.0],
            vec!["x".into()],
        )
        .unwrap();
        let rows: Vec<usize> = (0..4).collect();
        let view = ds.full_view();
        let rule = fit_outcome(&view, &rows, 1, OutcomeMethod::Knn { k: 3 }).unwrap();
        assert!((rule.predict(&[0.0]) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_arm_is_a_fit_error() {
        let ds = coin_flip_dataset(100, 3);
        let rows: Vec<usize> = (0..100).filter(|&i| ds.treatment()[i] == 1).collect();
        let view = ds.full_view();
        assert!(fit_outcome(&view, &rows, 0, OutcomeMethod::Linear).is_err());
    }

    #[test]
    fn projection_requires_unit_cube() {
        let ds = Dataset::new(
            vec![-1.0, 0.5, 2.0, 0.1],
            vec![0, 1, 0, 1],
            vec![0.0; 4],
            vec!["x".into()],
        )
        .unwrap();
        let rows: Vec<usize> = (0..4).collect();
        let view = ds.full_view();
        let err = fit_logistic_projection(&view, &rows).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn pseudo_outcome_measurable_case() {
        // mu_a depends only on the retained column: second stage recovers it
        let n = 4000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = Vec::with_capacity(2 * n);
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let x1: f64 = rng.gen();
            let x2: f64 = rng.gen();
            x.extend([x1, x2]);
            a.push(u8::from(rng.gen_bool(0.5)));
            y.push(2.0 + 3.0 * x1);
        }
        let ds = Dataset::new(x, a, y, vec!["x1".into(), "x2".into()]).unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let full = ds.full_view();
        let sub = ds.view_cols(vec![0]); // drop x2
        let mu = fit_outcome(&full, &rows, 1, OutcomeMethod::Linear).unwrap();
        let rule =
            fit_pseudo_outcome_regression(&full, &sub, &rows, &mu, 1, OutcomeMethod::Linear)
                .unwrap();
        assert!((rule.predict(&[0.4]) - (2.0 + 3.0 * 0.4)).abs() < 0.02);
    }

    #[test]
    fn pseudo_outcome_constant_mu_is_constant() {
        let ds = coin_flip_dataset(500, 11);
        let rows: Vec<usize> = (0..500).collect();
        let full = ds.full_view();
        let sub = ds.full_view();
        let mu = OutcomeRule::from_fn(|_| 4.2);
        let rule =
            fit_pseudo_outcome_regression(&full, &sub, &rows, &mu, 0, OutcomeMethod::Linear)
                .unwrap();
        assert!((rule.predict(&[0.7]) - 4.2).abs() < 1e-9);
    }

    #[test]
    fn pseudo_outcome_linear_truth_recovered() {
        // S drops all but one column; truth E{mu_a(X) | A=1-a, X_1} is linear
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut x = Vec::with_capacity(2 * n);
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let x1: f64 = rng.gen();
            let x2: f64 = x1 * 0.5 + 0.5 * rng.gen::<f64>(); // correlated with x1
            x.extend([x1, x2]);
            a.push(u8::from(rng.gen_bool(0.5))); // A independent of X
            y.push(1.0 + 2.0 * x1 + 4.0 * x2 + rng.gen::<f64>() - 0.5);
        }
        let ds = Dataset::new(x, a, y, vec!["x1".into(), "x2".into()]).unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let full = ds.full_view();
        let sub = ds.view_cols(vec![0]);
        let mu = fit_outcome(&full, &rows, 1, OutcomeMethod::Linear).unwrap();
        let rule =
            fit_pseudo_outcome_regression(&full, &sub, &rows, &mu, 1, OutcomeMethod::Linear)
                .unwrap();
        // E(x2 | x1) = 0.5 x1 + 0.25, so truth = 1 + 2 x1 + 4(0.5 x1 + 0.25)
        let truth = |x1: f64| 2.0 + 4.0 * x1;
        for &v in &[0.3, 0.6] {
            assert!((rule.predict(&[v]) - truth(v)).abs() < 0.08, "at {v}");
        }
    }
}
