//! Estimation of measured confounding and ATE bounds under the three
//! calibrated sensitivity models, with per-observation influence values.
//!
//! All three estimators cross-fit: nuisances are fitted per training fold
//! and influence values evaluated on the held-out fold, swapping folds so
//! every observation contributes once. Aggregation is an ordered mean over
//! observation index, so results are bit-reproducible for a fixed seed at
//! any thread count.

pub mod effect_diff;
pub mod odds;
pub mod outcome;

pub use effect_diff::{estimate_effect_differences, EffectDiffFit};
pub use odds::{derivative_dl_dm, derivative_du_dm, estimate_odds_ratio, OddsFit};
pub use outcome::{estimate_outcome_model, OutcomeFit};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    EffectDifferences,
    OddsRatio,
    Outcome,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::EffectDifferences => write!(f, "effect-diff"),
            ModelKind::OddsRatio => write!(f, "odds"),
            ModelKind::Outcome => write!(f, "outcome"),
        }
    }
}

/// One leave-out component of measured confounding: its label, estimate
/// (signed where the model is signed), and uncentered influence values.
#[derive(Debug, Clone)]
pub struct ConfoundingComponent {
    pub label: String,
    pub estimate: f64,
    pub influence: Vec<f64>,
}

impl ConfoundingComponent {
    pub fn se(&self) -> f64 {
        (stats::variance(&self.influence) / self.influence.len() as f64).sqrt()
    }
}

/// Estimated measured confounding with the identity of the maximizer and
/// per-component detail.
#[derive(Debug, Clone)]
pub struct MeasuredConfounding {
    pub model: ModelKind,
    /// M-hat: the multiplier of Gamma in the bound width.
    pub value: f64,
    /// Influence values for M-hat (uncentered where the model admits it).
    pub influence: Vec<f64>,
    /// Index into `components` of the maximizer, when the model is a max.
    pub maximizer: Option<usize>,
    /// Separation diagnostic: |max| - |runner-up| on the component scale.
    pub gap_to_runner_up: f64,
    pub components: Vec<ConfoundingComponent>,
    /// Set when measured confounding is indistinguishable from zero.
    pub degenerate: bool,
}

impl MeasuredConfounding {
    pub fn se(&self) -> f64 {
        (stats::variance(&self.influence) / self.influence.len() as f64).sqrt()
    }

    /// Confounder table rows (label, |estimate|, lower, upper), sorted by
    /// absolute estimate descending; intervals on the absolute change are
    /// clipped below at zero.
    pub fn table(&self, alpha: f64) -> Vec<(String, f64, f64, f64)> {
        let z = stats::norm_ppf(1.0 - alpha / 2.0);
        let mut rows: Vec<(String, f64, f64, f64)> = self
            .components
            .iter()
            .map(|c| {
                let e = c.estimate.abs();
                let se = c.se();
                (c.label.clone(), e, (e - z * se).max(0.0), e + z * se)
            })
            .collect();
        rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        rows
    }
}

/// Bound estimates and influence values at one grid point.
///
/// `if_*` carry the full (calibrated) influence expression including the
/// contribution from estimating measured confounding; `if_*_std` carry the
/// post-hoc expression that ignores it.
#[derive(Debug, Clone)]
pub struct BoundPoint {
    pub gamma: f64,
    pub lower: f64,
    pub upper: f64,
    pub if_lower: Vec<f64>,
    pub if_upper: Vec<f64>,
    pub if_lower_std: Vec<f64>,
    pub if_upper_std: Vec<f64>,
}

impl BoundPoint {
    pub fn se_lower(&self) -> f64 {
        (stats::variance(&self.if_lower) / self.if_lower.len() as f64).sqrt()
    }

    pub fn se_upper(&self) -> f64 {
        (stats::variance(&self.if_upper) / self.if_upper.len() as f64).sqrt()
    }

    pub fn se_lower_std(&self) -> f64 {
        (stats::variance(&self.if_lower_std) / self.if_lower_std.len() as f64).sqrt()
    }

    pub fn se_upper_std(&self) -> f64 {
        (stats::variance(&self.if_upper_std) / self.if_upper_std.len() as f64).sqrt()
    }
}

/// Per-Gamma bound records for one model, anchored at the no-confounding
/// estimate psi-hat.
#[derive(Debug, Clone)]
pub struct BoundCurve {
    pub psi_hat: f64,
    pub psi_influence: Vec<f64>,
    pub points: Vec<BoundPoint>,
    /// True for the effect-differences and outcome models, whose bounds sit
    /// symmetrically around psi-hat by construction.
    pub symmetric: bool,
}

impl BoundCurve {
    /// Check the ordering, monotonicity, and (where applicable) symmetry
    /// invariants; violated invariants abort the run.
    pub fn validate(&self) -> Result<()> {
        let scale = 1.0
            + self.psi_hat.abs()
            + self
                .points
                .iter()
                .map(|p| p.lower.abs().max(p.upper.abs()))
                .fold(0.0, f64::max);
        let tol = 1e-8 * scale;
        let mut prev: Option<&BoundPoint> = None;
        for p in &self.points {
            if p.lower > self.psi_hat + tol || self.psi_hat > p.upper + tol {
                return Err(Error::Numerical(format!(
                    "bound ordering violated at gamma={}: [{}, {}] vs psi={}",
                    p.gamma, p.lower, p.upper, self.psi_hat
                )));
            }
            if let Some(q) = prev {
                if p.upper < q.upper - tol || p.lower > q.lower + tol {
                    return Err(Error::Numerical(format!(
                        "bound monotonicity violated between gamma={} and {}",
                        q.gamma, p.gamma
                    )));
                }
            }
            if self.symmetric {
                let up = p.upper - self.psi_hat;
                let down = self.psi_hat - p.lower;
                if (up - down).abs() > 1e-10 * scale {
                    return Err(Error::Numerical(format!(
                        "symmetric bound widths differ at gamma={}: {} vs {}",
                        p.gamma, up, down
                    )));
                }
            }
            prev = Some(p);
        }
        Ok(())
    }

    pub fn point(&self, gamma: f64) -> Option<&BoundPoint> {
        self.points.iter().find(|p| (p.gamma - gamma).abs() < 1e-12)
    }
}

/// Bounds and influence vectors at an arbitrary Gamma, for root finding.
#[derive(Debug, Clone)]
pub struct BoundsAt {
    pub gamma: f64,
    pub lower: f64,
    pub upper: f64,
    pub if_lower: Vec<f64>,
    pub if_upper: Vec<f64>,
}

/// Common surface of the three fitted models, enough for interval
/// construction, robustness values, and regime analysis.
pub trait BoundModel: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn curve(&self) -> &BoundCurve;
    fn confounding(&self) -> &MeasuredConfounding;

    /// Bounds and influence values at an arbitrary Gamma >= 0.
    fn bounds_at(&self, gamma: f64) -> Result<BoundsAt>;

    /// Influence values of the uncalibrated bound estimator (no
    /// measured-confounding term), used for regime analysis.
    fn uncalibrated_upper_influence(&self) -> &[f64];
}

/// Check the invariance property: the calibrated bound at Gamma equals the
/// plain sensitivity bound at gamma = Gamma * M-hat, under shared nuisance
/// fits. `u_hat` maps a raw sensitivity parameter to the uncalibrated
/// bound estimate.
pub fn invariance_check<F: Fn(f64) -> f64>(
    curve_points: &[(f64, f64)],
    u_hat: F,
    m_hat: f64,
) -> bool {
    curve_points
        .iter()
        .all(|&(gamma, bound)| (bound - u_hat(gamma * m_hat)).abs() <= 1e-10)
}

/// Smallest-index argmax of |estimate| with the runner-up gap.
pub(crate) fn argmax_abs(values: &[f64]) -> (usize, f64, f64) {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (j, &v) in values.iter().enumerate() {
        if v.abs() > best.1 {
            best = (j, v.abs());
        }
    }
    let mut runner = 0.0f64;
    for (j, &v) in values.iter().enumerate() {
        if j != best.0 {
            runner = runner.max(v.abs());
        }
    }
    (best.0, best.1, best.1 - runner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_validation_catches_ordering() {
        let bad = BoundCurve {
            psi_hat: 0.0,
            psi_influence: vec![0.0; 4],
            points: vec![BoundPoint {
                gamma: 1.0,
                lower: 0.5,
                upper: 1.0,
                if_lower: vec![0.0; 4],
                if_upper: vec![0.0; 4],
                if_lower_std: vec![0.0; 4],
                if_upper_std: vec![0.0; 4],
            }],
            symmetric: false,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn argmax_breaks_ties_to_smallest_index() {
        let (j, v, gap) = argmax_abs(&[-2.0, 2.0, 1.0]);
        assert_eq!(j, 0);
        assert_eq!(v, 2.0);
        assert_eq!(gap, 0.0);
    }

    #[test]
    fn invariance_check_flags_mismatch() {
        let pts = vec![(1.0, 2.0), (2.0, 3.0)];
        assert!(invariance_check(&pts, |g| 1.0 + g, 1.0));
        assert!(!invariance_check(&pts, |g| 1.1 + g, 1.0));
    }
}
