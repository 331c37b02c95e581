//! Pure influence-function evaluators.
//!
//! Every function here is a deterministic map from one observation and a
//! set of immutable fitted rules to a real number. Fitting never happens
//! here, which is what makes exact cross-fitting possible: rules enter
//! already trained on a separate split. All evaluators return uncentered
//! values; consumers center them so variance estimation sees the full
//! influence expression.

use crate::nuisance::{LogisticProjection, OutcomeRule, PropensityRule, ThetaBundle};

/// Uncentered influence values for one target, tagged for reporting.
#[derive(Debug, Clone)]
pub struct InfluenceValues {
    pub values: Vec<f64>,
    pub target: String,
    pub centered: bool,
}

impl InfluenceValues {
    pub fn uncentered(target: impl Into<String>, values: Vec<f64>) -> Self {
        InfluenceValues { values, target: target.into(), centered: false }
    }

    pub fn mean(&self) -> f64 {
        crate::stats::mean(&self.values)
    }

    pub fn se(&self) -> f64 {
        (crate::stats::variance(&self.values) / self.values.len() as f64).sqrt()
    }
}

/// Nuisance bundle for the adjusted mean difference on one covariate set.
#[derive(Debug, Clone)]
pub struct AmdNuisances {
    pub propensity: PropensityRule,
    /// Outcome rules indexed by arm: [mu_0, mu_1].
    pub mu: [OutcomeRule; 2],
}

/// EIF of the adjusted mean difference:
/// mu_1(x) - mu_0(x) + {A/pi_1(x) - (1-A)/pi_0(x)} {y - mu_A(x)}.
///
/// `x` must carry the covariate subset the rules were fitted on.
pub fn phi_amd(x: &[f64], a: u8, y: f64, nuis: &AmdNuisances) -> f64 {
    let m1 = nuis.mu[1].predict(x);
    let m0 = nuis.mu[0].predict(x);
    let pa = nuis.propensity.prob(a, x);
    let mu_a = if a == 1 { m1 } else { m0 };
    let sign = if a == 1 { 1.0 } else { -1.0 };
    m1 - m0 + sign * (y - mu_a) / pa
}

/// Uncentered EIF of ||pi_arm(X)||_2^2:
/// pi_arm(x)^2 + 2 pi_arm(x) {1(A = arm) - pi_arm(x)}.
pub fn xi(x: &[f64], a: u8, arm: u8, propensity: &PropensityRule) -> f64 {
    let p = propensity.prob(arm, x);
    let ind = f64::from(a == arm);
    p * p + 2.0 * p * (ind - p)
}

/// Nuisances for the leave-some-out outcome-difference norm of one (arm, S).
#[derive(Debug, Clone)]
pub struct LambdaNuisances {
    pub arm: u8,
    /// mu_arm fitted on the full covariates.
    pub mu_full: OutcomeRule,
    /// mu_arm fitted on the reduced covariates X_{-S}.
    pub mu_sub: OutcomeRule,
    /// Propensity on the full covariates.
    pub prop_full: PropensityRule,
    /// Propensity on the reduced covariates.
    pub prop_sub: PropensityRule,
    /// Second-stage rule for E{mu_arm(X) | A = 1-arm, X_{-S}}.
    pub pseudo: OutcomeRule,
}

/// Uncentered EIF of ||mu_a(X_{-S}) - E{mu_a(X) | A = 1-a, X_{-S}}||_2^2:
/// the plug-in square plus twice the weighted-residual correction.
pub fn lambda(x_full: &[f64], x_sub: &[f64], a: u8, y: f64, nuis: &LambdaNuisances) -> f64 {
    let arm = nuis.arm;
    let mu_sub = nuis.mu_sub.predict(x_sub);
    let pseudo = nuis.pseudo.predict(x_sub);
    let gap = mu_sub - pseudo;

    let ind_a = f64::from(a == arm);
    let ind_o = f64::from(a == 1 - arm);
    let pa_sub = nuis.prop_sub.prob(arm, x_sub);
    let po_sub = nuis.prop_sub.prob(1 - arm, x_sub);
    let pa_full = nuis.prop_full.prob(arm, x_full);
    let po_full = nuis.prop_full.prob(1 - arm, x_full);
    let mu_full = nuis.mu_full.predict(x_full);

    let correction = ind_a / pa_sub * (y - mu_sub)
        - ind_a / pa_full * (y - mu_full) * (po_full / po_sub)
        - ind_o / po_sub * (mu_full - pseudo);
    gap * gap + 2.0 * gap * correction
}

/// Which bound the odds-ratio EIF targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSide {
    Lower,
    Upper,
}

/// Nuisance bundle for the odds-ratio bound at one multiplier t.
#[derive(Debug, Clone)]
pub struct OddsNuisances {
    pub propensity: PropensityRule,
    pub theta: ThetaBundle,
}

/// Uncentered EIF of the odds-ratio bound on the ATE for the chosen side.
///
/// The upper bound pairs the upper threshold for E(Y^1) with the lower
/// threshold for E(Y^0); each arm contributes its plug-in plus the
/// opposite-arm-weighted moment residual omega/nu:
///
///   A y + (1-A) theta_1(x) + A omega_{theta_1}(y) pi_0(x) / {nu_1(x) pi_1(x)}
///   - [ (1-A) y + A theta_0(x) + (1-A) omega_{theta_0}(y) pi_1(x) / {nu_0(x) pi_0(x)} ].
pub fn varphi_odds(x: &[f64], a: u8, y: f64, side: BoundSide, nuis: &OddsNuisances) -> f64 {
    let (r1, r0) = match side {
        BoundSide::Upper => (&nuis.theta.t1_plus, &nuis.theta.t0_minus),
        BoundSide::Lower => (&nuis.theta.t1_minus, &nuis.theta.t0_plus),
    };
    let p1 = nuis.propensity.prob(1, x);
    let p0 = 1.0 - p1;
    let af = f64::from(a);

    let nu1 = r1.nu(x);
    let nu0 = r0.nu(x);
    assert!(nu1 > 0.0 && nu0 > 0.0, "nu must be positive (nu1={nu1}, nu0={nu0})");

    let arm1 = af * y + (1.0 - af) * r1.predict(x) + af * r1.omega(x, y) * p0 / (nu1 * p1);
    let arm0 =
        (1.0 - af) * y + af * r0.predict(x) + (1.0 - af) * r0.omega(x, y) * p1 / (nu0 * p0);
    arm1 - arm0
}

/// Influence function of the projected confounding measure max_j |beta_j|,
/// evaluated through the stored Fisher information and score.
pub fn phi_m_odds(x: &[f64], a: u8, proj: &LogisticProjection) -> f64 {
    proj.phi_m(x, a)
}
