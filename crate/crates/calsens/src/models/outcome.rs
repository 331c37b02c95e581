//! Average leave-some-out L2 outcome-regression differences model.
//!
//! Measured confounding per arm is
//! M_a = sqrt( (1/|S|) sum_S ||mu_a(X_-S) - E{mu_a(X) | A=1-a, X_-S}||^2 ),
//! estimated through the xi and lambda EIFs, and the bounds are
//! psi -+ Gamma sum_a ||pi_{1-a}|| M_a. The calibrated influence values
//! follow the delta method through both square roots.

use std::collections::BTreeSet;

use crate::data::{Dataset, FoldAssignment};
use crate::eif::{lambda, phi_amd, xi, AmdNuisances, LambdaNuisances};
use crate::error::{Error, Result};
use crate::models::{
    BoundCurve, BoundModel, BoundPoint, BoundsAt, ConfoundingComponent, MeasuredConfounding,
    ModelKind,
};
use crate::nuisance::{
    fit_outcome, fit_propensity, fit_pseudo_outcome_regression, NuisanceConfig,
};
use crate::parallel::par_map;
use crate::stats;

/// Fitted outcome model.
#[derive(Debug)]
pub struct OutcomeFit {
    pub confounding: MeasuredConfounding,
    pub curve: BoundCurve,
    /// ||pi_a|| estimates indexed by arm.
    pub pi_norm: [f64; 2],
    /// M_a estimates indexed by arm.
    pub m_arm: [f64; 2],
    pub warnings: Vec<String>,
    /// Combined width influence (mean equals the Gamma = 1 half-width).
    width_if: Vec<f64>,
    phi: Vec<f64>,
}

impl OutcomeFit {
    pub fn psi_hat(&self) -> f64 {
        self.curve.psi_hat
    }

    /// Half-width multiplier: sum_a ||pi_{1-a}|| M_a.
    pub fn width(&self) -> f64 {
        self.pi_norm[0] * self.m_arm[1] + self.pi_norm[1] * self.m_arm[0]
    }

    /// Per-arm uncalibrated bound u(gamma_0, gamma_1) =
    /// psi + sum_a ||pi_{1-a}|| gamma_a under shared fits.
    pub fn uncalibrated_upper(&self, gamma_arm: [f64; 2]) -> f64 {
        self.curve.psi_hat + self.pi_norm[1] * gamma_arm[0] + self.pi_norm[0] * gamma_arm[1]
    }

    /// The per-arm invariance identity U(Gamma) = u(Gamma M_0, Gamma M_1).
    pub fn invariance_holds(&self) -> bool {
        self.curve.points.iter().all(|p| {
            let u = self.uncalibrated_upper([p.gamma * self.m_arm[0], p.gamma * self.m_arm[1]]);
            (u - p.upper).abs() <= 1e-10
        })
    }

    fn influence_at(&self, gamma: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.phi.len();
        let mut lo = Vec::with_capacity(n);
        let mut up = Vec::with_capacity(n);
        for i in 0..n {
            up.push(self.phi[i] + gamma * self.width_if[i]);
            lo.push(self.phi[i] - gamma * self.width_if[i]);
        }
        (lo, up)
    }
}

impl BoundModel for OutcomeFit {
    fn kind(&self) -> ModelKind {
        ModelKind::Outcome
    }

    fn curve(&self) -> &BoundCurve {
        &self.curve
    }

    fn confounding(&self) -> &MeasuredConfounding {
        &self.confounding
    }

    fn bounds_at(&self, gamma: f64) -> Result<BoundsAt> {
        let w = self.width();
        let (if_lower, if_upper) = self.influence_at(gamma);
        Ok(BoundsAt {
            gamma,
            lower: self.curve.psi_hat - gamma * w,
            upper: self.curve.psi_hat + gamma * w,
            if_lower,
            if_upper,
        })
    }

    fn uncalibrated_upper_influence(&self) -> &[f64] {
        &self.curve.psi_influence
    }
}

/// Estimate measured confounding and the bound curve for the outcome
/// model over the leave-some-out family. Each family entry is a set of
/// excluded column indices; an empty family is rejected.
pub fn estimate_outcome_model(
    data: &Dataset,
    folds: &FoldAssignment,
    family: &[BTreeSet<usize>],
    gamma_grid: &[f64],
    config: &NuisanceConfig,
) -> Result<OutcomeFit> {
    if family.is_empty() {
        return Err(Error::Validation("the leave-some-out family must be non-empty".into()));
    }
    for (i, s) in family.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::Validation(format!("family subset {i} excludes nothing")));
        }
        if let Some(&max) = s.iter().max() {
            if max >= data.d() {
                return Err(Error::Validation(format!(
                    "family subset {i} references column {max} but d = {}",
                    data.d()
                )));
            }
        }
        for t in family.iter().skip(i + 1) {
            if s == t {
                return Err(Error::Validation("family contains duplicate subsets".into()));
            }
        }
    }
    let n = data.n();
    let full = data.full_view();
    let a_obs = data.treatment();
    let y_obs = data.outcome();

    struct FoldOut {
        rows: Vec<usize>,
        phi: Vec<f64>,
        xi_vals: [Vec<f64>; 2],
        // lambda values indexed [arm][subset][row]
        lam_vals: [Vec<Vec<f64>>; 2],
    }

    let per_fold: Vec<Result<FoldOut>> = par_map(folds.k(), |k| {
        let train = folds.train_rows(k);
        let est = folds.fold_rows(k);
        let prop_full = fit_propensity(&full, &train, config.propensity, config.epsilon)?;
        let mu_full =
            [fit_outcome(&full, &train, 0, config.outcome)?, fit_outcome(&full, &train, 1, config.outcome)?];
        let amd = AmdNuisances { propensity: prop_full.clone(), mu: mu_full.clone() };

        let mut lam_nuis: [Vec<LambdaNuisances>; 2] = [Vec::new(), Vec::new()];
        let mut sub_views = Vec::with_capacity(family.len());
        for s in family {
            let cols: Vec<usize> = s.iter().copied().collect();
            let sub = data.full_view().without_cols(&cols);
            let prop_sub = fit_propensity(&sub, &train, config.propensity, config.epsilon)?;
            for arm in 0..2u8 {
                let mu_sub = fit_outcome(&sub, &train, arm, config.outcome)?;
                let pseudo = fit_pseudo_outcome_regression(
                    &full,
                    &sub,
                    &train,
                    &mu_full[arm as usize],
                    arm,
                    config.outcome,
                )?;
                lam_nuis[arm as usize].push(LambdaNuisances {
                    arm,
                    mu_full: mu_full[arm as usize].clone(),
                    mu_sub,
                    prop_full: prop_full.clone(),
                    prop_sub: prop_sub.clone(),
                    pseudo,
                });
            }
            sub_views.push(sub);
        }

        let mut buf_full = Vec::new();
        let mut buf_sub = Vec::new();
        let mut phi = Vec::with_capacity(est.len());
        let mut xi_vals: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let mut lam_vals: [Vec<Vec<f64>>; 2] =
            [vec![Vec::new(); family.len()], vec![Vec::new(); family.len()]];
        for &i in &est {
            full.fill_row(i, &mut buf_full);
            phi.push(phi_amd(&buf_full, a_obs[i], y_obs[i], &amd));
            for arm in 0..2usize {
                xi_vals[arm].push(xi(&buf_full, a_obs[i], arm as u8, &prop_full));
            }
            for (si, sub) in sub_views.iter().enumerate() {
                sub.fill_row(i, &mut buf_sub);
                for arm in 0..2usize {
                    lam_vals[arm][si].push(lambda(
                        &buf_full,
                        &buf_sub,
                        a_obs[i],
                        y_obs[i],
                        &lam_nuis[arm][si],
                    ));
                }
            }
        }
        Ok(FoldOut { rows: est, phi, xi_vals, lam_vals })
    });

    let mut phi = vec![f64::NAN; n];
    let mut xi_by_arm: [Vec<f64>; 2] = [vec![f64::NAN; n], vec![f64::NAN; n]];
    let mut lam_by_arm_subset: Vec<Vec<Vec<f64>>> =
        vec![vec![vec![f64::NAN; n]; family.len()]; 2];
    for fold in per_fold {
        let out = fold?;
        for (pos, &i) in out.rows.iter().enumerate() {
            phi[i] = out.phi[pos];
            for arm in 0..2 {
                xi_by_arm[arm][i] = out.xi_vals[arm][pos];
                for si in 0..family.len() {
                    lam_by_arm_subset[arm][si][i] = out.lam_vals[arm][si][pos];
                }
            }
        }
    }

    let psi_hat = stats::mean(&phi);
    let mut warnings = Vec::new();

    let mut pi_norm = [0.0f64; 2];
    for arm in 0..2 {
        let mut v = stats::mean(&xi_by_arm[arm]);
        if v < 0.0 {
            warnings.push(format!(
                "plug-in estimate of ||pi_{arm}||^2 was {v:.3e}; clamped to 0"
            ));
            v = 0.0;
        }
        pi_norm[arm] = v.sqrt();
    }

    let sd_y = stats::sd(y_obs);
    let mut m_arm = [0.0f64; 2];
    let mut components = Vec::new();
    for arm in 0..2 {
        let mut acc = 0.0;
        for (si, s) in family.iter().enumerate() {
            let mut v = stats::mean(&lam_by_arm_subset[arm][si]);
            if v < 0.0 {
                warnings.push(format!(
                    "plug-in estimate of a squared norm (arm {arm}, subset {si}) was {v:.3e}; \
                     clamped to 0"
                ));
                v = 0.0;
            }
            acc += v;
            let labels: Vec<String> =
                s.iter().map(|&c| data.names()[c].clone()).collect();
            components.push(ConfoundingComponent {
                label: format!("arm {arm} \\ {{{}}}", labels.join(", ")),
                estimate: v,
                influence: lam_by_arm_subset[arm][si].clone(),
            });
        }
        m_arm[arm] = (acc / family.len() as f64).sqrt();
        if m_arm[arm] <= 1e-6 * sd_y.max(1e-12) {
            return Err(Error::Degenerate(format!(
                "arm {arm} measured confounding is zero within tolerance (M_{arm} = {:.3e}); \
                 the model assumes bounded, non-zero measured confounding per arm",
                m_arm[arm]
            )));
        }
    }

    // width influence via the delta method:
    // sum_a [ ||pi_{1-a}|| avg_S lambda_a / (2 M_a) + M_a xi_{1-a} / (2 ||pi_{1-a}||) ]
    let mut width_if = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = 0.0;
        for arm in 0..2usize {
            let other = 1 - arm;
            let lam_avg = (0..family.len())
                .map(|si| lam_by_arm_subset[arm][si][i])
                .sum::<f64>()
                / family.len() as f64;
            v += pi_norm[other] * lam_avg / (2.0 * m_arm[arm])
                + m_arm[arm] * xi_by_arm[other][i] / (2.0 * pi_norm[other].max(1e-12));
        }
        width_if.push(v);
    }
    let width = pi_norm[1] * m_arm[0] + pi_norm[0] * m_arm[1];

    let m_influence = width_if.clone();
    let confounding = MeasuredConfounding {
        model: ModelKind::Outcome,
        value: width,
        influence: m_influence,
        maximizer: None,
        gap_to_runner_up: 0.0,
        components,
        degenerate: false,
    };

    let fit = OutcomeFit {
        confounding,
        curve: BoundCurve {
            psi_hat,
            psi_influence: phi.clone(),
            points: Vec::new(),
            symmetric: true,
        },
        pi_norm,
        m_arm,
        warnings,
        width_if,
        phi,
    };
    let points: Vec<BoundPoint> = gamma_grid
        .iter()
        .map(|&gamma| {
            let (if_lower, if_upper) = fit.influence_at(gamma);
            BoundPoint {
                gamma,
                lower: psi_hat - gamma * width,
                upper: psi_hat + gamma * width,
                if_lower,
                if_upper,
                if_lower_std: fit.phi.clone(),
                if_upper_std: fit.phi.clone(),
            }
        })
        .collect();
    let mut fit = fit;
    fit.curve.points = points;
    fit.curve.validate()?;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_folds;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_covariate_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(2 * n);
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let x1 = f64::from(rng.gen_bool(0.5));
            let x2 = f64::from(rng.gen_bool(0.5));
            let p = 1.0 / (1.0 + (-(0.2 + 0.9 * x1 - 0.5 * x2)).exp());
            let t = u8::from(rng.gen::<f64>() < p);
            x.extend([x1, x2]);
            a.push(t);
            y.push(0.5 + 1.5 * x1 + 0.7 * x2 + f64::from(t) + 0.5 * (rng.gen::<f64>() - 0.5));
        }
        Dataset::new(x, a, y, vec!["x1".into(), "x2".into()]).unwrap()
    }

    fn loo_family(d: usize) -> Vec<BTreeSet<usize>> {
        (0..d).map(|j| BTreeSet::from([j])).collect()
    }

    #[test]
    fn gamma_zero_bounds_equal_psi() {
        let data = two_covariate_dataset(3000, 3);
        let folds = make_folds(data.n(), 5, 1).unwrap();
        let fit = estimate_outcome_model(
            &data,
            &folds,
            &loo_family(2),
            &[0.0, 1.0],
            &NuisanceConfig::default(),
        )
        .unwrap();
        let p0 = fit.curve.point(0.0).unwrap();
        assert_eq!(p0.lower, fit.psi_hat());
        assert_eq!(p0.upper, fit.psi_hat());
    }

    #[test]
    fn measurable_mu_raises_degenerate() {
        // Y depends on neither covariate beyond the treatment: every
        // leave-out norm is ~0 and Assumption-3-style detection fires
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 3000;
        let mut x = Vec::with_capacity(2 * n);
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            x.extend([f64::from(rng.gen_bool(0.5)), f64::from(rng.gen_bool(0.5))]);
            let t = u8::from(rng.gen_bool(0.5));
            a.push(t);
            y.push(f64::from(t) + 0.3 * (rng.gen::<f64>() - 0.5));
        }
        let data = Dataset::new(x, a, y, vec!["x1".into(), "x2".into()]).unwrap();
        let folds = make_folds(n, 5, 2).unwrap();
        let err = estimate_outcome_model(
            &data,
            &folds,
            &loo_family(2),
            &[1.0],
            &NuisanceConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "{err}");
    }

    #[test]
    fn influence_means_recover_bounds_and_invariance_holds() {
        let data = two_covariate_dataset(4000, 11);
        let folds = make_folds(data.n(), 5, 3).unwrap();
        let fit = estimate_outcome_model(
            &data,
            &folds,
            &loo_family(2),
            &[0.5, 1.0, 2.0],
            &NuisanceConfig::default(),
        )
        .unwrap();
        for p in &fit.curve.points {
            assert!(
                (stats::mean(&p.if_upper) - p.upper).abs() < 1e-9,
                "gamma {}",
                p.gamma
            );
        }
        assert!(fit.invariance_holds());
    }

    #[test]
    fn family_validation() {
        let data = two_covariate_dataset(200, 13);
        let folds = make_folds(data.n(), 2, 4).unwrap();
        let cfg = NuisanceConfig::default();
        assert!(matches!(
            estimate_outcome_model(&data, &folds, &[], &[1.0], &cfg),
            Err(Error::Validation(_))
        ));
        let dup = vec![BTreeSet::from([0]), BTreeSet::from([0])];
        assert!(matches!(
            estimate_outcome_model(&data, &folds, &dup, &[1.0], &cfg),
            Err(Error::Validation(_))
        ));
    }
}
