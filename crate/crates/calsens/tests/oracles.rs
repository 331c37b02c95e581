//! Enumeration oracles: every estimator target has an exact closed
//! evaluation on a finite-support process, computed here independently of
//! the estimation path and compared against the influence-function
//! machinery and the estimators.

use std::collections::BTreeSet;
use std::sync::Arc;

use calsens::data::make_folds;
use calsens::eif::{self, AmdNuisances, BoundSide, LambdaNuisances, OddsNuisances};
use calsens::inference::{
    bootstrap_variance, robustness_value, BootstrapOptions, BootstrapStat, Gamma0Method,
    RobustnessOptions,
};
use calsens::models::{
    estimate_effect_differences, estimate_odds_ratio, estimate_outcome_model, BoundModel,
};
use calsens::nuisance::{
    fit_logistic, fit_logistic_projection, NuisanceConfig, ThetaBundle, ThetaRule, ThetaSign,
};
use calsens::simlab::{coverage_dgp, effect_diff_truth, two_binary_dgp, DiscreteDgp};
use calsens::stats;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn phi_mean_equals_psi_by_enumeration() {
    let dgp = coverage_dgp();
    let nuis = AmdNuisances {
        propensity: dgp.true_propensity(),
        mu: [dgp.true_outcome(0), dgp.true_outcome(1)],
    };
    let mean_phi = dgp.expectation(|x, a, y| eif::phi_amd(x, a, y, &nuis));
    let psi = dgp.psi_full();
    assert!((mean_phi - psi).abs() < 1e-12, "E[phi] = {mean_phi} vs psi = {psi}");
}

#[test]
fn xi_remainder_identity_exact_for_arbitrary_plugin() {
    let dgp = coverage_dgp();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for arm in 0..2u8 {
        let norm_sq = dgp.pi_norm_sq(arm);
        for _ in 0..10 {
            let shifts: Vec<f64> =
                (0..dgp.cells.len()).map(|_| 0.5 * (rng.gen::<f64>() - 0.5)).collect();
            let cells = dgp.cells.clone();
            let plugin = move |x: &[f64]| -> f64 {
                let idx = usize::from(x[0] != 0.0) * 2 + usize::from(x[1] != 0.0);
                let p1 = cells[idx].p_treat + shifts[idx];
                if arm == 1 {
                    p1
                } else {
                    1.0 - p1
                }
            };
            // evaluate xi with the deliberately wrong plug-in
            let rule = calsens::nuisance::PropensityRule::from_fn(
                {
                    let plugin = plugin.clone();
                    move |x: &[f64]| {
                        if arm == 1 {
                            plugin(x)
                        } else {
                            1.0 - plugin(x)
                        }
                    }
                },
                0.0,
            );
            let lhs = dgp.expectation(|x, a, _| eif::xi(x, a, arm, &rule)) - norm_sq;
            let rhs = -dgp.expectation(|x, _, _| {
                let idx = usize::from(x[0] != 0.0) * 2 + usize::from(x[1] != 0.0);
                let truth = if arm == 1 {
                    dgp.cells[idx].p_treat
                } else {
                    1.0 - dgp.cells[idx].p_treat
                };
                let bar = plugin(x);
                (bar - truth) * (bar - truth)
            });
            assert!(
                (lhs - rhs).abs() <= 1e-10,
                "arm {arm}: E[xi(bar)] - norm = {lhs:.3e} vs -E[(bar-pi)^2] = {rhs:.3e}"
            );
        }
    }
}

#[test]
fn lambda_mean_equals_leave_out_norm_by_enumeration() {
    let dgp = coverage_dgp();
    for arm in 0..2u8 {
        for retained in [[0usize], [1usize]] {
            let truth = dgp.subset_truth(&retained);
            let nuis = LambdaNuisances {
                arm,
                mu_full: dgp.true_outcome(arm),
                mu_sub: truth.outcome(arm),
                prop_full: dgp.true_propensity(),
                prop_sub: truth.propensity(),
                pseudo: truth.cross_outcome(arm),
            };
            let mean_lambda = dgp.expectation(|x, a, y| {
                let x_sub = [x[retained[0]]];
                eif::lambda(x, &x_sub, a, y, &nuis)
            });
            let target = dgp.lambda_norm(arm, &retained);
            assert!(
                (mean_lambda - target).abs() < 1e-12,
                "arm {arm} retained {retained:?}: {mean_lambda} vs {target}"
            );
        }
    }
}

/// Exact theta bundle for a discrete process: per-cell moment roots by
/// bisection with exact companions.
fn exact_bundle(dgp: &DiscreteDgp, t: f64) -> ThetaBundle {
    let make = |arm: u8, sign: ThetaSign| -> ThetaRule {
        let s = match sign {
            ThetaSign::Minus => t,
            ThetaSign::Plus => 1.0 / t,
        };
        let mut theta = Vec::new();
        let mut exceed = Vec::new();
        let mut below = Vec::new();
        let mut above = Vec::new();
        for cell in &dgp.cells {
            let th = dgp.theta_cell(cell, arm, s);
            theta.push(th);
            let atoms = &cell.y_dist[arm as usize];
            exceed.push(atoms.iter().filter(|&&(y, _)| y > th).map(|&(_, p)| p).sum::<f64>());
            below.push(atoms.iter().map(|&(y, p)| p * (th - y).max(0.0)).sum::<f64>());
            above.push(atoms.iter().map(|&(y, p)| p * (y - th).max(0.0)).sum::<f64>());
        }
        let idx = |x: &[f64]| usize::from(x[0] != 0.0) * 2 + usize::from(x[1] != 0.0);
        let mk = |vals: Vec<f64>| -> Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> {
            Arc::new(move |x: &[f64]| vals[idx(x)])
        };
        ThetaRule::from_parts(arm, sign, t, mk(theta), mk(exceed), mk(below), mk(above))
    };
    ThetaBundle {
        t,
        t1_plus: make(1, ThetaSign::Plus),
        t1_minus: make(1, ThetaSign::Minus),
        t0_plus: make(0, ThetaSign::Plus),
        t0_minus: make(0, ThetaSign::Minus),
    }
}

#[test]
fn varphi_odds_mean_matches_enumerated_bound() {
    let dgp = coverage_dgp();
    for &t in &[1.0, 2.0, 3.5] {
        let bundle = exact_bundle(&dgp, t);
        let nuis = OddsNuisances { propensity: dgp.true_propensity(), theta: bundle };
        // the identified bounds via the threshold functions directly
        let u_true = dgp.expectation(|x, a, y| {
            let af = f64::from(a);
            af * y + (1.0 - af) * nuis.theta.t1_plus.predict(x)
                - ((1.0 - af) * y + af * nuis.theta.t0_minus.predict(x))
        });
        let l_true = dgp.expectation(|x, a, y| {
            let af = f64::from(a);
            af * y + (1.0 - af) * nuis.theta.t1_minus.predict(x)
                - ((1.0 - af) * y + af * nuis.theta.t0_plus.predict(x))
        });
        let u_eif = dgp.expectation(|x, a, y| eif::varphi_odds(x, a, y, BoundSide::Upper, &nuis));
        let l_eif = dgp.expectation(|x, a, y| eif::varphi_odds(x, a, y, BoundSide::Lower, &nuis));
        assert!((u_eif - u_true).abs() < 1e-9, "t={t}: E[phi_U] {u_eif} vs U {u_true}");
        assert!((l_eif - l_true).abs() < 1e-9, "t={t}: E[phi_L] {l_eif} vs L {l_true}");
        if t > 1.0 {
            assert!(u_true > l_true);
        }
        // the bounds bracket the adjusted mean difference
        let psi = dgp.psi_full();
        assert!(l_true <= psi + 1e-12 && psi <= u_true + 1e-12);
    }
}

#[test]
fn effect_diff_estimator_approaches_enumerated_bound() {
    let dgp = coverage_dgp();
    let (psi, deltas, m, _j) = effect_diff_truth(&dgp);
    let u1_true = psi + m;
    let n = 40_000;
    let data = dgp.sample(n, 99).unwrap();
    let folds = make_folds(n, 5, 7).unwrap();
    let fit =
        estimate_effect_differences(&data, &folds, &[1.0], &NuisanceConfig::default()).unwrap();
    let p = &fit.curve.points[0];
    let se = p.se_upper();
    assert!(
        (p.upper - u1_true).abs() < 5.0 * se,
        "U(1) = {} vs enumerated {} (se {se})",
        p.upper,
        u1_true
    );
    // components approach the enumerated leave-one-out changes
    for (c, d) in fit.confounding.components.iter().zip(&deltas) {
        assert!((c.estimate - d).abs() < 5.0 * c.se() + 1e-3, "{} vs {}", c.estimate, d);
    }
}

#[test]
fn outcome_estimator_approaches_enumerated_bound() {
    let dgp = coverage_dgp();
    let psi = dgp.psi_full();
    let width_true = (dgp.pi_norm_sq(0).sqrt()
        * ((dgp.lambda_norm(1, &[0]) + dgp.lambda_norm(1, &[1])) / 2.0).sqrt())
        + (dgp.pi_norm_sq(1).sqrt()
            * ((dgp.lambda_norm(0, &[0]) + dgp.lambda_norm(0, &[1])) / 2.0).sqrt());
    let u1_true = psi + width_true;
    let n = 40_000;
    let data = dgp.sample(n, 123).unwrap();
    let folds = make_folds(n, 5, 11).unwrap();
    let family = vec![BTreeSet::from([1usize]), BTreeSet::from([0usize])];
    let fit =
        estimate_outcome_model(&data, &folds, &family, &[1.0], &NuisanceConfig::default())
            .unwrap();
    let p = &fit.curve.points[0];
    assert!(
        (p.upper - u1_true).abs() < 6.0 * p.se_upper() + 5e-3,
        "U(1) = {} vs enumerated {}",
        p.upper,
        u1_true
    );
}

#[test]
fn subset_view_matches_physical_copy() {
    let dgp = coverage_dgp();
    let data = dgp.sample(3000, 5).unwrap();
    let folds = make_folds(3000, 5, 3).unwrap();
    let config = NuisanceConfig::default();
    // estimate on the two-column data (components use views)
    let via_view =
        estimate_effect_differences(&data, &folds, &[1.0], &config).unwrap().psi_by_subset[2];
    // psi_{-x2} from a physically subsetted copy holding only x1
    let copy = data.select_copy(&[0]).unwrap();
    let via_copy =
        estimate_effect_differences(&copy, &folds, &[1.0], &config).unwrap().psi_by_subset[0];
    assert!(
        (via_view - via_copy).abs() < 1e-12,
        "view {via_view} vs copy {via_copy}"
    );
}

#[test]
fn rescaled_logistic_slope_is_raw_slope_times_range() {
    // fit the MLE on both scales; the slope transforms exactly by the range
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 4000;
    let mut x_raw = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    for _ in 0..n {
        let v = 3.0 + 4.0 * rng.gen::<f64>(); // range [3, 7]
        let p = 1.0 / (1.0 + (-(-2.0 + 0.6 * v)).exp());
        x_raw.push(v);
        a.push(u8::from(rng.gen::<f64>() < p));
    }
    let fit_raw = fit_logistic(&x_raw, n, 1, &a).unwrap();
    let lo = x_raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x_raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let x_scaled: Vec<f64> = x_raw.iter().map(|v| (v - lo) / range).collect();
    let fit_scaled = fit_logistic(&x_scaled, n, 1, &a).unwrap();
    assert!(
        (fit_scaled.beta[1] - fit_raw.beta[1] * range).abs() < 1e-5,
        "scaled {} vs raw x range {}",
        fit_scaled.beta[1],
        fit_raw.beta[1] * range
    );
}

#[test]
fn phi_m_variance_matches_monte_carlo() {
    // sd of M-hat across replications vs sd(phi_M)/sqrt(n)
    let n = 2000;
    let reps = 500;
    let gen = |seed: u64| -> (Vec<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(2 * n);
        let mut a = Vec::with_capacity(n);
        for _ in 0..n {
            let (x1, x2): (f64, f64) = (rng.gen(), rng.gen());
            let eta = -1.1 + 2.0 * x1 + 0.5 * x2;
            x.extend([x1, x2]);
            a.push(u8::from(rng.gen::<f64>() < 1.0 / (1.0 + (-eta).exp())));
        }
        (x, a)
    };
    let mut m_hats = Vec::with_capacity(reps);
    let mut if_sds = Vec::with_capacity(reps);
    for r in 0..reps {
        let (x, a) = gen(5000 + r as u64);
        let data = calsens::data::Dataset::new(
            x,
            a,
            vec![0.0; n],
            vec!["x1".into(), "x2".into()],
        )
        .unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let view = data.full_view();
        let proj = fit_logistic_projection(&view, &rows).unwrap();
        let (m, _, _) = proj.max_abs_slope();
        m_hats.push(m);
        let phis: Vec<f64> =
            (0..n).map(|i| eif::phi_m_odds(data.row(i), data.treatment()[i], &proj)).collect();
        if_sds.push(stats::sd(&phis) / (n as f64).sqrt());
    }
    let emp = stats::sd(&m_hats);
    let ifm = stats::mean(&if_sds);
    assert!(
        (ifm / emp - 1.0).abs() < 0.15,
        "IF sd {ifm:.5} vs MC sd {emp:.5}"
    );
}

#[test]
fn bootstrap_sd_of_m_close_to_influence_sd() {
    let dgp = coverage_dgp();
    let n = 2000;
    let data = dgp.sample(n, 17).unwrap();
    let folds = make_folds(n, 5, 5).unwrap();
    let config = NuisanceConfig::default();
    let fit = estimate_effect_differences(&data, &folds, &[1.0], &config).unwrap();
    let if_sd = fit.confounding.se();
    let opts = BootstrapOptions { replicates: 100, resample_size: None, seed: 77 };
    let boot = bootstrap_variance(&data, &opts, |resampled, rep_seed| {
        let folds = make_folds(resampled.n(), 5, rep_seed)?;
        let fit = estimate_effect_differences(resampled, &folds, &[1.0], &config)?;
        Ok(BootstrapStat {
            bounds: fit.curve.points.iter().map(|p| (p.lower, p.upper)).collect(),
            m_hat: fit.m_hat(),
        })
    })
    .unwrap();
    let boot_sd = boot.var_m.sqrt();
    assert!(
        (boot_sd / if_sd - 1.0).abs() < 0.25,
        "bootstrap sd {boot_sd:.5} vs IF sd {if_sd:.5}"
    );
}

#[test]
fn odds_zroot_matches_grid_scan_crossing() {
    // a negative-effect smooth process whose upper bound crosses zero
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let n = 900;
    let mut x = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xv: f64 = rng.gen();
        let p = 1.0 / (1.0 + (-(-0.3 + 0.9 * xv)).exp());
        let t = u8::from(rng.gen::<f64>() < p);
        let noise: f64 = rng.gen::<f64>() + rng.gen::<f64>() - 1.0;
        x.push(xv);
        a.push(t);
        y.push(0.4 + 0.5 * xv - 0.9 * f64::from(t) + 0.5 * noise);
    }
    let data = calsens::data::Dataset::new(x, a, y, vec!["x".into()]).unwrap();
    let (scaled, _) = data.minmax_rescale().unwrap();
    let folds = make_folds(n, 2, 9).unwrap();
    let config = NuisanceConfig::default();
    let fit = estimate_odds_ratio(&scaled, &folds, &[0.5, 1.0], &config).unwrap();
    let rv = robustness_value(&fit, &RobustnessOptions::default()).unwrap();
    assert_eq!(rv.method, Gamma0Method::ZRoot);
    assert!(rv.psi_residual < 1e-8, "|Psi(gamma0)| = {}", rv.psi_residual);
    // independent grid scan for the sign change of L * U
    let step = 0.05;
    let mut crossing = None;
    let mut prev_sign = None;
    let mut g = 0.0;
    while g <= 10.0 {
        let b = fit.bounds_at(g).unwrap();
        let sign = (b.lower * b.upper) > 0.0;
        if let Some(ps) = prev_sign {
            if ps && !sign {
                crossing = Some(g);
                break;
            }
        }
        prev_sign = Some(sign);
        g += step;
    }
    let crossing = crossing.expect("grid scan found no crossing");
    assert!(
        (rv.gamma0 - crossing).abs() <= step,
        "z-root {} vs grid crossing {}",
        rv.gamma0,
        crossing
    );
}
