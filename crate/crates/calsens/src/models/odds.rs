//! Maximum leave-one-out propensity-score odds ratio model.
//!
//! On unit-cube covariates with a no-interaction logistic projection, the
//! L-infinity log-odds confounding measure is the largest absolute slope:
//! M = max_j |beta_j|. Each training fold estimates its own projection and
//! M-hat, fits the theta/nu threshold bundle at t = exp(Gamma M-hat), and
//! the held-out fold averages the bound EIF. The calibrated influence
//! values add (dU/dM) phi_M, where the derivative comes from the plug-in
//! of the f, f~, nu companions and phi_M from the projection's score and
//! Fisher information.

use crate::data::{Dataset, DatasetView, FoldAssignment};
use crate::eif::{varphi_odds, BoundSide, OddsNuisances};
use crate::error::{Error, Result};
use crate::models::{
    argmax_abs, BoundCurve, BoundModel, BoundPoint, BoundsAt, ConfoundingComponent,
    MeasuredConfounding, ModelKind,
};
use crate::nuisance::{
    fit_logistic_projection, fit_propensity, LogisticProjection, NuisanceConfig, PropensityRule,
    ThetaBundle,
};
use crate::parallel::par_map;
use crate::stats;

/// Plug-in derivative of the upper bound in measured confounding:
/// Gamma E{pi_0 f~_1(.; theta_1^+)/nu_1^+} + Gamma e^(Gamma M) E{pi_1 f_0(.; theta_0^-)/nu_0^-}.
pub fn derivative_du_dm(
    gamma: f64,
    propensity: &PropensityRule,
    bundle: &ThetaBundle,
    view: &DatasetView<'_>,
    rows: &[usize],
) -> f64 {
    if rows.is_empty() || gamma == 0.0 {
        return 0.0;
    }
    let mut buf = Vec::new();
    let mut acc = 0.0;
    for &i in rows {
        view.fill_row(i, &mut buf);
        let p1 = propensity.prob_treated(&buf);
        let p0 = 1.0 - p1;
        acc += p0 * bundle.t1_plus.f_above(&buf) / bundle.t1_plus.nu(&buf)
            + bundle.t * p1 * bundle.t0_minus.f_below(&buf) / bundle.t0_minus.nu(&buf);
    }
    gamma * acc / rows.len() as f64
}

/// Plug-in derivative of the lower bound in measured confounding:
/// -Gamma e^(Gamma M) E{pi_0 f_1(.; theta_1^-)/nu_1^-} - Gamma E{pi_1 f~_0(.; theta_0^+)/nu_0^+}.
pub fn derivative_dl_dm(
    gamma: f64,
    propensity: &PropensityRule,
    bundle: &ThetaBundle,
    view: &DatasetView<'_>,
    rows: &[usize],
) -> f64 {
    if rows.is_empty() || gamma == 0.0 {
        return 0.0;
    }
    let mut buf = Vec::new();
    let mut acc = 0.0;
    for &i in rows {
        view.fill_row(i, &mut buf);
        let p1 = propensity.prob_treated(&buf);
        let p0 = 1.0 - p1;
        acc += bundle.t * p0 * bundle.t1_minus.f_below(&buf) / bundle.t1_minus.nu(&buf)
            + p1 * bundle.t0_plus.f_above(&buf) / bundle.t0_plus.nu(&buf);
    }
    -gamma * acc / rows.len() as f64
}

/// Per-Gamma plug-in derivative estimates; `clamped` marks a sign repair.
#[derive(Debug, Clone, Copy)]
pub struct DerivativeEstimate {
    pub gamma: f64,
    pub upper: f64,
    pub lower: f64,
    pub clamped: bool,
}

#[derive(Debug)]
struct OddsFoldState {
    est: Vec<usize>,
    projection: LogisticProjection,
    propensity: PropensityRule,
    /// This fold's max |slope| and its index.
    m_hat: f64,
    j_hat: usize,
    x1: Vec<f64>,
    y1: Vec<f64>,
    x0: Vec<f64>,
    y0: Vec<f64>,
}

/// Fitted odds-ratio model.
pub struct OddsFit {
    pub confounding: MeasuredConfounding,
    pub curve: BoundCurve,
    pub derivatives: Vec<DerivativeEstimate>,
    pub warnings: Vec<String>,
    data: Dataset,
    config: NuisanceConfig,
    fold_states: Vec<OddsFoldState>,
    /// Cached bundles per grid point, indexed [gamma][fold].
    grid_bundles: Vec<Vec<ThetaBundle>>,
}

struct FoldEval {
    phi_u: Vec<(usize, f64)>,
    phi_l: Vec<(usize, f64)>,
    du: f64,
    dl: f64,
    weight: usize,
}

fn eval_fold(
    view: &DatasetView<'_>,
    state: &OddsFoldState,
    bundle: &ThetaBundle,
    gamma: f64,
) -> FoldEval {
    let a = view.treatment();
    let y = view.outcome();
    let nuis = OddsNuisances { propensity: state.propensity.clone(), theta: bundle.clone() };
    let mut buf = Vec::new();
    let mut phi_u = Vec::with_capacity(state.est.len());
    let mut phi_l = Vec::with_capacity(state.est.len());
    for &i in &state.est {
        view.fill_row(i, &mut buf);
        phi_u.push((i, varphi_odds(&buf, a[i], y[i], BoundSide::Upper, &nuis)));
        phi_l.push((i, varphi_odds(&buf, a[i], y[i], BoundSide::Lower, &nuis)));
    }
    let du = derivative_du_dm(gamma, &state.propensity, bundle, view, &state.est);
    let dl = derivative_dl_dm(gamma, &state.propensity, bundle, view, &state.est);
    FoldEval { phi_u, phi_l, du, dl, weight: state.est.len() }
}

impl OddsFit {
    pub fn m_hat(&self) -> f64 {
        self.confounding.value
    }

    fn n(&self) -> usize {
        self.data.n()
    }

    /// Cross-fitted phi_M values (confounding influence), by observation.
    pub fn phi_m(&self) -> &[f64] {
        &self.confounding.influence
    }

    /// Re-evaluate the bound means from the cached grid bundles, bypassing
    /// the stored curve. Together with the grid curve this realizes the
    /// invariance identity U(Gamma) = u(Gamma M-hat) under shared fits.
    pub fn uncalibrated_bounds_from_shared_bundles(&self, grid_idx: usize) -> Result<(f64, f64)> {
        let gamma = self.curve.points[grid_idx].gamma;
        let view = self.data.full_view();
        let evals: Vec<FoldEval> = self
            .fold_states
            .iter()
            .zip(&self.grid_bundles[grid_idx])
            .map(|(state, bundle)| eval_fold(&view, state, bundle, gamma))
            .collect();
        let n = self.n() as f64;
        let u = evals.iter().flat_map(|e| e.phi_u.iter().map(|&(_, v)| v)).sum::<f64>() / n;
        let l = evals.iter().flat_map(|e| e.phi_l.iter().map(|&(_, v)| v)).sum::<f64>() / n;
        Ok((l, u))
    }

    /// Bound estimates with every fold's M-hat shifted by `dm`, used for
    /// finite-difference checks of the derivative in measured confounding.
    pub fn bound_estimates_at_m_offset(&self, gamma: f64, dm: f64) -> Result<(f64, f64)> {
        let view = self.data.full_view();
        let evals = self.eval_at(&view, gamma, dm)?;
        let n = self.n() as f64;
        let u = evals.iter().flat_map(|e| e.phi_u.iter().map(|&(_, v)| v)).sum::<f64>() / n;
        let l = evals.iter().flat_map(|e| e.phi_l.iter().map(|&(_, v)| v)).sum::<f64>() / n;
        Ok((l, u))
    }

    fn eval_at(&self, view: &DatasetView<'_>, gamma: f64, dm: f64) -> Result<Vec<FoldEval>> {
        let evals: Vec<Result<FoldEval>> = par_map(self.fold_states.len(), |k| {
            let state = &self.fold_states[k];
            let t = (gamma * (state.m_hat + dm)).exp();
            let warm = nearest_bundle(&self.grid_bundles, k, t);
            let bundle = ThetaBundle::fit(
                &state.x1, &state.y1, &state.x0, &state.y0,
                view.d(), t, self.config.theta_companion, warm,
            )?;
            Ok(eval_fold(view, state, &bundle, gamma))
        });
        evals.into_iter().collect()
    }
}

fn nearest_bundle<'a>(
    grid: &'a [Vec<ThetaBundle>],
    fold: usize,
    t: f64,
) -> Option<&'a ThetaBundle> {
    grid.iter()
        .map(|per_fold| &per_fold[fold])
        .min_by(|a, b| {
            ((a.t - t).abs()).partial_cmp(&(b.t - t).abs()).unwrap()
        })
}

impl BoundModel for OddsFit {
    fn kind(&self) -> ModelKind {
        ModelKind::OddsRatio
    }

    fn curve(&self) -> &BoundCurve {
        &self.curve
    }

    fn confounding(&self) -> &MeasuredConfounding {
        &self.confounding
    }

    fn bounds_at(&self, gamma: f64) -> Result<BoundsAt> {
        let view = self.data.full_view();
        let evals = self.eval_at(&view, gamma, 0.0)?;
        let n = self.n();
        let mut phi_u = vec![f64::NAN; n];
        let mut phi_l = vec![f64::NAN; n];
        let mut du = 0.0;
        let mut dl = 0.0;
        for e in &evals {
            for &(i, v) in &e.phi_u {
                phi_u[i] = v;
            }
            for &(i, v) in &e.phi_l {
                phi_l[i] = v;
            }
            du += e.du * e.weight as f64;
            dl += e.dl * e.weight as f64;
        }
        du /= n as f64;
        dl /= n as f64;
        let phi_m = self.phi_m();
        let if_upper: Vec<f64> =
            phi_u.iter().zip(phi_m).map(|(&p, &m)| p + du * m).collect();
        let if_lower: Vec<f64> =
            phi_l.iter().zip(phi_m).map(|(&p, &m)| p + dl * m).collect();
        Ok(BoundsAt {
            gamma,
            lower: stats::mean(&phi_l),
            upper: stats::mean(&phi_u),
            if_lower,
            if_upper,
        })
    }

    fn uncalibrated_upper_influence(&self) -> &[f64] {
        // the largest grid point's post-hoc influence values
        &self.curve.points.last().expect("non-empty grid").if_upper_std
    }
}

/// Estimate measured confounding and the bound curve for the odds-ratio
/// model. Covariates must already be min-max rescaled onto the unit cube.
pub fn estimate_odds_ratio(
    data: &Dataset,
    folds: &FoldAssignment,
    gamma_grid: &[f64],
    config: &NuisanceConfig,
) -> Result<OddsFit> {
    if gamma_grid.is_empty() {
        return Err(Error::Config("gamma grid must be non-empty".into()));
    }
    let view = data.full_view();
    let n = data.n();
    let d = data.d();

    // fold states: projection, propensity, gathered arm data
    let states: Vec<Result<OddsFoldState>> = par_map(folds.k(), |k| {
        let train = folds.train_rows(k);
        let est = folds.fold_rows(k);
        let projection = fit_logistic_projection(&view, &train)?;
        let propensity = fit_propensity(&view, &train, config.propensity, config.epsilon)?;
        let (m_hat, j_hat, _) = projection.max_abs_slope();
        let a = data.treatment();
        let y = data.outcome();
        let rows1: Vec<usize> = train.iter().copied().filter(|&i| a[i] == 1).collect();
        let rows0: Vec<usize> = train.iter().copied().filter(|&i| a[i] == 0).collect();
        if rows1.is_empty() || rows0.is_empty() {
            return Err(Error::Fit("a training fold lost one of the arms".into()));
        }
        Ok(OddsFoldState {
            x1: view.gather(&rows1),
            y1: rows1.iter().map(|&i| y[i]).collect(),
            x0: view.gather(&rows0),
            y0: rows0.iter().map(|&i| y[i]).collect(),
            est,
            projection,
            propensity,
            m_hat,
            j_hat,
        })
    });
    let fold_states: Vec<OddsFoldState> = states.into_iter().collect::<Result<_>>()?;

    // confounding components: per-slope averaged |beta_j| with cross-fitted
    // influence values pinned at slope j
    let mut comp_est = vec![0.0; d];
    let mut comp_if: Vec<Vec<f64>> = vec![vec![f64::NAN; n]; d];
    let mut phi_m = vec![f64::NAN; n];
    let mut buf = Vec::new();
    for state in &fold_states {
        for j in 0..d {
            comp_est[j] += state.projection.beta[j + 1].abs() / folds.k() as f64;
        }
        for &i in &state.est {
            view.fill_row(i, &mut buf);
            for (j, comp) in comp_if.iter_mut().enumerate() {
                comp[i] = state.projection.phi_m_for(&buf, data.treatment()[i], j);
            }
            phi_m[i] = state.projection.phi_m_for(&buf, data.treatment()[i], state.j_hat);
        }
    }
    let (j_hat, _, gap) = argmax_abs(&comp_est);
    let m_hat = fold_states.iter().map(|s| s.m_hat).sum::<f64>() / folds.k() as f64;
    if m_hat <= 1e-10 {
        return Err(Error::Degenerate(
            "projected confounding measure is zero within tolerance; the model assumes \
             bounded, non-zero measured confounding"
                .into(),
        ));
    }
    let components: Vec<ConfoundingComponent> = (0..d)
        .map(|j| ConfoundingComponent {
            label: data.names()[j].clone(),
            estimate: comp_est[j],
            influence: comp_if[j].clone(),
        })
        .collect();
    let confounding = MeasuredConfounding {
        model: ModelKind::OddsRatio,
        value: m_hat,
        influence: phi_m.clone(),
        maximizer: Some(j_hat),
        gap_to_runner_up: gap,
        components,
        degenerate: false,
    };

    // walk the gamma grid in ascending order with warm starts per fold
    let mut order: Vec<usize> = (0..gamma_grid.len()).collect();
    order.sort_by(|&a, &b| gamma_grid[a].partial_cmp(&gamma_grid[b]).unwrap());
    let per_fold: Vec<Result<Vec<(ThetaBundle, FoldEval)>>> = par_map(folds.k(), |k| {
        let state = &fold_states[k];
        let mut warm: Option<ThetaBundle> = None;
        let mut out = Vec::with_capacity(order.len());
        for &gi in &order {
            let gamma = gamma_grid[gi];
            let t = (gamma * state.m_hat).exp();
            let bundle = ThetaBundle::fit(
                &state.x1, &state.y1, &state.x0, &state.y0,
                d, t, config.theta_companion, warm.as_ref(),
            )?;
            let eval = eval_fold(&view, state, &bundle, gamma);
            warm = Some(bundle.clone());
            out.push((bundle, eval));
        }
        Ok(out)
    });
    let mut per_fold_results = Vec::with_capacity(folds.k());
    for r in per_fold {
        per_fold_results.push(r?);
    }

    // psi anchor from a t = 1 bundle
    let psi_evals: Vec<Result<FoldEval>> = par_map(folds.k(), |k| {
        let state = &fold_states[k];
        let bundle = ThetaBundle::fit(
            &state.x1, &state.y1, &state.x0, &state.y0, d, 1.0, config.theta_companion, None,
        )?;
        Ok(eval_fold(&view, state, &bundle, 0.0))
    });
    let mut psi_influence = vec![f64::NAN; n];
    for e in psi_evals {
        for (i, v) in e?.phi_u {
            psi_influence[i] = v;
        }
    }
    let psi_hat = stats::mean(&psi_influence);

    let mut warnings = Vec::new();
    let mut points_by_grid: Vec<Option<BoundPoint>> = vec![None; gamma_grid.len()];
    let mut derivs_by_grid: Vec<Option<DerivativeEstimate>> = vec![None; gamma_grid.len()];
    let mut grid_bundles: Vec<Vec<ThetaBundle>> = vec![Vec::new(); gamma_grid.len()];
    for (pos, &gi) in order.iter().enumerate() {
        let gamma = gamma_grid[gi];
        let mut phi_u = vec![f64::NAN; n];
        let mut phi_l = vec![f64::NAN; n];
        let mut du = 0.0;
        let mut dl = 0.0;
        for fold_out in &per_fold_results {
            let (bundle, eval) = &fold_out[pos];
            for &(i, v) in &eval.phi_u {
                phi_u[i] = v;
            }
            for &(i, v) in &eval.phi_l {
                phi_l[i] = v;
            }
            du += eval.du * eval.weight as f64 / n as f64;
            dl += eval.dl * eval.weight as f64 / n as f64;
            grid_bundles[gi].push(bundle.clone());
        }
        let mut clamped = false;
        if gamma > 0.0 && du <= 0.0 {
            warnings.push(format!(
                "upper-bound derivative in M was {du:.3e} at gamma={gamma}; clamped to a \
                 positive floor"
            ));
            du = 1e-12;
            clamped = true;
        }
        if gamma > 0.0 && dl >= 0.0 {
            warnings.push(format!(
                "lower-bound derivative in M was {dl:.3e} at gamma={gamma}; clamped to a \
                 negative floor"
            ));
            dl = -1e-12;
            clamped = true;
        }
        let if_upper: Vec<f64> = phi_u.iter().zip(&phi_m).map(|(&p, &m)| p + du * m).collect();
        let if_lower: Vec<f64> = phi_l.iter().zip(&phi_m).map(|(&p, &m)| p + dl * m).collect();
        points_by_grid[gi] = Some(BoundPoint {
            gamma,
            lower: stats::mean(&phi_l),
            upper: stats::mean(&phi_u),
            if_lower,
            if_upper,
            if_lower_std: phi_l,
            if_upper_std: phi_u,
        });
        derivs_by_grid[gi] = Some(DerivativeEstimate { gamma, upper: du, lower: dl, clamped });
    }
    let mut points: Vec<BoundPoint> = points_by_grid.into_iter().map(Option::unwrap).collect();
    points.sort_by(|a, b| a.gamma.partial_cmp(&b.gamma).unwrap());
    let derivatives: Vec<DerivativeEstimate> = {
        let mut v: Vec<DerivativeEstimate> =
            derivs_by_grid.into_iter().map(Option::unwrap).collect();
        v.sort_by(|a, b| a.gamma.partial_cmp(&b.gamma).unwrap());
        v
    };

    let curve = BoundCurve { psi_hat, psi_influence, points, symmetric: false };
    curve.validate()?;
    Ok(OddsFit {
        confounding,
        curve,
        derivatives,
        warnings,
        data: data.clone(),
        config: *config,
        fold_states,
        grid_bundles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_folds;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Unit-cube covariates, logistic treatment, linear-in-x outcome.
    pub(crate) fn smooth_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let xv: f64 = rng.gen();
            let p = 1.0 / (1.0 + (-(-0.4 + 1.2 * xv)).exp());
            let t = u8::from(rng.gen::<f64>() < p);
            let noise: f64 = rng.gen::<f64>() + rng.gen::<f64>() - 1.0;
            x.push(xv);
            a.push(t);
            y.push(0.5 + xv + f64::from(t) * (0.8 + 0.3 * xv) + 0.6 * noise);
        }
        Dataset::new(x, a, y, vec!["x".into()]).unwrap()
    }

    #[test]
    fn gamma_zero_collapses_to_aipw() {
        let data = smooth_dataset(2500, 3);
        let folds = make_folds(data.n(), 2, 1).unwrap();
        let fit =
            estimate_odds_ratio(&data, &folds, &[0.0, 0.5], &NuisanceConfig::default()).unwrap();
        let p0 = fit.curve.point(0.0).unwrap();
        assert!((p0.upper - fit.curve.psi_hat).abs() < 1e-6);
        assert!((p0.lower - p0.upper).abs() < 1e-6, "U = L at t = 1");
        let p1 = fit.curve.point(0.5).unwrap();
        assert!(p1.upper > p0.upper && p1.lower < p0.lower);
    }

    #[test]
    fn derivative_signs_and_finite_difference() {
        let data = smooth_dataset(4000, 7);
        let folds = make_folds(data.n(), 2, 2).unwrap();
        let gamma = 1.0;
        let fit =
            estimate_odds_ratio(&data, &folds, &[gamma], &NuisanceConfig::default()).unwrap();
        let d = fit.derivatives[0];
        assert!(d.upper > 0.0 && d.lower < 0.0 && !d.clamped);
        let h = 0.01 * fit.m_hat();
        let (l_plus, u_plus) = fit.bound_estimates_at_m_offset(gamma, h).unwrap();
        let (l_minus, u_minus) = fit.bound_estimates_at_m_offset(gamma, -h).unwrap();
        let fd_u = (u_plus - u_minus) / (2.0 * h);
        let fd_l = (l_plus - l_minus) / (2.0 * h);
        assert!(
            ((fd_u - d.upper) / d.upper).abs() < 0.05,
            "dU/dM plug-in {} vs fd {fd_u}",
            d.upper
        );
        assert!(
            ((fd_l - d.lower) / d.lower).abs() < 0.05,
            "dL/dM plug-in {} vs fd {fd_l}",
            d.lower
        );
    }

    #[test]
    fn shared_bundle_invariance() {
        let data = smooth_dataset(1500, 11);
        let folds = make_folds(data.n(), 2, 3).unwrap();
        let grid = [0.5, 1.0];
        let fit = estimate_odds_ratio(&data, &folds, &grid, &NuisanceConfig::default()).unwrap();
        for (gi, p) in fit.curve.points.iter().enumerate() {
            let (l, u) = fit.uncalibrated_bounds_from_shared_bundles(gi).unwrap();
            assert!((u - p.upper).abs() <= 1e-10, "upper {u} vs {}", p.upper);
            assert!((l - p.lower).abs() <= 1e-10, "lower {l} vs {}", p.lower);
        }
    }

    #[test]
    fn known_coefficients_recovered() {
        // generating slopes (-1, 2, 0.5): M-hat -> 2, maximizer -> slope 2 of 3
        let n = 5000;
        let reps = 50;
        let mut missed = 0usize;
        let mut m_sum = 0.0;
        for rep in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep as u64);
            let mut x = Vec::with_capacity(3 * n);
            let mut a = Vec::with_capacity(n);
            let y: Vec<f64> = (0..n).map(|_| 0.0).collect();
            for _ in 0..n {
                let (x1, x2, x3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
                let eta = -0.75 - x1 + 2.0 * x2 + 0.5 * x3;
                x.extend([x1, x2, x3]);
                a.push(u8::from(rng.gen::<f64>() < 1.0 / (1.0 + (-eta).exp())));
            }
            let data =
                Dataset::new(x, a, y, vec!["x1".into(), "x2".into(), "x3".into()]).unwrap();
            let rows: Vec<usize> = (0..n).collect();
            let view = data.full_view();
            let proj = fit_logistic_projection(&view, &rows).unwrap();
            let (m, j, _) = proj.max_abs_slope();
            m_sum += m;
            if j != 1 {
                missed += 1;
            }
        }
        assert!((m_sum / reps as f64 - 2.0).abs() < 0.1);
        assert!(missed as f64 / reps as f64 <= 0.05, "missed {missed}/{reps}");
    }
}
