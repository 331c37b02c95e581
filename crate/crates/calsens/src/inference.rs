//! Confidence intervals for bounds and the ATE, bootstrap variance, the
//! robustness-value Z-estimator, and the over/under-robustness regime
//! analysis comparing calibrated and post hoc intervals.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{BoundCurve, BoundModel, ModelKind};
use crate::parallel::par_map;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceSource {
    Influence,
    Bootstrap,
}

impl std::fmt::Display for VarianceSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VarianceSource::Influence => write!(f, "influence"),
            VarianceSource::Bootstrap => write!(f, "bootstrap"),
        }
    }
}

/// One-sided and two-sided intervals at one Gamma, for both the calibrated
/// influence expression and the post hoc one.
#[derive(Debug, Clone, Copy)]
pub struct IntervalRow {
    pub gamma: f64,
    pub lower: f64,
    pub upper: f64,
    /// One-sided LB(alpha), UB(alpha).
    pub lb_one_sided: f64,
    pub ub_one_sided: f64,
    /// Two-sided ATE band [LB(alpha/2), UB(alpha/2)].
    pub band: (f64, f64),
    /// Post hoc band ignoring measured-confounding uncertainty.
    pub band_std: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct IntervalReport {
    pub alpha: f64,
    pub source: VarianceSource,
    pub rows: Vec<IntervalRow>,
    pub warnings: Vec<String>,
}

/// Wald intervals from the influence-function sample variances.
pub fn wald_intervals(curve: &BoundCurve, alpha: f64) -> Result<IntervalReport> {
    let ses: Vec<(f64, f64, f64, f64)> = curve
        .points
        .iter()
        .map(|p| (p.se_lower(), p.se_upper(), p.se_lower_std(), p.se_upper_std()))
        .collect();
    wald_intervals_inner(curve, alpha, &ses, VarianceSource::Influence)
}

/// Wald intervals with externally supplied (e.g. bootstrap) standard errors
/// per grid point for (lower, upper); the post hoc columns keep the
/// influence-function standard errors of the uncalibrated expression.
pub fn wald_intervals_with_se(
    curve: &BoundCurve,
    alpha: f64,
    se_bounds: &[(f64, f64)],
) -> Result<IntervalReport> {
    if se_bounds.len() != curve.points.len() {
        return Err(Error::Config("one (se_l, se_u) pair per grid point required".into()));
    }
    let ses: Vec<(f64, f64, f64, f64)> = curve
        .points
        .iter()
        .zip(se_bounds)
        .map(|(p, &(sl, su))| (sl, su, p.se_lower_std(), p.se_upper_std()))
        .collect();
    wald_intervals_inner(curve, alpha, &ses, VarianceSource::Bootstrap)
}

fn wald_intervals_inner(
    curve: &BoundCurve,
    alpha: f64,
    ses: &[(f64, f64, f64, f64)],
    source: VarianceSource,
) -> Result<IntervalReport> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let z1 = stats::norm_ppf(1.0 - alpha);
    let z2 = stats::norm_ppf(1.0 - alpha / 2.0);
    let mut warnings = Vec::new();
    let rows = curve
        .points
        .iter()
        .zip(ses)
        .map(|(p, &(se_l, se_u, se_l_std, se_u_std))| {
            if se_l == 0.0 || se_u == 0.0 {
                warnings.push(format!(
                    "zero variance at gamma={}: interval degenerates to the point estimate",
                    p.gamma
                ));
            }
            IntervalRow {
                gamma: p.gamma,
                lower: p.lower,
                upper: p.upper,
                lb_one_sided: p.lower - z1 * se_l,
                ub_one_sided: p.upper + z1 * se_u,
                band: (p.lower - z2 * se_l, p.upper + z2 * se_u),
                band_std: (p.lower - z2 * se_l_std, p.upper + z2 * se_u_std),
            }
        })
        .collect();
    Ok(IntervalReport { alpha, source, rows, warnings })
}

/// One replicate's statistics from a bootstrap pipeline run.
#[derive(Debug, Clone)]
pub struct BootstrapStat {
    /// (lower, upper) per grid point.
    pub bounds: Vec<(f64, f64)>,
    pub m_hat: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BootstrapOptions {
    pub replicates: usize,
    /// Resample size m; defaults to n when `None`.
    pub resample_size: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct BootstrapVariance {
    /// Size-n-scale variances (var_lower, var_upper) per grid point.
    pub per_gamma: Vec<(f64, f64)>,
    pub var_m: f64,
    pub failures: usize,
    pub replicates: usize,
}

impl BootstrapVariance {
    pub fn se_bounds(&self) -> Vec<(f64, f64)> {
        self.per_gamma.iter().map(|&(vl, vu)| (vl.sqrt(), vu.sqrt())).collect()
    }
}

/// Derive a well-separated per-replicate stream seed.
pub fn replicate_seed(seed: u64, rep: usize) -> u64 {
    seed.wrapping_add((rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Nonparametric bootstrap over full-pipeline re-estimation on seeded
/// resamples of size m. Replicates run in parallel on independent streams;
/// aggregation is an ordered fold, so results are reproducible for a fixed
/// seed. Variances are rescaled by m/n onto the size-n scale.
pub fn bootstrap_variance<F>(
    data: &Dataset,
    opts: &BootstrapOptions,
    pipeline: F,
) -> Result<BootstrapVariance>
where
    F: Fn(&Dataset, u64) -> Result<BootstrapStat> + Sync,
{
    if opts.replicates < 50 {
        return Err(Error::Config(format!(
            "bootstrap needs at least 50 replicates, got {}",
            opts.replicates
        )));
    }
    let n = data.n();
    let m = opts.resample_size.unwrap_or(n);
    if m < 2 {
        return Err(Error::Config("bootstrap resample size must be at least 2".into()));
    }
    let runs: Vec<Result<BootstrapStat>> = par_map(opts.replicates, |rep| {
        let rep_seed = replicate_seed(opts.seed, rep);
        let resampled = resample(data, m, rep_seed)?;
        pipeline(&resampled, rep_seed)
    });
    let mut ok: Vec<BootstrapStat> = Vec::with_capacity(opts.replicates);
    let mut failures = Vec::new();
    for r in runs {
        match r {
            Ok(stat) => ok.push(stat),
            Err(e) => failures.push(e.to_string()),
        }
    }
    if failures.len() * 10 > opts.replicates {
        return Err(Error::Fit(format!(
            "bootstrap failure rate {}/{} exceeds 10%; first failures: {:?}",
            failures.len(),
            opts.replicates,
            &failures[..failures.len().min(3)]
        )));
    }
    if ok.len() < 2 {
        return Err(Error::Fit("too few successful bootstrap replicates".into()));
    }
    let g = ok[0].bounds.len();
    let scale = m as f64 / n as f64;
    let per_gamma = (0..g)
        .map(|j| {
            let lows: Vec<f64> = ok.iter().map(|s| s.bounds[j].0).collect();
            let ups: Vec<f64> = ok.iter().map(|s| s.bounds[j].1).collect();
            (stats::variance(&lows) * scale, stats::variance(&ups) * scale)
        })
        .collect();
    let ms: Vec<f64> = ok.iter().map(|s| s.m_hat).collect();
    Ok(BootstrapVariance {
        per_gamma,
        var_m: stats::variance(&ms) * scale,
        failures: failures.len(),
        replicates: opts.replicates,
    })
}

fn resample(data: &Dataset, m: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.n();
    // redraw until both arms appear; flat resamples are useless downstream
    for _ in 0..32 {
        let idx: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n)).collect();
        let mut x = Vec::with_capacity(m * data.d());
        let mut a = Vec::with_capacity(m);
        let mut y = Vec::with_capacity(m);
        for &i in &idx {
            x.extend_from_slice(data.row(i));
            a.push(data.treatment()[i]);
            y.push(data.outcome()[i]);
        }
        if a.iter().any(|&v| v == 1) && a.iter().any(|&v| v == 0) {
            let mut ds = Dataset::new(x, a, y, data.names().to_vec())?;
            ds.set_groups(data.groups().to_vec())?;
            return Ok(ds);
        }
    }
    Err(Error::Fit("bootstrap resample kept collapsing to a single arm".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingSide {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gamma0Method {
    ClosedForm,
    ZRoot,
}

/// Robustness value: the smallest Gamma at which the bounds straddle zero.
#[derive(Debug, Clone)]
pub struct RobustnessValue {
    pub gamma0: f64,
    pub se: f64,
    pub crossing: CrossingSide,
    pub method: Gamma0Method,
    /// |L(gamma0) U(gamma0)| at the solution.
    pub psi_residual: f64,
}

impl RobustnessValue {
    pub fn ci(&self, alpha: f64) -> (f64, f64) {
        let z = stats::norm_ppf(1.0 - alpha / 2.0);
        ((self.gamma0 - z * self.se).max(0.0), self.gamma0 + z * self.se)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RobustnessOptions {
    pub gamma_max: f64,
    pub tol: f64,
}

impl Default for RobustnessOptions {
    fn default() -> Self {
        RobustnessOptions { gamma_max: 50.0, tol: 1e-8 }
    }
}

/// Estimate the robustness value. The effect-differences model admits the
/// closed form |psi| / M; other models solve Psi(Gamma) = L(Gamma) U(Gamma)
/// = 0 by bisection and apply the Z-estimator variance
/// V{Psi'(Gamma_0)^{-1} phi_Psi} with a numeric derivative.
pub fn robustness_value(model: &dyn BoundModel, opts: &RobustnessOptions) -> Result<RobustnessValue> {
    let curve = model.curve();
    let psi = curve.psi_hat;
    let n = curve.psi_influence.len() as f64;
    let m = model.confounding().value;
    if m <= 0.0 {
        return Err(Error::Degenerate("robustness value needs non-zero measured confounding".into()));
    }

    if model.kind() == ModelKind::EffectDifferences {
        let gamma0 = psi.abs() / m;
        let crossing = if psi < 0.0 { CrossingSide::Upper } else { CrossingSide::Lower };
        let at = model.bounds_at(gamma0)?;
        let iv = match crossing {
            CrossingSide::Upper => &at.if_upper,
            CrossingSide::Lower => &at.if_lower,
        };
        let se = (stats::variance(iv) / n).sqrt() / m;
        return Ok(RobustnessValue {
            gamma0,
            se,
            crossing,
            method: Gamma0Method::ClosedForm,
            psi_residual: (at.lower * at.upper).abs(),
        });
    }

    // Z-root on Psi(Gamma) = L * U, positive at 0 and negative past the crossing
    let psi_fn = |g: f64| -> Result<f64> {
        let b = model.bounds_at(g)?;
        Ok(b.lower * b.upper)
    };
    let at0 = psi_fn(0.0)?;
    let gamma0 = if at0 <= opts.tol {
        0.0
    } else {
        let at_max = psi_fn(opts.gamma_max)?;
        if at_max > 0.0 {
            return Err(Error::Degenerate(format!(
                "bounds do not straddle zero on [0, {}]: Psi(0)={at0:.6e}, Psi(max)={at_max:.6e}",
                opts.gamma_max
            )));
        }
        let mut lo = 0.0;
        let mut hi = opts.gamma_max;
        let mut mid = 0.5 * (lo + hi);
        for _ in 0..200 {
            mid = 0.5 * (lo + hi);
            let v = psi_fn(mid)?;
            if v.abs() < opts.tol {
                break;
            }
            if v > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        mid
    };

    let at = model.bounds_at(gamma0)?;
    let crossing =
        if at.upper.abs() <= at.lower.abs() { CrossingSide::Upper } else { CrossingSide::Lower };
    // phi_Psi = phi_u L + phi_l U at the root
    let phi_psi: Vec<f64> = at
        .if_upper
        .iter()
        .zip(&at.if_lower)
        .map(|(&u, &l)| u * at.lower + l * at.upper)
        .collect();
    let h = (1e-4f64).max(1e-4 * gamma0);
    let lo_g = (gamma0 - h).max(0.0);
    let psi_plus = psi_fn(gamma0 + h)?;
    let psi_minus = psi_fn(lo_g)?;
    let dpsi = (psi_plus - psi_minus) / (gamma0 + h - lo_g);
    let se = if dpsi.abs() < 1e-14 {
        f64::INFINITY
    } else {
        (stats::variance(&phi_psi) / n).sqrt() / dpsi.abs()
    };
    Ok(RobustnessValue {
        gamma0,
        se,
        crossing,
        method: Gamma0Method::ZRoot,
        psi_residual: (at.lower * at.upper).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeClass {
    OverEstimates,
    UnderEstimates,
    Boundary,
}

impl std::fmt::Display for RegimeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegimeClass::OverEstimates => write!(f, "over-estimates-robustness"),
            RegimeClass::UnderEstimates => write!(f, "under-estimates-robustness"),
            RegimeClass::Boundary => write!(f, "boundary"),
        }
    }
}

/// Classify directly from (rho, RRSE): post hoc calibration under-estimates
/// robustness exactly when rho < 0 and RRSE < -2 rho.
pub fn classify_regime(rho: f64, rrse: f64) -> RegimeClass {
    let ratio = variance_ratio(rho, rrse);
    if (ratio - 1.0).abs() <= 1e-12 {
        RegimeClass::Boundary
    } else if ratio < 1.0 {
        RegimeClass::UnderEstimates
    } else {
        RegimeClass::OverEstimates
    }
}

/// V{calibrated} / V{post hoc} = 1 + RRSE^2 + 2 rho RRSE.
pub fn variance_ratio(rho: f64, rrse: f64) -> f64 {
    1.0 + rrse * rrse + 2.0 * rho * rrse
}

#[derive(Debug, Clone, Copy)]
pub struct RegimePoint {
    /// Raw sensitivity parameter gamma = Gamma * M-hat.
    pub gamma_raw: f64,
    pub rho: f64,
    pub rrse: f64,
    pub variance_ratio: f64,
    /// Direct variance computation of the combined influence vector,
    /// for cross-checking the closed-form ratio.
    pub variance_ratio_direct: f64,
    pub class: RegimeClass,
}

#[derive(Debug, Clone)]
pub struct RegimeReport {
    pub m_hat: f64,
    pub points: Vec<RegimePoint>,
}

/// Compare calibrated and post hoc interval variances from the influence
/// values of the uncalibrated bound and of measured confounding, both on
/// the same estimation split.
pub fn regime_analysis(
    u_if: &[f64],
    m_if: &[f64],
    m_hat: f64,
    gamma_raw_grid: &[f64],
) -> Result<RegimeReport> {
    if u_if.len() != m_if.len() {
        return Err(Error::Config("influence vectors must share the estimation split".into()));
    }
    let var_u = stats::variance(u_if);
    let var_m = stats::variance(m_if);
    if var_u <= 0.0 || m_hat.abs() <= 0.0 {
        return Err(Error::Degenerate(
            "regime analysis needs non-degenerate bound variance and non-zero M".into(),
        ));
    }
    let rho = stats::correlation(u_if, m_if);
    let points = gamma_raw_grid
        .iter()
        .map(|&gamma_raw| {
            let rrse = (var_m.sqrt() / m_hat.abs()) / (var_u.sqrt() / gamma_raw.abs().max(1e-300));
            let ratio = variance_ratio(rho, rrse);
            let combined: Vec<f64> = u_if
                .iter()
                .zip(m_if)
                .map(|(&u, &m)| u + gamma_raw / m_hat * m)
                .collect();
            let direct = stats::variance(&combined) / var_u;
            RegimePoint {
                gamma_raw,
                rho,
                rrse,
                variance_ratio: ratio,
                variance_ratio_direct: direct,
                class: classify_regime(rho, rrse),
            }
        })
        .collect();
    Ok(RegimeReport { m_hat, points })
}
