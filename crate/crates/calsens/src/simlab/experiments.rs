//! Monte Carlo experiments over the estimators: proxy-example
//! reproductions, coverage, argmax selection, robustness-value coverage,
//! the regime map, and the exact remainder identities.
//!
//! Replicates run in parallel on independent seeded streams; every
//! replicate seed is logged so any single replicate can be reproduced in
//! isolation.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::make_folds;
use crate::eif::{self, AmdNuisances, LambdaNuisances};
use crate::error::{Error, Result};
use crate::inference::{
    classify_regime, replicate_seed, robustness_value, wald_intervals, RegimeClass,
    RobustnessOptions,
};
use crate::models::estimate_effect_differences;
use crate::nuisance::NuisanceConfig;
use crate::parallel::par_map;
use crate::simlab::discrete::{two_binary_dgp, DiscreteDgp};
use crate::simlab::generators::{
    analytic_rules_empty, analytic_rules_x, example2_theta, gen_proxy_example_1,
    gen_proxy_example_2, validate_example1_truths,
};
use crate::stats;

/// One named pass/fail line of an experiment.
#[derive(Debug, Clone)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Experiment output: headline statistics, pass/fail checks, an optional
/// table for plotting, and the replicate seeds.
#[derive(Debug, Clone, Default)]
pub struct ExperimentResult {
    pub name: String,
    pub stats: Vec<(String, f64)>,
    pub checks: Vec<CheckLine>,
    pub table_header: Vec<String>,
    pub table_rows: Vec<Vec<f64>>,
    pub seeds: Vec<u64>,
    pub underpowered: bool,
    pub runtime_seconds: f64,
}

impl ExperimentResult {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn stat(&self, key: &str) -> Option<f64> {
        self.stats.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }

    fn push(&mut self, key: &str, v: f64) {
        self.stats.push((key.to_string(), v));
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(CheckLine { name: name.to_string(), pass, detail });
    }

    /// Write the table (if any) plus the stats as CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        if !self.table_header.is_empty() {
            writeln!(f, "{}", self.table_header.join(","))?;
            for row in &self.table_rows {
                let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                writeln!(f, "{}", line.join(","))?;
            }
        } else {
            writeln!(f, "stat,value")?;
            for (k, v) in &self.stats {
                writeln!(f, "{k},{v}")?;
            }
        }
        Ok(())
    }

    /// Write a human-readable summary report.
    pub fn write_summary(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "experiment: {}", self.name)?;
        writeln!(f, "runtime_seconds: {:.3}", self.runtime_seconds)?;
        if self.underpowered {
            writeln!(f, "WARNING: underpowered smoke run; thresholds are not meaningful")?;
        }
        for (k, v) in &self.stats {
            writeln!(f, "{k} = {v}")?;
        }
        for c in &self.checks {
            writeln!(f, "[{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        if !self.seeds.is_empty() {
            let head: Vec<String> =
                self.seeds.iter().take(8).map(|s| s.to_string()).collect();
            writeln!(f, "replicate_seeds (first {}): {}", head.len(), head.join(" "))?;
        }
        Ok(())
    }
}

fn amd_estimate_with_rules(
    data: &crate::data::Dataset,
    use_covariate: bool,
    nuis: &AmdNuisances,
) -> (f64, Vec<f64>) {
    let n = data.n();
    let mut phi = Vec::with_capacity(n);
    for i in 0..n {
        let row: &[f64] = if use_covariate { data.row(i) } else { &[] };
        phi.push(eif::phi_amd(row, data.treatment()[i], data.outcome()[i], nuis));
    }
    (stats::mean(&phi), phi)
}

/// Example-1 reproduction with analytic nuisances: psi_X -> log(3)/3,
/// psi_empty -> 2/3, and the Gamma = 1 effect-differences bounds
/// ~ [0.066, 0.667], excluding zero.
pub fn run_example1(n: usize, seed: u64) -> Result<ExperimentResult> {
    let started = Instant::now();
    validate_example1_truths()?;
    let draw = gen_proxy_example_1(n, seed)?;
    let (prop_x, mu_x) = analytic_rules_x(1.0);
    let (psi_x, _) =
        amd_estimate_with_rules(&draw.data, true, &AmdNuisances { propensity: prop_x, mu: mu_x });
    let (prop_e, mu_e) = analytic_rules_empty(1.0);
    let (psi_e, _) =
        amd_estimate_with_rules(&draw.data, false, &AmdNuisances { propensity: prop_e, mu: mu_e });
    let m_hat = (psi_x - psi_e).abs();
    let (lower, upper) = (psi_x - m_hat, psi_x + m_hat);

    let truth_x = 3.0f64.ln() / 3.0;
    let truth_e = 2.0 / 3.0;
    let truth_l = 2.0 * truth_x - truth_e;
    let mut out = ExperimentResult { name: "example-1".into(), seeds: vec![seed], ..Default::default() };
    out.push("n", n as f64);
    out.push("psi_x_hat", psi_x);
    out.push("psi_empty_hat", psi_e);
    out.push("m_hat", m_hat);
    out.push("lower_gamma1", lower);
    out.push("upper_gamma1", upper);
    out.check(
        "psi_x within 0.02 of log(3)/3",
        (psi_x - truth_x).abs() <= 0.02,
        format!("{psi_x:.4} vs {truth_x:.4}"),
    );
    out.check(
        "psi_empty within 0.02 of 2/3",
        (psi_e - truth_e).abs() <= 0.02,
        format!("{psi_e:.4} vs {truth_e:.4}"),
    );
    out.check(
        "gamma=1 bounds within 0.03 of [0.066, 0.667]",
        (lower - truth_l).abs() <= 0.03 && (upper - truth_e).abs() <= 0.03,
        format!("[{lower:.4}, {upper:.4}] vs [{truth_l:.4}, {truth_e:.4}]"),
    );
    out.check("gamma=1 bounds exclude zero", lower > 0.0, format!("lower = {lower:.4}"));
    out.runtime_seconds = started.elapsed().as_secs_f64();
    Ok(out)
}

/// Example-2 reproduction: the bias equality |psi_X - psi_empty| ~ 0.306
/// at the root theta, and the Gamma = 1 band contains zero.
pub fn run_example2(n: usize, seed: u64) -> Result<ExperimentResult> {
    let started = Instant::now();
    let sol = example2_theta()?;
    let draw = gen_proxy_example_2(n, seed, sol.theta)?;
    let (prop_x, mu_x) = analytic_rules_x(sol.theta);
    let (psi_x, phi_x) =
        amd_estimate_with_rules(&draw.data, true, &AmdNuisances { propensity: prop_x, mu: mu_x });
    let (prop_e, mu_e) = analytic_rules_empty(sol.theta);
    let (psi_e, phi_e) =
        amd_estimate_with_rules(&draw.data, false, &AmdNuisances { propensity: prop_e, mu: mu_e });
    let m_hat = (psi_x - psi_e).abs();
    let (lower, upper) = (psi_x - m_hat, psi_x + m_hat);
    // the population band's lower endpoint is exactly zero, so the
    // containment check must allow for the estimate's own sampling margin
    let sign = if psi_x - psi_e < 0.0 { -1.0 } else { 1.0 };
    let phi_l: Vec<f64> = phi_x
        .iter()
        .zip(&phi_e)
        .map(|(&px, &pe)| px - sign * (px - pe))
        .collect();
    let se_l = (stats::variance(&phi_l) / n as f64).sqrt();

    let ln3 = 3.0f64.ln();
    let truth_bias = ln3 / (6.0 * ln3 - 3.0);
    let mut out = ExperimentResult { name: "example-2".into(), seeds: vec![seed], ..Default::default() };
    out.push("n", n as f64);
    out.push("theta", sol.theta);
    out.push("psi_x_hat", psi_x);
    out.push("psi_empty_hat", psi_e);
    out.push("bias_hat", m_hat);
    out.push("lower_gamma1", lower);
    out.push("upper_gamma1", upper);
    out.check(
        "bias |psi_X - psi_empty| within 0.02 of 0.306",
        (m_hat - truth_bias).abs() <= 0.02,
        format!("{m_hat:.4} vs {truth_bias:.4}"),
    );
    out.check(
        "gamma=1 band contains zero (within the lower endpoint's margin)",
        lower <= 1.959964 * se_l && upper >= 0.0,
        format!("[{lower:.4}, {upper:.4}], se(lower) = {se_l:.4}"),
    );
    out.check(
        "upper bound within 0.03 of 2 log(3)/(6 log(3) - 3)",
        (upper - 2.0 * truth_bias).abs() <= 0.03,
        format!("{upper:.4} vs {:.4}", 2.0 * truth_bias),
    );
    out.runtime_seconds = started.elapsed().as_secs_f64();
    Ok(out)
}

/// The benchmark process for coverage and robustness experiments: binary
/// confounders with a logistic treatment and linear outcome mean, so the
/// default nuisance menu is correctly specified on every subset.
pub fn coverage_dgp() -> DiscreteDgp {
    two_binary_dgp([0.2, 1.0, -0.8], [0.4, 1.2, 0.5, 1.0], 0.8)
}

/// Exact effect-differences quantities for a two-covariate discrete DGP:
/// (psi, [Delta_1, Delta_2], M, j').
pub fn effect_diff_truth(dgp: &DiscreteDgp) -> (f64, Vec<f64>, f64, usize) {
    let psi = dgp.psi_full();
    let deltas: Vec<f64> = (0..dgp.d())
        .map(|j| {
            let retained: Vec<usize> = (0..dgp.d()).filter(|&c| c != j).collect();
            psi - dgp.psi(&retained)
        })
        .collect();
    let mut j = 0;
    for (k, d) in deltas.iter().enumerate() {
        if d.abs() > deltas[j].abs() {
            j = k;
        }
    }
    (psi, deltas.clone(), deltas[j].abs(), j)
}

#[derive(Debug, Clone, Copy)]
pub struct CoverageOptions {
    pub n: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub folds: usize,
    pub seed: u64,
    pub gammas: [f64; 3],
}

impl Default for CoverageOptions {
    fn default() -> Self {
        CoverageOptions {
            n: 2000,
            replicates: 500,
            alpha: 0.05,
            folds: 5,
            seed: 90210,
            gammas: [0.5, 1.0, 2.0],
        }
    }
}

/// Coverage of the two-sided ATE band over the true bound interval for the
/// effect-differences model, plus agreement between influence-function and
/// sampling standard deviations and the 1/sqrt(n) width scaling.
pub fn run_coverage(opts: &CoverageOptions) -> Result<ExperimentResult> {
    let started = Instant::now();
    let dgp = coverage_dgp();
    let (psi, _deltas, m_true, _j) = effect_diff_truth(&dgp);
    let config = NuisanceConfig::default();
    let gammas = opts.gammas;

    struct Rep {
        covered: [bool; 3],
        /// z (se_l + se_u): the sampling margin the band adds around the
        /// estimated bound interval; this is what shrinks like 1/sqrt(n).
        margins: [f64; 3],
        u_hats: [f64; 3],
        if_se_u: [f64; 3],
        m_hat: f64,
        m_if_se: f64,
    }
    let run_once = |n: usize, rep: usize, seed: u64| -> Result<Rep> {
        let rs = replicate_seed(seed, rep);
        let data = dgp.sample(n, rs)?;
        let folds = make_folds(n, opts.folds, rs ^ 0x5EED)?;
        let fit = estimate_effect_differences(&data, &folds, &gammas, &config)?;
        let report = wald_intervals(&fit.curve, opts.alpha)?;
        let mut covered = [false; 3];
        let mut margins = [0.0; 3];
        let mut u_hats = [0.0; 3];
        let mut if_se_u = [0.0; 3];
        for (g, row) in report.rows.iter().enumerate() {
            let (lo_true, hi_true) = (psi - row.gamma * m_true, psi + row.gamma * m_true);
            covered[g] = row.band.0 <= lo_true && hi_true <= row.band.1;
            margins[g] = (row.band.1 - row.upper) + (row.lower - row.band.0);
            u_hats[g] = row.upper;
            if_se_u[g] = fit.curve.points[g].se_upper();
        }
        Ok(Rep {
            covered,
            margins,
            u_hats,
            if_se_u,
            m_hat: fit.m_hat(),
            m_if_se: fit.confounding.se(),
        })
    };

    let reps: Vec<Result<Rep>> = par_map(opts.replicates, |r| run_once(opts.n, r, opts.seed));
    let mut done = Vec::with_capacity(opts.replicates);
    for r in reps {
        done.push(r?);
    }

    let mut out = ExperimentResult {
        name: "coverage-effect-diff".into(),
        seeds: (0..opts.replicates).map(|r| replicate_seed(opts.seed, r)).collect(),
        underpowered: opts.replicates < 100,
        ..Default::default()
    };
    out.push("n", opts.n as f64);
    out.push("replicates", opts.replicates as f64);
    out.push("psi_true", psi);
    out.push("m_true", m_true);

    out.table_header = vec![
        "gamma".into(),
        "coverage".into(),
        "mean_margin".into(),
        "empirical_sd_upper".into(),
        "mean_if_sd_upper".into(),
    ];
    for (g, &gamma) in gammas.iter().enumerate() {
        let cov =
            done.iter().filter(|r| r.covered[g]).count() as f64 / done.len() as f64;
        let mean_width = stats::mean(&done.iter().map(|r| r.margins[g]).collect::<Vec<_>>());
        let emp_sd = stats::sd(&done.iter().map(|r| r.u_hats[g]).collect::<Vec<_>>());
        let if_sd = stats::mean(&done.iter().map(|r| r.if_se_u[g]).collect::<Vec<_>>());
        out.table_rows.push(vec![gamma, cov, mean_width, emp_sd, if_sd]);
        out.check(
            &format!("95% band coverage in [0.93, 0.99] at gamma={gamma}"),
            (0.93..=0.99).contains(&cov),
            format!("coverage {cov:.3}"),
        );
        out.check(
            &format!("IF sd within 15% of empirical sd of U at gamma={gamma}"),
            (if_sd / emp_sd - 1.0).abs() <= 0.15,
            format!("if {if_sd:.4} vs empirical {emp_sd:.4}"),
        );
    }

    // M-hat: sampling sd vs influence-function sd
    let m_emp_sd = stats::sd(&done.iter().map(|r| r.m_hat).collect::<Vec<_>>());
    let m_if_sd = stats::mean(&done.iter().map(|r| r.m_if_se).collect::<Vec<_>>());
    out.push("m_hat_empirical_sd", m_emp_sd);
    out.push("m_hat_mean_if_sd", m_if_sd);
    out.check(
        "M-hat IF sd within 15% of sampling sd",
        (m_if_sd / m_emp_sd - 1.0).abs() <= 0.15,
        format!("if {m_if_sd:.4} vs empirical {m_emp_sd:.4}"),
    );

    // width scaling: quadrupling n halves the mean band width; skipped on
    // smoke runs whose quarter sample is too small for stable logistic fits
    let small_n = opts.n / 4;
    if small_n >= 250 {
        let small: Vec<Result<Rep>> =
            par_map(opts.replicates.min(200), |r| run_once(small_n, r, opts.seed ^ 0xA5A5));
        let mut small_margins = Vec::new();
        for r in small {
            small_margins.push(r?.margins[1]);
        }
        let big_mean = stats::mean(&done.iter().map(|r| r.margins[1]).collect::<Vec<_>>());
        let ratio = big_mean / stats::mean(&small_margins);
        out.push("margin_ratio_n_vs_quarter_n", ratio);
        out.check(
            "quadrupling n halves the mean band margin (within 10%)",
            (ratio - 0.5).abs() <= 0.05,
            format!("ratio {ratio:.3}"),
        );
    }
    out.runtime_seconds = started.elapsed().as_secs_f64();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ArgmaxOptions {
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub folds: usize,
    pub seed: u64,
    /// Outcome coefficient of the runner-up covariate; closer to the leader
    /// means a smaller separation gap.
    pub runner_up_coef: f64,
}

impl Default for ArgmaxOptions {
    fn default() -> Self {
        ArgmaxOptions {
            n_grid: vec![500, 2000, 8000],
            replicates: 200,
            folds: 5,
            seed: 7700,
            runner_up_coef: 0.85,
        }
    }
}

/// The argmax-selection DGP: both covariates confound, with x1 the
/// stronger one; `runner_up_coef` tunes the separation gap.
pub fn argmax_dgp(runner_up_coef: f64) -> DiscreteDgp {
    two_binary_dgp([0.0, 0.9, 0.8], [0.4, 1.1, runner_up_coef, 1.0], 1.3)
}

/// A widely separated variant (gap above a fifth of sd(Y)) where the
/// maximizer is essentially never missed at desk-scale n.
pub fn argmax_dgp_wide_gap() -> DiscreteDgp {
    two_binary_dgp([0.0, 1.3, 0.6], [0.4, 1.9, 0.1, 1.0], 0.55)
}

/// An exactly tied DGP: both covariates play symmetric roles, so the
/// top two components coincide and selection is a coin flip.
pub fn argmax_dgp_tie() -> DiscreteDgp {
    two_binary_dgp([0.0, 0.9, 0.9], [0.4, 1.1, 1.1, 1.0], 1.3)
}

/// Frequency of selecting the wrong maximizer j-hat across sample sizes;
/// it should fall with n and essentially vanish once the gap is several
/// sampling standard errors wide.
pub fn run_argmax_selection(opts: &ArgmaxOptions) -> Result<ExperimentResult> {
    let started = Instant::now();
    let dgp = argmax_dgp(opts.runner_up_coef);
    let (_psi, deltas, _m, j_true) = effect_diff_truth(&dgp);
    let gap = {
        let mut s: Vec<f64> = deltas.iter().map(|d| d.abs()).collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        s[0] - s[1]
    };
    let sd_y = {
        let mean_y = dgp.expectation(|_, _, y| y);
        dgp.expectation(|_, _, y| (y - mean_y) * (y - mean_y)).sqrt()
    };
    let config = NuisanceConfig::default();

    let mut out = ExperimentResult {
        name: "argmax-selection".into(),
        underpowered: opts.replicates < 100,
        ..Default::default()
    };
    out.push("gap", gap);
    out.push("sd_y", sd_y);
    out.push("gap_over_sd_y", gap / sd_y);
    out.push("j_true", j_true as f64);
    out.table_header = vec!["n".into(), "misselection".into()];

    let mut freqs = Vec::new();
    for (ni, &n) in opts.n_grid.iter().enumerate() {
        let miss: Vec<Result<bool>> = par_map(opts.replicates, |r| {
            let rs = replicate_seed(opts.seed.wrapping_add(ni as u64 * 1_000_003), r);
            let data = dgp.sample(n, rs)?;
            let folds = make_folds(n, opts.folds, rs ^ 0x5EED)?;
            let fit = estimate_effect_differences(&data, &folds, &[1.0], &config)?;
            Ok(fit.confounding.maximizer != Some(j_true))
        });
        let mut count = 0usize;
        for m in miss {
            count += usize::from(m?);
        }
        let freq = count as f64 / opts.replicates as f64;
        out.table_rows.push(vec![n as f64, freq]);
        freqs.push(freq);
        out.seeds.push(replicate_seed(opts.seed.wrapping_add(ni as u64 * 1_000_003), 0));
    }
    for w in freqs.windows(2) {
        out.check(
            "misselection decreases with n",
            w[1] < w[0] || (w[0] == 0.0 && w[1] == 0.0),
            format!("{} -> {}", w[0], w[1]),
        );
    }
    if let Some(&last) = freqs.last() {
        out.check(
            "misselection < 2% at the largest n",
            last < 0.02,
            format!("{last:.4} at n = {}", opts.n_grid.last().unwrap()),
        );
    }

    // exact-tie diagnostic: reported, not asserted; selection is a coin flip
    let tie = argmax_dgp_tie();
    let (_p, td, _m, _tj) = effect_diff_truth(&tie);
    let tie_reps = opts.replicates.min(100);
    let tie_miss: Vec<Result<bool>> = par_map(tie_reps, |r| {
        let rs = replicate_seed(opts.seed ^ 0x71E, r);
        let data = tie.sample(2000, rs)?;
        let folds = make_folds(2000, opts.folds, rs ^ 0x5EED)?;
        let fit = estimate_effect_differences(&data, &folds, &[1.0], &config)?;
        Ok(fit.confounding.maximizer != Some(0))
    });
    let mut tie_count = 0usize;
    for m in tie_miss {
        tie_count += usize::from(m?);
    }
    out.push("tie_gap", (td[0].abs() - td[1].abs()).abs());
    out.push("tie_misselection", tie_count as f64 / tie_reps as f64);
    out.runtime_seconds = started.elapsed().as_secs_f64();
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct Gamma0CoverageOptions {
    pub n: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub folds: usize,
    pub seed: u64,
}

impl Default for Gamma0CoverageOptions {
    fn default() -> Self {
        Gamma0CoverageOptions { n: 2000, replicates: 300, alpha: 0.05, folds: 5, seed: 1414 }
    }
}

/// Coverage of the closed-form robustness value's Wald interval on a DGP
/// with enumerable Gamma_0 = |psi| / M.
pub fn run_gamma0_coverage(opts: &Gamma0CoverageOptions) -> Result<ExperimentResult> {
    let started = Instant::now();
    let dgp = coverage_dgp();
    let (psi, _deltas, m_true, _j) = effect_diff_truth(&dgp);
    let gamma0_true = psi.abs() / m_true;
    let config = NuisanceConfig::default();
    let ropts = RobustnessOptions::default();

    let hits: Vec<Result<bool>> = par_map(opts.replicates, |r| {
        let rs = replicate_seed(opts.seed, r);
        let data = dgp.sample(opts.n, rs)?;
        let folds = make_folds(opts.n, opts.folds, rs ^ 0x5EED)?;
        let fit = estimate_effect_differences(&data, &folds, &[1.0], &config)?;
        let rv = robustness_value(&fit, &ropts)?;
        let (lo, hi) = rv.ci(opts.alpha);
        Ok(lo <= gamma0_true && gamma0_true <= hi)
    });
    let mut covered = 0usize;
    for h in hits {
        covered += usize::from(h?);
    }
    let coverage = covered as f64 / opts.replicates as f64;
    let mut out = ExperimentResult {
        name: "gamma0-coverage".into(),
        seeds: (0..opts.replicates).map(|r| replicate_seed(opts.seed, r)).collect(),
        underpowered: opts.replicates < 100,
        ..Default::default()
    };
    out.push("gamma0_true", gamma0_true);
    out.push("coverage", coverage);
    out.check(
        "robustness-value coverage in [0.92, 0.99]",
        (0.92..=0.99).contains(&coverage),
        format!("coverage {coverage:.3} at n = {}", opts.n),
    );
    out.runtime_seconds = started.elapsed().as_secs_f64();
    Ok(out)
}

/// Grid classification of the over/under-robustness regimes: the closed
/// variance-ratio formula against its definition, and the under-estimation
/// region being exactly {rho < 0 and RRSE < -2 rho}.
pub fn run_regime_map() -> Result<ExperimentResult> {
    let started = Instant::now();
    let mut out = ExperimentResult { name: "regime-map".into(), ..Default::default() };
    out.table_header = vec![
        "rho".into(),
        "rrse".into(),
        "variance_ratio".into(),
        "under_estimates".into(),
    ];
    let mut all_match = true;
    let mut boundary_ok = true;
    for i in 0..=40 {
        let rho = -1.0 + 0.05 * i as f64;
        for j in 1..=30 {
            let rrse = 0.1 * j as f64;
            let class = classify_regime(rho, rrse);
            let expected_under = rho < 0.0 && rrse < -2.0 * rho;
            let is_under = class == RegimeClass::UnderEstimates;
            if is_under != expected_under && class != RegimeClass::Boundary {
                all_match = false;
            }
            // exact boundary: ratio = 1 when rrse = -2 rho
            if (rrse + 2.0 * rho).abs() < 1e-12 {
                let ratio = crate::inference::variance_ratio(rho, rrse);
                if (ratio - 1.0).abs() > 1e-12 {
                    boundary_ok = false;
                }
            }
            out.table_rows.push(vec![
                rho,
                rrse,
                crate::inference::variance_ratio(rho, rrse),
                f64::from(is_under),
            ]);
        }
    }
    out.check(
        "under-estimation region is exactly {rho<0, RRSE<-2rho}",
        all_match,
        "grid classification against the closed-form region".into(),
    );
    out.check("boundary RRSE = -2 rho gives ratio exactly 1", boundary_ok, String::new());
    out.runtime_seconds = started.elapsed().as_secs_f64();
    Ok(out)
}

/// Exact remainder identities on a finite-support DGP:
/// E[xi(pi-bar)] - ||pi||^2 = -E[(pi-bar - pi)^2] to 1e-10 for random
/// perturbations, and the lambda remainder shrinking at rate h^2.
pub fn run_remainder_identities(seed: u64) -> Result<ExperimentResult> {
    let started = Instant::now();
    let dgp = coverage_dgp();
    let mut out =
        ExperimentResult { name: "remainder-identities".into(), seeds: vec![seed], ..Default::default() };

    // xi: perturb the propensity cellwise, compare exactly by enumeration
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arm = 1u8;
    let pi_norm_sq = dgp.pi_norm_sq(arm);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let shifts: Vec<f64> = (0..dgp.cells.len()).map(|_| 0.4 * (rng.gen::<f64>() - 0.5)).collect();
        let cells = dgp.cells.clone();
        let perturbed = move |x: &[f64]| -> f64 {
            let c = cells
                .iter()
                .position(|c| c.x == x)
                .expect("x off the support");
            (if arm == 1 { cells[c].p_treat } else { 1.0 - cells[c].p_treat }) + shifts[c]
        };
        let prop =
            crate::nuisance::PropensityRule::from_fn(perturbed.clone(), 0.0);
        let lhs = dgp.expectation(|x, a, _| eif::xi(x, a, arm, &prop)) - pi_norm_sq;
        let rhs = -dgp.expectation(|x, _, _| {
            let truth = dgp
                .cells
                .iter()
                .find(|c| c.x == x)
                .map(|c| if arm == 1 { c.p_treat } else { 1.0 - c.p_treat })
                .unwrap();
            let bar = perturbed(x);
            (bar - truth) * (bar - truth)
        });
        worst = worst.max((lhs - rhs).abs());
    }
    out.push("xi_worst_identity_error", worst);
    out.check(
        "xi remainder identity exact to 1e-10",
        worst <= 1e-10,
        format!("worst |lhs - rhs| = {worst:.3e}"),
    );

    // lambda: perturb all five nuisances at scale h; the enumeration bias
    // must shrink like h^2. Full cells index as x1*2 + x2; the subset
    // retains column x2, indexing by its bit.
    let retained = vec![1usize]; // S = {x1}
    let arm = 1u8;
    let truth = dgp.subset_truth(&retained);
    let lam_target = dgp.lambda_norm(arm, &retained);
    let dirs: Vec<[f64; 5]> = (0..dgp.cells.len())
        .map(|_| {
            let mut d = [0.0; 5];
            for v in &mut d {
                *v = rng.gen::<f64>() - 0.5;
            }
            d
        })
        .collect();
    let mu_full_true = dgp.true_outcome(arm);
    let prop_full_true = dgp.true_propensity();
    let mu_sub_base = [truth.outcome(arm).predict(&[0.0]), truth.outcome(arm).predict(&[1.0])];
    let prop_sub_base = {
        let p = truth.propensity();
        [p.prob_treated(&[0.0]), p.prob_treated(&[1.0])]
    };
    let pseudo_base =
        [truth.cross_outcome(arm).predict(&[0.0]), truth.cross_outcome(arm).predict(&[1.0])];
    let mu_full_base: Vec<f64> = dgp.cells.iter().map(|c| mu_full_true.predict(&c.x)).collect();
    let prop_full_base: Vec<f64> =
        dgp.cells.iter().map(|c| prop_full_true.prob_treated(&c.x)).collect();

    let mut errors = Vec::new();
    let hs = [0.1, 0.05, 0.025];
    for &h in &hs {
        let on_full = |pick: usize, base: Vec<f64>| {
            let dirs = dirs.clone();
            move |x: &[f64]| {
                let i = usize::from(x[0] != 0.0) * 2 + usize::from(x[1] != 0.0);
                base[i] + h * dirs[i][pick]
            }
        };
        let on_sub = |pick: usize, base: [f64; 2]| {
            let dirs = dirs.clone();
            move |x: &[f64]| {
                let i = usize::from(x[0] != 0.0);
                base[i] + h * dirs[i][pick]
            }
        };
        let nuis = LambdaNuisances {
            arm,
            mu_full: crate::nuisance::OutcomeRule::from_fn(on_full(0, mu_full_base.clone())),
            mu_sub: crate::nuisance::OutcomeRule::from_fn(on_sub(1, mu_sub_base)),
            prop_full: crate::nuisance::PropensityRule::from_fn(
                on_full(2, prop_full_base.clone()),
                0.0,
            ),
            prop_sub: crate::nuisance::PropensityRule::from_fn(on_sub(3, prop_sub_base), 0.0),
            pseudo: crate::nuisance::OutcomeRule::from_fn(on_sub(4, pseudo_base)),
        };
        let mean_lambda = dgp.expectation(|x, a, y| {
            let x_sub = [x[1]];
            eif::lambda(x, &x_sub, a, y, &nuis)
        });
        errors.push((mean_lambda - lam_target).abs());
    }
    // least-squares slope of log error on log h
    let lx: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let slope = stats::covariance(&lx, &ly) / stats::variance(&lx);
    out.push("lambda_loglog_slope", slope);
    for (h, e) in hs.iter().zip(&errors) {
        out.push(&format!("lambda_abs_bias_h_{h}"), *e);
    }
    out.check(
        "lambda remainder log-log slope in [1.8, 2.2]",
        (1.8..=2.2).contains(&slope),
        format!("slope {slope:.3}, biases {errors:?}"),
    );
    out.runtime_seconds = started.elapsed().as_secs_f64();
    Ok(out)
}

/// Run a named experiment with optional `key=value` overrides
/// (n, reps, seed). Unknown names list the catalogue.
pub fn run_experiment(name: &str, overrides: &[(String, f64)]) -> Result<ExperimentResult> {
    let get = |key: &str| overrides.iter().find(|(k, _)| k == key).map(|&(_, v)| v);
    let seed = get("seed").map(|v| v as u64);
    match name {
        "example-1" => run_example1(
            get("n").map(|v| v as usize).unwrap_or(100_000),
            seed.unwrap_or(424242),
        ),
        "example-2" => run_example2(
            get("n").map(|v| v as usize).unwrap_or(100_000),
            seed.unwrap_or(434343),
        ),
        "coverage-effect-diff" => {
            let mut opts = CoverageOptions::default();
            if let Some(n) = get("n") {
                opts.n = n as usize;
            }
            if let Some(r) = get("reps") {
                opts.replicates = r as usize;
            }
            if let Some(s) = seed {
                opts.seed = s;
            }
            run_coverage(&opts)
        }
        "argmax-selection" => {
            let mut opts = ArgmaxOptions::default();
            if let Some(r) = get("reps") {
                opts.replicates = r as usize;
            }
            if let Some(s) = seed {
                opts.seed = s;
            }
            run_argmax_selection(&opts)
        }
        "gamma0-coverage" => {
            let mut opts = Gamma0CoverageOptions::default();
            if let Some(n) = get("n") {
                opts.n = n as usize;
            }
            if let Some(r) = get("reps") {
                opts.replicates = r as usize;
            }
            if let Some(s) = seed {
                opts.seed = s;
            }
            run_gamma0_coverage(&opts)
        }
        "regime-map" => run_regime_map(),
        "remainder-identities" => run_remainder_identities(seed.unwrap_or(777)),
        other => Err(Error::Config(format!(
            "unknown experiment '{other}'; available: example-1, example-2, \
             coverage-effect-diff, argmax-selection, gamma0-coverage, regime-map, \
             remainder-identities"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_experiment_lists_names() {
        let err = run_experiment("nope", &[]).unwrap_err();
        assert!(err.to_string().contains("regime-map"), "{err}");
    }

    #[test]
    fn regime_map_grid_classifies_exactly() {
        let out = run_regime_map().unwrap();
        assert!(out.all_pass());
    }

    #[test]
    fn smoke_coverage_is_flagged_underpowered() {
        let opts = CoverageOptions { n: 400, replicates: 10, ..Default::default() };
        let out = run_coverage(&opts).unwrap();
        assert!(out.underpowered);
    }
}
