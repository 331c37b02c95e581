//! The analyze pipeline: ingest a CSV, estimate measured confounding and
//! the bound curve under the chosen model, build calibrated and post hoc
//! intervals, the robustness value, and the regime record, and write
//! everything as plot-ready CSV/JSON stamped with the config hash.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use calsens::data::{load_csv, make_folds, Dataset};
use calsens::error::{Error, Result};
use calsens::inference::{
    bootstrap_variance, regime_analysis, robustness_value, wald_intervals,
    wald_intervals_with_se, BootstrapOptions, BootstrapStat, CrossingSide, Gamma0Method,
    IntervalReport, RobustnessOptions, RobustnessValue,
};
use calsens::models::{
    estimate_effect_differences, estimate_odds_ratio, estimate_outcome_model, BoundModel,
    MeasuredConfounding, ModelKind,
};
use calsens::nuisance::NuisanceConfig;

use crate::config::RunConfig;

pub struct AnalysisOutput {
    pub model: ModelKind,
    pub report: IntervalReport,
    pub robustness: Option<RobustnessValue>,
    pub robustness_error: Option<String>,
    pub warnings: Vec<String>,
}

/// A fitted model plus everything the writers need.
struct FittedModel {
    model: Box<dyn BoundModel>,
    warnings: Vec<String>,
}

fn resolve_family(config: &RunConfig, data: &Dataset) -> Result<Vec<BTreeSet<usize>>> {
    if config.model.family.is_empty() {
        // leave-one-out over covariate groups
        return Ok(data.groups().iter().map(|g| g.cols.iter().copied().collect()).collect());
    }
    let mut family = Vec::new();
    for names in &config.model.family {
        let mut cols = BTreeSet::new();
        for name in names {
            let group = data
                .groups()
                .iter()
                .find(|g| &g.label == name)
                .ok_or_else(|| Error::Config(format!("family names unknown covariate '{name}'")))?;
            cols.extend(group.cols.iter().copied());
        }
        family.push(cols);
    }
    Ok(family)
}

fn fit_model(
    config: &RunConfig,
    data: &Dataset,
    nuisance: &NuisanceConfig,
    grid: &[f64],
    seed: u64,
) -> Result<FittedModel> {
    let folds = make_folds(data.n(), config.inference.folds, seed)?;
    match config.model.kind.as_str() {
        "effect-diff" => {
            let fit = estimate_effect_differences(data, &folds, grid, nuisance)?;
            Ok(FittedModel { model: Box::new(fit), warnings: Vec::new() })
        }
        "odds" => {
            let (scaled, _ranges) = data.minmax_rescale()?;
            let fit = estimate_odds_ratio(&scaled, &folds, grid, nuisance)?;
            let warnings = fit.warnings.clone();
            Ok(FittedModel { model: Box::new(fit), warnings })
        }
        "outcome" => {
            let family = resolve_family(config, data)?;
            let fit = estimate_outcome_model(data, &folds, &family, grid, nuisance)?;
            let warnings = fit.warnings.clone();
            Ok(FittedModel { model: Box::new(fit), warnings })
        }
        other => Err(Error::Config(format!(
            "unknown model '{other}' (use effect-diff, odds, or outcome)"
        ))),
    }
}

pub fn run_analyze(config: &RunConfig, out_dir: &Path) -> Result<AnalysisOutput> {
    std::fs::create_dir_all(out_dir)?;
    let data = load_csv(&config.data.path, &config.csv_schema())?;
    let nuisance = config.nuisance_config()?;
    let grid = config.gamma_grid()?;
    let seed = config.inference.seed;
    let alpha = config.inference.alpha;
    let hash = config.hash();

    let fitted = fit_model(config, &data, &nuisance, &grid, seed)?;
    let model = &*fitted.model;
    let mut warnings = fitted.warnings.clone();

    // variance source: influence for effect-diff/outcome; bootstrap for the
    // odds model by default, since its plug-in variance leans on many
    // fitted nuisances
    let variance = match config.inference.variance.as_str() {
        "auto" => {
            if model.kind() == ModelKind::OddsRatio {
                "bootstrap"
            } else {
                "influence"
            }
        }
        v @ ("influence" | "bootstrap") => v,
        other => {
            return Err(Error::Config(format!(
                "unknown variance source '{other}' (use auto, influence, or bootstrap)"
            )))
        }
    };

    let report = if variance == "bootstrap" {
        let (b, m) = config.bootstrap_settings()?;
        let opts = BootstrapOptions { replicates: b, resample_size: m, seed: seed ^ 0xB007 };
        let cfg_clone = config.clone();
        let grid_clone = grid.clone();
        let nuis = nuisance;
        let boot = bootstrap_variance(&data, &opts, move |resampled, rep_seed| {
            let fitted = fit_model(&cfg_clone, resampled, &nuis, &grid_clone, rep_seed)?;
            let curve = fitted.model.curve();
            Ok(BootstrapStat {
                bounds: curve.points.iter().map(|p| (p.lower, p.upper)).collect(),
                m_hat: fitted.model.confounding().value,
            })
        })?;
        if boot.failures > 0 {
            warnings.push(format!("{} bootstrap replicates failed", boot.failures));
        }
        wald_intervals_with_se(model.curve(), alpha, &boot.se_bounds())?
    } else {
        wald_intervals(model.curve(), alpha)?
    };
    warnings.extend(report.warnings.clone());

    // robustness value; a no-crossing outcome is recorded, not fatal
    let (robustness, robustness_error) =
        match robustness_value(model, &RobustnessOptions::default()) {
            Ok(rv) => (Some(rv), None),
            Err(Error::Degenerate(msg)) => (None, Some(msg)),
            Err(e) => return Err(e),
        };

    write_confounder_table(out_dir, &hash, seed, model.confounding(), alpha)?;
    write_bound_curve(out_dir, &hash, seed, model, &report)?;
    write_regime(out_dir, &hash, seed, model)?;
    write_robustness(out_dir, &hash, seed, &robustness, &robustness_error, alpha)?;
    write_manifest(out_dir, &hash, config, &warnings)?;

    Ok(AnalysisOutput {
        model: model.kind(),
        report,
        robustness,
        robustness_error,
        warnings,
    })
}

fn write_confounder_table(
    dir: &Path,
    hash: &str,
    seed: u64,
    confounding: &MeasuredConfounding,
    alpha: f64,
) -> Result<()> {
    let mut f = std::fs::File::create(dir.join("confounder_table.csv"))?;
    writeln!(f, "# config_hash={hash} seed={seed}")?;
    writeln!(f, "variable,estimate,lower,upper")?;
    for (label, est, lo, hi) in confounding.table(alpha) {
        writeln!(f, "{label},{est},{lo},{hi}")?;
    }
    Ok(())
}

fn write_bound_curve(
    dir: &Path,
    hash: &str,
    seed: u64,
    model: &dyn BoundModel,
    report: &IntervalReport,
) -> Result<()> {
    let m_hat = model.confounding().value;
    let mut f = std::fs::File::create(dir.join("bound_curve.csv"))?;
    writeln!(f, "# config_hash={hash} seed={seed}")?;
    writeln!(
        f,
        "gamma,gamma_raw,lower,upper,lb_calibrated,ub_calibrated,lb_posthoc,ub_posthoc"
    )?;
    for row in &report.rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            row.gamma,
            row.gamma * m_hat,
            row.lower,
            row.upper,
            row.band.0,
            row.band.1,
            row.band_std.0,
            row.band_std.1
        )?;
    }
    Ok(())
}

fn write_regime(dir: &Path, hash: &str, seed: u64, model: &dyn BoundModel) -> Result<()> {
    let conf = model.confounding();
    let m_hat = conf.value;
    let curve = model.curve();
    // per grid point: the post hoc bound influence at that point against
    // the measured-confounding influence
    let mut rows = Vec::new();
    for p in &curve.points {
        if p.gamma <= 0.0 {
            continue;
        }
        let rep = regime_analysis(&p.if_upper_std, &conf.influence, m_hat, &[p.gamma * m_hat])?;
        let pt = rep.points[0];
        rows.push(serde_json::json!({
            "gamma": p.gamma,
            "gamma_raw": pt.gamma_raw,
            "rho": pt.rho,
            "rrse": pt.rrse,
            "variance_ratio": pt.variance_ratio,
            "classification": pt.class.to_string(),
        }));
    }
    let record = serde_json::json!({
        "config_hash": hash,
        "seed": seed,
        "m_hat": m_hat,
        "points": rows,
    });
    std::fs::write(dir.join("regime.json"), serde_json::to_string_pretty(&record).expect("json serializes") + "\n")?;
    Ok(())
}

fn write_robustness(
    dir: &Path,
    hash: &str,
    seed: u64,
    rv: &Option<RobustnessValue>,
    err: &Option<String>,
    alpha: f64,
) -> Result<()> {
    let record = match rv {
        Some(rv) => {
            let (lo, hi) = rv.ci(alpha);
            serde_json::json!({
                "config_hash": hash,
                "seed": seed,
                "gamma0": rv.gamma0,
                "se": rv.se,
                "ci_lower": lo,
                "ci_upper": hi,
                "crossing": match rv.crossing {
                    CrossingSide::Upper => "upper",
                    CrossingSide::Lower => "lower",
                },
                "method": match rv.method {
                    Gamma0Method::ClosedForm => "closed-form",
                    Gamma0Method::ZRoot => "z-root",
                },
                "psi_residual": rv.psi_residual,
            })
        }
        None => serde_json::json!({
            "config_hash": hash,
            "seed": seed,
            "error": err.clone().unwrap_or_default(),
        }),
    };
    std::fs::write(dir.join("robustness.json"), serde_json::to_string_pretty(&record).expect("json serializes") + "\n")?;
    Ok(())
}

fn write_manifest(
    dir: &Path,
    hash: &str,
    config: &RunConfig,
    warnings: &[String],
) -> Result<()> {
    let record = serde_json::json!({
        "config_hash": hash,
        "seed": config.inference.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "model": config.model.kind,
        "warnings": warnings,
    });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&record).expect("json serializes") + "\n")?;
    Ok(())
}

/// Robustness-only run: fit the model and report the robustness value.
pub fn run_robustness(config: &RunConfig, out_dir: &Path) -> Result<RobustnessValue> {
    std::fs::create_dir_all(out_dir)?;
    let data = load_csv(&config.data.path, &config.csv_schema())?;
    let nuisance = config.nuisance_config()?;
    let grid = config.gamma_grid()?;
    let fitted = fit_model(config, &data, &nuisance, &grid, config.inference.seed)?;
    let rv = robustness_value(&*fitted.model, &RobustnessOptions::default())?;
    let hash = config.hash();
    write_robustness(
        out_dir,
        &hash,
        config.inference.seed,
        &Some(rv.clone()),
        &None,
        config.inference.alpha,
    )?;
    Ok(rv)
}
