//! calsens: calibrated sensitivity analysis for the average treatment
//! effect. Subcommands: `analyze` (bounds, intervals, robustness value,
//! regime record from a CSV), `simulate` (named Monte Carlo experiments),
//! and `robustness` (the one-number summary alone).
//!
//! Exit codes: 0 success, 2 validation/config error, 3 degenerate analysis
//! (no crossing or zero measured confounding), 4 numerical failure.

mod analyze;
mod config;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use calsens::error::Error;
use calsens::inference::{CrossingSide, Gamma0Method};
use calsens::parallel::with_thread_cap;
use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "calsens", version, about = "Calibrated sensitivity analysis for the ATE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML config with [data], [model], [nuisance], [inference] sections
    #[arg(long)]
    config: PathBuf,
    /// Sensitivity model: effect-diff | odds | outcome
    #[arg(long)]
    model: Option<String>,
    /// Gamma grid as a:b:step or a comma list
    #[arg(long)]
    gamma_grid: Option<String>,
    /// Interval level (two-sided alpha)
    #[arg(long)]
    alpha: Option<f64>,
    /// Cross-fitting fold count
    #[arg(long)]
    folds: Option<usize>,
    /// RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Propensity truncation bound
    #[arg(long)]
    epsilon: Option<f64>,
    /// Bootstrap settings B,m (m = 0 uses the full sample size)
    #[arg(long)]
    bootstrap: Option<String>,
    /// Cap worker threads (0 = library default)
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate bounds, intervals, the robustness value, and the regime
    /// record; write the confounder table and bound-curve CSVs
    Analyze(CommonArgs),
    /// Run a named Monte Carlo experiment (see `simulate --help` for names)
    Simulate(simulate::SimulateArgs),
    /// Estimate the robustness value only
    Robustness(CommonArgs),
}

fn overrides_of(args: &CommonArgs) -> Overrides {
    Overrides {
        model: args.model.clone(),
        gamma_grid: args.gamma_grid.clone(),
        alpha: args.alpha,
        folds: args.folds,
        seed: args.seed,
        epsilon: args.epsilon,
        bootstrap: args.bootstrap.clone(),
    }
}

fn load_config(args: &CommonArgs) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply(&overrides_of(args));
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Analyze(args) => with_thread_cap(args.threads, || run_analyze_cmd(&args)),
        Command::Simulate(args) => with_thread_cap(args.threads, || simulate::run(&args)),
        Command::Robustness(args) => with_thread_cap(args.threads, || run_robustness_cmd(&args)),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // machine-readable error record on stderr
            let record = serde_json::json!({
                "error": e.to_string(),
                "exit_code": e.exit_code(),
            });
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run_analyze_cmd(args: &CommonArgs) -> Result<(), Error> {
    let cfg = load_config(args)?;
    let out = analyze::run_analyze(&cfg, &args.out)?;
    println!("model: {}", out.model);
    for row in &out.report.rows {
        println!(
            "gamma {:>6}: bounds [{:.6}, {:.6}]  band [{:.6}, {:.6}]",
            row.gamma, row.lower, row.upper, row.band.0, row.band.1
        );
    }
    match (&out.robustness, &out.robustness_error) {
        (Some(rv), _) => println!("robustness value: {:.6} (se {:.6})", rv.gamma0, rv.se),
        (None, Some(msg)) => println!("robustness value unavailable: {msg}"),
        _ => {}
    }
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    println!("artifacts written to {}", args.out.display());
    Ok(())
}

fn run_robustness_cmd(args: &CommonArgs) -> Result<(), Error> {
    let cfg = load_config(args)?;
    let rv = analyze::run_robustness(&cfg, &args.out)?;
    let (lo, hi) = rv.ci(cfg.inference.alpha);
    println!(
        "gamma0 = {:.8} (se {:.8}, {}% CI [{:.6}, {:.6}])",
        rv.gamma0,
        rv.se,
        100.0 * (1.0 - cfg.inference.alpha),
        lo,
        hi
    );
    println!(
        "method: {}; crossing side: {}; |Psi(gamma0)| = {:.3e}",
        match rv.method {
            Gamma0Method::ClosedForm => "closed-form",
            Gamma0Method::ZRoot => "z-root",
        },
        match rv.crossing {
            CrossingSide::Upper => "upper",
            CrossingSide::Lower => "lower",
        },
        rv.psi_residual
    );
    Ok(())
}
