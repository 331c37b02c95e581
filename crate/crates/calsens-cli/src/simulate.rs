//! The simulate subcommand: run a named Monte Carlo experiment and write
//! its results plus pass/fail lines against the experiment's thresholds.

use std::path::PathBuf;

use calsens::error::Error;
use calsens::simlab::run_experiment;
use clap::Args;

#[derive(Args, Clone)]
pub struct SimulateArgs {
    /// Experiment name: example-1, example-2, coverage-effect-diff,
    /// argmax-selection, gamma0-coverage, regime-map, remainder-identities
    pub name: String,
    /// Override an experiment parameter, e.g. --set reps=10 --set n=500
    #[arg(long = "set", value_parser = parse_kv)]
    pub set: Vec<(String, f64)>,
    /// Cap worker threads (0 = library default)
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Output directory
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn parse_kv(text: &str) -> Result<(String, f64), String> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got '{text}'"))?;
    let value: f64 = v.parse().map_err(|_| format!("non-numeric value in '{text}'"))?;
    Ok((k.trim().to_string(), value))
}

pub fn run(args: &SimulateArgs) -> Result<(), Error> {
    let result = run_experiment(&args.name, &args.set)?;
    std::fs::create_dir_all(&args.out)?;
    let stem = args.name.replace([' ', '/'], "-");
    result.write_csv(&args.out.join(format!("{stem}.csv")))?;
    result.write_summary(&args.out.join(format!("{stem}_summary.txt")))?;

    println!("experiment: {}", result.name);
    if result.underpowered {
        println!("NOTE: underpowered smoke run; thresholds are not meaningful");
    }
    for (k, v) in &result.stats {
        println!("  {k} = {v}");
    }
    for c in &result.checks {
        println!("  [{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("results written to {}", args.out.display());
    Ok(())
}
