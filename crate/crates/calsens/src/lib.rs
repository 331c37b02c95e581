//! Calibrated sensitivity analysis for the average treatment effect.
//!
//! A sensitivity analysis bounds the causal bias of an observational study
//! by a sensitivity parameter; a *calibrated* sensitivity analysis bounds it
//! by a multiple Gamma of *measured* confounding, estimated by leaving
//! observed covariates out of the adjustment set. This crate estimates the
//! resulting bounds on the ATE under three such models
//!
//! * maximum leave-one-out effect differences,
//! * maximum leave-one-out propensity-score odds ratio, and
//! * average leave-some-out L2 outcome-regression differences,
//!
//! with cross-fitted influence-function estimators whose confidence
//! intervals carry the uncertainty from estimating measured confounding, a
//! robustness-value Z-estimator (the smallest Gamma at which the bounds
//! straddle zero), and a Monte Carlo lab that checks the estimators'
//! coverage, remainder identities, and argmax-selection behaviour at desk
//! scale.
//!
//! Replicate-level loops (bootstrap, coverage experiments, per-Gamma fits)
//! run data-parallel through [`parallel::par_map`]; compile with
//! `--no-default-features` for the sequential fallback.

pub mod data;
pub mod eif;
pub mod error;
pub mod inference;
pub mod models;
pub mod nuisance;
pub mod parallel;
pub mod simlab;
pub mod stats;

pub use error::{Error, Result};
