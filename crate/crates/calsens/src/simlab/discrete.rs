//! Finite-support data generating processes with exact enumeration.
//!
//! Every functional the estimators target (adjusted mean differences,
//! propensity norms, leave-out outcome norms, odds-ratio bounds) has a
//! closed evaluation on a finite support, by summing over cells and
//! outcome atoms. These exact values are the independent oracles the
//! estimator tests and remainder-identity checks compare against.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nuisance::{OutcomeRule, PropensityRule};
use crate::stats::bisect;

/// One covariate cell: its coordinates, marginal probability, treatment
/// probability, and per-arm outcome distribution.
#[derive(Debug, Clone)]
pub struct DiscreteCell {
    pub x: Vec<f64>,
    pub prob: f64,
    pub p_treat: f64,
    /// Outcome atoms [(y, prob)] indexed by arm.
    pub y_dist: [Vec<(f64, f64)>; 2],
}

/// A finite-support joint distribution of (X, A, Y).
#[derive(Debug, Clone)]
pub struct DiscreteDgp {
    pub cells: Vec<DiscreteCell>,
    pub names: Vec<String>,
}

fn key_of(x: &[f64], cols: &[usize]) -> Vec<u64> {
    cols.iter().map(|&c| x[c].to_bits()).collect()
}

impl DiscreteDgp {
    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.cells.iter().map(|c| c.prob).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("cell probabilities sum to {total}")));
        }
        for c in &self.cells {
            if !(0.0..=1.0).contains(&c.p_treat) {
                return Err(Error::Validation("treatment probability outside [0,1]".into()));
            }
            for arm in 0..2 {
                let s: f64 = c.y_dist[arm].iter().map(|&(_, p)| p).sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(Error::Validation(format!("outcome atoms sum to {s}")));
                }
            }
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.names.len()
    }

    /// Exact E[f(X, A, Y)].
    pub fn expectation<F: Fn(&[f64], u8, f64) -> f64>(&self, f: F) -> f64 {
        let mut acc = 0.0;
        for c in &self.cells {
            for arm in 0..2u8 {
                let pa = if arm == 1 { c.p_treat } else { 1.0 - c.p_treat };
                for &(y, py) in &c.y_dist[arm as usize] {
                    acc += c.prob * pa * py * f(&c.x, arm, y);
                }
            }
        }
        acc
    }

    /// E(Y | A = arm, X = cell).
    pub fn mu_cell(&self, cell: &DiscreteCell, arm: u8) -> f64 {
        cell.y_dist[arm as usize].iter().map(|&(y, p)| y * p).sum()
    }

    /// True propensity as a prediction rule on the full covariates.
    pub fn true_propensity(&self) -> PropensityRule {
        let table: BTreeMap<Vec<u64>, f64> = self
            .cells
            .iter()
            .map(|c| (key_of(&c.x, &(0..self.d()).collect::<Vec<_>>()), c.p_treat))
            .collect();
        let d = self.d();
        PropensityRule::from_fn(
            move |x: &[f64]| {
                let key: Vec<u64> = (0..d).map(|j| x[j].to_bits()).collect();
                *table.get(&key).expect("x off the support")
            },
            0.0,
        )
    }

    /// True outcome regression for one arm on the full covariates.
    pub fn true_outcome(&self, arm: u8) -> OutcomeRule {
        let d = self.d();
        let table: BTreeMap<Vec<u64>, f64> = self
            .cells
            .iter()
            .map(|c| (key_of(&c.x, &(0..d).collect::<Vec<_>>()), self.mu_cell(c, arm)))
            .collect();
        OutcomeRule::from_fn(move |x: &[f64]| {
            let key: Vec<u64> = (0..d).map(|j| x[j].to_bits()).collect();
            *table.get(&key).expect("x off the support")
        })
    }

    /// Exact conditionals on a retained-column subset, as lookup rules:
    /// (pi_1(x_sub), mu_0(x_sub), mu_1(x_sub), E{mu_a(X)|A=1-a, x_sub} per arm).
    pub fn subset_truth(&self, retained: &[usize]) -> SubsetTruth {
        #[derive(Default, Clone)]
        struct Acc {
            p: f64,
            p_a1: f64,
            mu_num: [f64; 2],
            // numerators of E{mu_a(X) | A = 1-a, x_sub}
            cross_num: [f64; 2],
        }
        let mut map: BTreeMap<Vec<u64>, Acc> = BTreeMap::new();
        for c in &self.cells {
            let e = map.entry(key_of(&c.x, retained)).or_default();
            e.p += c.prob;
            e.p_a1 += c.prob * c.p_treat;
            for arm in 0..2usize {
                let pa = if arm == 1 { c.p_treat } else { 1.0 - c.p_treat };
                let po = 1.0 - pa;
                let mu = self.mu_cell(c, arm as u8);
                e.mu_num[arm] += c.prob * pa * mu;
                e.cross_num[arm] += c.prob * po * mu;
            }
        }
        let table: BTreeMap<Vec<u64>, SubsetCellTruth> = map
            .into_iter()
            .map(|(k, a)| {
                let pi1 = a.p_a1 / a.p;
                let mu = [
                    a.mu_num[0] / ((1.0 - pi1) * a.p),
                    a.mu_num[1] / (pi1 * a.p),
                ];
                let cross = [
                    a.cross_num[0] / (pi1 * a.p),
                    a.cross_num[1] / ((1.0 - pi1) * a.p),
                ];
                (k, SubsetCellTruth { prob: a.p, pi1, mu, cross })
            })
            .collect();
        SubsetTruth { retained: retained.to_vec(), table }
    }

    /// Adjusted mean difference for a retained-column subset.
    pub fn psi(&self, retained: &[usize]) -> f64 {
        let truth = self.subset_truth(retained);
        truth.table.values().map(|t| t.prob * (t.mu[1] - t.mu[0])).sum()
    }

    pub fn psi_full(&self) -> f64 {
        self.psi(&(0..self.d()).collect::<Vec<_>>())
    }

    /// ||pi_arm(X)||_2^2 exactly.
    pub fn pi_norm_sq(&self, arm: u8) -> f64 {
        self.cells
            .iter()
            .map(|c| {
                let p = if arm == 1 { c.p_treat } else { 1.0 - c.p_treat };
                c.prob * p * p
            })
            .sum()
    }

    /// ||mu_a(X_sub) - E{mu_a(X) | A = 1-a, X_sub}||_2^2 exactly, with the
    /// subset given by retained columns.
    pub fn lambda_norm(&self, arm: u8, retained: &[usize]) -> f64 {
        let truth = self.subset_truth(retained);
        truth
            .table
            .values()
            .map(|t| {
                let gap = t.mu[arm as usize] - t.cross[arm as usize];
                t.prob * gap * gap
            })
            .sum()
    }

    /// Exact threshold solution theta_arm(cell; moment multiplier s) per
    /// cell by bisection on the conditional moment, which is continuous and
    /// strictly decreasing in theta.
    pub fn theta_cell(&self, cell: &DiscreteCell, arm: u8, s: f64) -> f64 {
        let atoms = &cell.y_dist[arm as usize];
        let lo = atoms.iter().map(|&(y, _)| y).fold(f64::INFINITY, f64::min);
        let hi = atoms.iter().map(|&(y, _)| y).fold(f64::NEG_INFINITY, f64::max);
        if (hi - lo).abs() < 1e-15 {
            return lo;
        }
        let moment = |theta: f64| -> f64 {
            atoms.iter().map(|&(y, p)| p * crate::nuisance::eval_omega(y, theta, s)).sum()
        };
        bisect(moment, lo, hi, 1e-14).expect("conditional moment must cross zero")
    }

    /// Draw n observations.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.d();
        let mut x = Vec::with_capacity(n * d);
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let mut u: f64 = rng.gen();
            let mut cell = &self.cells[self.cells.len() - 1];
            for c in &self.cells {
                if u < c.prob {
                    cell = c;
                    break;
                }
                u -= c.prob;
            }
            let arm = u8::from(rng.gen::<f64>() < cell.p_treat);
            let mut v: f64 = rng.gen();
            let atoms = &cell.y_dist[arm as usize];
            let mut yv = atoms[atoms.len() - 1].0;
            for &(yy, p) in atoms {
                if v < p {
                    yv = yy;
                    break;
                }
                v -= p;
            }
            x.extend_from_slice(&cell.x);
            a.push(arm);
            y.push(yv);
        }
        Dataset::new(x, a, y, self.names.clone())
    }
}

/// Exact conditionals for one subset cell.
#[derive(Debug, Clone)]
pub struct SubsetCellTruth {
    pub prob: f64,
    pub pi1: f64,
    /// mu_a(x_sub) indexed by arm.
    pub mu: [f64; 2],
    /// E{mu_a(X) | A = 1-a, x_sub} indexed by arm a.
    pub cross: [f64; 2],
}

/// Exact conditionals on a retained-column subset, keyed by covariate bits.
#[derive(Debug, Clone)]
pub struct SubsetTruth {
    retained: Vec<usize>,
    pub table: BTreeMap<Vec<u64>, SubsetCellTruth>,
}

impl SubsetTruth {
    fn lookup(&self, x_sub: &[f64]) -> &SubsetCellTruth {
        let key: Vec<u64> = x_sub.iter().map(|v| v.to_bits()).collect();
        self.table.get(&key).expect("x off the support")
    }

    /// pi_1 on the subset coordinates as a rule.
    pub fn propensity(&self) -> PropensityRule {
        let this = self.clone();
        PropensityRule::from_fn(move |x: &[f64]| this.lookup(x).pi1, 0.0)
    }

    /// mu_arm on the subset coordinates as a rule.
    pub fn outcome(&self, arm: u8) -> OutcomeRule {
        let this = self.clone();
        OutcomeRule::from_fn(move |x: &[f64]| this.lookup(x).mu[arm as usize])
    }

    /// E{mu_arm(X) | A = 1-arm, x_sub} as a rule.
    pub fn cross_outcome(&self, arm: u8) -> OutcomeRule {
        let this = self.clone();
        OutcomeRule::from_fn(move |x: &[f64]| this.lookup(x).cross[arm as usize])
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }
}

/// A two-binary-covariate benchmark process: logistic treatment in both
/// covariates, two-atom outcomes with a linear mean, so the default
/// logistic + linear nuisance menu is correctly specified on every
/// leave-one-out subset.
///
/// `beta_y = (intercept, b1, b2, tau)` sets the outcome mean
/// `b0 + b1 x1 + b2 x2 + tau a`; `beta_a` the treatment log-odds.
pub fn two_binary_dgp(beta_a: [f64; 3], beta_y: [f64; 4], y_spread: f64) -> DiscreteDgp {
    let mut cells = Vec::new();
    for &x1 in &[0.0, 1.0] {
        for &x2 in &[0.0, 1.0] {
            let eta = beta_a[0] + beta_a[1] * x1 + beta_a[2] * x2;
            let p_treat = 1.0 / (1.0 + (-eta).exp());
            let mean = |a: f64| beta_y[0] + beta_y[1] * x1 + beta_y[2] * x2 + beta_y[3] * a;
            cells.push(DiscreteCell {
                x: vec![x1, x2],
                prob: 0.25,
                p_treat,
                y_dist: [
                    vec![(mean(0.0) - y_spread, 0.5), (mean(0.0) + y_spread, 0.5)],
                    vec![(mean(1.0) - y_spread, 0.5), (mean(1.0) + y_spread, 0.5)],
                ],
            });
        }
    }
    DiscreteDgp { cells, names: vec!["x1".into(), "x2".into()] }
}
