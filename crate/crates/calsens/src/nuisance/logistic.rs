//! Logistic maximum likelihood by damped Newton iterations, and the
//! fitted projection object used to read off measured confounding in the
//! odds-ratio model.

use crate::error::{Error, Result};
use crate::stats::{invert_spd, solve_spd};

const MAX_NEWTON_STEPS: usize = 100;
const GRAD_TOL: f64 = 1e-8;
const MAX_HALVINGS: usize = 40;
const BETA_DIVERGENCE: f64 = 1e4;
const SEPARATION_SCALE: f64 = 30.0;
const NEWTON_TRUST: f64 = 1e-6;

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Logistic fit on an intercept-augmented design.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    /// Intercept followed by one slope per covariate.
    pub beta: Vec<f64>,
    pub converged: bool,
    pub iters: usize,
}

impl LogisticFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        sigmoid(linear_index(&self.beta, row))
    }
}

fn linear_index(beta: &[f64], row: &[f64]) -> f64 {
    let mut v = beta[0];
    for (j, &xj) in row.iter().enumerate() {
        v += beta[j + 1] * xj;
    }
    v
}

fn mean_log_likelihood(x: &[f64], m: usize, p: usize, a: &[u8], beta: &[f64]) -> f64 {
    let mut ll = 0.0;
    for i in 0..m {
        let eta = linear_index(beta, &x[i * p..(i + 1) * p]);
        // log Psi(eta)^a (1-Psi(eta))^(1-a) = a*eta - log(1+exp(eta))
        ll += f64::from(a[i]) * eta - softplus(eta);
    }
    ll / m as f64
}

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else if v < -30.0 {
        0.0
    } else {
        (1.0 + v.exp()).ln()
    }
}

/// Maximize the Bernoulli likelihood over `beta` with Newton steps and
/// step halving on likelihood decrease. `x` is m x p (covariates only,
/// intercept added internally).
pub fn fit_logistic(x: &[f64], m: usize, p: usize, a: &[u8]) -> Result<LogisticFit> {
    let q = p + 1;
    let mut beta = vec![0.0; q];
    let abar = a.iter().map(|&v| f64::from(v)).sum::<f64>() / m as f64;
    if abar <= 0.0 || abar >= 1.0 {
        return Err(Error::Fit("logistic fit needs both classes present".into()));
    }
    beta[0] = (abar / (1.0 - abar)).ln();
    let mut ll = mean_log_likelihood(x, m, p, a, &beta);
    let mut row = vec![0.0; q];
    for iter in 0..MAX_NEWTON_STEPS {
        // mean score and mean information at the current beta
        let mut grad = vec![0.0; q];
        let mut info = vec![0.0; q * q];
        for i in 0..m {
            row[0] = 1.0;
            row[1..].copy_from_slice(&x[i * p..(i + 1) * p]);
            let mu = sigmoid(linear_index(&beta, &row[1..]));
            let r = f64::from(a[i]) - mu;
            let w = mu * (1.0 - mu);
            for c in 0..q {
                grad[c] += r * row[c];
                for d in 0..=c {
                    info[c * q + d] += w * row[c] * row[d];
                }
            }
        }
        let mf = m as f64;
        for c in 0..q {
            grad[c] /= mf;
            for d in 0..=c {
                info[c * q + d] /= mf;
                info[d * q + c] = info[c * q + d];
            }
        }
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm <= GRAD_TOL {
            if beta.iter().any(|b| b.abs() > SEPARATION_SCALE) {
                return Err(Error::Fit(
                    "logistic coefficients ran away to the boundary: the classes may be \
                     separable; consider the k-NN propensity fallback"
                        .into(),
                ));
            }
            return Ok(LogisticFit { beta, converged: true, iters: iter });
        }
        let dir = solve_spd(&info, &grad, q).map_err(|_| {
            Error::Fit(
                "logistic Hessian not positive definite: covariates appear concentrated on a \
                 lower-dimensional affine subspace"
                    .into(),
            )
        })?;
        // near the optimum the likelihood is flat at float resolution and
        // cannot arbitrate steps; pure Newton is safe and finishes
        // quadratically
        if gnorm <= NEWTON_TRUST {
            for (b, d) in beta.iter_mut().zip(&dir) {
                *b += d;
            }
            continue;
        }
        // step halving on likelihood decrease; ties within float
        // resolution accept so terminal steps are not rejected
        let slack = 1e-14 * (1.0 + ll.abs());
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = beta.iter().zip(&dir).map(|(b, d)| b + step * d).collect();
            let cand_ll = mean_log_likelihood(x, m, p, a, &cand);
            if cand_ll >= ll - slack {
                beta = cand;
                ll = cand_ll.max(ll);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::Fit(
                "logistic likelihood stopped improving before the gradient vanished: the \
                 classes may be separable; consider the k-NN propensity fallback"
                    .into(),
            ));
        }
        if beta.iter().any(|b| b.abs() > BETA_DIVERGENCE) {
            return Err(Error::Fit(
                "logistic coefficients diverging: the classes may be separable; consider the \
                 k-NN propensity fallback"
                    .into(),
            ));
        }
    }
    Err(Error::Fit(
        "logistic solver did not converge in 100 Newton steps: the classes may be separable; \
         consider the k-NN propensity fallback"
            .into(),
    ))
}

/// Best projection of the treatment mechanism onto a logistic model with no
/// interactions, fitted on unit-cube covariates. Holds everything the
/// confounding influence function needs: the coefficients, the empirical
/// Fisher information at the solution, and a score evaluator.
#[derive(Debug, Clone)]
pub struct LogisticProjection {
    /// Intercept followed by d slopes.
    pub beta: Vec<f64>,
    /// Empirical (d+1) x (d+1) Fisher information at `beta`, row-major.
    pub fisher_info: Vec<f64>,
    pub converged: bool,
    fisher_inv: Vec<f64>,
}

impl LogisticProjection {
    /// Assemble a projection from explicit coefficients and information,
    /// e.g. for analytically known projections.
    pub fn from_parts(beta: Vec<f64>, fisher_info: Vec<f64>) -> Result<Self> {
        let q = beta.len();
        let fisher_inv = invert_spd(&fisher_info, q)
            .map_err(|_| Error::Numerical("singular Fisher information".into()))?;
        Ok(LogisticProjection { beta, fisher_info, converged: true, fisher_inv })
    }

    pub fn from_fit(fit: LogisticFit, x: &[f64], m: usize, p: usize) -> Result<Self> {
        let q = p + 1;
        let mut info = vec![0.0; q * q];
        let mut row = vec![0.0; q];
        for i in 0..m {
            row[0] = 1.0;
            row[1..].copy_from_slice(&x[i * p..(i + 1) * p]);
            let mu = sigmoid(linear_index(&fit.beta, &row[1..]));
            let w = mu * (1.0 - mu);
            for c in 0..q {
                for d in 0..=c {
                    info[c * q + d] += w * row[c] * row[d];
                }
            }
        }
        let mf = m as f64;
        for c in 0..q {
            for d in 0..=c {
                info[c * q + d] /= mf;
                info[d * q + c] = info[c * q + d];
            }
        }
        let fisher_inv = invert_spd(&info, q).map_err(|_| {
            Error::Numerical(
                "singular Fisher information: covariates appear concentrated on a \
                 lower-dimensional affine subspace"
                    .into(),
            )
        })?;
        Ok(LogisticProjection {
            beta: fit.beta,
            fisher_info: info,
            converged: fit.converged,
            fisher_inv,
        })
    }

    pub fn dim(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        sigmoid(linear_index(&self.beta, row))
    }

    /// Score s(Z; beta) = {A - Psi(beta^T x)} (1, x).
    pub fn score(&self, row: &[f64], a: u8) -> Vec<f64> {
        let mu = self.predict(row);
        let r = f64::from(a) - mu;
        let mut s = Vec::with_capacity(self.beta.len());
        s.push(r);
        for &xj in row {
            s.push(r * xj);
        }
        s
    }

    /// Largest absolute slope: (value, 0-based slope index, gap to the
    /// runner-up). Ties break to the smallest index.
    pub fn max_abs_slope(&self) -> (f64, usize, f64) {
        let slopes = &self.beta[1..];
        let mut best = (0usize, f64::NEG_INFINITY);
        for (j, &b) in slopes.iter().enumerate() {
            if b.abs() > best.1 {
                best = (j, b.abs());
            }
        }
        let mut runner = 0.0f64;
        for (j, &b) in slopes.iter().enumerate() {
            if j != best.0 {
                runner = runner.max(b.abs());
            }
        }
        (best.1, best.0, best.1 - runner)
    }

    /// Influence function of the largest absolute slope:
    /// e_j' I^{-1} sign(beta_j') s(Z; beta), with j' the maximizing slope.
    pub fn phi_m(&self, row: &[f64], a: u8) -> f64 {
        let (_, j, _) = self.max_abs_slope();
        self.phi_m_for(row, a, j)
    }

    /// Same as [`phi_m`](Self::phi_m) with the maximizing slope pinned.
    pub fn phi_m_for(&self, row: &[f64], a: u8, slope_idx: usize) -> f64 {
        let q = self.beta.len();
        let s = self.score(row, a);
        let sign = if self.beta[slope_idx + 1] < 0.0 { -1.0 } else { 1.0 };
        let erow = &self.fisher_inv[(slope_idx + 1) * q..(slope_idx + 2) * q];
        sign * erow.iter().zip(&s).map(|(e, sv)| e * sv).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn simulate(beta: &[f64], n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
        let p = beta.len() - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n * p);
        let mut a = Vec::with_capacity(n);
        for _ in 0..n {
            let mut eta = beta[0];
            for j in 0..p {
                let v: f64 = rng.gen();
                eta += beta[j + 1] * v;
                x.push(v);
            }
            a.push(u8::from(rng.gen::<f64>() < sigmoid(eta)));
        }
        (x, a)
    }

    #[test]
    fn independent_treatment_gives_flat_slopes() {
        let (x, a) = simulate(&[0.0, 0.0], 20_000, 3);
        let fit = fit_logistic(&x, 20_000, 1, &a).unwrap();
        assert!(fit.converged);
        assert!(fit.beta[1].abs() < 0.1, "slope {}", fit.beta[1]);
        let abar = a.iter().map(|&v| f64::from(v)).sum::<f64>() / 20_000.0;
        assert!((fit.beta[0] - (abar / (1.0 - abar)).ln()).abs() < 0.05);
    }

    #[test]
    fn recovers_generating_coefficients_within_three_ses() {
        // d = 1, P(A=1|x) = sigmoid(-1 + 2x), oracle = generating coefficients
        let n = 100_000;
        let (x, a) = simulate(&[-1.0, 2.0], n, 11);
        let fit = fit_logistic(&x, n, 1, &a).unwrap();
        let proj = LogisticProjection::from_fit(fit, &x, n, 1).unwrap();
        // SEs from the inverse information
        let q = 2;
        let se0 = (proj.fisher_inv[0] / n as f64).sqrt();
        let se1 = (proj.fisher_inv[q + 1] / n as f64).sqrt();
        assert!((proj.beta[0] + 1.0).abs() < 3.0 * se0, "intercept {}", proj.beta[0]);
        assert!((proj.beta[1] - 2.0).abs() < 3.0 * se1, "slope {}", proj.beta[1]);
    }

    #[test]
    fn mean_score_vanishes_at_solution() {
        let (x, a) = simulate(&[0.5, -1.5, 0.8], 5000, 17);
        let fit = fit_logistic(&x, 5000, 2, &a).unwrap();
        let proj = LogisticProjection::from_fit(fit, &x, 5000, 2).unwrap();
        let mut acc = vec![0.0; 3];
        for i in 0..5000 {
            let s = proj.score(&x[i * 2..(i + 1) * 2], a[i]);
            for (t, v) in acc.iter_mut().zip(&s) {
                *t += v;
            }
        }
        let norm = acc.iter().map(|v| (v / 5000.0).powi(2)).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "mean score norm {norm}");
    }

    #[test]
    fn fisher_info_matches_finite_difference_hessian() {
        let (x, a) = simulate(&[0.2, 1.0, -0.7], 4000, 23);
        let fit = fit_logistic(&x, 4000, 2, &a).unwrap();
        let beta = fit.beta.clone();
        let proj = LogisticProjection::from_fit(fit, &x, 4000, 2).unwrap();
        let q = 3;
        let h = 1e-3;
        let ll = |b: &[f64]| mean_log_likelihood(&x, 4000, 2, &a, b);
        for c in 0..q {
            for d in 0..q {
                let mut bpp = beta.clone();
                let mut bpm = beta.clone();
                let mut bmp = beta.clone();
                let mut bmm = beta.clone();
                bpp[c] += h;
                bpp[d] += h;
                bpm[c] += h;
                bpm[d] -= h;
                bmp[c] -= h;
                bmp[d] += h;
                bmm[c] -= h;
                bmm[d] -= h;
                let fd = (ll(&bpp) - ll(&bpm) - ll(&bmp) + ll(&bmm)) / (4.0 * h * h);
                let analytic = -proj.fisher_info[c * q + d];
                let denom = analytic.abs().max(1e-3);
                assert!(
                    ((fd - analytic) / denom).abs() < 1e-5,
                    "H[{c}{d}]: fd={fd}, analytic={analytic}"
                );
            }
        }
    }

    #[test]
    fn separation_is_reported_with_fallback_advice() {
        // perfectly separated classes
        let x: Vec<f64> = (0..40).map(|i| if i < 20 { 0.0 } else { 1.0 }).collect();
        let a: Vec<u8> = (0..40).map(|i| u8::from(i >= 20)).collect();
        let err = fit_logistic(&x, 40, 1, &a).unwrap_err();
        assert!(err.to_string().contains("k-NN"), "{err}");
    }

    #[test]
    fn max_abs_slope_reads_single_coefficient() {
        let proj = LogisticProjection {
            beta: vec![0.3, 2.0],
            fisher_info: vec![1.0, 0.0, 0.0, 1.0],
            fisher_inv: vec![1.0, 0.0, 0.0, 1.0],
            converged: true,
        };
        let (m, j, _) = proj.max_abs_slope();
        assert_eq!(m, 2.0);
        assert_eq!(j, 0);
    }
}
