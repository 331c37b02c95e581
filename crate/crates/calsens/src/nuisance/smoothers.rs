//! Regression smoothers backing the nuisance rules: ordinary least squares
//! on an intercept-augmented design, k-nearest neighbours, and
//! Nadaraya-Watson with a Gaussian kernel and leave-one-out bandwidth.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::stats::solve_spd;

/// Prediction closure over a fitted rule. Input length must match the
/// covariate dimension the rule was fitted on.
pub type PredictFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Smoother menu. The theory only needs rate conditions, so the menu is
/// deliberately small and dependency-free; richer learners can be plugged
/// in through closures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmootherSpec {
    Linear,
    /// k = 0 picks k automatically as ceil(m^(2/3)).
    Knn { k: usize },
    NadarayaWatson,
}

/// Fit a smoother of `targets` on the m x p row-major matrix `x`.
///
/// p = 0 is allowed and yields the constant mean rule, which is how
/// intercept-only covariate sets (leave-one-out with d = 1) are handled.
pub fn fit_smoother(x: &[f64], m: usize, p: usize, targets: &[f64], spec: SmootherSpec) -> Result<PredictFn> {
    if m == 0 {
        return Err(Error::Fit("cannot fit a smoother on zero rows".into()));
    }
    debug_assert_eq!(x.len(), m * p);
    debug_assert_eq!(targets.len(), m);
    if p == 0 {
        let c = targets.iter().sum::<f64>() / m as f64;
        return Ok(Arc::new(move |_| c));
    }
    match spec {
        SmootherSpec::Linear => fit_linear(x, m, p, targets),
        SmootherSpec::Knn { k } => Ok(fit_knn(x, m, p, targets, k)),
        SmootherSpec::NadarayaWatson => Ok(fit_nw(x, m, p, targets)),
    }
}

/// Least squares with intercept via normal equations.
pub fn fit_linear(x: &[f64], m: usize, p: usize, targets: &[f64]) -> Result<PredictFn> {
    let coefs = linear_coefficients(x, m, p, targets)?;
    Ok(Arc::new(move |row: &[f64]| {
        let mut v = coefs[0];
        for (j, &xj) in row.iter().enumerate() {
            v += coefs[j + 1] * xj;
        }
        v
    }))
}

/// Intercept-first least squares coefficients.
pub fn linear_coefficients(x: &[f64], m: usize, p: usize, targets: &[f64]) -> Result<Vec<f64>> {
    let q = p + 1;
    let mut xtx = vec![0.0; q * q];
    let mut xty = vec![0.0; q];
    let mut row = vec![0.0; q];
    for i in 0..m {
        row[0] = 1.0;
        row[1..].copy_from_slice(&x[i * p..(i + 1) * p]);
        for a in 0..q {
            xty[a] += row[a] * targets[i];
            for b in 0..=a {
                xtx[a * q + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..q {
        for b in (a + 1)..q {
            xtx[a * q + b] = xtx[b * q + a];
        }
    }
    solve_spd(&xtx, &xty, q).map_err(|_| {
        Error::Fit("singular design in least squares (collinear or constant covariates)".into())
    })
}

fn fit_knn(x: &[f64], m: usize, p: usize, targets: &[f64], k: usize) -> PredictFn {
    let k = if k == 0 { (m as f64).powf(2.0 / 3.0).ceil() as usize } else { k };
    let k = k.clamp(1, m);
    let x = x.to_vec();
    let targets = targets.to_vec();
    Arc::new(move |row: &[f64]| {
        let mut dist: Vec<(f64, usize)> = (0..m)
            .map(|i| {
                let d2: f64 = x[i * p..(i + 1) * p]
                    .iter()
                    .zip(row)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d2, i)
            })
            .collect();
        // full sort keeps neighbour ties deterministic by index
        dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        dist[..k].iter().map(|&(_, i)| targets[i]).sum::<f64>() / k as f64
    })
}

fn fit_nw(x: &[f64], m: usize, p: usize, targets: &[f64]) -> PredictFn {
    // standardize each dimension so one isotropic bandwidth is sensible
    let mut scale = vec![1.0; p];
    for j in 0..p {
        let mean = (0..m).map(|i| x[i * p + j]).sum::<f64>() / m as f64;
        let var = (0..m).map(|i| (x[i * p + j] - mean).powi(2)).sum::<f64>() / m as f64;
        if var > 0.0 {
            scale[j] = var.sqrt();
        }
    }
    let base = (m as f64).powf(-1.0 / (4.0 + p as f64));
    let candidates: Vec<f64> = [0.3, 0.6, 1.0, 1.8, 3.0].iter().map(|c| c * base).collect();
    let h = select_loo_bandwidth(x, m, p, targets, &scale, &candidates);

    let x = x.to_vec();
    let targets = targets.to_vec();
    Arc::new(move |row: &[f64]| {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut best = (f64::INFINITY, 0usize);
        for i in 0..m {
            let d2: f64 = (0..p)
                .map(|j| ((x[i * p + j] - row[j]) / scale[j]).powi(2))
                .sum();
            if d2 < best.0 {
                best = (d2, i);
            }
            let w = (-0.5 * d2 / (h * h)).exp();
            num += w * targets[i];
            den += w;
        }
        if den <= 1e-300 {
            targets[best.1]
        } else {
            num / den
        }
    })
}

fn select_loo_bandwidth(
    x: &[f64],
    m: usize,
    p: usize,
    targets: &[f64],
    scale: &[f64],
    candidates: &[f64],
) -> f64 {
    let mut best = (f64::INFINITY, candidates[0]);
    for &h in candidates {
        let mut sse = 0.0;
        for i in 0..m {
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..m {
                if j == i {
                    continue;
                }
                let d2: f64 = (0..p)
                    .map(|c| ((x[i * p + c] - x[j * p + c]) / scale[c]).powi(2))
                    .sum();
                let w = (-0.5 * d2 / (h * h)).exp();
                num += w * targets[j];
                den += w;
            }
            let pred = if den <= 1e-300 { targets[i] } else { num / den };
            sse += (pred - targets[i]).powi(2);
        }
        if sse < best.0 {
            best = (sse, h);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_recovers_exact_line() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 3.0 * v).collect();
        let f = fit_smoother(&x, 20, 1, &y, SmootherSpec::Linear).unwrap();
        assert!((f(&[0.35]) - (2.0 - 3.0 * 0.35)).abs() < 1e-10);
    }

    #[test]
    fn knn_with_k_equal_n_is_the_mean() {
        let x = vec![0.0, 1.0, 2.0, 3.0];
        let y = vec![1.0, 2.0, 3.0, 6.0];
        let f = fit_smoother(&x, 4, 1, &y, SmootherSpec::Knn { k: 4 }).unwrap();
        assert!((f(&[0.0]) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_dim_is_constant_mean() {
        let f = fit_smoother(&[], 3, 0, &[1.0, 2.0, 6.0], SmootherSpec::Linear).unwrap();
        assert!((f(&[]) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn nw_tracks_a_smooth_signal() {
        let m = 400;
        let x: Vec<f64> = (0..m).map(|i| i as f64 / m as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| (3.0 * v).sin()).collect();
        let f = fit_smoother(&x, m, 1, &y, SmootherSpec::NadarayaWatson).unwrap();
        assert!((f(&[0.5]) - (1.5f64).sin()).abs() < 0.05);
    }
}
