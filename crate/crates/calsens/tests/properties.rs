//! Property tests for the structural invariants: subset composition,
//! rescale round trips, fold partitions, the omega score, the regime
//! variance identity, and interval nesting.

use calsens::data::{make_folds, Dataset, SubsetSpec};
use calsens::inference::{regime_analysis, variance_ratio};
use calsens::nuisance::eval_omega;
use calsens::stats;
use proptest::prelude::*;

fn small_dataset(d: usize) -> Dataset {
    let n = 6;
    let mut x = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            x.push((i * d + j) as f64 * 0.37 + 1.0);
        }
    }
    let a = vec![0, 1, 0, 1, 0, 1];
    let y = vec![0.1, 0.9, 0.4, 0.3, 0.7, 0.2];
    Dataset::new(x, a, y, (0..d).map(|j| format!("x{j}")).collect()).unwrap()
}

proptest! {
    #[test]
    fn exclude_composes(excl1 in proptest::collection::btree_set(0usize..6, 0..3),
                        extra in proptest::collection::btree_set(0usize..6, 0..2)) {
        let d = 6;
        let total: std::collections::BTreeSet<usize> =
            excl1.union(&extra).copied().collect();
        prop_assume!(total.len() < d);
        let ds = small_dataset(d);
        let spec1 = SubsetSpec { excluded: excl1.clone(), family: None };
        let spec_total = SubsetSpec { excluded: total.clone(), family: None };
        let rest: Vec<usize> = total.difference(&excl1).copied().collect();
        let via_two = ds.exclude(&spec1).unwrap().without_cols(&rest);
        let direct = ds.exclude(&spec_total).unwrap();
        prop_assert_eq!(via_two.cols(), direct.cols());
    }

    #[test]
    fn folds_partition(n in 4usize..200, k in 2usize..8, seed in 0u64..500) {
        prop_assume!(k <= n);
        let folds = make_folds(n, k, seed).unwrap();
        let mut seen = vec![false; n];
        let mut sizes = Vec::new();
        for fk in 0..k {
            let rows = folds.fold_rows(fk);
            sizes.push(rows.len());
            for i in rows {
                prop_assert!(!seen[i], "row {} assigned twice", i);
                seen[i] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
        let max = sizes.iter().max().unwrap();
        let min = sizes.iter().min().unwrap();
        prop_assert!(max - min <= 1);
        // bit-for-bit reproducibility
        let again = make_folds(n, k, seed).unwrap();
        for i in 0..n {
            prop_assert_eq!(folds.fold_of(i), again.fold_of(i));
        }
    }

    #[test]
    fn rescale_round_trip(vals in proptest::collection::vec(-1e4f64..1e4, 4..40)) {
        let spread: f64 = {
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        };
        prop_assume!(spread > 1e-6);
        let n = vals.len();
        let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let y = vec![0.0; n];
        let ds = Dataset::new(vals.clone(), a, y, vec!["x".into()]).unwrap();
        let (scaled, ranges) = ds.minmax_rescale().unwrap();
        for i in 0..n {
            let back = ranges[0].unscale(scaled.x(i, 0));
            let denom = vals[i].abs().max(1.0);
            prop_assert!(((back - vals[i]) / denom).abs() < 1e-12);
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&scaled.x(i, 0)));
        }
    }

    #[test]
    fn omega_branches_and_scaling(y in -50.0f64..50.0, theta in -50.0f64..50.0, t in 0.01f64..20.0) {
        let v = eval_omega(y, theta, t);
        if y > theta {
            prop_assert_eq!(v, y - theta);
        } else if y < theta {
            prop_assert!((v - t * (y - theta)).abs() < 1e-12);
            prop_assert!(v <= 0.0);
        } else {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn regime_identity_on_synthetic_vectors(seed in 0u64..1000, gamma in 0.05f64..5.0, m in 0.05f64..5.0) {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 80;
        let u: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 3.0 - 1.0).collect();
        let mvec: Vec<f64> = u.iter().map(|v| 0.4 * v + rng.gen::<f64>() - 0.5).collect();
        prop_assume!(stats::variance(&u) > 1e-9 && stats::variance(&mvec) > 1e-9);
        let report = regime_analysis(&u, &mvec, m, &[gamma]).unwrap();
        let p = report.points[0];
        prop_assert!((p.variance_ratio - p.variance_ratio_direct).abs() <= 1e-10,
            "closed {} vs direct {}", p.variance_ratio, p.variance_ratio_direct);
        // and the closed form is what it says it is
        prop_assert!((p.variance_ratio - variance_ratio(p.rho, p.rrse)).abs() < 1e-14);
    }

    #[test]
    fn normal_quantile_symmetry(p in 0.0001f64..0.9999) {
        let z = stats::norm_ppf(p);
        let zc = stats::norm_ppf(1.0 - p);
        prop_assert!((z + zc).abs() < 1e-9);
    }
}

#[test]
fn wald_bands_nest_across_alphas() {
    // monotone nesting in alpha on a synthetic curve
    use calsens::inference::wald_intervals;
    use calsens::models::{BoundCurve, BoundPoint};
    let noise: Vec<f64> = (0..60).map(|i| ((i * 13) % 17) as f64 / 8.0 - 1.0).collect();
    let point = BoundPoint {
        gamma: 1.0,
        lower: -0.4,
        upper: 0.9,
        if_lower: noise.iter().map(|v| v - 0.4).collect(),
        if_upper: noise.iter().map(|v| v + 0.9).collect(),
        if_lower_std: noise.iter().map(|v| 0.5 * v - 0.4).collect(),
        if_upper_std: noise.iter().map(|v| 0.5 * v + 0.9).collect(),
    };
    let curve = BoundCurve {
        psi_hat: 0.2,
        psi_influence: noise,
        points: vec![point],
        symmetric: false,
    };
    let mut prev: Option<(f64, f64)> = None;
    for alpha in [0.2, 0.1, 0.05, 0.01, 0.001] {
        let row = wald_intervals(&curve, alpha).unwrap().rows[0];
        if let Some((lo, hi)) = prev {
            assert!(row.band.0 <= lo && row.band.1 >= hi, "bands must widen as alpha falls");
        }
        assert!(row.band.0 <= row.lower && row.upper <= row.band.1);
        prev = Some(row.band);
    }
}
