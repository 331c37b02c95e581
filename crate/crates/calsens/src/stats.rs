//! Small numerical helpers: moments, normal quantiles, linear solves,
//! and bisection root finding.

use crate::error::{Error, Result};

/// Sample mean. Returns 0.0 on empty input.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (denominator n-1). Returns 0.0 for n < 2.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0)
}

/// Sample standard deviation.
pub fn sd(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Sample covariance (denominator n-1).
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    assert_eq!(n, ys.len());
    if n < 2 {
        return 0.0;
    }
    let mx = mean(xs);
    let my = mean(ys);
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (n as f64 - 1.0)
}

/// Pearson correlation. Returns 0.0 when either variance is zero.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let vx = variance(xs);
    let vy = variance(ys);
    if vx <= 0.0 || vy <= 0.0 {
        return 0.0;
    }
    covariance(xs, ys) / (vx * vy).sqrt()
}

/// Standard normal quantile function, Wichura's AS 241 (double precision).
///
/// Accurate to ~1e-15 over (0, 1); panics outside the open interval.
pub fn norm_ppf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "norm_ppf requires p in (0,1), got {p}");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&PPF_A, r) / poly(&PPF_B, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly(&PPF_C, r) / poly(&PPF_D, r)
    } else {
        let r = r - 5.0;
        poly(&PPF_E, r) / poly(&PPF_F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn poly(coefs: &[f64], x: f64) -> f64 {
    coefs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

const PPF_A: [f64; 8] = [
    3.387_132_872_796_366_5e3,
    1.331_416_678_917_843_8e5,
    1.971_590_950_306_551_3e6,
    1.373_716_378_158_231_7e7,
    4.592_195_393_154_987e7,
    6.726_577_092_700_87e7,
    3.343_057_558_358_813e7,
    2.509_080_928_730_122_7e6,
];
const PPF_B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091e4,
    6.871_870_074_920_579e5,
    5.394_196_021_424_751e6,
    2.121_379_430_415_576e7,
    3.930_789_580_009_271e7,
    2.872_908_573_572_194_3e7,
    5.226_495_278_852_545_5e6,
];
const PPF_C: [f64; 8] = [
    1.423_437_110_749_683_5,
    4.630_337_846_156_546,
    5.769_497_221_460_691,
    3.647_848_324_763_204_5,
    1.270_458_252_452_368_4,
    2.417_807_251_774_506e-1,
    2.272_384_498_926_918_4e-2,
    7.745_450_142_783_414e-4,
];
const PPF_D: [f64; 8] = [
    1.0,
    2.053_191_626_637_759,
    1.676_384_830_183_803_8,
    6.897_673_349_851e-1,
    1.481_039_764_274_800_8e-1,
    1.519_866_656_361_645_7e-2,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_9e-9,
];
const PPF_E: [f64; 8] = [
    6.657_904_643_501_103,
    5.463_784_911_164_114,
    1.784_826_539_917_291_3,
    2.965_605_718_285_048_7e-1,
    2.653_218_952_657_612_4e-2,
    1.242_660_947_388_078_4e-3,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const PPF_F: [f64; 8] = [
    1.0,
    5.998_322_065_558_88e-1,
    1.369_298_809_227_358e-1,
    1.487_536_129_085_061_5e-2,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.044_263_103_389_939_7e-15,
];

/// Solve the symmetric positive definite system `A x = b` by Cholesky.
///
/// `a` is row-major p x p. Fails on a non-PD matrix.
pub fn solve_spd(a: &[f64], b: &[f64], p: usize) -> Result<Vec<f64>> {
    let l = cholesky(a, p)?;
    // forward solve L z = b
    let mut z = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for j in 0..i {
            s -= l[i * p + j] * z[j];
        }
        z[i] = s / l[i * p + i];
    }
    // back solve L^T x = z
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = z[i];
        for j in (i + 1)..p {
            s -= l[j * p + i] * x[j];
        }
        x[i] = s / l[i * p + i];
    }
    Ok(x)
}

/// Invert a symmetric positive definite matrix via Cholesky.
pub fn invert_spd(a: &[f64], p: usize) -> Result<Vec<f64>> {
    let mut inv = vec![0.0; p * p];
    let mut e = vec![0.0; p];
    for j in 0..p {
        e.fill(0.0);
        e[j] = 1.0;
        let col = solve_spd(a, &e, p)?;
        for i in 0..p {
            inv[i * p + j] = col[i];
        }
    }
    Ok(inv)
}

fn cholesky(a: &[f64], p: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::Numerical(format!(
                        "matrix not positive definite (pivot {s:.3e} at row {i})"
                    )));
                }
                l[i * p + j] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    Ok(l)
}

/// Bisection root finder for a continuous monotone-crossing function.
///
/// Requires `f(lo)` and `f(hi)` to have opposite signs. Returns the midpoint
/// once the bracket is narrower than `tol`.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Degenerate(format!(
            "no sign change on [{lo}, {hi}]: f(lo)={flo:.6e}, f(hi)={fhi:.6e}"
        )));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if fmid == 0.0 {
            return Ok(mid);
        }
        if fmid.signum() == flo.signum() {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_ppf_known_values() {
        assert!((norm_ppf(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((norm_ppf(0.995) - 2.575_829_303_548_901).abs() < 1e-12);
        assert!((norm_ppf(0.5)).abs() < 1e-15);
        assert!((norm_ppf(0.025) + norm_ppf(0.975)).abs() < 1e-12);
    }

    #[test]
    fn spd_solve_roundtrip() {
        // A = [[4,1],[1,3]], b = [1,2]  =>  x = [1/11, 7/11]
        let a = [4.0, 1.0, 1.0, 3.0];
        let x = solve_spd(&a, &[1.0, 2.0], 2).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn spd_rejects_indefinite() {
        let a = [1.0, 2.0, 2.0, 1.0];
        assert!(solve_spd(&a, &[1.0, 1.0], 2).is_err());
    }

    #[test]
    fn bisect_finds_root() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((r - 2.0_f64.sqrt()).abs() < 1e-10);
    }
}
