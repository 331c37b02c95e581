//! Proxy-covariate example generators with analytic nuisances and
//! numerically integrated ground truths.
//!
//! Both examples share the frame X ~ Unif(-1,1), W ~ Unif(-1,1) with W
//! unobserved, A ~ Bernoulli((X + theta W + 2)/4), Y = X + theta W + e,
//! e ~ N(0,1). Example 1 is theta = 1 (exchangeable proxies); example 2
//! picks theta so that the bias from omitting W from {X, W} equals the
//! bias from omitting X from {X} (a perfect proxy in the additional-impact
//! sense). Closed forms: psi_star = 0, psi_X = theta^2 log(3)/3,
//! psi_empty = (1 + theta^2)/3.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::Result;
use crate::nuisance::{OutcomeRule, PropensityRule};
use crate::stats::bisect;

/// A generator spec with its analytic truths, used by the experiments to
/// check estimates against known values.
#[derive(Debug, Clone)]
pub struct DgpSpec {
    pub name: String,
    pub theta: f64,
    pub n: usize,
    pub seed: u64,
    /// (psi_star, psi_X, psi_empty)
    pub truths: (f64, f64, f64),
}

/// Sampled proxy-example data: the observed dataset (X only) and the
/// hidden confounder retained for oracle checks.
#[derive(Debug, Clone)]
pub struct ProxyDraw {
    pub data: Dataset,
    pub hidden_w: Vec<f64>,
}

fn gen_proxy(n: usize, seed: u64, theta: f64) -> Result<ProxyDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xv = 2.0 * rng.gen::<f64>() - 1.0;
        let wv = 2.0 * rng.gen::<f64>() - 1.0;
        let p = (xv + theta * wv + 2.0) / 4.0;
        let t = u8::from(rng.gen::<f64>() < p);
        let eps: f64 = StandardNormal.sample(&mut rng);
        x.push(xv);
        w.push(wv);
        a.push(t);
        y.push(xv + theta * wv + eps);
    }
    Ok(ProxyDraw { data: Dataset::new(x, a, y, vec!["x".into()])?, hidden_w: w })
}

/// Example 1: exchangeable covariates that are not perfect proxies.
/// Truths: psi_star = 0, psi_X = log(3)/3, psi_empty = 2/3.
pub fn gen_proxy_example_1(n: usize, seed: u64) -> Result<ProxyDraw> {
    gen_proxy(n, seed, 1.0)
}

/// Example 2: a perfect proxy that is not exchangeable; `theta` comes from
/// [`example2_theta`].
pub fn gen_proxy_example_2(n: usize, seed: u64, theta: f64) -> Result<ProxyDraw> {
    gen_proxy(n, seed, theta)
}

/// Closed-form truths for the shared frame at a given theta.
pub fn proxy_truths(theta: f64) -> (f64, f64, f64) {
    let psi_x = theta * theta * 3.0f64.ln() / 3.0;
    let psi_empty = (1.0 + theta * theta) / 3.0;
    (0.0, psi_x, psi_empty)
}

/// Analytic nuisances over the observed covariate X at a given theta:
/// pi_1(x) = (x+2)/4 and mu_a(x) = x + theta E(W | A=a, X=x) with
/// E(W|A=1,x) = theta/(3(x+2)) and E(W|A=0,x) = -theta/(3(2-x)).
pub fn analytic_rules_x(theta: f64) -> (PropensityRule, [OutcomeRule; 2]) {
    let prop = PropensityRule::from_fn(|x: &[f64]| (x[0] + 2.0) / 4.0, 0.0);
    let mu1 =
        OutcomeRule::from_fn(move |x: &[f64]| x[0] + theta * theta / (3.0 * (x[0] + 2.0)));
    let mu0 =
        OutcomeRule::from_fn(move |x: &[f64]| x[0] - theta * theta / (3.0 * (2.0 - x[0])));
    (prop, [mu0, mu1])
}

/// Analytic nuisances for the empty covariate set: pi_1 = 1/2 and the
/// arm means +-(1 + theta^2)/6.
pub fn analytic_rules_empty(theta: f64) -> (PropensityRule, [OutcomeRule; 2]) {
    let prop = PropensityRule::from_fn(|_: &[f64]| 0.5, 0.0);
    let m = (1.0 + theta * theta) / 6.0;
    let mu1 = OutcomeRule::from_fn(move |_: &[f64]| m);
    let mu0 = OutcomeRule::from_fn(move |_: &[f64]| -m);
    (prop, [mu0, mu1])
}

fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, intervals: usize) -> f64 {
    let m = intervals + intervals % 2; // even
    let h = (hi - lo) / m as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + h * i as f64);
    }
    acc * h / 3.0
}

/// psi_X at theta by nested numerical integration of the raw process,
/// independent of the closed forms above.
pub fn integrate_psi_x(theta: f64) -> f64 {
    let mu_diff = |x: f64| {
        // E(W | A = a, X = x) from the Bernoulli weight (x + theta w + 2)/4
        let num1 = simpson(|w| w * (x + theta * w + 2.0), -1.0, 1.0, 400);
        let den1 = simpson(|w| x + theta * w + 2.0, -1.0, 1.0, 400);
        let num0 = simpson(|w| w * (2.0 - x - theta * w), -1.0, 1.0, 400);
        let den0 = simpson(|w| 2.0 - x - theta * w, -1.0, 1.0, 400);
        theta * (num1 / den1 - num0 / den0)
    };
    0.5 * simpson(mu_diff, -1.0, 1.0, 400)
}

/// psi_empty at theta by nested numerical integration.
pub fn integrate_psi_empty(theta: f64) -> f64 {
    let inner = |f: &dyn Fn(f64, f64) -> f64, x: f64| simpson(|w| f(x, w), -1.0, 1.0, 400);
    let y_of = move |x: f64, w: f64| x + theta * w;
    let w1 = move |x: f64, w: f64| (x + theta * w + 2.0) / 4.0;
    let e_y1_num = simpson(|x| inner(&|x, w| y_of(x, w) * w1(x, w), x), -1.0, 1.0, 400);
    let e_y1_den = simpson(|x| inner(&w1, x), -1.0, 1.0, 400);
    let w0 = move |x: f64, w: f64| 1.0 - (x + theta * w + 2.0) / 4.0;
    let e_y0_num = simpson(|x| inner(&|x, w| y_of(x, w) * w0(x, w), x), -1.0, 1.0, 400);
    let e_y0_den = simpson(|x| inner(&w0, x), -1.0, 1.0, 400);
    e_y1_num / e_y1_den - e_y0_num / e_y0_den
}

/// How the example-2 proxy coefficient was determined.
#[derive(Debug, Clone)]
pub struct Example2Theta {
    pub theta: f64,
    /// |psi_star - psi_X| = |psi_X - psi_empty| at the root.
    pub common_bias: f64,
    pub note: String,
}

/// Solve |psi_star - psi_X(theta)| = |psi_X(theta) - psi_empty(theta)| for
/// theta by root finding on numerically integrated biases. The root is
/// sqrt(1/(2 log 3 - 1)) ~ 0.9139; the frequently quoted 0.835 is theta^2,
/// not theta, and fails the bias equality.
pub fn example2_theta() -> Result<Example2Theta> {
    // psi_star = 0, psi_X > 0, psi_empty > psi_X on the search range, so the
    // equality reads 2 psi_X(theta) = psi_empty(theta)
    let g = |theta: f64| 2.0 * integrate_psi_x(theta) - integrate_psi_empty(theta);
    let theta = bisect(g, 0.5, 1.2, 1e-10)?;
    let bias = integrate_psi_x(theta);
    let formula = (1.0 / (2.0 * 3.0f64.ln() - 1.0)).sqrt();
    let note = format!(
        "bias-equality root {theta:.6} matches sqrt(1/(2 log 3 - 1)) = {formula:.6}; \
         the 0.835 figure is theta^2 = {:.6} and does not satisfy the equality",
        theta * theta
    );
    Ok(Example2Theta { theta, common_bias: bias, note })
}

/// Validate the example-1 analytic truths against numerical integration
/// before any estimator runs.
pub fn validate_example1_truths() -> Result<()> {
    let psi_x = integrate_psi_x(1.0);
    let target = 3.0f64.ln() / 3.0;
    if (psi_x - target).abs() > 1e-6 {
        return Err(crate::error::Error::Numerical(format!(
            "example-1 psi_X integration {psi_x} differs from log(3)/3 = {target}"
        )));
    }
    let psi_e = integrate_psi_empty(1.0);
    if (psi_e - 2.0 / 3.0).abs() > 1e-6 {
        return Err(crate::error::Error::Numerical(format!(
            "example-1 psi_empty integration {psi_e} differs from 2/3"
        )));
    }
    Ok(())
}
