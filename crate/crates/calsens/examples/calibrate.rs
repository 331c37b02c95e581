use calsens::simlab::*;

fn main() {
    let dgp = coverage_dgp();
    let (psi, deltas, m, j) = effect_diff_truth(&dgp);
    println!("coverage dgp: psi={psi:.4} deltas={deltas:?} M={m:.4} j'={j} gamma0={:.4}", psi.abs()/m);

    let a = argmax_dgp(0.55);
    let (psi2, d2, m2, j2) = effect_diff_truth(&a);
    let sd_y = {
        let mean_y = a.expectation(|_, _, y| y);
        a.expectation(|_, _, y| (y - mean_y) * (y - mean_y)).sqrt()
    };
    let gap = {
        let mut s: Vec<f64> = d2.iter().map(|d| d.abs()).collect();
        s.sort_by(|x, y| y.partial_cmp(x).unwrap());
        s[0] - s[1]
    };
    println!("argmax dgp: psi={psi2:.4} deltas={d2:?} M={m2:.4} j'={j2} gap={gap:.4} sd_y={sd_y:.4} gap/sd={:.3}", gap/sd_y);

    let t0 = std::time::Instant::now();
    let out = run_coverage(&CoverageOptions::default()).unwrap();
    println!("--- coverage ({:.1}s)", t0.elapsed().as_secs_f64());
    for row in &out.table_rows { println!("  {row:?}"); }
    for (k, v) in &out.stats { println!("  {k} = {v}"); }
    for c in &out.checks { println!("  [{}] {}: {}", if c.pass {"PASS"} else {"FAIL"}, c.name, c.detail); }

    let t0 = std::time::Instant::now();
    let out = run_argmax_selection(&ArgmaxOptions::default()).unwrap();
    println!("--- argmax ({:.1}s)", t0.elapsed().as_secs_f64());
    for row in &out.table_rows { println!("  {row:?}"); }
    for c in &out.checks { println!("  [{}] {}: {}", if c.pass {"PASS"} else {"FAIL"}, c.name, c.detail); }

    let t0 = std::time::Instant::now();
    let out = run_gamma0_coverage(&Gamma0CoverageOptions::default()).unwrap();
    println!("--- gamma0 ({:.1}s)", t0.elapsed().as_secs_f64());
    for (k, v) in &out.stats { println!("  {k} = {v}"); }
    for c in &out.checks { println!("  [{}] {}: {}", if c.pass {"PASS"} else {"FAIL"}, c.name, c.detail); }

    let t0 = std::time::Instant::now();
    let out = run_remainder_identities(777).unwrap();
    println!("--- remainders ({:.1}s)", t0.elapsed().as_secs_f64());
    for (k, v) in &out.stats { println!("  {k} = {v}"); }
    for c in &out.checks { println!("  [{}] {}: {}", if c.pass {"PASS"} else {"FAIL"}, c.name, c.detail); }
}
