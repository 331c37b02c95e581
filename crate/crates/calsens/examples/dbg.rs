use calsens::simlab::*;
fn main() {
    let wide = argmax_dgp_wide_gap();
    let (_psi, deltas, _m, j) = effect_diff_truth(&wide);
    let gap = (deltas[0].abs() - deltas[1].abs()).abs();
    let mean_y = wide.expectation(|_, _, y| y);
    let sd_y = wide.expectation(|_, _, y| (y - mean_y) * (y - mean_y)).sqrt();
    println!("wide: deltas {deltas:?} j'={j} gap {gap:.4} sd_y {sd_y:.4} gap/sd {:.3}", gap / sd_y);

    let tie = argmax_dgp_tie();
    let (_p, td, _m2, _tj) = effect_diff_truth(&tie);
    println!("tie: deltas {td:?}");

    let t0 = std::time::Instant::now();
    let out = run_argmax_selection(&ArgmaxOptions::default()).unwrap();
    println!("--- argmax ({:.1}s)", t0.elapsed().as_secs_f64());
    for row in &out.table_rows { println!("  {row:?}"); }
    for (k, v) in &out.stats { println!("  {k} = {v}"); }
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

    let t0 = std::time::Instant::now();
    let out = run_coverage(&CoverageOptions::default()).unwrap();
    println!("--- coverage ({:.1}s)", t0.elapsed().as_secs_f64());
    for c in &out.checks { println!("  [{}] {}: {}", if c.pass {"PASS"} else {"FAIL"}, c.name, c.detail); }

    let t0 = std::time::Instant::now();
    let out = run_example1(100_000, 424242).unwrap();
    println!("--- example 1 ({:.1}s)", t0.elapsed().as_secs_f64());
    for (k, v) in &out.stats { println!("  {k} = {v}"); }
    for c in &out.checks { println!("  [{}] {}: {}", if c.pass {"PASS"} else {"FAIL"}, c.name, c.detail); }

    let t0 = std::time::Instant::now();
    let out = run_example2(100_000, 434343).unwrap();
    println!("--- example 2 ({:.1}s)", t0.elapsed().as_secs_f64());
    for (k, v) in &out.stats { println!("  {k} = {v}"); }
    for c in &out.checks { println!("  [{}] {}: {}", if c.pass {"PASS"} else {"FAIL"}, c.name, c.detail); }
}
