use mfg_core::checks::*;
use std::time::Instant;

fn show(name: &str, r: mfg_core::Result<Vec<mfg_core::CheckResult>>, t: Instant) {
    match r {
        Ok(checks) => {
            let ok = checks.iter().all(|c| c.pass);
            println!("{name}: {} ({:.2?})", if ok { "PASS" } else { "FAIL" }, t.elapsed());
            for c in &checks {
                if !c.pass {
                    println!("    FAIL {}: residual={:.3e} bound={:.3e}", c.name, c.residual, c.bound);
                }
            }
        }
        Err(e) => println!("{name}: ERROR {e} ({:.2?})", t.elapsed()),
    }
}

fn main() {
    let seed = 20260810u64;
    let which: Vec<String> = std::env::args().skip(1).collect();
    let has = |s: &str| which.is_empty() || which.iter().any(|w| w == s);

    if has("1") { let t = Instant::now(); show("1-w1", criterion_w1_oracle(seed), t); }
    if has("2") { let t = Instant::now(); show("2-eval", criterion_evaluation_contraction(seed+1), t); }
    if has("3") { let t = Instant::now(); show("3-action", criterion_action_continuity(seed+2), t); }
    if has("4") { let t = Instant::now(); show("4-semigroup", criterion_bellman_semigroup(), t); }
    if has("5") { let t = Instant::now(); show("5-lip", criterion_lipschitz_bounds(seed+3), t); }
    if has("6") { let t = Instant::now(); show("6-cont", criterion_continuity_bounds(seed+4), t); }
    if has("7") { let t = Instant::now(); show("7-trivial", criterion_trivial_mfg(), t); }
    if ["8","9","10","11","12"].iter().any(|s| has(s)) {
        let t = Instant::now();
        let fx = Fixtures::build().unwrap();
        println!("fixtures built in {:.2?} (dec {} it, crowd {} it res {:.2e}, fine {} it res {:.2e})",
            t.elapsed(), fx.decoupled.1.report.iterations,
            fx.crowd.1.report.iterations, fx.crowd.1.report.flow_residual,
            fx.crowd_fine.1.report.iterations, fx.crowd_fine.1.report.flow_residual);
        if has("8") { let t = Instant::now(); show("8-equilibria", criterion_equilibria(&fx), t); }
        if has("9") { let t = Instant::now(); show("9-psi", criterion_psi_semigroup(&fx, seed+5), t); }
        if has("10") { let t = Instant::now(); show("10-chain", criterion_chain(), t); }
        if has("11") { let t = Instant::now(); show("11-deriv", criterion_derivative(&fx, seed+6), t); }
        if has("12") { let t = Instant::now(); show("12-necessity", criterion_necessity(&fx, seed+7), t); }
    }
}
