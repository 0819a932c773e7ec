//! The decay map g and the frozen-root map, and the first k at which each
//! reaches its conclusion.

use tree_recon::analytic::{run_map, smallest_qualifying_k, DeltaRule, MapKind, DEFAULT_MAX_STEPS, DEFAULT_TOL};

fn main() -> tree_recon::Result<()> {
    let beta_g = 1.0 - std::f64::consts::LN_2 - 0.05;
    for (map, beta, rule) in [
        (MapKind::Decay, beta_g, DeltaRule::Auto),
        (MapKind::Decay, beta_g, DeltaRule::Offset(beta_g - 0.1)),
        (MapKind::Freezing, 1.05, DeltaRule::Auto),
        (MapKind::Freezing, 1.5, DeltaRule::Offset(1.6)),
    ] {
        for k in [1_000u64, 10_000, 100_000] {
            let run = run_map(map, k, beta, rule, DEFAULT_MAX_STEPS, DEFAULT_TOL)?;
            println!(
                "{map:?} beta*={beta:.4} {rule:?} k={k}: delta={} tail={:.3e} steps={} limit={:.4e} target={:.4e} holds={}",
                run.delta,
                run.tail,
                run.trace.values.len() - 1,
                run.trace.limit_estimate,
                run.target,
                run.holds
            );
        }
    }
    let ks = (1..=7).map(|e| 10u64.pow(e));
    let first = smallest_qualifying_k(MapKind::Decay, beta_g, DeltaRule::Offset(beta_g - 0.1), ks)?;
    println!("smallest k in 10^1..10^7 where g concludes (offset degree): {first:?}");
    Ok(())
}
