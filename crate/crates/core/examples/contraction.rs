//! One-step contraction of x_n - 1/k for k = 20, delta = 30.

use tree_recon::analytic::contraction_coefficient;
use tree_recon::estimators::check_contraction;
use tree_recon::{Channel, TreeSpec};

fn main() -> tree_recon::Result<()> {
    let k = 20;
    let channel = Channel::colouring(k)?;
    println!("{:?}", contraction_coefficient(k as u64, 30.0));
    for n in 1..=2 {
        let r = check_contraction(&channel, TreeSpec::regular(30, n)?, 2_000, 5)?;
        println!(
            "n={n}: x_n={:.5} x_n+1={:.5} applicable={} excess={:+.2e} +- {:.1e} {}",
            r.x_n.mean,
            r.x_next.mean,
            r.applicable,
            r.excess.mean,
            r.excess.se,
            if r.passes { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
