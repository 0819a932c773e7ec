//! Change of measure, the Y/Z moment formulas and the bounds on Z.

use tree_recon::estimators::{check_z_bounds, verify_appendix_moments, verify_change_of_measure};
use tree_recon::{Channel, TreeSpec};

fn main() -> tree_recon::Result<()> {
    let (k, delta, n) = (4, 3, 1);
    let channel = Channel::colouring(k)?;
    let tree = TreeSpec::regular(delta, n)?;
    let trials = 50_000;

    let com = verify_change_of_measure(&channel, tree, trials, 11)?;
    for c in [&com.second_moment, &com.centred] {
        println!("{:<34} {:.5} vs {:.5}  diff {:+.2e} +- {:.1e}  {}", c.name, c.lhs.mean, c.rhs.mean, c.difference.mean, c.difference.se, verdict(c.passes));
    }

    let yz = verify_appendix_moments(&channel, tree, trials, 11)?;
    println!("x_n = {:.5} +- {:.1e}, z_n = {:.5} +- {:.1e}", yz.x_n.mean, yz.x_n.se, yz.z_n.mean, yz.z_n.se);
    for m in &yz.moments {
        println!("{:<20} measured {:.6}  predicted {:.6}  sigma {:.1e}  {}", m.name, m.measured.mean, m.predicted.mean, m.sigma, verdict(m.passes));
    }
    for c in &yz.covariances {
        println!("{:<20} {:+.2e} +- {:.1e}  {}", c.name, c.estimate.mean, c.estimate.se, verdict(c.passes));
    }

    let zb = check_z_bounds(&yz, k, delta);
    match zb.reason {
        Some(r) => println!("Z bounds not applicable: {r}"),
        None => {
            for b in &zb.checks {
                println!("{:<18} {:.6} vs bound {:.6}  {}", b.name, b.measured.mean, b.bound.mean, verdict(b.passes));
            }
        }
    }
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}
