//! Reconstruction statistics on Poisson Galton-Watson trees.

use tree_recon::estimators::simulate;
use tree_recon::{Channel, TreeSpec};

fn main() -> tree_recon::Result<()> {
    let channel = Channel::colouring(3)?;
    for mean in [1.5, 3.0] {
        for n in 0..=4 {
            let r = simulate(&channel, TreeSpec::gw_poisson(mean, n)?, 20_000, 2)?;
            let x = r.x_n.unwrap();
            let p = r.p_n.unwrap();
            println!("mean {mean}, n={n}: x_n = {:.4} +- {:.4}, p_n = {:.4}", x.mean, x.se, p.mean);
        }
    }
    Ok(())
}
