//! Reconstruction bounds, the census criterion and uniqueness.

use tree_recon::analytic::{ks_reconstructs, threshold_bounds, uniqueness_holds};
use tree_recon::Channel;

fn main() -> tree_recon::Result<()> {
    println!("{:>4} {:>10} {:>10} {:>8} {:>10}", "k", "lower", "upper", "(k-1)^2", "unique <=");
    for k in [3u64, 5, 10, 20, 100, 1000] {
        let b = threshold_bounds(k)?;
        let census = (k - 1) * (k - 1);
        let unique_up_to = (1..).take_while(|&d| uniqueness_holds(k, d)).last().unwrap_or(0);
        println!("{k:>4} {:>10.2} {:>10.2} {census:>8} {unique_up_to:>10}", b.lower, b.upper);
    }

    let ch = Channel::colouring(5)?;
    for delta in [16.0, 17.0] {
        println!("colouring k=5, delta={delta}: census reconstruction = {}", ks_reconstructs(&ch, delta));
    }
    let bsc = Channel::bsc(0.25)?;
    for delta in [4.0, 4.5] {
        println!("BSC(0.25), delta={delta}: census reconstruction = {}", ks_reconstructs(&bsc, delta));
    }
    Ok(())
}
