//! Multinomial counts dominated by independent Poisson counts.

use tree_recon::coupling::{coupling_test, sample_coupled};

fn main() -> tree_recon::Result<()> {
    for seed in 0..3 {
        let c = sample_coupled(5, 20, 5.0, seed)?;
        println!("multinomial {:?}  poisson {:?}  dominated {}", c.multinomial, c.poisson, c.dominated);
    }
    let r = coupling_test(5, 20, 5.0, 200_000, 1)?;
    println!("{} draws, {} violations, smallest chi-square p-value {:.3}", r.trials, r.violations, r.min_p_value());
    Ok(())
}
