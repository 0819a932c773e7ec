//! How x_n, z_n, p_n and the total-variation distance change with depth.

use tree_recon::runner::{run_scan, OutputFormat, RunConfig, TreeFamily};

fn main() -> tree_recon::Result<()> {
    let config = RunConfig {
        ks: vec![3, 5],
        deltas: vec![2.0, 6.0],
        depths: (0..=4).collect(),
        trials: 20_000,
        seed: 1,
        tree: TreeFamily::Regular,
        format: OutputFormat::Csv,
        output: None,
    };
    let table = run_scan(&config)?;
    println!("{:>3} {:>5} {:>2} {:>8} {:>8} {:>8} {:>8}", "k", "delta", "n", "x_n", "z_n", "p_n", "tv");
    for row in &table.rows {
        let r = &row.report;
        let m = |e: Option<tree_recon::Estimate>| e.map(|e| e.mean).unwrap_or(f64::NAN);
        println!(
            "{:>3} {:>5} {:>2} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            row.k,
            row.delta,
            row.n,
            m(r.x_n),
            m(r.z_n),
            m(r.p_n),
            m(r.tv)
        );
    }
    Ok(())
}
