//! Sample the colouring broadcast on a regular tree and a Galton-Watson tree.

use tree_recon::{sample_broadcast, sample_gw_offspring, Channel, Colour, RootChoice, TreeSpec};

fn main() -> tree_recon::Result<()> {
    let channel = Channel::colouring(3)?;

    let tree = TreeSpec::regular(2, 3)?;
    let cfg = sample_broadcast(&channel, tree, RootChoice::Fixed(Colour(0)), 7)?;
    let labels: Vec<u32> = cfg.leaves.iter().map(|c| c.label()).collect();
    println!("regular(2), depth 3, root 1: leaves {labels:?}");
    println!("{}", serde_json::to_string(&cfg)?);

    let gw = TreeSpec::gw_poisson(2.5, 4)?;
    let cfg = sample_broadcast(&channel, gw, RootChoice::Uniform, 7)?;
    println!(
        "GW Poisson(2.5), depth 4: root {:?}, {} vertices, {} leaves",
        cfg.root.map(|c| c.label()),
        cfg.tree.vertex_count()?,
        cfg.leaves.len()
    );

    let counts: Vec<u32> = (0..10).map(|s| sample_gw_offspring(2.5, s)).collect::<Result<_, _>>()?;
    println!("offspring draws: {counts:?}");
    Ok(())
}
