//! Exact root posteriors: belief propagation, enumeration and frozen roots.

use tree_recon::bp::enumerate_posterior;
use tree_recon::{frozen_root, root_posterior, Channel, LeafConfig};

fn main() -> tree_recon::Result<()> {
    let channel = Channel::colouring(3)?;

    let cfg: LeafConfig = serde_json::from_str(r#"{"depth":2,"offspring":[2,2,2],"leaves":[2,3,3,2]}"#)?;
    let bp = root_posterior(&channel, &cfg)?;
    let brute = enumerate_posterior(&channel, &cfg)?;
    println!("leaves (2,3,3,2): BP {:?}", bp.probs());
    println!("                  enumeration {:?}", brute.probs());
    println!("                  max diff {:.2e}", bp.max_abs_diff(&brute));

    let star: LeafConfig = serde_json::from_str(r#"{"depth":1,"offspring":[2],"leaves":[2,3]}"#)?;
    println!("children (2,3): {:?}, frozen = {}", root_posterior(&channel, &star)?.probs(), frozen_root(&channel, &star)?);

    let open: LeafConfig = serde_json::from_str(r#"{"depth":1,"offspring":[2],"leaves":[2,2]}"#)?;
    println!("children (2,2): {:?}, frozen = {}", root_posterior(&channel, &open)?.probs(), frozen_root(&channel, &open)?);

    let impossible: LeafConfig = serde_json::from_str(r#"{"depth":1,"offspring":[3],"leaves":[1,2,3]}"#)?;
    match root_posterior(&channel, &impossible) {
        Err(e) => println!("children (1,2,3): {e}"),
        Ok(b) => println!("children (1,2,3): {:?}", b.probs()),
    }

    let bsc = Channel::bsc(0.1)?;
    let chain: LeafConfig = serde_json::from_str(r#"{"depth":2,"offspring":[1,1],"leaves":[1]}"#)?;
    println!("BSC(0.1), path of length 2, leaf 1: {:?}", root_posterior(&bsc, &chain)?.probs());
    Ok(())
}
