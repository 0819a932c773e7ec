//! Broadcast colouring models on trees.
//!
//! The crate samples the broadcast process on regular and Galton-Watson
//! trees, computes exact root posteriors by belief propagation, estimates
//! the reconstruction statistics `x_n`, `z_n`, `p_n` and the total-variation
//! distance by Monte Carlo, and evaluates the scalar fixed-point maps and
//! threshold formulas for the colouring model.
//!
//! Colours are 0-based internally. Everything that crosses the JSON/CSV
//! boundary uses 1-based labels.

pub mod analytic;
pub mod bp;
pub mod broadcast;
pub mod coupling;
pub mod error;
pub mod estimators;
pub mod model;
pub mod rng;
pub mod runner;
pub mod stats;

pub use bp::{enumerate_posterior, frozen_root, root_posterior, Belief};
pub use broadcast::{sample_broadcast, sample_gw_offspring, LeafConfig, RootChoice, SampledTree};
pub use error::{Error, Result};
pub use model::{Channel, Colour, TreeKind, TreeSpec};
pub use stats::Estimate;
