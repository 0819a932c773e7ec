//! Sampling the broadcast process on a tree.
//!
//! Colours are generated level by level in breadth-first order, children left
//! to right. Only the current level is held in memory; the realised offspring
//! counts are kept so the boundary can be mapped back onto the tree.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Channel, Colour, TreeKind, TreeSpec};
use crate::rng::{seeded_rng, Purpose};

/// Largest boundary a single sample may have.
pub const MAX_LEAVES: usize = 1 << 28;

/// One realisation of the tree shape down to `depth`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SampledTree {
    /// Child counts of every vertex above the boundary, breadth-first.
    pub offspring: Vec<u32>,
    pub depth: u32,
}

impl SampledTree {
    /// Number of vertices at each depth `0..=depth`.
    pub fn level_sizes(&self) -> Result<Vec<usize>> {
        let mut sizes = Vec::with_capacity(self.depth as usize + 1);
        sizes.push(1usize);
        let mut pos = 0usize;
        for _ in 0..self.depth {
            let width = *sizes.last().unwrap();
            let counts = self
                .offspring
                .get(pos..pos + width)
                .ok_or_else(|| Error::invalid("offspring list is shorter than the tree requires"))?;
            sizes.push(counts.iter().map(|&c| c as usize).sum());
            pos += width;
        }
        if pos != self.offspring.len() {
            return Err(Error::invalid(format!(
                "offspring list has {} entries, tree of depth {} uses {pos}",
                self.offspring.len(),
                self.depth
            )));
        }
        Ok(sizes)
    }

    pub fn leaf_count(&self) -> Result<usize> {
        Ok(*self.level_sizes()?.last().unwrap())
    }

    pub fn vertex_count(&self) -> Result<usize> {
        Ok(self.level_sizes()?.iter().sum())
    }

    pub fn regular(delta: u32, depth: u32) -> Result<Self> {
        let mut offspring = Vec::new();
        let mut width = 1usize;
        for _ in 0..depth {
            offspring.extend(std::iter::repeat_n(delta, width));
            width = width
                .checked_mul(delta as usize)
                .filter(|&w| w <= MAX_LEAVES)
                .ok_or_else(|| Error::invalid("tree too large to materialise"))?;
        }
        Ok(SampledTree { offspring, depth })
    }
}

/// Explicit parent/child layout of a [`SampledTree`], vertices numbered breadth-first.
#[derive(Clone, Debug)]
pub struct TreeIndex {
    /// First vertex index of each level, plus one past the end.
    pub level_start: Vec<usize>,
    /// For every vertex above the boundary, the index of its first child.
    pub first_child: Vec<usize>,
    pub offspring: Vec<u32>,
}

impl TreeIndex {
    pub fn new(tree: &SampledTree) -> Result<Self> {
        let sizes = tree.level_sizes()?;
        let mut level_start = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0usize;
        for s in &sizes {
            level_start.push(acc);
            acc += s;
        }
        level_start.push(acc);
        let mut first_child = Vec::with_capacity(tree.offspring.len());
        let mut next = 1usize;
        for &c in &tree.offspring {
            first_child.push(next);
            next += c as usize;
        }
        Ok(TreeIndex { level_start, first_child, offspring: tree.offspring.clone() })
    }

    pub fn depth(&self) -> usize {
        self.level_start.len() - 2
    }

    pub fn vertex_count(&self) -> usize {
        *self.level_start.last().unwrap()
    }

    pub fn depth_of(&self, v: usize) -> usize {
        self.level_start.partition_point(|&s| s <= v) - 1
    }

    pub fn children(&self, v: usize) -> std::ops::Range<usize> {
        match self.first_child.get(v) {
            Some(&f) => f..f + self.offspring[v] as usize,
            None => 0..0,
        }
    }

    /// Index into the boundary array for a boundary vertex.
    pub fn leaf_slot(&self, v: usize) -> Option<usize> {
        let d = self.depth();
        (v >= self.level_start[d]).then(|| v - self.level_start[d])
    }
}

/// The boundary colours of one broadcast sample.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LeafConfig {
    pub tree: SampledTree,
    /// The root colour the sample was generated from, when known.
    pub root: Option<Colour>,
    /// Colours at depth `tree.depth`, breadth-first order.
    pub leaves: Vec<Colour>,
}

impl LeafConfig {
    pub fn depth(&self) -> u32 {
        self.tree.depth
    }

    /// The configurations seen by each child of the root: subtree shape and
    /// boundary, one level shallower. The `root` field holds the child's colour
    /// only when it is a boundary vertex itself.
    pub fn child_subtrees(&self) -> Result<Vec<LeafConfig>> {
        let depth = self.tree.depth as usize;
        if depth == 0 {
            return Ok(Vec::new());
        }
        let idx = TreeIndex::new(&self.tree)?;
        let mut out = Vec::new();
        for child in idx.children(0) {
            let mut offspring = Vec::new();
            let mut level = vec![child];
            for _ in 1..depth {
                let mut next = Vec::new();
                for &v in &level {
                    offspring.push(idx.offspring[v]);
                    next.extend(idx.children(v));
                }
                level = next;
            }
            let leaves: Vec<Colour> = level.iter().map(|&v| self.leaves[idx.leaf_slot(v).unwrap()]).collect();
            out.push(LeafConfig {
                tree: SampledTree { offspring, depth: self.tree.depth - 1 },
                root: if depth == 1 { Some(leaves[0]) } else { None },
                leaves,
            });
        }
        Ok(out)
    }

    /// Checks that the leaf list fits the tree and every colour is below `k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        let n = self.tree.leaf_count()?;
        if n != self.leaves.len() {
            return Err(Error::invalid(format!("tree has {n} leaves, configuration lists {}", self.leaves.len())));
        }
        if let Some(c) = self.leaves.iter().chain(self.root.iter()).find(|c| c.index() >= k) {
            return Err(Error::invalid(format!("colour {c} outside 1..={k}")));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct LeafConfigWire {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    root: Option<u32>,
    depth: u32,
    offspring: Vec<u32>,
    leaves: Vec<u32>,
}

impl Serialize for LeafConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LeafConfigWire {
            root: self.root.map(Colour::label),
            depth: self.tree.depth,
            offspring: self.tree.offspring.clone(),
            leaves: self.leaves.iter().map(|c| c.label()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LeafConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let w = LeafConfigWire::deserialize(d)?;
        let label = |l: u32| Colour::from_label(l).map_err(D::Error::custom);
        let config = LeafConfig {
            tree: SampledTree { offspring: w.offspring, depth: w.depth },
            root: w.root.map(label).transpose()?,
            leaves: w.leaves.into_iter().map(label).collect::<std::result::Result<_, _>>()?,
        };
        config.tree.level_sizes().map_err(D::Error::custom)?;
        Ok(config)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RootChoice {
    Fixed(Colour),
    Uniform,
}

/// Reusable sampler for one (channel, tree) pair.
#[derive(Clone, Debug)]
pub struct Broadcaster<'a> {
    channel: &'a Channel,
    tree: TreeSpec,
    poisson: Option<Poisson<f64>>,
}

impl<'a> Broadcaster<'a> {
    pub fn new(channel: &'a Channel, tree: TreeSpec) -> Result<Self> {
        let poisson = match tree.kind {
            TreeKind::Regular { delta } => {
                let leaves = (delta as f64).powi(tree.depth as i32);
                if leaves > MAX_LEAVES as f64 {
                    return Err(Error::invalid(format!("{delta}^{} leaves is too many to sample", tree.depth)));
                }
                None
            }
            TreeKind::GaltonWatsonPoisson { mean } => {
                Some(Poisson::new(mean).map_err(|e| Error::invalid(format!("poisson mean {mean}: {e}")))?)
            }
        };
        Ok(Broadcaster { channel, tree, poisson })
    }

    pub fn channel(&self) -> &Channel {
        self.channel
    }

    /// Fills `out` with one sample. `scratch` is a level buffer kept by the caller.
    pub fn sample_into<R: Rng + ?Sized>(
        &self,
        root: RootChoice,
        rng: &mut R,
        out: &mut LeafConfig,
        scratch: &mut Vec<Colour>,
    ) -> Result<()> {
        let k = self.channel.k();
        let root = match root {
            RootChoice::Fixed(c) => {
                if c.index() >= k {
                    return Err(Error::invalid(format!("root colour {c} outside 1..={k}")));
                }
                c
            }
            RootChoice::Uniform => Colour(rng.random_range(0..k as u32)),
        };
        out.root = Some(root);
        out.tree.depth = self.tree.depth;
        out.tree.offspring.clear();
        out.leaves.clear();
        out.leaves.push(root);
        for _ in 0..self.tree.depth {
            scratch.clear();
            for &parent in out.leaves.iter() {
                let children = match &self.poisson {
                    None => match self.tree.kind {
                        TreeKind::Regular { delta } => delta,
                        TreeKind::GaltonWatsonPoisson { .. } => unreachable!(),
                    },
                    Some(p) => draw_offspring(p, rng),
                };
                out.tree.offspring.push(children);
                for _ in 0..children {
                    scratch.push(self.channel.sample_child(parent, rng));
                }
            }
            if scratch.len() > MAX_LEAVES {
                return Err(Error::invalid("sampled tree exceeds the boundary size limit"));
            }
            std::mem::swap(&mut out.leaves, scratch);
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, root: RootChoice, rng: &mut R) -> Result<LeafConfig> {
        let mut out = LeafConfig::default();
        let mut scratch = Vec::new();
        self.sample_into(root, rng, &mut out, &mut scratch)?;
        Ok(out)
    }
}

#[inline]
fn draw_offspring<R: Rng + ?Sized>(p: &Poisson<f64>, rng: &mut R) -> u32 {
    p.sample(rng) as u32
}

/// Samples one broadcast configuration. The same inputs always give the same output.
pub fn sample_broadcast(channel: &Channel, tree: TreeSpec, root: RootChoice, seed: u64) -> Result<LeafConfig> {
    let mut rng = seeded_rng(seed);
    Broadcaster::new(channel, tree)?.sample(root, &mut rng)
}

/// One Poisson(`mean`) offspring count.
pub fn sample_gw_offspring(mean: f64, seed: u64) -> Result<u32> {
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::invalid(format!("offspring mean must be positive, got {mean}")));
    }
    let p = Poisson::new(mean).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = crate::rng::trial_rng(seed, Purpose::Offspring, 0);
    Ok(draw_offspring(&p, &mut rng))
}
