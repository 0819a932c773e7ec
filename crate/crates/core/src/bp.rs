//! Exact root posteriors.
//!
//! [`root_posterior`] runs the upward message recursion in log space.
//! [`enumerate_posterior`] is an independent oracle that sums the product
//! measure over interior colourings in linear space. [`frozen_root`] decides,
//! by exact set arithmetic, whether the boundary pins the root colour.

use serde::{Deserialize, Serialize};

use crate::broadcast::{LeafConfig, TreeIndex};
use crate::error::{Error, Result};
use crate::model::{Channel, ChannelKind, Colour};

/// Default cap on enumeration terms.
pub const ENUMERATION_CAP: f64 = 1e7;

/// A probability vector over root colours.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief {
    probs: Vec<f64>,
}

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let s: f64 = probs.iter().sum();
        if probs.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-10 {
            return Err(Error::invalid("belief must be a probability vector"));
        }
        Ok(Belief { probs })
    }

    pub fn uniform(k: usize) -> Self {
        Belief { probs: vec![1.0 / k as f64; k] }
    }

    pub fn point(k: usize, c: Colour) -> Self {
        let mut probs = vec![0.0; k];
        probs[c.index()] = 1.0;
        Belief { probs }
    }

    fn from_log_weights(logw: &[f64]) -> Self {
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logw.iter().map(|&l| (l - max).exp()).collect();
        let s: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= s);
        Belief { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn get(&self, c: Colour) -> f64 {
        self.probs[c.index()]
    }

    pub fn max_abs_diff(&self, other: &Belief) -> f64 {
        self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Scratch buffers for repeated posterior computations.
#[derive(Clone, Debug, Default)]
pub struct PosteriorEngine {
    k: usize,
    /// Normalised log-likelihoods of the level being built.
    upper: Vec<f64>,
    /// Normalised log-likelihoods of the level below it.
    lower: Vec<f64>,
    /// Log-likelihoods of the root's children, kept from the last run.
    children: Vec<f64>,
    weights: Vec<f64>,
    suffix: Vec<f64>,
    message: Vec<f64>,
    forbidden: Vec<u64>,
    status: Vec<Freeze>,
    status_next: Vec<Freeze>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Freeze {
    Frozen(u32),
    Free,
    Impossible,
}

impl PosteriorEngine {
    pub fn new() -> Self {
        Self::default()
    }

    /// Root log-weights `log P(boundary | root = i)` up to a constant, max-normalised.
    fn upward(&mut self, channel: &Channel, config: &LeafConfig) -> Result<()> {
        let k = channel.k();
        self.k = k;
        self.weights.resize(k, 0.0);
        self.suffix.resize(k + 1, 0.0);
        self.message.resize(k, 0.0);
        self.children.clear();

        let leaves = &config.leaves;
        let offspring = &config.tree.offspring;
        let depth = config.tree.depth as usize;

        self.lower.clear();
        for &c in leaves {
            let base = self.lower.len();
            self.lower.resize(base + k, f64::NEG_INFINITY);
            self.lower[base + c.index()] = 0.0;
        }
        if depth == 0 {
            // root observed directly
            self.upper.clone_from(&self.lower);
            return Ok(());
        }

        // walk levels bottom-up; the offspring entries of level d sit at
        // [start_d, start_d + width_d) in breadth-first order
        let sizes = config.tree.level_sizes()?;
        let mut start = offspring.len();
        for d in (0..depth).rev() {
            let width = sizes[d];
            start -= width;
            if d == 0 {
                self.children.clone_from(&self.lower);
            }
            self.upper.clear();
            self.upper.resize(width * k, 0.0);
            let mut child = 0usize;
            for v in 0..width {
                let count = offspring[start + v] as usize;
                let acc = &mut self.upper[v * k..(v + 1) * k];
                for u in child..child + count {
                    let lam = &self.lower[u * k..(u + 1) * k];
                    log_message(channel, lam, &mut self.weights, &mut self.suffix, &mut self.message);
                    for (a, m) in acc.iter_mut().zip(&self.message) {
                        *a += m;
                    }
                }
                child += count;
                let max = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return Err(Error::ZeroProbabilityBoundary);
                }
                if max.is_nan() {
                    return Err(Error::NumericalFailure("NaN in posterior recursion".into()));
                }
                acc.iter_mut().for_each(|a| *a -= max);
            }
            std::mem::swap(&mut self.upper, &mut self.lower);
        }
        std::mem::swap(&mut self.upper, &mut self.lower);
        Ok(())
    }

    pub fn posterior(&mut self, channel: &Channel, config: &LeafConfig) -> Result<Belief> {
        config.validate(channel.k())?;
        self.upward(channel, config)?;
        Ok(Belief::from_log_weights(&self.upper[..self.k]))
    }

    /// Root posterior together with the posterior of each root child given
    /// its own subtree boundary.
    pub fn posterior_with_children(&mut self, channel: &Channel, config: &LeafConfig) -> Result<(Belief, Vec<Belief>)> {
        let root = self.posterior(channel, config)?;
        let kids = self.children.chunks_exact(self.k).map(Belief::from_log_weights).collect();
        Ok((root, kids))
    }

    /// Writes the root posterior into `out` (length `k`) and, when requested,
    /// the child posteriors into `children` (row per child), without allocating.
    pub fn posterior_into(
        &mut self,
        channel: &Channel,
        config: &LeafConfig,
        out: &mut [f64],
        children: Option<&mut Vec<f64>>,
    ) -> Result<()> {
        self.upward(channel, config)?;
        normalise_into(&self.upper[..self.k], out);
        if let Some(ch) = children {
            ch.resize(self.children.len(), 0.0);
            for (src, dst) in self.children.chunks_exact(self.k).zip(ch.chunks_exact_mut(self.k)) {
                normalise_into(src, dst);
            }
        }
        Ok(())
    }

    /// True iff exactly one root colour is consistent with the boundary
    /// under the colouring channel.
    pub fn frozen(&mut self, channel: &Channel, config: &LeafConfig) -> Result<bool> {
        if !channel.is_colouring() {
            return Err(Error::invalid("frozen-root detection needs the colouring channel"));
        }
        config.validate(channel.k())?;
        Ok(matches!(self.frozen_status(channel.k(), config)?, Freeze::Frozen(_)))
    }

    fn frozen_status(&mut self, k: usize, config: &LeafConfig) -> Result<Freeze> {
        let words = k.div_ceil(64);
        self.forbidden.resize(words, 0);
        self.status.clear();
        self.status.extend(config.leaves.iter().map(|c| Freeze::Frozen(c.0)));
        let depth = config.tree.depth as usize;
        if depth == 0 {
            return Ok(self.status[0]);
        }
        let sizes = config.tree.level_sizes()?;
        let offspring = &config.tree.offspring;
        let mut start = offspring.len();
        for d in (0..depth).rev() {
            let width = sizes[d];
            start -= width;
            self.status_next.clear();
            let mut child = 0usize;
            for v in 0..width {
                let count = offspring[start + v] as usize;
                self.forbidden.iter_mut().for_each(|w| *w = 0);
                let mut impossible = false;
                for s in &self.status[child..child + count] {
                    match *s {
                        Freeze::Frozen(c) => self.forbidden[c as usize / 64] |= 1u64 << (c % 64),
                        Freeze::Impossible => impossible = true,
                        Freeze::Free => {}
                    }
                }
                child += count;
                let blocked: usize = self.forbidden.iter().map(|w| w.count_ones() as usize).sum();
                let st = if impossible || blocked == k {
                    Freeze::Impossible
                } else if blocked == k - 1 {
                    let c = (0..k).find(|&c| self.forbidden[c / 64] & (1u64 << (c % 64)) == 0).unwrap();
                    Freeze::Frozen(c as u32)
                } else {
                    Freeze::Free
                };
                self.status_next.push(st);
            }
            std::mem::swap(&mut self.status, &mut self.status_next);
        }
        Ok(self.status[0])
    }
}

fn normalise_into(logw: &[f64], out: &mut [f64]) {
    let mut s = 0.0;
    for (o, &l) in out.iter_mut().zip(logw) {
        *o = l.exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

/// Log of the message a child sends to its parent: `log sum_j M[i][j] w_j`
/// where `w = exp(lam)`, dropping factors that do not depend on `i`.
#[inline]
fn log_message(channel: &Channel, lam: &[f64], w: &mut [f64], suffix: &mut [f64], out: &mut [f64]) {
    let k = lam.len();
    for (wi, &l) in w.iter_mut().zip(lam) {
        *wi = l.exp();
    }
    match channel.kind() {
        ChannelKind::Colouring => {
            // sum over j != i, from prefix and suffix sums to avoid cancellation
            suffix[k] = 0.0;
            for j in (0..k).rev() {
                suffix[j] = suffix[j + 1] + w[j];
            }
            let mut prefix = 0.0;
            for i in 0..k {
                out[i] = (prefix + suffix[i + 1]).ln();
                prefix += w[i];
            }
        }
        _ => {
            for (i, o) in out.iter_mut().enumerate() {
                let s: f64 = channel.row(i).iter().zip(w.iter()).map(|(m, x)| m * x).sum();
                *o = s.ln();
            }
        }
    }
}

/// Exact conditional law of the root colour given the boundary, uniform prior.
pub fn root_posterior(channel: &Channel, config: &LeafConfig) -> Result<Belief> {
    PosteriorEngine::new().posterior(channel, config)
}

pub fn frozen_root(channel: &Channel, config: &LeafConfig) -> Result<bool> {
    PosteriorEngine::new().frozen(channel, config)
}

/// Root posterior by explicit summation, with the default term cap.
pub fn enumerate_posterior(channel: &Channel, config: &LeafConfig) -> Result<Belief> {
    enumerate_posterior_capped(channel, config, ENUMERATION_CAP)
}

/// Root posterior by explicit summation over interior colourings.
///
/// The sum over all interior assignments factorises over the root's
/// children, so each child subtree is enumerated on its own: for a child
/// `u` with `m` interior descendants this costs `k^(m+1)` terms. The total
/// across children must stay below `cap`.
pub fn enumerate_posterior_capped(channel: &Channel, config: &LeafConfig, cap: f64) -> Result<Belief> {
    let k = channel.k();
    config.validate(k)?;
    let depth = config.tree.depth as usize;
    if depth == 0 {
        return Ok(Belief::point(k, config.leaves[0]));
    }
    let idx = TreeIndex::new(&config.tree)?;

    // collect each child subtree: its vertices above the boundary and edges
    let mut subtrees = Vec::new();
    let mut terms = 0.0;
    for u in idx.children(0) {
        let mut free = Vec::new(); // vertices whose colour is summed over, u first
        let mut edges = Vec::new(); // (parent, child) pairs inside the subtree
        let mut stack = vec![u];
        while let Some(v) = stack.pop() {
            if idx.leaf_slot(v).is_none() {
                free.push(v);
                for c in idx.children(v) {
                    edges.push((v, c));
                    stack.push(c);
                }
            }
        }
        free.sort_unstable();
        terms += (k as f64).powi(free.len() as i32).max(1.0);
        subtrees.push((u, free, edges));
    }
    if terms > cap {
        return Err(Error::InstanceTooLarge { terms, cap });
    }

    let mut colour = vec![0usize; idx.vertex_count()];
    let leaf0 = idx.level_start[depth];
    for (slot, c) in config.leaves.iter().enumerate() {
        colour[leaf0 + slot] = c.index();
    }

    let mut root_lik = vec![1.0f64; k];
    for (u, free, edges) in &subtrees {
        // lik[c] = P(subtree boundary | colour(u) = c)
        let mut lik = vec![0.0f64; k];
        if free.is_empty() {
            // u is itself on the boundary
            lik[colour[*u]] = 1.0;
        } else {
            let mut assign = vec![0usize; free.len()];
            loop {
                for (&v, &a) in free.iter().zip(&assign) {
                    colour[v] = a;
                }
                let w: f64 = edges.iter().map(|&(p, c)| channel.entry(colour[p], colour[c])).product();
                lik[assign[0]] += w;
                // odometer
                let mut pos = assign.len();
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    assign[pos] += 1;
                    if assign[pos] < k {
                        break;
                    }
                    assign[pos] = 0;
                    if pos == 0 {
                        pos = usize::MAX;
                        break;
                    }
                }
                if pos == usize::MAX {
                    break;
                }
            }
        }
        for (r, rl) in root_lik.iter_mut().enumerate() {
            *rl *= (0..k).map(|c| channel.entry(r, c) * lik[c]).sum::<f64>();
        }
    }
    let total: f64 = root_lik.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroProbabilityBoundary);
    }
    Ok(Belief { probs: root_lik.into_iter().map(|p| p / total).collect() })
}
