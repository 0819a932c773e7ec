//! Channels, colours and tree descriptions shared by the rest of the crate.

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums must match 1 within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A colour, stored 0-based. `Display` prints the 1-based label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[repr(transparent)]
pub struct Colour(pub u32);

impl Colour {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Builds a colour from its 1-based label.
    pub fn from_label(label: u32) -> Result<Self> {
        if label == 0 {
            return Err(Error::invalid("colour labels are 1-based"));
        }
        Ok(Colour(label - 1))
    }

    pub fn label(self) -> u32 {
        self.0 + 1
    }
}

impl fmt::Display for Colour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChannelKind {
    /// `M[i][j] = 1{i != j} / (k - 1)`.
    Colouring,
    /// Binary symmetric channel with flip probability `epsilon`.
    Bsc { epsilon: f64 },
    General,
}

/// A `k x k` row-stochastic transition matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChannelSpec", into = "ChannelSpec")]
pub struct Channel {
    k: usize,
    kind: ChannelKind,
    matrix: Vec<f64>,
    /// Row-wise cumulative sums, used by the inverse-CDF sampler.
    cumulative: Vec<f64>,
}

impl Channel {
    /// The proper-colouring channel on `k` colours.
    pub fn colouring(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("colouring channel needs k >= 2, got {k}")));
        }
        let off = 1.0 / (k as f64 - 1.0);
        let mut matrix = vec![off; k * k];
        for i in 0..k {
            matrix[i * k + i] = 0.0;
        }
        Ok(Self::build(k, ChannelKind::Colouring, matrix))
    }

    pub fn bsc(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::invalid(format!("BSC flip probability must lie in (0, 1/2), got {epsilon}")));
        }
        let matrix = vec![1.0 - epsilon, epsilon, epsilon, 1.0 - epsilon];
        Ok(Self::build(2, ChannelKind::Bsc { epsilon }, matrix))
    }

    /// An arbitrary row-stochastic matrix. No thresholds are provided for these.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if k < 2 {
            return Err(Error::invalid("a channel needs at least two colours"));
        }
        let mut matrix = Vec::with_capacity(k * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(format!("row {i} has {} entries, expected {k}", row.len())));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::invalid(format!("row {i} has an entry outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!("row {i} sums to {s}, not 1")));
            }
            matrix.extend_from_slice(row);
        }
        Ok(Self::build(k, ChannelKind::General, matrix))
    }

    fn build(k: usize, kind: ChannelKind, matrix: Vec<f64>) -> Self {
        let mut cumulative = Vec::with_capacity(k * k);
        for row in matrix.chunks_exact(k) {
            let mut acc = 0.0;
            for &p in row {
                acc += p;
                cumulative.push(acc);
            }
        }
        Channel { k, kind, matrix, cumulative }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn is_colouring(&self) -> bool {
        matches!(self.kind, ChannelKind::Colouring)
    }

    pub fn entry(&self, from: usize, to: usize) -> f64 {
        self.matrix[from * self.k + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.matrix[from * self.k..(from + 1) * self.k]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.matrix.chunks_exact(self.k).map(<[f64]>::to_vec).collect()
    }

    /// Draws a child colour given the parent colour.
    #[inline]
    pub fn sample_child<R: Rng + ?Sized>(&self, parent: Colour, rng: &mut R) -> Colour {
        match self.kind {
            ChannelKind::Colouring => {
                let r = rng.random_range(0..self.k as u32 - 1);
                Colour(if r >= parent.0 { r + 1 } else { r })
            }
            ChannelKind::Bsc { epsilon } => {
                if rng.random::<f64>() < epsilon {
                    Colour(1 - parent.0)
                } else {
                    parent
                }
            }
            ChannelKind::General => {
                let cum = &self.cumulative[parent.index() * self.k..(parent.index() + 1) * self.k];
                let u: f64 = rng.random();
                let idx = cum.partition_point(|&c| c <= u).min(self.k - 1);
                // skip zero-probability cells that share the same cumulative value
                let idx = (idx..self.k).find(|&j| self.entry(parent.index(), j) > 0.0).unwrap_or(idx);
                Colour(idx as u32)
            }
        }
    }

    /// Second-largest eigenvalue in absolute value, signed.
    ///
    /// Closed forms for the colouring (`-1/(k-1)`) and binary symmetric
    /// (`1 - 2 eps`) channels; a dense eigensolver otherwise. A complex
    /// pair is reported by its modulus.
    pub fn second_eigenvalue(&self) -> f64 {
        match self.kind {
            ChannelKind::Colouring => -1.0 / (self.k as f64 - 1.0),
            ChannelKind::Bsc { epsilon } => 1.0 - 2.0 * epsilon,
            ChannelKind::General => {
                let m = DMatrix::from_row_slice(self.k, self.k, &self.matrix);
                let mut eig: Vec<_> = m.complex_eigenvalues().iter().copied().collect();
                eig.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
                let second = eig[1];
                if second.im.abs() <= 1e-10 {
                    second.re
                } else {
                    second.norm()
                }
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ChannelSpec {
    Colouring { k: usize },
    Bsc { epsilon: f64 },
    Matrix { rows: Vec<Vec<f64>> },
}

impl TryFrom<ChannelSpec> for Channel {
    type Error = Error;

    fn try_from(spec: ChannelSpec) -> Result<Self> {
        match spec {
            ChannelSpec::Colouring { k } => Channel::colouring(k),
            ChannelSpec::Bsc { epsilon } => Channel::bsc(epsilon),
            ChannelSpec::Matrix { rows } => Channel::from_rows(&rows),
        }
    }
}

impl From<Channel> for ChannelSpec {
    fn from(c: Channel) -> Self {
        match c.kind {
            ChannelKind::Colouring => ChannelSpec::Colouring { k: c.k },
            ChannelKind::Bsc { epsilon } => ChannelSpec::Bsc { epsilon },
            ChannelKind::General => ChannelSpec::Matrix { rows: c.rows() },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TreeKind {
    /// Every vertex above the boundary has exactly `delta` children.
    Regular { delta: u32 },
    /// Offspring counts are i.i.d. Poisson with the given mean.
    GaltonWatsonPoisson { mean: f64 },
}

/// A tree truncated at `depth`; the boundary is the set of depth-`depth` vertices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeWire", into = "TreeWire")]
pub struct TreeSpec {
    pub kind: TreeKind,
    pub depth: u32,
}

impl TreeSpec {
    pub fn regular(delta: u32, depth: u32) -> Result<Self> {
        if delta < 1 {
            return Err(Error::invalid("regular trees need delta >= 1"));
        }
        Ok(TreeSpec { kind: TreeKind::Regular { delta }, depth })
    }

    pub fn gw_poisson(mean: f64, depth: u32) -> Result<Self> {
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::invalid(format!("Galton-Watson mean must be positive, got {mean}")));
        }
        Ok(TreeSpec { kind: TreeKind::GaltonWatsonPoisson { mean }, depth })
    }

    pub fn with_depth(self, depth: u32) -> Self {
        TreeSpec { depth, ..self }
    }

    /// Branching factor for regular trees, mean offspring for Galton-Watson trees.
    pub fn delta(&self) -> f64 {
        match self.kind {
            TreeKind::Regular { delta } => delta as f64,
            TreeKind::GaltonWatsonPoisson { mean } => mean,
        }
    }

    pub fn is_regular(&self) -> bool {
        matches!(self.kind, TreeKind::Regular { .. })
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            TreeKind::Regular { .. } => "regular",
            TreeKind::GaltonWatsonPoisson { .. } => "gw_poisson",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "tree")]
enum TreeWire {
    #[serde(rename = "regular")]
    Regular { delta: u32, depth: u32 },
    #[serde(rename = "gw_poisson")]
    GwPoisson { delta: f64, depth: u32 },
}

impl TryFrom<TreeWire> for TreeSpec {
    type Error = Error;

    fn try_from(w: TreeWire) -> Result<Self> {
        match w {
            TreeWire::Regular { delta, depth } => TreeSpec::regular(delta, depth),
            TreeWire::GwPoisson { delta, depth } => TreeSpec::gw_poisson(delta, depth),
        }
    }
}

impl From<TreeSpec> for TreeWire {
    fn from(t: TreeSpec) -> Self {
        match t.kind {
            TreeKind::Regular { delta } => TreeWire::Regular { delta, depth: t.depth },
            TreeKind::GaltonWatsonPoisson { mean } => TreeWire::GwPoisson { delta: mean, depth: t.depth },
        }
    }
}
