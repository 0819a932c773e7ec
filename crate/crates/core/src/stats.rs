//! Sample means, standard errors and goodness-of-fit helpers.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Trials per work block. Fixed so that partial sums, and therefore
/// floating-point results, do not depend on the worker count.
pub const BLOCK: u64 = 512;

/// A Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn exact(mean: f64) -> Self {
        Estimate { mean, se: 0.0 }
    }

    /// `|self - value| <= sigmas * se + slack`.
    pub fn agrees_with(&self, value: f64, sigmas: f64, slack: f64) -> bool {
        (self.mean - value).abs() <= sigmas * self.se + slack
    }
}

/// Running sums for a scalar sample.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanAcc {
    pub n: u64,
    pub sum: f64,
    pub sumsq: f64,
}

impl MeanAcc {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sumsq += x * x;
    }

    pub fn merge(&mut self, other: &MeanAcc) {
        self.n += other.n;
        self.sum += other.sum;
        self.sumsq += other.sumsq;
    }

    pub fn estimate(&self) -> Estimate {
        if self.n == 0 {
            return Estimate { mean: f64::NAN, se: f64::NAN };
        }
        let n = self.n as f64;
        let mean = self.sum / n;
        if self.n < 2 {
            return Estimate { mean, se: 0.0 };
        }
        let var = ((self.sumsq - n * mean * mean) / (n - 1.0)).max(0.0);
        Estimate { mean, se: (var / n).sqrt() }
    }
}

/// Runs `f` over fixed-size trial blocks in parallel and returns the block
/// results in trial order.
pub fn map_blocks<T, F>(trials: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<u64>) -> T + Sync + Send,
{
    let blocks = trials.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|b| f(b * BLOCK..((b + 1) * BLOCK).min(trials)))
        .collect()
}

/// Per-sample vectors of several statistics, kept so that smooth functions of
/// their means can be given delta-method standard errors.
#[derive(Clone, Debug, Default)]
pub struct SampleMatrix {
    cols: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(cols: usize) -> Self {
        SampleMatrix { cols, data: Vec::new() }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
    }

    pub fn append(&mut self, other: SampleMatrix) {
        self.data.extend(other.data);
    }

    pub fn rows(&self) -> usize {
        if self.cols == 0 {
            0
        } else {
            self.data.len() / self.cols
        }
    }

    pub fn means(&self) -> Vec<f64> {
        let n = self.rows() as f64;
        let mut m = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols) {
            for (a, x) in m.iter_mut().zip(row) {
                *a += x;
            }
        }
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    pub fn column(&self, c: usize) -> Estimate {
        let mut acc = MeanAcc::default();
        for row in self.data.chunks_exact(self.cols) {
            acc.push(row[c]);
        }
        acc.estimate()
    }

    /// Estimate of `f(column means)` with a delta-method standard error.
    pub fn delta<F: Fn(&[f64]) -> f64>(&self, f: F) -> Estimate {
        let means = self.means();
        let value = f(&means);
        let grad = numeric_gradient(&f, &means);
        let n = self.rows();
        if n < 2 {
            return Estimate { mean: value, se: 0.0 };
        }
        // influence values phi_s = grad . (row_s - means)
        let mut acc = MeanAcc::default();
        for row in self.data.chunks_exact(self.cols) {
            let phi: f64 = grad.iter().zip(row).zip(&means).map(|((g, x), m)| g * (x - m)).sum();
            acc.push(phi);
        }
        let e = acc.estimate();
        Estimate { mean: value, se: e.se }
    }
}

pub fn numeric_gradient<F: Fn(&[f64]) -> f64>(f: &F, at: &[f64]) -> Vec<f64> {
    let mut x = at.to_vec();
    (0..at.len())
        .map(|i| {
            let h = 1e-6 * at[i].abs().max(1.0);
            x[i] = at[i] + h;
            let up = f(&x);
            x[i] = at[i] - h;
            let down = f(&x);
            x[i] = at[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit test. `probs` must cover the whole support
/// (callers fold tails into the last cell). Adjacent cells are pooled until
/// each expected count is at least 5.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> ChiSquare {
    assert_eq!(observed.len(), probs.len());
    let total: u64 = observed.iter().sum();
    let n = total as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        o_acc += o as f64;
        e_acc += p * n;
        if e_acc >= 5.0 {
            cells.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += o_acc;
                last.1 += e_acc;
            }
            None => cells.push((o_acc, e_acc)),
        }
    }
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64).map(|d| d.sf(statistic)).unwrap_or(f64::NAN)
    };
    ChiSquare { statistic, dof, p_value }
}
