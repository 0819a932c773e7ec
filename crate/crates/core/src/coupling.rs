//! Monotone coupling of multinomial colour counts with independent Poisson counts.
//!
//! Given `N = sum of Poisson draws`, the Poisson vector is multinomial with `N`
//! balls. Both vectors are built from one shuffled sequence of balls: the
//! smaller vector takes a prefix of the larger one's balls, so the two are
//! ordered coordinatewise whenever their totals are.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, Discrete, DiscreteCDF, Poisson as PoissonLaw};

use crate::error::{Error, Result};
use crate::rng::{trial_rng, Purpose};
use crate::stats::{chi_square_gof, map_blocks, ChiSquare};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoupledCounts {
    /// `M(delta, uniform)` over `k - 1` cells.
    pub multinomial: Vec<u32>,
    /// Independent `Poisson(D)` draws, one per cell.
    pub poisson: Vec<u32>,
    /// The dominance relation implied by the totals holds.
    pub dominated: bool,
}

impl CoupledCounts {
    pub fn check_dominance(multinomial: &[u32], poisson: &[u32], delta: u32) -> bool {
        let total: u64 = poisson.iter().map(|&x| x as u64).sum();
        let le = multinomial.iter().zip(poisson).all(|(b, p)| b <= p);
        let ge = multinomial.iter().zip(poisson).all(|(b, p)| b >= p);
        (total < delta as u64 || le) && (total > delta as u64 || ge)
    }
}

#[derive(Clone, Debug)]
pub struct Coupler {
    cells: usize,
    delta: u32,
    poisson: Poisson<f64>,
}

impl Coupler {
    pub fn new(k: usize, delta: u32, d: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("coupling needs k >= 2"));
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::invalid(format!("Poisson rate must be positive, got {d}")));
        }
        let poisson = Poisson::new(d).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Coupler { cells: k - 1, delta, poisson })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, balls: &mut Vec<u32>) -> CoupledCounts {
        let poisson: Vec<u32> = (0..self.cells).map(|_| self.poisson.sample(rng) as u32).collect();
        balls.clear();
        for (cell, &n) in poisson.iter().enumerate() {
            balls.extend(std::iter::repeat_n(cell as u32, n as usize));
        }
        let total = balls.len();
        let delta = self.delta as usize;
        let mut multinomial = vec![0u32; self.cells];
        if total >= delta {
            let (prefix, _) = balls.partial_shuffle(rng, delta);
            for &c in prefix.iter() {
                multinomial[c as usize] += 1;
            }
        } else {
            multinomial.copy_from_slice(&poisson);
            for _ in total..delta {
                multinomial[rng.random_range(0..self.cells)] += 1;
            }
        }
        let dominated = CoupledCounts::check_dominance(&multinomial, &poisson, self.delta);
        CoupledCounts { multinomial, poisson, dominated }
    }
}

pub fn sample_coupled(k: usize, delta: u32, d: f64, seed: u64) -> Result<CoupledCounts> {
    let c = Coupler::new(k, delta, d)?;
    Ok(c.sample(&mut trial_rng(seed, Purpose::Coupling, 0), &mut Vec::new()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CouplingReport {
    pub k: usize,
    pub delta: u32,
    pub d: f64,
    pub trials: u64,
    pub seed: u64,
    pub violations: u64,
    /// One test per cell against `Binomial(delta, 1/(k-1))`.
    pub multinomial_tests: Vec<ChiSquare>,
    /// One test per cell against `Poisson(D)`.
    pub poisson_tests: Vec<ChiSquare>,
}

impl CouplingReport {
    pub fn min_p_value(&self) -> f64 {
        self.multinomial_tests.iter().chain(&self.poisson_tests).map(|t| t.p_value).fold(1.0, f64::min)
    }

    pub fn passes(&self, alpha: f64) -> bool {
        self.violations == 0 && self.min_p_value() >= alpha
    }
}

/// Draws `trials` coupled pairs, counts dominance violations and runs the
/// marginal goodness-of-fit tests.
pub fn coupling_test(k: usize, delta: u32, d: f64, trials: u64, seed: u64) -> Result<CouplingReport> {
    let coupler = Coupler::new(k, delta, d)?;
    let cells = k - 1;
    let poisson_cut = (d + 12.0 * d.sqrt() + 12.0).ceil() as usize;
    let width_m = delta as usize + 1;
    let width_p = poisson_cut + 1;

    let blocks = map_blocks(trials, |range| {
        let mut balls = Vec::new();
        let mut violations = 0u64;
        let mut hist_m = vec![0u64; cells * width_m];
        let mut hist_p = vec![0u64; cells * width_p];
        for t in range {
            let mut rng = trial_rng(seed, Purpose::Coupling, t);
            let c = coupler.sample(&mut rng, &mut balls);
            if !c.dominated {
                violations += 1;
            }
            for cell in 0..cells {
                hist_m[cell * width_m + c.multinomial[cell] as usize] += 1;
                hist_p[cell * width_p + (c.poisson[cell] as usize).min(poisson_cut)] += 1;
            }
        }
        (violations, hist_m, hist_p)
    });

    let mut violations = 0;
    let mut hist_m = vec![0u64; cells * width_m];
    let mut hist_p = vec![0u64; cells * width_p];
    for (v, m, p) in blocks {
        violations += v;
        hist_m.iter_mut().zip(m).for_each(|(a, b)| *a += b);
        hist_p.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }

    let binom = Binomial::new(1.0 / cells as f64, delta as u64).map_err(|e| Error::invalid(e.to_string()))?;
    let probs_m: Vec<f64> = (0..width_m).map(|j| binom.pmf(j as u64)).collect();
    let pois = PoissonLaw::new(d).map_err(|e| Error::invalid(e.to_string()))?;
    let mut probs_p: Vec<f64> = (0..poisson_cut).map(|j| pois.pmf(j as u64)).collect();
    probs_p.push(pois.sf(poisson_cut as u64 - 1));

    let multinomial_tests = hist_m.chunks_exact(width_m).map(|h| chi_square_gof(h, &probs_m)).collect();
    let poisson_tests = hist_p.chunks_exact(width_p).map(|h| chi_square_gof(h, &probs_p)).collect();
    Ok(CouplingReport { k, delta, d, trials, seed, violations, multinomial_tests, poisson_tests })
}
