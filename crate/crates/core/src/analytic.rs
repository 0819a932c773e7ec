//! Threshold calculators and the two scalar fixed-point maps.
//!
//! All logarithms are natural. Poisson tails are summed term by term in log
//! space with a saddle-point pmf, falling back to a normal approximation when
//! more than [`MAX_TAIL_TERMS`] terms would be needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Channel, ChannelKind};

pub const MAX_TAIL_TERMS: usize = 1_000_000;
pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_STEPS: usize = 10_000;

/// `D = log k + log log k + beta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub k: u64,
    pub beta: f64,
    pub d: f64,
}

impl ThresholdParams {
    pub fn new(k: u64, beta: f64) -> Result<Self> {
        if k < 3 {
            return Err(Error::invalid(format!("log log k needs k >= 3, got {k}")));
        }
        let lk = (k as f64).ln();
        let d = lk + lk.ln() + beta;
        if !(d > 0.0) {
            return Err(Error::invalid(format!("D = {d} must be positive")));
        }
        Ok(ThresholdParams { k, beta, d })
    }

    /// `k * D`, the degree scale at which the maps are evaluated.
    pub fn k_d(&self) -> f64 {
        self.k as f64 * self.d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMethod {
    Exact,
    NormalApprox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonTail {
    pub value: f64,
    pub method: TailMethod,
}

// ---- Poisson pmf (Loader's saddle-point form) ----

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln Gamma(n+1) - (n + 1/2) ln n + n - ln sqrt(2 pi)`.
fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        return statrs::function::gamma::ln_gamma(n + 1.0) - (n + 0.5) * n.ln() + n - LN_SQRT_2PI;
    }
    let nn = n * n;
    if n > 500.0 {
        return (S0 - S1 / nn) / n;
    }
    if n > 80.0 {
        return (S0 - (S1 - S2 / nn) / nn) / n;
    }
    if n > 35.0 {
        return (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n;
    }
    (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
}

/// Deviance term `x ln(x / m) + m - x`, accurate when `x` is near `m`.
fn bd0(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej *= v2;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// `ln P(Poisson(mean) = j)`.
pub fn poisson_ln_pmf(mean: f64, j: u64) -> f64 {
    if j == 0 {
        return -mean;
    }
    let x = j as f64;
    -stirlerr(x) - bd0(x, mean) - 0.5 * (2.0 * std::f64::consts::PI * x).ln()
}

/// Sum of the pmf over `lo..=hi` (`hi = None` for unbounded), or `None`
/// if more than `MAX_TAIL_TERMS` terms are needed.
fn pmf_range_sum(mean: f64, lo: u64, hi: Option<u64>) -> Option<f64> {
    if let Some(h) = hi {
        if h < lo {
            return Some(0.0);
        }
    }
    let mode = mean.floor() as u64;
    let start = match hi {
        Some(h) => mode.clamp(lo, h),
        None => mode.max(lo),
    };
    let mut sum = Neumaier::default();
    let head = poisson_ln_pmf(mean, start).exp();
    sum.add(head);
    let mut terms = 1usize;
    // terms decrease monotonically away from `start`
    let mut j = start;
    while hi.is_none_or(|h| j < h) {
        j += 1;
        let t = poisson_ln_pmf(mean, j).exp();
        sum.add(t);
        terms += 1;
        if t <= 1e-18 * sum.value() || t == 0.0 {
            break;
        }
        if terms > MAX_TAIL_TERMS {
            return None;
        }
    }
    let mut j = start;
    while j > lo {
        j -= 1;
        let t = poisson_ln_pmf(mean, j).exp();
        sum.add(t);
        terms += 1;
        if t <= 1e-18 * sum.value() || t == 0.0 {
            break;
        }
        if terms > MAX_TAIL_TERMS {
            return None;
        }
    }
    Some(sum.value())
}

#[derive(Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

fn check_mean(mean: f64) -> Result<()> {
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::invalid(format!("Poisson mean must be positive, got {mean}")));
    }
    Ok(())
}

/// `P(Poisson(mean) < threshold)` with the method used.
pub fn poisson_tail_below_detailed(mean: f64, threshold: u64) -> Result<PoissonTail> {
    check_mean(mean)?;
    if threshold == 0 {
        return Ok(PoissonTail { value: 0.0, method: TailMethod::Exact });
    }
    Ok(match pmf_range_sum(mean, 0, Some(threshold - 1)) {
        Some(v) => PoissonTail { value: v.min(1.0), method: TailMethod::Exact },
        None => PoissonTail {
            value: normal_cdf((threshold as f64 - 0.5 - mean) / mean.sqrt()),
            method: TailMethod::NormalApprox,
        },
    })
}

/// `P(Poisson(mean) > threshold)` with the method used.
pub fn poisson_tail_above_detailed(mean: f64, threshold: u64) -> Result<PoissonTail> {
    check_mean(mean)?;
    Ok(match pmf_range_sum(mean, threshold + 1, None) {
        Some(v) => PoissonTail { value: v.min(1.0), method: TailMethod::Exact },
        None => PoissonTail {
            value: 1.0 - normal_cdf((threshold as f64 + 0.5 - mean) / mean.sqrt()),
            method: TailMethod::NormalApprox,
        },
    })
}

pub fn poisson_tail_below(mean: f64, threshold: u64) -> Result<f64> {
    poisson_tail_below_detailed(mean, threshold).map(|t| t.value)
}

pub fn poisson_tail_above(mean: f64, threshold: u64) -> Result<f64> {
    poisson_tail_above_detailed(mean, threshold).map(|t| t.value)
}

// ---- fixed-point maps ----

/// `(1 - exp(-x)) / x`, continuous at 0.
fn one_minus_exp_over(x: f64) -> f64 {
    if x < 1e-8 {
        1.0 - 0.5 * x + x * x / 6.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// The upper-bound map for `x_n` in the non-reconstruction regime:
/// `g(y) = p + (1 - exp(-(k-1) e^{-yD})) / ((k-1) e^{-yD})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayMap {
    pub params: ThresholdParams,
    /// `P(Poisson((k-1) D) < delta)`.
    pub p: f64,
}

impl DecayMap {
    pub fn eval(&self, y: f64) -> f64 {
        let x = (((self.params.k - 1) as f64).ln() - y * self.params.d).exp();
        self.p + one_minus_exp_over(x)
    }
}

/// The lower-bound map for the frozen-root probability:
/// `f(q) = (1 - exp(-q D))^(k-1) - s`, floored at 0 since iterates are probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreezingMap {
    pub params: ThresholdParams,
    /// `P(Poisson((k-1) D) > delta)`.
    pub s: f64,
}

impl FreezingMap {
    pub fn eval_raw(&self, q: f64) -> f64 {
        let e = (-q * self.params.d).exp();
        ((self.params.k - 1) as f64 * (-e).ln_1p()).exp() - self.s
    }

    pub fn eval(&self, q: f64) -> f64 {
        self.eval_raw(q).max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub values: Vec<f64>,
    pub converged: bool,
    pub limit_estimate: f64,
}

fn iterate<F: Fn(f64) -> f64>(f: F, start: f64, max_steps: usize, tol: f64) -> Result<IterationTrace> {
    let mut values = vec![start];
    let mut y = start;
    let mut converged = false;
    for _ in 0..max_steps {
        let next = f(y);
        if !next.is_finite() {
            return Err(Error::NumericalFailure(format!("map produced {next} from {y}")));
        }
        values.push(next);
        let step = (next - y).abs();
        y = next;
        if step < tol {
            converged = true;
            break;
        }
    }
    Ok(IterationTrace { values, converged, limit_estimate: y })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    /// `x_n` upper-bound map; the conclusion is `limit < 2/k`.
    Decay,
    /// Frozen-root lower-bound map; the conclusion is `min >= 1 - 1/log k`.
    Freezing,
}

/// How the degree is chosen for a fixed-point run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaRule {
    Explicit(u64),
    /// `floor(k D)` for the decay map and `ceil(k D)` for the freezing map.
    Auto,
    /// `floor`/`ceil` of `k (log k + log log k + beta)` with its own offset.
    Offset(f64),
}

impl DeltaRule {
    pub fn resolve(self, map: MapKind, params: &ThresholdParams) -> Result<u64> {
        let scale = match self {
            DeltaRule::Explicit(d) => return Ok(d),
            DeltaRule::Auto => params.k_d(),
            DeltaRule::Offset(beta) => ThresholdParams::new(params.k, beta)?.k_d(),
        };
        let d = match map {
            MapKind::Decay => scale.floor(),
            MapKind::Freezing => scale.ceil(),
        };
        if !(d >= 0.0 && d < u64::MAX as f64) {
            return Err(Error::invalid(format!("degree {d} out of range")));
        }
        Ok(d as u64)
    }
}

/// One run of either map with the data needed to judge its conclusion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixpointRun {
    pub map: MapKind,
    pub params: ThresholdParams,
    pub delta: u64,
    /// `p` for the decay map, `s` for the freezing map.
    pub tail: f64,
    pub tail_method: TailMethod,
    pub trace: IterationTrace,
    /// `2/k` or `1 - 1/log k`.
    pub target: f64,
    /// Whether the run reaches the conclusion the map is meant to deliver.
    pub holds: bool,
    /// Decay map: every step after the first is non-increasing.
    /// Freezing map: the trace is monotone in the direction of its first step.
    pub monotone: bool,
}

/// Iterates `y_{n+1} = g(y_n)` from `y_0 = 1`.
pub fn iterate_g(k: u64, beta_star: f64, delta: u64, max_steps: usize, tol: f64) -> Result<FixpointRun> {
    let params = ThresholdParams::new(k, beta_star)?;
    let tail = poisson_tail_below_detailed((k - 1) as f64 * params.d, delta)?;
    let map = DecayMap { params, p: tail.value };
    let trace = iterate(|y| map.eval(y), 1.0, max_steps, tol)?;
    let target = 2.0 / k as f64;
    let monotone = trace.values.windows(2).skip(1).all(|w| w[1] <= w[0]);
    Ok(FixpointRun {
        map: MapKind::Decay,
        params,
        delta,
        tail: tail.value,
        tail_method: tail.method,
        holds: trace.converged && trace.limit_estimate < target,
        trace,
        target,
        monotone,
    })
}

/// Iterates `p_{n+1} = (1 - exp(-p_n D))^(k-1) - s` from `p_0 = 1`.
pub fn iterate_reconstruction_map(k: u64, beta_star: f64, delta: u64, max_steps: usize, tol: f64) -> Result<FixpointRun> {
    let params = ThresholdParams::new(k, beta_star)?;
    let tail = poisson_tail_above_detailed((k - 1) as f64 * params.d, delta)?;
    let map = FreezingMap { params, s: tail.value };
    let trace = iterate(|q| map.eval(q), 1.0, max_steps, tol)?;
    let target = 1.0 - 1.0 / (k as f64).ln();
    let min = trace.values.iter().copied().fold(f64::INFINITY, f64::min);
    let v = &trace.values;
    let monotone = if v.len() < 2 || v[1] <= v[0] {
        v.windows(2).all(|w| w[1] <= w[0])
    } else {
        v.windows(2).all(|w| w[1] >= w[0])
    };
    Ok(FixpointRun {
        map: MapKind::Freezing,
        params,
        delta,
        tail: tail.value,
        tail_method: tail.method,
        holds: min >= target,
        trace,
        target,
        monotone,
    })
}

pub fn run_map(map: MapKind, k: u64, beta_star: f64, rule: DeltaRule, max_steps: usize, tol: f64) -> Result<FixpointRun> {
    let params = ThresholdParams::new(k, beta_star)?;
    let delta = rule.resolve(map, &params)?;
    match map {
        MapKind::Decay => iterate_g(k, beta_star, delta, max_steps, tol),
        MapKind::Freezing => iterate_reconstruction_map(k, beta_star, delta, max_steps, tol),
    }
}

/// First `k` among `candidates` for which the map's conclusion holds.
pub fn smallest_qualifying_k<I: IntoIterator<Item = u64>>(map: MapKind, beta_star: f64, rule: DeltaRule, candidates: I) -> Result<Option<u64>> {
    for k in candidates {
        if run_map(map, k, beta_star, rule, DEFAULT_MAX_STEPS, DEFAULT_TOL)?.holds {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

// ---- thresholds ----

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionCheck {
    /// `13 delta / k^2`.
    pub coefficient: f64,
    /// `delta <= 2 k log k`.
    pub hypothesis_holds: bool,
    /// `coefficient <= 1/2`.
    pub contracts: bool,
}

pub fn contraction_coefficient(k: u64, delta: f64) -> ContractionCheck {
    let kf = k as f64;
    let coefficient = 13.0 * delta / (kf * kf);
    ContractionCheck {
        coefficient,
        hypothesis_holds: delta <= 2.0 * kf * kf.ln(),
        contracts: coefficient <= 0.5,
    }
}

/// Asymptotic reconstruction bounds for the colouring model. The `o(1)`
/// corrections are unknown and reported as zero, hence `asymptotic_only`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBounds {
    /// Non-reconstruction below `k (log k + log log k + 1 - ln 2)`.
    pub lower: f64,
    /// Reconstruction above `k (log k + log log k + 1)`.
    pub upper: f64,
    pub asymptotic_only: bool,
}

pub fn threshold_bounds(k: u64) -> Result<ThresholdBounds> {
    let lower = ThresholdParams::new(k, 1.0 - std::f64::consts::LN_2)?.k_d();
    let upper = ThresholdParams::new(k, 1.0)?.k_d();
    Ok(ThresholdBounds { lower, upper, asymptotic_only: true })
}

/// Census (Kesten-Stigum) criterion `delta * lambda_2^2 > 1`.
///
/// For the colouring channel this is decided exactly as `delta > (k-1)^2`.
/// Elsewhere the product is compared with a 1e-12 relative guard so that a
/// boundary value rounding up does not count as reconstruction.
pub fn ks_reconstructs(channel: &Channel, delta: f64) -> bool {
    match channel.kind() {
        ChannelKind::Colouring => {
            let km1 = (channel.k() - 1) as f64;
            delta > km1 * km1
        }
        _ => {
            let l = channel.second_eigenvalue();
            delta * l * l > 1.0 + 1e-12
        }
    }
}

/// Uniqueness of colourings on the `delta`-ary tree: `k >= delta + 2`.
pub fn uniqueness_holds(k: u64, delta: u64) -> bool {
    k >= delta + 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::gamma_ur;

    #[test]
    fn tail_single_term() {
        let v = poisson_tail_below(1.0, 1).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(poisson_tail_below(5.0, 0).unwrap(), 0.0);
        assert!(poisson_tail_below(0.0, 3).is_err());
        assert!(poisson_tail_above(-1.0, 3).is_err());
    }

    #[test]
    fn tail_against_incomplete_gamma() {
        // P(Poisson(m) < t) = Q(t, m), the regularised upper incomplete gamma
        let v = poisson_tail_below(100.0, 100).unwrap();
        assert!(v > 0.4 && v < 0.6);
        assert!((v - gamma_ur(100.0, 100.0)).abs() < 1e-12, "{v}");
        for (m, t) in [(3.5, 2), (20.0, 31), (1000.0, 950), (12345.6, 12400)] {
            let v = poisson_tail_below(m, t).unwrap();
            let q = gamma_ur(t as f64, m);
            assert!((v - q).abs() < 1e-10, "{m} {t}: {v} vs {q}");
        }
    }

    #[test]
    fn tails_complement() {
        for m in [0.3f64, 1.0, 7.5, 99.0, 1234.5, 1e5] {
            let mode = m as u64;
            for t in [0, 1, mode / 2, mode, mode + 1, mode + 3 * (m.sqrt() as u64) + 1] {
                let below = poisson_tail_below(m, t).unwrap();
                let at_or_above = if t == 0 { 1.0 } else { poisson_tail_above(m, t - 1).unwrap() };
                assert!((below + at_or_above - 1.0).abs() < 1e-12, "{m} {t}: {below} + {at_or_above}");
            }
        }
    }

    #[test]
    fn pmf_matches_direct_formula() {
        for (m, j) in [(4.0f64, 0u64), (4.0, 3), (50.0, 47), (300.0, 500)] {
            let direct = -m + j as f64 * m.ln() - statrs::function::gamma::ln_gamma(j as f64 + 1.0);
            assert!((poisson_ln_pmf(m, j) - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn g_is_increasing() {
        let params = ThresholdParams::new(10_000, 1.0 - std::f64::consts::LN_2 - 0.05).unwrap();
        let map = DecayMap { params, p: 0.0 };
        let mut prev = map.eval(0.0);
        for i in 1..=2000 {
            let y = i as f64 / 1000.0;
            let v = map.eval(y);
            assert!(v >= prev, "g not increasing at {y}");
            prev = v;
        }
    }

    #[test]
    fn g_taylor_near_zero_argument() {
        let params = ThresholdParams::new(1000, 0.2).unwrap();
        let map = DecayMap { params, p: 0.0 };
        for x in [1e-4, 3e-5, 1e-6] {
            // choose y with (k-1) exp(-y D) = x
            let y = ((999.0f64).ln() - f64::ln(x)) / params.d;
            assert!((map.eval(y) - (1.0 - x / 2.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn freezing_map_increasing_and_limit() {
        let params = ThresholdParams::new(1000, 1.5).unwrap();
        let map = FreezingMap { params, s: 0.01 };
        let mut prev = map.eval_raw(0.0);
        for i in 1..=1000 {
            let v = map.eval_raw(i as f64 / 1000.0);
            assert!(v >= prev);
            prev = v;
        }
        // s = 0 and huge D: the map sends everything in (0, 1] to ~1
        let big = FreezingMap { params: ThresholdParams::new(1000, 500.0).unwrap(), s: 0.0 };
        assert!((big.eval(1.0) - 1.0).abs() < 1e-12);
        let run = iterate(|q| big.eval(q), 1.0, 100, 1e-12).unwrap();
        assert!((run.limit_estimate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contraction_examples() {
        let k = 100u64;
        let delta = (2.0 * 100.0 * 100f64.ln()).floor();
        let c = contraction_coefficient(k, delta);
        assert!(c.hypothesis_holds && !c.contracts);
        assert!((c.coefficient - 13.0 * 921.0 / 1e4).abs() < 1e-12);
        let big = contraction_coefficient(10_000, 2.0 * 1e4 * 1e4f64.ln());
        assert!(big.contracts && (big.coefficient - 0.0239).abs() < 1e-3);
        for k in [10u64, 26, 100] {
            let kk = (k * k) as f64;
            assert!(contraction_coefficient(k, kk / 26.0).contracts);
            assert!(!contraction_coefficient(k, kk / 26.0 + 1e-6).contracts);
        }
    }

    #[test]
    fn bounds_examples() {
        let b = threshold_bounds(3).unwrap();
        assert!(b.lower > 0.0 && b.upper > b.lower && b.asymptotic_only);
        for k in [3u64, 10, 1000, 123_456] {
            let b = threshold_bounds(k).unwrap();
            assert!((b.upper - b.lower - k as f64 * std::f64::consts::LN_2).abs() < 1e-9 * k as f64);
        }
        let b = threshold_bounds(1_000_000).unwrap();
        assert!(b.lower / b.upper > 0.95);
        assert!(threshold_bounds(2).is_err());
    }

    #[test]
    fn ks_examples() {
        let bsc = Channel::bsc(0.25).unwrap();
        assert!(ks_reconstructs(&bsc, 5.0));
        assert!(!ks_reconstructs(&bsc, 4.0));
        let col = Channel::colouring(10).unwrap();
        assert!(ks_reconstructs(&col, 82.0));
        assert!(!ks_reconstructs(&col, 81.0));
    }

    #[test]
    fn uniqueness_examples() {
        assert!(uniqueness_holds(5, 3));
        assert!(!uniqueness_holds(5, 4));
        for d in 1..=100 {
            assert!(uniqueness_holds(d + 2, d));
        }
    }
}
