//! Monte Carlo estimates of the reconstruction statistics.
//!
//! With the root fixed to colour 1, `X+ = P(root = 1 | boundary)`. The
//! estimators report `x_n = E X+`, `z_n = E (X+ - 1/k)^2`, the frozen-root
//! probability `p_n` and the total-variation distance between the boundary
//! laws given roots 1 and 2. Every gate uses 4 standard errors.
//!
//! Trials are split into fixed blocks (see [`crate::stats::BLOCK`]) and each
//! trial owns its random stream, so results are identical for any number of
//! worker threads.

use serde::{Deserialize, Serialize};

use crate::bp::PosteriorEngine;
use crate::broadcast::{Broadcaster, LeafConfig, RootChoice};
use crate::error::{Error, Result};
use crate::model::{Channel, Colour, TreeKind, TreeSpec};
use crate::rng::{trial_rng, Purpose};
use crate::stats::{map_blocks, Estimate, MeanAcc, SampleMatrix};

/// Number of standard errors used by every pass/fail gate.
pub const SIGMAS: f64 = 4.0;
/// Absolute slack added to gates so that exactly-known values with zero
/// sampling error survive floating-point rounding.
pub const SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub k: usize,
    /// Branching factor, or mean offspring for Galton-Watson trees.
    pub delta: f64,
    pub tree: TreeSpec,
    pub n: u32,
    pub trials: u64,
    pub seed: u64,
}

impl RunParams {
    fn new(channel: &Channel, tree: TreeSpec, trials: u64, seed: u64) -> Self {
        RunParams { k: channel.k(), delta: tree.delta(), tree, n: tree.depth, trials, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub params: RunParams,
    pub x_n: Option<Estimate>,
    pub z_n: Option<Estimate>,
    pub p_n: Option<Estimate>,
    pub tv: Option<Estimate>,
}

impl MomentReport {
    fn empty(params: RunParams) -> Self {
        MomentReport { params, x_n: None, z_n: None, p_n: None, tv: None }
    }

    /// `x_n - 1/k >= z_n`, up to 4 combined standard errors.
    pub fn change_of_measure_bound_holds(&self) -> Option<bool> {
        let (x, z) = (self.x_n?, self.z_n?);
        let k = self.params.k as f64;
        let sigma = (x.se * x.se + z.se * z.se).sqrt();
        Some(x.mean - 1.0 / k >= z.mean - SIGMAS * sigma - SLACK)
    }

    /// `x_n >= 1/k - 3 sigma`.
    pub fn lower_bound_holds(&self) -> Option<bool> {
        let x = self.x_n?;
        Some(x.mean >= 1.0 / self.params.k as f64 - 3.0 * x.se - SLACK)
    }
}

fn require_colouring(channel: &Channel) -> Result<()> {
    if !channel.is_colouring() {
        return Err(Error::invalid("estimators are defined for the colouring channel"));
    }
    Ok(())
}

fn require_trials(trials: u64) -> Result<()> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    Ok(())
}

/// Per-block sampling loop shared by all estimators.
fn run_trials<T, I, F>(
    channel: &Channel,
    tree: TreeSpec,
    root: RootChoice,
    purpose: Purpose,
    trials: u64,
    seed: u64,
    init: I,
    per_trial: F,
) -> Result<Vec<T>>
where
    T: Send,
    I: Fn() -> T + Sync + Send,
    F: Fn(&mut T, &LeafConfig, &mut PosteriorEngine) -> Result<()> + Sync + Send,
{
    let broadcaster = Broadcaster::new(channel, tree)?;
    map_blocks(trials, |range| {
        let mut acc = init();
        let mut engine = PosteriorEngine::new();
        let mut cfg = LeafConfig::default();
        let mut scratch = Vec::new();
        for t in range {
            let mut rng = trial_rng(seed, purpose, t);
            broadcaster.sample_into(root, &mut rng, &mut cfg, &mut scratch)?;
            per_trial(&mut acc, &cfg, &mut engine)?;
        }
        Ok(acc)
    })
    .into_iter()
    .collect()
}

const ROOT: RootChoice = RootChoice::Fixed(Colour(0));

/// Sums from root-conditioned samples.
#[derive(Clone, Debug, Default)]
struct ConditionedSums {
    x: MeanAcc,
    z: MeanAcc,
    frozen: u64,
    /// Per-sample `(X+, (X+ - 1/k)^2)`, kept when a delta-method error is needed.
    pairs: Option<SampleMatrix>,
}

fn conditioned_sums(channel: &Channel, tree: TreeSpec, trials: u64, seed: u64, purpose: Purpose, frozen: bool, keep: bool) -> Result<ConditionedSums> {
    let k = channel.k();
    let inv_k = 1.0 / k as f64;
    let blocks = run_trials(
        channel,
        tree,
        ROOT,
        purpose,
        trials,
        seed,
        || (ConditionedSums { pairs: keep.then(|| SampleMatrix::new(2)), ..Default::default() }, vec![0.0; k]),
        |(acc, post), cfg, engine| {
            engine.posterior_into(channel, cfg, post, None)?;
            let x = post[0];
            let z = (x - inv_k) * (x - inv_k);
            acc.x.push(x);
            acc.z.push(z);
            if let Some(p) = acc.pairs.as_mut() {
                p.push_row(&[x, z]);
            }
            if frozen && engine.frozen(channel, cfg)? {
                acc.frozen += 1;
            }
            Ok(())
        },
    )?;
    let mut total = ConditionedSums { pairs: keep.then(|| SampleMatrix::new(2)), ..Default::default() };
    for (b, _) in blocks {
        total.x.merge(&b.x);
        total.z.merge(&b.z);
        total.frozen += b.frozen;
        if let (Some(t), Some(p)) = (total.pairs.as_mut(), b.pairs) {
            t.append(p);
        }
    }
    Ok(total)
}

fn binomial_estimate(successes: u64, trials: u64) -> Estimate {
    let p = successes as f64 / trials as f64;
    Estimate { mean: p, se: (p * (1.0 - p) / trials as f64).sqrt() }
}

/// `x_n` and `z_n` from `trials` broadcasts with the root fixed to colour 1.
pub fn estimate_xn_zn(channel: &Channel, tree: TreeSpec, trials: u64, seed: u64) -> Result<MomentReport> {
    require_colouring(channel)?;
    require_trials(trials)?;
    let s = conditioned_sums(channel, tree, trials, seed, Purpose::Conditioned, false, false)?;
    let mut r = MomentReport::empty(RunParams::new(channel, tree, trials, seed));
    r.x_n = Some(s.x.estimate());
    r.z_n = Some(s.z.estimate());
    Ok(r)
}

/// Frozen-root probability `p_n = P(X+ = 1)`, decided by exact set arithmetic.
pub fn estimate_pn(channel: &Channel, tree: TreeSpec, trials: u64, seed: u64) -> Result<MomentReport> {
    require_colouring(channel)?;
    require_trials(trials)?;
    let broadcaster = Broadcaster::new(channel, tree)?;
    let frozen: u64 = map_blocks(trials, |range| -> Result<u64> {
        let mut engine = PosteriorEngine::new();
        let mut cfg = LeafConfig::default();
        let mut scratch = Vec::new();
        let mut hits = 0;
        for t in range {
            let mut rng = trial_rng(seed, Purpose::Conditioned, t);
            broadcaster.sample_into(ROOT, &mut rng, &mut cfg, &mut scratch)?;
            hits += engine.frozen(channel, &cfg)? as u64;
        }
        Ok(hits)
    })
    .into_iter()
    .sum::<Result<u64>>()?;
    let mut r = MomentReport::empty(RunParams::new(channel, tree, trials, seed));
    r.p_n = Some(binomial_estimate(frozen, trials));
    Ok(r)
}

/// Total-variation distance between the boundary laws given roots 1 and 2.
///
/// By Bayes with a uniform prior, `P(L | i) = k P(L) f(i, L)`, so
/// `d_TV = (k/2) E_L |X_1 - X_2|` with `L` drawn from the unconditioned
/// broadcast. At depth 0 the boundary is the root itself and the two laws
/// are distinct point masses, so the value 1 is returned exactly.
pub fn estimate_tv(channel: &Channel, tree: TreeSpec, trials: u64, seed: u64) -> Result<MomentReport> {
    require_colouring(channel)?;
    require_trials(trials)?;
    if tree.depth == 0 {
        let mut r = MomentReport::empty(RunParams::new(channel, tree, trials, seed));
        r.tv = Some(Estimate::exact(1.0));
        return Ok(r);
    }
    let k = channel.k();
    let half_k = k as f64 / 2.0;
    let blocks = run_trials(
        channel,
        tree,
        RootChoice::Uniform,
        Purpose::Unconditioned,
        trials,
        seed,
        || (MeanAcc::default(), vec![0.0; k]),
        |(acc, post), cfg, engine| {
            engine.posterior_into(channel, cfg, post, None)?;
            acc.push(half_k * (post[0] - post[1]).abs());
            Ok(())
        },
    )?;
    let mut acc = MeanAcc::default();
    blocks.iter().for_each(|(b, _)| acc.merge(b));
    let mut r = MomentReport::empty(RunParams::new(channel, tree, trials, seed));
    r.tv = Some(acc.estimate());
    Ok(r)
}

/// All four statistics: `x_n`, `z_n`, `p_n` from one root-conditioned
/// stream and `d_TV` from an unconditioned one.
pub fn simulate(channel: &Channel, tree: TreeSpec, trials: u64, seed: u64) -> Result<MomentReport> {
    require_colouring(channel)?;
    require_trials(trials)?;
    let s = conditioned_sums(channel, tree, trials, seed, Purpose::Conditioned, true, false)?;
    let mut r = estimate_tv(channel, tree, trials, seed)?;
    r.x_n = Some(s.x.estimate());
    r.z_n = Some(s.z.estimate());
    r.p_n = Some(binomial_estimate(s.frozen, trials));
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// `lhs - rhs` with a standard error that accounts for shared samples.
    pub difference: Estimate,
    pub passes: bool,
}

impl IdentityCheck {
    fn from_diff(name: &str, lhs: Estimate, rhs: Estimate, difference: Estimate) -> Self {
        let passes = difference.mean.abs() <= SIGMAS * difference.se + SLACK;
        IdentityCheck { name: name.to_string(), lhs, rhs, difference, passes }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeOfMeasureReport {
    pub params: RunParams,
    /// `E X+ = E sum_i X_i^2`.
    pub second_moment: IdentityCheck,
    /// `E sum_i (X_i - 1/k)^2 = x_n - 1/k`.
    pub centred: IdentityCheck,
}

impl ChangeOfMeasureReport {
    pub fn passes(&self) -> bool {
        self.second_moment.passes && self.centred.passes
    }
}

/// Checks `E X+ = E sum_i P(root = i | L^1)^2` on root-conditioned samples.
pub fn verify_change_of_measure(channel: &Channel, tree: TreeSpec, trials: u64, seed: u64) -> Result<ChangeOfMeasureReport> {
    require_colouring(channel)?;
    require_trials(trials)?;
    let k = channel.k();
    let inv_k = 1.0 / k as f64;
    // columns: X+, sum X_i^2, sum (X_i - 1/k)^2
    let blocks = run_trials(
        channel,
        tree,
        ROOT,
        Purpose::Conditioned,
        trials,
        seed,
        || (SampleMatrix::new(3), vec![0.0; k]),
        |(m, post), cfg, engine| {
            engine.posterior_into(channel, cfg, post, None)?;
            let sq: f64 = post.iter().map(|p| p * p).sum();
            let centred: f64 = post.iter().map(|p| (p - inv_k) * (p - inv_k)).sum();
            m.push_row(&[post[0], sq, centred]);
            Ok(())
        },
    )?;
    let mut m = SampleMatrix::new(3);
    blocks.into_iter().for_each(|(b, _)| m.append(b));
    let x = m.column(0);
    let second_moment = IdentityCheck::from_diff("E X+ = E sum X_i^2", x, m.column(1), m.delta(|v| v[0] - v[1]));
    let centred = IdentityCheck::from_diff(
        "E sum (X_i - 1/k)^2 = x_n - 1/k",
        m.column(2),
        Estimate { mean: x.mean - inv_k, se: x.se },
        m.delta(|v| v[2] - (v[0] - inv_k)),
    );
    Ok(ChangeOfMeasureReport { params: RunParams::new(channel, tree, trials, seed), second_moment, centred })
}

/// A measured moment against its closed-form prediction from `(x_n, z_n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub name: String,
    pub measured: Estimate,
    pub predicted: Estimate,
    /// Combined standard error of `measured - predicted`.
    pub sigma: f64,
    pub passes: bool,
}

impl MomentCheck {
    fn new(name: &str, measured: Estimate, predicted: Estimate) -> Self {
        let sigma = (measured.se * measured.se + predicted.se * predicted.se).sqrt();
        let passes = (measured.mean - predicted.mean).abs() <= SIGMAS * sigma + SLACK;
        MomentCheck { name: name.to_string(), measured, predicted, sigma, passes }
    }
}

/// A covariance that must be non-positive, tested one-sided.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignCheck {
    pub name: String,
    pub estimate: Estimate,
    pub passes: bool,
}

impl SignCheck {
    fn non_positive(name: &str, estimate: Estimate) -> Self {
        let passes = estimate.mean <= SIGMAS * estimate.se + SLACK;
        SignCheck { name: name.to_string(), estimate, passes }
    }
}

/// Moments of the child-subtree posteriors `Y_ij` and of
/// `Z_i = prod_j (1 - Y_ij)` one level above depth `n`, compared with their
/// closed forms in terms of independently estimated `x_n` and `z_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YZMomentReport {
    pub params: RunParams,
    /// Reference estimates at depth `n` from an independent stream.
    pub x_n: Estimate,
    pub z_n: Estimate,
    /// `E Y_1j`, `E Y_1j^2`, `E Y_ij`, `E Y_ij^2`, `E Z_1`, `E Z_1^2`,
    /// `E Z_i`, `E Z_i^2` (with `i != 1`), then the sum rule
    /// `E X+ + (k-1) E X- = 1`.
    pub moments: Vec<MomentCheck>,
    pub covariances: Vec<SignCheck>,
    pub var_z1: Estimate,
    pub var_z_sum: Estimate,
    /// `X+` at depth `n + 1`, from the same samples.
    pub x_next: Estimate,
}

impl YZMomentReport {
    pub fn passes(&self) -> bool {
        self.moments.iter().all(|m| m.passes) && self.covariances.iter().all(|c| c.passes)
    }

    pub fn moment(&self, name: &str) -> Option<&MomentCheck> {
        self.moments.iter().find(|m| m.name == name)
    }
}

pub const MOMENT_NAMES: [&str; 9] = [
    "E Y_1j", "E Y_1j^2", "E Y_ij", "E Y_ij^2", "E Z_1", "E Z_1^2", "E Z_i", "E Z_i^2", "E X+ + (k-1) E X-",
];

/// Closed-form moments of `Y` and `Z` given `x_n`, `z_n`, in [`MOMENT_NAMES`] order (first eight).
pub fn predicted_moments(k: usize, delta: u32, x: f64, z: f64) -> [f64; 8] {
    let kf = k as f64;
    let a = x - 1.0 / kf;
    let km1 = kf - 1.0;
    let q = km1 / kf;
    let y1 = 1.0 / kf - a / km1;
    let y1sq = 1.0 / (kf * kf) + (kf - 2.0) / (kf * km1) * a - z / km1;
    let yi = 1.0 / kf + a / (km1 * km1);
    let yisq = 1.0 / (kf * kf) + (kf * kf - 2.0 * kf + 2.0) / (kf * km1 * km1) * a + z / (km1 * km1);
    let d = delta as i32;
    let z1 = (q + a / km1).powi(d);
    let z1sq = (q * q + (3.0 * kf - 2.0) / (kf * km1) * a - z / km1).powi(d);
    let zi = (q - a / (km1 * km1)).powi(d);
    let zisq = (q * q + (kf * kf - 4.0 * kf + 2.0) / (kf * km1 * km1) * a + z / (km1 * km1)).powi(d);
    [y1, y1sq, yi, yisq, z1, z1sq, zi, zisq]
}

// per-sample statistic columns for the Y/Z run
const C_Y1: usize = 0;
const C_Y1SQ: usize = 1;
const C_YI: usize = 2;
const C_YISQ: usize = 3;
const C_Y1YI: usize = 4;
const C_YIPAIR: usize = 5;
const C_Z1: usize = 6;
const C_Z1SQ: usize = 7;
const C_ZI: usize = 8;
const C_ZISQ: usize = 9;
const C_Z1ZI: usize = 10;
const C_ZIPAIR: usize = 11;
const C_ZSUM: usize = 12;
const C_ZSUMSQ: usize = 13;
const C_XPLUS: usize = 14;
const COLS: usize = 15;

/// Verifies the `Y`/`Z` moment identities. `tree` gives the regular degree
/// and the depth `n` of the child subtrees; samples are drawn at depth `n + 1`.
pub fn verify_appendix_moments(channel: &Channel, tree: TreeSpec, trials: u64, seed: u64) -> Result<YZMomentReport> {
    require_colouring(channel)?;
    require_trials(trials)?;
    let delta = match tree.kind {
        TreeKind::Regular { delta } => delta,
        TreeKind::GaltonWatsonPoisson { .. } => {
            return Err(Error::invalid("moment identities are stated for regular trees"));
        }
    };
    let k = channel.k();
    let n = tree.depth;

    let reference = conditioned_sums(channel, tree, trials, seed, Purpose::Reference, false, true)?;
    let ref_pairs = reference.pairs.expect("pairs requested");
    let x_n = ref_pairs.column(0);
    let z_n = ref_pairs.column(1);

    let deeper = tree.with_depth(n + 1);
    let blocks = run_trials(
        channel,
        deeper,
        ROOT,
        Purpose::Conditioned,
        trials,
        seed,
        || (SampleMatrix::new(COLS), vec![0.0; k], Vec::new(), vec![0.0; k]),
        |(m, post, kids, zs), cfg, engine| {
            engine.posterior_into(channel, cfg, post, Some(kids))?;
            let row = yz_row(k, delta as usize, post[0], kids, zs);
            m.push_row(&row);
            Ok(())
        },
    )?;
    let mut m = SampleMatrix::new(COLS);
    blocks.into_iter().for_each(|(b, ..)| m.append(b));

    let predicted: Vec<Estimate> = (0..8)
        .map(|i| ref_pairs.delta(|v| predicted_moments(k, delta, v[0], v[1])[i]))
        .collect();
    let measured_cols = [C_Y1, C_Y1SQ, C_YI, C_YISQ, C_Z1, C_Z1SQ, C_ZI, C_ZISQ];
    let mut moments: Vec<MomentCheck> = measured_cols
        .iter()
        .zip(&predicted)
        .zip(MOMENT_NAMES)
        .map(|((&c, &p), name)| MomentCheck::new(name, m.column(c), p))
        .collect();

    // E X- is the mean of Y_1j: a child of a root coloured 1 never has colour 1
    let y1 = m.column(C_Y1);
    let km1 = (k - 1) as f64;
    let sum_rule = Estimate {
        mean: x_n.mean + km1 * y1.mean,
        se: (x_n.se * x_n.se + km1 * km1 * y1.se * y1.se).sqrt(),
    };
    moments.push(MomentCheck::new(MOMENT_NAMES[8], sum_rule, Estimate::exact(1.0)));

    let mut covariances = vec![
        SignCheck::non_positive("Cov(Y_1j, Y_ij)", m.delta(|v| v[C_Y1YI] - v[C_Y1] * v[C_YI])),
        SignCheck::non_positive("Cov(Z_1, Z_i)", m.delta(|v| v[C_Z1ZI] - v[C_Z1] * v[C_ZI])),
    ];
    if k >= 3 {
        covariances.push(SignCheck::non_positive("Cov(Y_i1j, Y_i2j)", m.delta(|v| v[C_YIPAIR] - v[C_YI] * v[C_YI])));
        covariances.push(SignCheck::non_positive("Cov(Z_i1, Z_i2)", m.delta(|v| v[C_ZIPAIR] - v[C_ZI] * v[C_ZI])));
    }

    Ok(YZMomentReport {
        params: RunParams::new(channel, tree, trials, seed),
        x_n,
        z_n,
        moments,
        covariances,
        var_z1: m.delta(|v| v[C_Z1SQ] - v[C_Z1] * v[C_Z1]),
        var_z_sum: m.delta(|v| v[C_ZSUMSQ] - v[C_ZSUM] * v[C_ZSUM]),
        x_next: m.column(C_XPLUS),
    })
}

/// One row of per-sample statistics from the child posteriors `kids`
/// (`delta` rows of `k` probabilities).
fn yz_row(k: usize, delta: usize, x_plus: f64, kids: &[f64], zs: &mut [f64]) -> [f64; COLS] {
    let mut row = [0.0; COLS];
    let others = (k - 1) as f64;
    let pairs = ((k - 1) * (k.saturating_sub(2))) as f64;
    zs.iter_mut().for_each(|z| *z = 1.0);
    for y in kids.chunks_exact(k) {
        let y1 = y[0];
        let rest = &y[1..];
        let s: f64 = rest.iter().sum();
        let q: f64 = rest.iter().map(|v| v * v).sum();
        row[C_Y1] += y1;
        row[C_Y1SQ] += y1 * y1;
        row[C_YI] += s / others;
        row[C_YISQ] += q / others;
        row[C_Y1YI] += y1 * s / others;
        if pairs > 0.0 {
            row[C_YIPAIR] += (s * s - q) / pairs;
        }
        for (z, v) in zs.iter_mut().zip(y) {
            *z *= 1.0 - v;
        }
    }
    let dn = delta as f64;
    for c in [C_Y1, C_Y1SQ, C_YI, C_YISQ, C_Y1YI, C_YIPAIR] {
        row[c] /= dn;
    }
    let z1 = zs[0];
    let rest = &zs[1..];
    let s: f64 = rest.iter().sum();
    let q: f64 = rest.iter().map(|v| v * v).sum();
    row[C_Z1] = z1;
    row[C_Z1SQ] = z1 * z1;
    row[C_ZI] = s / others;
    row[C_ZISQ] = q / others;
    row[C_Z1ZI] = z1 * s / others;
    if pairs > 0.0 {
        row[C_ZIPAIR] = (s * s - q) / pairs;
    }
    row[C_ZSUM] = z1 + s;
    row[C_ZSUMSQ] = (z1 + s) * (z1 + s);
    row[C_XPLUS] = x_plus;
    row
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    Lower,
    Upper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub side: BoundSide,
    pub measured: Estimate,
    /// The bound evaluated at the measured `x_n`, with the error inherited from it.
    pub bound: Estimate,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZBoundsReport {
    pub applicable: bool,
    pub reason: Option<String>,
    pub checks: Vec<BoundCheck>,
}

impl ZBoundsReport {
    pub fn passes(&self) -> bool {
        self.checks.iter().all(|c| c.passes)
    }
}

/// Evaluates the mean and variance bounds on `Z_1`, `Z_i` and `sum Z_i` at
/// the measured `x_n`. Only meaningful when `delta <= 2 k log k` and
/// `x_n <= 2/k`; otherwise reported as not applicable.
pub fn check_z_bounds(report: &YZMomentReport, k: usize, delta: u32) -> ZBoundsReport {
    let kf = k as f64;
    let dn = delta as f64;
    if dn > 2.0 * kf * kf.ln() {
        return ZBoundsReport { applicable: false, reason: Some(format!("delta = {delta} exceeds 2 k log k")), checks: vec![] };
    }
    if report.x_n.mean > 2.0 / kf {
        return ZBoundsReport {
            applicable: false,
            reason: Some(format!("measured x_n = {} exceeds 2/k", report.x_n.mean)),
            checks: vec![],
        };
    }
    let base = ((kf - 1.0) / kf).powi(delta as i32);
    let base2 = base * base;
    let x = report.x_n;
    let bound = |f: &dyn Fn(f64) -> f64| {
        let a = x.mean - 1.0 / kf;
        let h = 1e-7;
        let slope = (f(a + h) - f(a - h)) / (2.0 * h);
        Estimate { mean: f(a), se: slope.abs() * x.se }
    };
    let get = |name: &str| report.moment(name).map(|m| m.measured).unwrap_or(Estimate { mean: f64::NAN, se: 0.0 });
    let ez1 = get("E Z_1");
    let ezi = get("E Z_i");

    let mut checks = Vec::new();
    let mut push = |name: &str, side: BoundSide, measured: Estimate, b: Estimate| {
        let sigma = (measured.se * measured.se + b.se * b.se).sqrt();
        let excess = match side {
            BoundSide::Upper => measured.mean - b.mean,
            BoundSide::Lower => b.mean - measured.mean,
        };
        let passes = excess <= SIGMAS * sigma + SLACK;
        checks.push(BoundCheck { name: name.to_string(), side, measured, bound: b, passes });
    };
    push("E Z_1 lower", BoundSide::Lower, ez1, bound(&|_| base));
    push("E Z_1 upper", BoundSide::Upper, ez1, bound(&|a| base * (1.0 + 2.0 * dn / kf * a)));
    push("E Z_i lower", BoundSide::Lower, ezi, bound(&|a| base * (1.0 - 2.0 * dn / (kf * kf) * a)));
    push("E Z_i upper", BoundSide::Upper, ezi, bound(&|_| base));
    push("Var Z_1 upper", BoundSide::Upper, report.var_z1, bound(&|a| base2 * 4.0 * dn / kf * a));
    push("Var sum Z_i upper", BoundSide::Upper, report.var_z_sum, bound(&|a| base2 * 4.0 * dn * a));
    ZBoundsReport { applicable: true, reason: None, checks }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub params: RunParams,
    pub x_n: Estimate,
    pub x_next: Estimate,
    /// `x_n <= 2/k` and `delta <= 2 k log k`.
    pub applicable: bool,
    /// `x_{n+1} - 1/k - (x_n - 1/k) / 2`.
    pub excess: Estimate,
    pub passes: bool,
}

/// Measures `x_n` and `x_{n+1}` on independent streams and tests
/// `x_{n+1} - 1/k <= (x_n - 1/k) / 2` within 4 sigma.
pub fn check_contraction(channel: &Channel, tree: TreeSpec, trials: u64, seed: u64) -> Result<ContractionReport> {
    require_colouring(channel)?;
    require_trials(trials)?;
    let k = channel.k() as f64;
    let x_n = conditioned_sums(channel, tree, trials, seed, Purpose::Conditioned, false, false)?.x.estimate();
    let x_next = conditioned_sums(channel, tree.with_depth(tree.depth + 1), trials, seed, Purpose::Reference, false, false)?
        .x
        .estimate();
    let excess = Estimate {
        mean: (x_next.mean - 1.0 / k) - 0.5 * (x_n.mean - 1.0 / k),
        se: (x_next.se * x_next.se + 0.25 * x_n.se * x_n.se).sqrt(),
    };
    Ok(ContractionReport {
        params: RunParams::new(channel, tree, trials, seed),
        x_n,
        x_next,
        applicable: x_n.mean <= 2.0 / k && tree.delta() <= 2.0 * k * k.ln(),
        passes: excess.mean <= SIGMAS * excess.se + SLACK,
        excess,
    })
}
