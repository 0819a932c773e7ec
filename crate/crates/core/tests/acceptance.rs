//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line, written
//! straight to stdout so it shows up without `--nocapture`.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use tree_recon::analytic::{iterate_g, iterate_reconstruction_map, ks_reconstructs, uniqueness_holds, DeltaRule, MapKind, ThresholdParams};
use tree_recon::coupling::coupling_test;
use tree_recon::estimators::{
    check_contraction, estimate_xn_zn, simulate, verify_appendix_moments, verify_change_of_measure,
    ChangeOfMeasureReport, ContractionReport, MomentReport, YZMomentReport,
};
use tree_recon::runner::{agreement_sweep, AgreementSweep};
use tree_recon::{Channel, Estimate, TreeSpec};

const SEED: u64 = 2718;
const SIGMAS: f64 = 4.0;

fn report(criterion: u32, ok: bool, detail: &str) {
    let line = format!("{} criterion {criterion:>2}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn col(k: usize) -> Channel {
    Channel::colouring(k).unwrap()
}

/// The `{3,4} x {2,3} x {1,2}` grid shared by criteria 3 and 4.
fn identity_grid() -> Vec<(usize, u32, u32)> {
    let mut g = Vec::new();
    for k in [3, 4] {
        for d in [2, 3] {
            for n in [1, 2] {
                g.push((k, d, n));
            }
        }
    }
    g
}

// ---- shared runs, so criterion 5 can see every simulated instance ----

fn small_case() -> &'static (MomentReport, Duration) {
    static CELL: OnceLock<(MomentReport, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let r = simulate(&col(3), TreeSpec::regular(2, 1).unwrap(), 1_000_000, SEED).unwrap();
        (r, t.elapsed())
    })
}

fn change_of_measure_runs() -> &'static (Vec<ChangeOfMeasureReport>, Duration) {
    static CELL: OnceLock<(Vec<ChangeOfMeasureReport>, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let runs = identity_grid()
            .into_iter()
            .map(|(k, d, n)| verify_change_of_measure(&col(k), TreeSpec::regular(d, n).unwrap(), 100_000, SEED).unwrap())
            .collect();
        (runs, t.elapsed())
    })
}

fn moment_runs() -> &'static (Vec<YZMomentReport>, Duration) {
    static CELL: OnceLock<(Vec<YZMomentReport>, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let runs = identity_grid()
            .into_iter()
            .map(|(k, d, n)| verify_appendix_moments(&col(k), TreeSpec::regular(d, n).unwrap(), 100_000, SEED).unwrap())
            .collect();
        (runs, t.elapsed())
    })
}

fn contraction_run() -> &'static ContractionReport {
    static CELL: OnceLock<ContractionReport> = OnceLock::new();
    CELL.get_or_init(|| check_contraction(&col(20), TreeSpec::regular(30, 2).unwrap(), 3_000, SEED).unwrap())
}

struct GwRuns {
    sweeps: Vec<(usize, f64, u32, AgreementSweep)>,
    /// `(k, mean, x_0..x_3)`
    decay: Vec<(usize, f64, Vec<Estimate>)>,
    measure: Vec<ChangeOfMeasureReport>,
}

fn gw_runs() -> &'static GwRuns {
    static CELL: OnceLock<GwRuns> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut sweeps = Vec::new();
        for k in [2, 3, 4] {
            for mean in [1.0, 2.0, 3.0] {
                for n in [1, 2, 3] {
                    let s = agreement_sweep(&col(k), TreeSpec::gw_poisson(mean, n).unwrap(), 10_000, 1_000, SEED).unwrap();
                    sweeps.push((k, mean, n, s));
                }
            }
        }
        let mut decay = Vec::new();
        for (k, mean) in [(3, 2.0), (3, 3.0), (4, 2.0), (4, 3.0)] {
            let xs = (0..=3)
                .map(|n| estimate_xn_zn(&col(k), TreeSpec::gw_poisson(mean, n).unwrap(), 100_000, SEED).unwrap().x_n.unwrap())
                .collect();
            decay.push((k, mean, xs));
        }
        let measure = identity_grid()
            .into_iter()
            .map(|(k, d, n)| verify_change_of_measure(&col(k), TreeSpec::gw_poisson(d as f64, n).unwrap(), 100_000, SEED).unwrap())
            .collect();
        GwRuns { sweeps, decay, measure }
    })
}

// ---- criteria ----

#[test]
fn criterion_01_bp_matches_enumeration() {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut configs = 0;
    for k in [2, 3, 4] {
        for d in [1, 2, 3] {
            for n in [1, 2, 3] {
                let s = agreement_sweep(&col(k), TreeSpec::regular(d, n).unwrap(), 10_000, 1_000, SEED).unwrap();
                configs += s.configs;
                worst = worst.max(s.max_diff);
                if !s.passes() || s.skipped > 0 {
                    failures.push(format!("k={k} delta={d} n={n}: {s:?}"));
                }
            }
        }
    }
    let elapsed = t.elapsed();
    let ok = failures.is_empty() && elapsed <= Duration::from_secs(120);
    report(1, ok, &format!("BP = enumeration on {configs} configs, max diff {worst:.2e}, {elapsed:.1?} {failures:?}"));
    assert!(ok);
}

#[test]
fn criterion_02_exact_small_case() {
    let (r, elapsed) = small_case();
    let x = r.x_n.unwrap();
    let z = r.z_n.unwrap();
    let p = r.p_n.unwrap();
    let z_exact = 2.0 / 9.0 + 1.0 / 72.0;
    let ok = x.agrees_with(0.75, SIGMAS, 0.0)
        && p.agrees_with(0.5, SIGMAS, 0.0)
        && z.agrees_with(z_exact, SIGMAS, 0.0)
        && *elapsed <= Duration::from_secs(60);
    report(
        2,
        ok,
        &format!(
            "k=3 delta=2 n=1: x={:.5}+-{:.1e} (3/4) p={:.5}+-{:.1e} (1/2) z={:.5}+-{:.1e} ({z_exact:.5}) {elapsed:.1?}",
            x.mean, x.se, p.mean, p.se, z.mean, z.se
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_03_change_of_measure() {
    let (runs, elapsed) = change_of_measure_runs();
    let failed: Vec<_> = runs
        .iter()
        .filter(|r| !r.passes())
        .map(|r| (r.params.k, r.params.delta, r.params.n, r.second_moment.difference, r.centred.difference))
        .collect();
    let worst = runs
        .iter()
        .flat_map(|r| [&r.second_moment, &r.centred])
        .filter(|c| c.difference.se > 1e-9)
        .map(|c| c.difference.mean.abs() / c.difference.se)
        .fold(0.0, f64::max);
    let largest = runs
        .iter()
        .flat_map(|r| [&r.second_moment, &r.centred])
        .map(|c| c.difference.mean.abs())
        .fold(0.0, f64::max);
    let ok = failed.is_empty() && *elapsed <= Duration::from_secs(300);
    report(3, ok, &format!("{} instances, largest |diff| {largest:.2e}, largest |diff|/se over sampled pairs {worst:.2}, {elapsed:.1?} failed {failed:?}", runs.len()));
    assert!(ok);
}

#[test]
fn criterion_04_moment_identities() {
    let (runs, elapsed) = moment_runs();
    let mut failed = Vec::new();
    let mut checks = 0;
    for r in runs {
        for m in &r.moments {
            checks += 1;
            if !m.passes {
                failed.push(format!("k={} delta={} n={} {}: {} vs {}", r.params.k, r.params.delta, r.params.n, m.name, m.measured.mean, m.predicted.mean));
            }
        }
        for c in &r.covariances {
            checks += 1;
            if !c.passes {
                failed.push(format!("k={} delta={} n={} {}: {:?}", r.params.k, r.params.delta, r.params.n, c.name, c.estimate));
            }
        }
        // the eight displayed moments and both covariance signs must all be present
        assert_eq!(r.moments.len(), 9);
        assert!(r.covariances.iter().any(|c| c.name == "Cov(Y_i1j, Y_i2j)"));
        assert!(r.covariances.iter().any(|c| c.name == "Cov(Z_i1, Z_i2)"));
    }
    let ok = failed.is_empty() && *elapsed <= Duration::from_secs(600);
    report(4, ok, &format!("{checks} checks over {} instances, {elapsed:.1?} failed {failed:?}", runs.len()));
    assert!(ok);
}

#[test]
fn criterion_05_lower_bound_on_every_instance() {
    let mut instances: Vec<(String, usize, Estimate)> = Vec::new();
    let (r, _) = small_case();
    instances.push(("small case".into(), 3, r.x_n.unwrap()));
    for r in &change_of_measure_runs().0 {
        instances.push((format!("measure {:?}", (r.params.k, r.params.delta, r.params.n)), r.params.k, r.second_moment.lhs));
    }
    for r in &moment_runs().0 {
        instances.push((format!("moments x_n {:?}", (r.params.k, r.params.delta, r.params.n)), r.params.k, r.x_n));
        instances.push((format!("moments x_n+1 {:?}", (r.params.k, r.params.delta, r.params.n)), r.params.k, r.x_next));
    }
    let c = contraction_run();
    instances.push(("contraction x_n".into(), 20, c.x_n));
    instances.push(("contraction x_n+1".into(), 20, c.x_next));
    let gw = gw_runs();
    for (k, mean, xs) in &gw.decay {
        for (n, x) in xs.iter().enumerate() {
            instances.push((format!("gw k={k} mean={mean} n={n}"), *k, *x));
        }
    }
    for r in &gw.measure {
        instances.push((format!("gw measure {:?}", (r.params.k, r.params.delta, r.params.n)), r.params.k, r.second_moment.lhs));
    }
    let violations: Vec<_> = instances
        .iter()
        .filter(|(_, k, x)| x.mean < 1.0 / *k as f64 - 3.0 * x.se)
        .map(|(name, _, x)| format!("{name}: {x:?}"))
        .collect();
    let ok = violations.is_empty();
    report(5, ok, &format!("x_n >= 1/k - 3 sigma on {} instances, violations {violations:?}", instances.len()));
    assert!(ok);
}

#[test]
fn criterion_06_contraction() {
    let r = contraction_run();
    let ok = r.applicable && r.passes;
    report(
        6,
        ok,
        &format!(
            "k=20 delta=30 n=2: x_n={:.5}+-{:.1e} (<= 0.1: {}), x_n+1={:.5}+-{:.1e}, x_n+1 - 1/k - (x_n - 1/k)/2 = {:+.2e}+-{:.1e}",
            r.x_n.mean, r.x_n.se, r.applicable, r.x_next.mean, r.x_next.se, r.excess.mean, r.excess.se
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_07_decay_map() {
    let k = 10_000;
    let beta_star = 1.0 - std::f64::consts::LN_2 - 0.05;
    let t = Instant::now();
    let params = ThresholdParams::new(k, beta_star).unwrap();
    let delta = DeltaRule::Auto.resolve(MapKind::Decay, &params).unwrap();
    assert_eq!(delta, params.k_d().floor() as u64);
    let run = iterate_g(k, beta_star, delta, 10_000, 1e-12).unwrap();
    let elapsed = t.elapsed();
    let ok = run.trace.converged && run.trace.limit_estimate < 2.0 / k as f64 && run.monotone && elapsed <= Duration::from_secs(1);
    report(
        7,
        ok,
        &format!(
            "g at k=1e4 delta={delta}: p={:.4} converged={} limit={:.4e} (target < {:.1e}) non-increasing={} {elapsed:.1?}",
            run.tail,
            run.trace.converged,
            run.trace.limit_estimate,
            2.0 / k as f64,
            run.monotone
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_08_reconstruction_map() {
    let k = 10_000;
    let beta_star = 1.05;
    let t = Instant::now();
    let params = ThresholdParams::new(k, beta_star).unwrap();
    let delta = DeltaRule::Auto.resolve(MapKind::Freezing, &params).unwrap();
    assert_eq!(delta, params.k_d().ceil() as u64);
    let run = iterate_reconstruction_map(k, beta_star, delta, 10_000, 1e-12).unwrap();
    let elapsed = t.elapsed();
    let floor = 1.0 - 1.0 / (k as f64).ln();
    let min = run.trace.values.iter().copied().fold(f64::INFINITY, f64::min);
    let ok = min >= floor && elapsed <= Duration::from_secs(1);
    report(
        8,
        ok,
        &format!(
            "freezing map at k=1e4 delta={delta}: s={:.4} min iterate {min:.4e} (target >= {floor:.4}) first steps {:?} {elapsed:.1?}",
            run.tail,
            &run.trace.values[..run.trace.values.len().min(4)]
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_09_census_and_uniqueness() {
    let mut bad = Vec::new();
    for delta in 2..=100u32 {
        let eps = (1.0 - 1.0 / (delta as f64).sqrt()) / 2.0;
        let bsc = Channel::bsc(eps).unwrap();
        if ks_reconstructs(&bsc, delta as f64) {
            bad.push(format!("BSC boundary delta={delta}"));
        }
    }
    for (eps, delta) in [(0.25, 4.0), (0.375, 16.0)] {
        if ks_reconstructs(&Channel::bsc(eps).unwrap(), delta) {
            bad.push(format!("BSC eps={eps} delta={delta}"));
        }
    }
    if !ks_reconstructs(&Channel::bsc(0.25).unwrap(), 5.0) {
        bad.push("BSC eps=0.25 delta=5".into());
    }
    for k in 3..=20usize {
        let edge = ((k - 1) * (k - 1)) as f64;
        if ks_reconstructs(&col(k), edge) || !ks_reconstructs(&col(k), edge + 1.0) {
            bad.push(format!("colouring k={k}"));
        }
    }
    for delta in 1..=100u64 {
        if !uniqueness_holds(delta + 2, delta) || uniqueness_holds(delta + 1, delta) {
            bad.push(format!("uniqueness delta={delta}"));
        }
    }
    let ok = bad.is_empty();
    report(9, ok, &format!("census boundaries and uniqueness flips, errors {bad:?}"));
    assert!(ok);
}

#[test]
fn criterion_10_coupling() {
    let r = coupling_test(5, 20, 5.0, 1_000_000, SEED).unwrap();
    let ok = r.violations == 0 && r.min_p_value() >= 1e-3;
    report(10, ok, &format!("10^6 draws at k=5 delta=20 D=5: {} violations, min p-value {:.4}", r.violations, r.min_p_value()));
    assert!(ok);
}

fn cli_output(args: &[&str], threads: usize, dir: &Path, name: &str) -> Vec<u8> {
    let path = dir.join(name);
    let status = Command::new(env!("CARGO_BIN_EXE_tree-recon"))
        .args(args)
        .arg("--threads")
        .arg(threads.to_string())
        .arg("--output")
        .arg(&path)
        .env_remove("RECON_SEED")
        .status()
        .unwrap();
    assert!(status.code().is_some_and(|c| c <= 1), "{args:?}: {status}");
    std::fs::read(path).unwrap()
}

#[test]
fn criterion_11_determinism_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 6] = [
        &["simulate", "--k", "3", "--delta", "2", "--depth", "1", "--trials", "200000", "--seed", "7"],
        &["scan", "--k", "3,4", "--delta", "2,3", "--depth", "0..2", "--trials", "20000", "--format", "json"],
        &["scan", "--k", "3", "--delta", "2", "--depth", "0..3", "--trials", "20000", "--tree", "gw"],
        &["verify-moments", "--k", "4", "--delta", "3", "--depth", "1", "--trials", "20000"],
        &["coupling-test", "--k", "5", "--delta", "20", "--d", "5", "--trials", "100000"],
        &["fixpoint", "--k", "10000", "--beta-star", "1.05", "--delta-auto", "--map", "recon"],
    ];
    let mut differing = Vec::new();
    for (i, args) in runs.iter().enumerate() {
        let one = cli_output(args, 1, dir.path(), &format!("{i}-1"));
        let four = cli_output(args, 4, dir.path(), &format!("{i}-4"));
        let again = cli_output(args, 3, dir.path(), &format!("{i}-3"));
        if one != four || one != again || one.is_empty() {
            differing.push(args[0]);
        }
    }
    let ok = differing.is_empty();
    report(11, ok, &format!("{} CLI runs byte-identical at --threads 1, 3, 4; differing {differing:?}", runs.len()));
    assert!(ok);
}

#[test]
fn criterion_12_galton_watson() {
    let gw = gw_runs();
    let mut problems = Vec::new();
    let mut skipped = 0;
    let mut compared = 0;
    for (k, mean, n, s) in &gw.sweeps {
        skipped += s.skipped;
        compared += s.compared;
        if !s.passes() {
            problems.push(format!("sweep k={k} mean={mean} n={n}: {s:?}"));
        }
    }
    for (k, mean, xs) in &gw.decay {
        if xs[0] != Estimate::exact(1.0) {
            problems.push(format!("x_0 k={k} mean={mean}: {:?}", xs[0]));
        }
        for w in xs.windows(2) {
            let sigma = (w[0].se * w[0].se + w[1].se * w[1].se).sqrt();
            if w[1].mean > w[0].mean + SIGMAS * sigma {
                problems.push(format!("increase k={k} mean={mean}: {:?} -> {:?}", w[0], w[1]));
            }
        }
    }
    for r in &gw.measure {
        if !r.passes() {
            problems.push(format!("change of measure {:?}", (r.params.k, r.params.delta, r.params.n)));
        }
    }
    let ok = problems.is_empty();
    report(
        12,
        ok,
        &format!(
            "GW: {compared} BP/enumeration comparisons ({skipped} over the term cap), {} decay series, {} change-of-measure runs; problems {problems:?}",
            gw.decay.len(),
            gw.measure.len()
        ),
    );
    assert!(ok);
}
