use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tree_recon::analytic::{
    contraction_coefficient, ks_reconstructs, run_map, threshold_bounds, uniqueness_holds, DeltaRule, MapKind,
};
use tree_recon::estimators::{check_z_bounds, verify_appendix_moments, verify_change_of_measure};
use tree_recon::runner::{
    fixpoint_csv, parse_float_grid, parse_int_grid, run_scan, run_verify, with_threads, write_output, Metadata,
    OutputFormat, RunConfig, TreeFamily, COUPLING_ALPHA, DEFAULT_SEED, SEED_ENV,
};
use tree_recon::{coupling::coupling_test, root_posterior, Channel, Error, LeafConfig, Result};

#[derive(Parser)]
#[command(name = "tree-recon", version, about = "Reconstruction on trees for the colouring broadcast model")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, env = SEED_ENV)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Family::Regular)]
    tree: Family,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Regular,
    Gw,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Map {
    G,
    Recon,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate x_n, z_n, p_n and d_TV at one (k, delta, n).
    Simulate {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        depth: u32,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate over a grid. Grids are comma lists with inclusive ranges, e.g. `3,5..8`.
    Scan {
        #[arg(long)]
        k: String,
        #[arg(long)]
        delta: String,
        #[arg(long)]
        depth: String,
        #[command(flatten)]
        common: Common,
    },
    /// Iterate a scalar fixed-point map and emit the trace as CSV.
    Fixpoint {
        #[arg(long)]
        k: u64,
        #[arg(long)]
        beta_star: f64,
        #[arg(long, conflicts_with = "delta_auto")]
        delta: Option<u64>,
        /// Take the degree from k D (floor for g, ceil for recon).
        #[arg(long)]
        delta_auto: bool,
        /// With --delta-auto, use this offset for the degree instead of beta*.
        #[arg(long, requires = "delta_auto")]
        delta_beta: Option<f64>,
        #[arg(long, value_enum)]
        map: Map,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        max_steps: usize,
        #[arg(long, env = SEED_ENV)]
        seed: Option<u64>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Threshold bounds, census criterion and uniqueness as JSON.
    Bounds {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        delta: f64,
        /// Binary symmetric channel with this flip probability instead of colouring.
        #[arg(long, conflicts_with = "k")]
        bsc: Option<f64>,
    },
    /// Root posterior of a leaf configuration (JSON file, or `-` for stdin).
    Posterior {
        input: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        /// Channel JSON file, e.g. {"kind":"bsc","epsilon":0.1}.
        #[arg(long, conflicts_with = "k")]
        channel: Option<PathBuf>,
    },
    /// Change-of-measure and Y/Z moment identities at one (k, delta, n).
    VerifyMoments {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        delta: u32,
        #[arg(long)]
        depth: u32,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, env = SEED_ENV)]
        seed: Option<u64>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Multinomial/Poisson coupling: dominance violations and marginal tests.
    CouplingTest {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        delta: u32,
        #[arg(long)]
        d: f64,
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        #[arg(long, env = SEED_ENV)]
        seed: Option<u64>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Run the verification bundle over a grid; exits 1 if any check fails.
    Verify {
        #[arg(long, default_value = "3,4")]
        k: String,
        #[arg(long, default_value = "2,3")]
        delta: String,
        #[arg(long, default_value = "1,2")]
        depth: String,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, env = SEED_ENV)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Family::Regular)]
        tree: Family,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn config(ks: Vec<usize>, deltas: Vec<f64>, depths: Vec<u32>, c: &Common) -> RunConfig {
    RunConfig {
        ks,
        deltas,
        depths,
        trials: c.trials,
        seed: c.seed.unwrap_or(DEFAULT_SEED),
        tree: family(c.tree),
        format: format(c.format),
        output: c.output.clone(),
    }
}

fn family(f: Family) -> TreeFamily {
    match f {
        Family::Regular => TreeFamily::Regular,
        Family::Gw => TreeFamily::GwPoisson,
    }
}

fn format(f: Format) -> OutputFormat {
    match f {
        Format::Csv => OutputFormat::Csv,
        Format::Json => OutputFormat::Json,
    }
}

fn json_out(value: &impl serde::Serialize, output: Option<&std::path::Path>) -> Result<()> {
    write_output(output, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_input(path: &PathBuf) -> Result<String> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        Ok(std::fs::read_to_string(path)?)
    }
}

/// Returns the process exit code for a completed command.
fn run(command: Command) -> Result<u8> {
    match command {
        Command::Simulate { k, delta, depth, common } => {
            let cfg = config(vec![k], vec![delta], vec![depth], &common);
            let table = run_scan(&cfg)?;
            write_output(cfg.output.as_deref(), &table.render(cfg.format)?)?;
        }
        Command::Scan { k, delta, depth, common } => {
            let cfg = config(parse_int_grid(&k)?, parse_float_grid(&delta)?, parse_int_grid(&depth)?, &common);
            let table = run_scan(&cfg)?;
            write_output(cfg.output.as_deref(), &table.render(cfg.format)?)?;
        }
        Command::Fixpoint { k, beta_star, delta, delta_auto, delta_beta, map, tol, max_steps, seed, output } => {
            let rule = match (delta, delta_auto, delta_beta) {
                (Some(d), false, _) => DeltaRule::Explicit(d),
                (None, true, None) => DeltaRule::Auto,
                (None, true, Some(b)) => DeltaRule::Offset(b),
                _ => return Err(Error::Config("give either --delta or --delta-auto".into())),
            };
            let map = match map {
                Map::G => MapKind::Decay,
                Map::Recon => MapKind::Freezing,
            };
            let run = run_map(map, k, beta_star, rule, max_steps, tol)?;
            let cfg = json!({
                "command": "fixpoint", "k": k, "beta_star": beta_star, "rule": rule, "map": map,
                "delta": run.delta, "tol": tol, "max_steps": max_steps,
            });
            let meta = Metadata::new(seed.unwrap_or(DEFAULT_SEED), &cfg)?;
            write_output(output.as_deref(), &fixpoint_csv(&run, &meta)?)?;
            eprintln!(
                "delta={} tail={:e} converged={} limit={:e} target={:e} holds={} monotone={}",
                run.delta, run.tail, run.trace.converged, run.trace.limit_estimate, run.target, run.holds, run.monotone
            );
        }
        Command::Bounds { k, delta, bsc } => {
            let value = match (k, bsc) {
                (Some(k), None) => {
                    let channel = Channel::colouring(k)?;
                    json!({
                        "channel": channel,
                        "delta": delta,
                        "threshold_bounds": threshold_bounds(k as u64).ok(),
                        "ks_reconstructs": ks_reconstructs(&channel, delta),
                        "uniqueness_holds": (delta >= 0.0 && delta.fract() == 0.0).then(|| uniqueness_holds(k as u64, delta as u64)),
                        "contraction": contraction_coefficient(k as u64, delta),
                    })
                }
                (None, Some(eps)) => {
                    let channel = Channel::bsc(eps)?;
                    json!({
                        "channel": channel,
                        "delta": delta,
                        "second_eigenvalue": channel.second_eigenvalue(),
                        "ks_reconstructs": ks_reconstructs(&channel, delta),
                    })
                }
                _ => return Err(Error::Config("give --k or --bsc".into())),
            };
            json_out(&value, None)?;
        }
        Command::Posterior { input, k, channel } => {
            let config: LeafConfig = serde_json::from_str(&read_input(&input)?)?;
            let channel = match (k, channel) {
                (Some(k), None) => Channel::colouring(k)?,
                (None, Some(p)) => serde_json::from_str(&read_input(&p)?)?,
                _ => return Err(Error::Config("give --k or --channel".into())),
            };
            let belief = root_posterior(&channel, &config)?;
            json_out(&belief, None)?;
        }
        Command::VerifyMoments { k, delta, depth, trials, seed, output } => {
            let seed = seed.unwrap_or(DEFAULT_SEED);
            let channel = Channel::colouring(k)?;
            let tree = tree_recon::TreeSpec::regular(delta, depth)?;
            let com = verify_change_of_measure(&channel, tree, trials, seed)?;
            let yz = verify_appendix_moments(&channel, tree, trials, seed)?;
            let zb = check_z_bounds(&yz, k, delta);
            let ok = com.passes() && yz.passes() && zb.passes();
            let meta = Metadata::new(seed, &json!({"command": "verify-moments", "k": k, "delta": delta, "depth": depth, "trials": trials}))?;
            json_out(&json!({"metadata": meta, "change_of_measure": com, "moments": yz, "z_bounds": zb, "passes": ok}), output.as_deref())?;
            return Ok(if ok { 0 } else { 1 });
        }
        Command::CouplingTest { k, delta, d, trials, seed, output } => {
            let seed = seed.unwrap_or(DEFAULT_SEED);
            let r = coupling_test(k, delta, d, trials, seed)?;
            let ok = r.passes(COUPLING_ALPHA);
            let meta = Metadata::new(seed, &json!({"command": "coupling-test", "k": k, "delta": delta, "d": d, "trials": trials}))?;
            json_out(
                &json!({"metadata": meta, "violations": r.violations, "min_p_value": r.min_p_value(), "report": r, "passes": ok}),
                output.as_deref(),
            )?;
            return Ok(if ok { 0 } else { 1 });
        }
        Command::Verify { k, delta, depth, trials, seed, tree, format: fmt, output } => {
            let cfg = RunConfig {
                ks: parse_int_grid(&k)?,
                deltas: parse_float_grid(&delta)?,
                depths: parse_int_grid(&depth)?,
                trials,
                seed: seed.unwrap_or(DEFAULT_SEED),
                tree: family(tree),
                format: format(fmt),
                output,
            };
            let summary = run_verify(&cfg)?;
            write_output(cfg.output.as_deref(), &summary.render(cfg.format)?)?;
            eprint!("{}", summary.text());
            return Ok(if summary.all_pass() { 0 } else { 1 });
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_threads(cli.threads, || run(cli.command)).and_then(|r| r) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
