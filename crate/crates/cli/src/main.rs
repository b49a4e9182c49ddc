use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use debiaskf::complexity::{scaling_benchmark, CountModel};
use debiaskf::export;
use debiaskf::metrics::{compute_metrics, write_metrics_csv};
use debiaskf::scenario::{run_monte_carlo, run_rng, simulate_truth, FilterKind, LinearizationMode, ScenarioConfig};
use debiaskf::synthetic::{random_shape, random_system, run_equivalence};
use debiaskf::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

const EQUIVALENCE_TOL: f64 = 1e-8;

#[derive(Parser)]
#[command(name = "debiaskf", version, about = "Decoupled Kalman filtering for joint target state and sensor bias estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate truth, bias draws and radar scans.
    Simulate(ScenarioArgs),
    /// Run filters over Monte-Carlo runs and write metric series.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated filters: askf, decoupled, approx.
        #[arg(long, default_value = "askf,decoupled,approx")]
        filters: String,
        /// Let the augmented filter reuse the decoupled branches' Jacobians.
        #[arg(long)]
        shared_linearization: bool,
    },
    /// Check decoupled/augmented agreement on random linear systems.
    Equivalence {
        #[arg(long, default_value_t = 20)]
        n_cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        /// Scale the branches' initial target/bias cross covariance.
        #[arg(long, default_value_t = 1.0)]
        perturb_tb: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Time both filters against the number of targets.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
        n_list: Vec<usize>,
        /// State, bias and per-target measurement dimensions.
        #[arg(long, value_delimiter = ',', default_value = "6,5,2")]
        shape: Vec<u64>,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML; the built-in default scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of Monte-Carlo runs.
    #[arg(long)]
    mc_runs: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

enum Failure {
    Config(String),
    Runtime(String),
    Breach,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    config: Option<String>,
    config_sha256: Option<String>,
    seed: u64,
    filters: Vec<&'static str>,
    out: String,
    version: &'static str,
}

impl RunManifest {
    fn new(command: &'static str, out: &Path, seed: u64) -> Self {
        RunManifest {
            command,
            config: None,
            config_sha256: None,
            seed,
            filters: Vec::new(),
            out: out.display().to_string(),
            version: env!("CARGO_PKG_VERSION"),
        }
    }

    /// Creates `out` and writes `manifest.json` into it.
    fn write(&self, out: &Path) -> CmdResult {
        fs::create_dir_all(out)?;
        let f = File::create(out.join("manifest.json"))?;
        serde_json::to_writer_pretty(BufWriter::new(f), self)?;
        Ok(())
    }
}

fn load_scenario(args: &ScenarioArgs, command: &'static str) -> Result<(ScenarioConfig, RunManifest), Failure> {
    let (mut cfg, bytes) = match &args.config {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            let text = String::from_utf8(bytes.clone()).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            let cfg = ScenarioConfig::from_toml(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            (cfg, bytes)
        }
        None => {
            let cfg = ScenarioConfig::default();
            let bytes = cfg.to_toml().into_bytes();
            (cfg, bytes)
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(runs) = args.mc_runs {
        cfg.n_monte_carlo = runs;
    }
    let mut manifest = RunManifest::new(command, &args.out, cfg.seed);
    manifest.config = Some(args.config.as_ref().map_or("<default>".into(), |p| p.display().to_string()));
    manifest.config_sha256 = Some(hex::encode(Sha256::digest(&bytes)));
    Ok((cfg, manifest))
}

fn csv_file(out: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn cmd_simulate(args: &ScenarioArgs) -> CmdResult {
    let (cfg, manifest) = load_scenario(args, "simulate")?;
    manifest.write(&args.out)?;
    let truths = (0..cfg.n_monte_carlo)
        .into_par_iter()
        .map(|run| simulate_truth(&cfg, &mut run_rng(cfg.seed, run)))
        .collect::<Result<Vec<_>, _>>()?;
    let indexed: Vec<_> = truths.iter().enumerate().collect();
    export::write_truth_csv(csv_file(&args.out, "truth.csv")?, &indexed)?;
    export::write_measurements_csv(csv_file(&args.out, "measurements.csv")?, &indexed)?;
    export::write_bias_csv(csv_file(&args.out, "bias.csv")?, &indexed)?;
    Ok(())
}

fn parse_filters(list: &str) -> Result<Vec<FilterKind>, Failure> {
    let filters = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| FilterKind::parse(s).ok_or_else(|| Failure::Config(format!("unknown filter `{s}` (expected askf, decoupled or approx)"))))
        .collect::<Result<Vec<_>, _>>()?;
    if filters.is_empty() {
        return Err(Failure::Config("no filters selected".into()));
    }
    Ok(filters)
}

fn cmd_compare(args: &ScenarioArgs, filters: &str, shared: bool) -> CmdResult {
    let filters = parse_filters(filters)?;
    let (cfg, mut manifest) = load_scenario(args, "compare")?;
    cfg.validate_for_filtering()?;
    manifest.filters = filters.iter().map(|f| f.name()).collect();
    manifest.write(&args.out)?;
    let mode = if shared { LinearizationMode::Shared } else { LinearizationMode::Independent };
    let out = run_monte_carlo(&cfg, &filters, mode)?;
    let series = compute_metrics(&out, cfg.geometry.n_sensors(), cfg.dims())?;
    write_metrics_csv(csv_file(&args.out, "metrics.csv")?, &series)?;
    let records: Vec<_> = out.runs.iter().flat_map(|r| r.estimates.iter().cloned()).collect();
    export::write_estimates_csv(csv_file(&args.out, "estimates.csv")?, &records)?;
    Ok(())
}

fn cmd_equivalence(n_cases: usize, seed: u64, steps: usize, perturb_tb: f64, out: &Path) -> CmdResult {
    let manifest = RunManifest {
        filters: vec![FilterKind::Askf.name(), FilterKind::Decoupled.name()],
        ..RunManifest::new("equivalence", out, seed)
    };
    manifest.write(out)?;
    if n_cases == 0 {
        eprintln!("warning: no equivalence cases requested");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(n_cases);
    for case in 0..n_cases {
        let shape = random_shape(&mut rng);
        let sys = random_system(&mut rng, shape);
        let mut case_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let report = run_equivalence(&sys, &mut case_rng, steps, perturb_tb)?;
        cases.push(json!({
            "case": case,
            "n": shape.n, "s": shape.s, "b": shape.b, "m": shape.m,
            "max_deviation": report.max_deviation,
            "lemma_residual": report.lemma_residual,
            "cross_information": report.cross_information,
        }));
    }
    let worst = cases
        .iter()
        .max_by(|a, b| a["max_deviation"].as_f64().unwrap().total_cmp(&b["max_deviation"].as_f64().unwrap()))
        .cloned();
    let max_dev = worst.as_ref().map_or(0.0, |w| w["max_deviation"].as_f64().unwrap());
    let summary = json!({
        "n_cases": n_cases,
        "steps": steps,
        "perturb_tb": perturb_tb,
        "tolerance": EQUIVALENCE_TOL,
        "max_deviation": max_dev,
        "worst": worst,
        "cases": cases,
    });
    serde_json::to_writer_pretty(BufWriter::new(File::create(out.join("equivalence.json"))?), &summary)?;
    println!("max relative deviation {max_dev:.3e} over {n_cases} cases");
    if max_dev >= EQUIVALENCE_TOL {
        eprintln!("equivalence breach (tolerance {EQUIVALENCE_TOL:e}), worst case:");
        eprintln!("{}", serde_json::to_string_pretty(&summary["worst"])?);
        return Err(Failure::Breach);
    }
    Ok(())
}

fn cmd_bench(n_list: &[usize], shape: &[u64], steps: usize, out: &Path) -> CmdResult {
    let &[s, b, m] = shape else {
        return Err(Failure::Config(format!("--shape expects S,B,M, got {} values", shape.len())));
    };
    let filters = [FilterKind::Decoupled, FilterKind::Askf];
    let manifest = RunManifest {
        filters: filters.iter().map(|f| f.name()).collect(),
        ..RunManifest::new("bench", out, 0)
    };
    manifest.write(out)?;
    let report = scaling_benchmark(&filters, n_list, CountModel { n: 0, s, b, m }, steps)?;
    export::write_bench_csv(csv_file(out, "bench.csv")?, &report)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(out.join("bench.json"))?), &report)?;
    for (filter, slope) in &report.slopes {
        println!("{}: log-log slope {slope:.3}", filter.name());
    }
    Ok(())
}

fn configure_threads() -> CmdResult {
    let Ok(value) = std::env::var("DEBIASKF_THREADS") else { return Ok(()) };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::Config(format!("DEBIASKF_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn run(cli: Cli) -> CmdResult {
    configure_threads()?;
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Compare {
            scenario,
            filters,
            shared_linearization,
        } => cmd_compare(&scenario, &filters, shared_linearization),
        Command::Equivalence {
            n_cases,
            seed,
            steps,
            perturb_tb,
            out,
        } => cmd_equivalence(n_cases, seed, steps, perturb_tb, &out),
        Command::Bench { n_list, shape, steps, out } => cmd_bench(&n_list, &shape, steps, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Breach) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
