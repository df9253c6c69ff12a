// SPDX-License-Identifier: Apache-2.0

//! `activecool` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 1 anything else (I/O, malformed input files).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use activecool::analyze::{analyze, report_text, write_report};
use activecool::config::{load_config, EnsembleConfig};
use activecool::ensemble::{derive_seed, read_records, run_ensemble};
use activecool::modelset::{Model, ModelDocument};
use activecool::thermo::{boltzmann_sample, bin_test, equal_mass_bins, ThermalMap, DEFAULT_BETA_MAX};
use activecool::{Error, Result};
use clap::{Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "activecool", version, about = "Active-cooling Boltzmann sampler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the model described by a config and write its document.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// One run; writes a single JSON line.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Engine seed. Defaults to the ensemble seed of `--index`.
        #[arg(long)]
        seed: Option<u64>,
        /// Reproduce run `I` of the configured ensemble.
        #[arg(long, value_name = "I")]
        index: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// All runs of the configured ensemble, as JSON lines.
    Ensemble {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `output.records` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; overrides `jobs` (0 = all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Fit a temperature to a record file and test the histogram.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact Boltzmann draws on a model's spectrum, tested against the
    /// exact bin masses.
    Oracle {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        beta: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { config, out } => gen(&config, &out),
        Command::Run {
            config,
            seed,
            index,
            out,
        } => run(&config, seed, index, &out),
        Command::Ensemble { config, out, jobs } => ensemble(&config, out, jobs),
        Command::Analyze { input, bins, out } => analyze_cmd(&input, bins, &out),
        Command::Oracle {
            model,
            beta,
            n,
            bins,
            seed,
        } => oracle(&model, beta, n, bins, seed),
    }
}

fn print_json<S: Serialize>(v: &S) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn gen(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let model = Model::<f64>::from_config(&cfg)?;
    let doc = model.document(&cfg.model, cfg.model_seed())?;
    doc.save(out)?;
    info!("model {} ({} levels) written to {}", doc.fingerprint, doc.eigenvalues.len(), out.display());
    println!("{}", doc.fingerprint);
    Ok(())
}

fn run(config: &Path, seed: Option<u64>, index: Option<usize>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let seed = match (seed, index) {
        (Some(s), _) => s,
        (None, Some(i)) => derive_seed(cfg.master_seed, i),
        (None, None) => {
            return Err(Error::InvalidParameter("run needs --seed or --index".into()));
        }
    };
    let model = Model::<f64>::from_config(&cfg)?;
    let mut rec = model.run(&cfg.engine, seed)?;
    if let Some(i) = index {
        rec.run_index = i;
        rec.master_seed = Some(cfg.master_seed);
    }
    let mut w = BufWriter::new(File::create(out)?);
    writeln!(w, "{}", serde_json::to_string(&rec)?)?;
    w.flush()?;
    println!(
        "E_estimate={:.6} E_expectation={:.6} E_measured={:.6} cycles={}",
        rec.e_estimate, rec.e_expectation, rec.e_measured, rec.cycles_run
    );
    Ok(())
}

fn ensemble(config: &Path, out: Option<PathBuf>, jobs: Option<usize>) -> Result<()> {
    let mut cfg: EnsembleConfig = load_config(config)?;
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    let out = out
        .or_else(|| cfg.output.records.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::InvalidParameter("no record file: pass --out or set output.records".into()))?;
    let model = Model::<f64>::from_config(&cfg)?;
    let sink = BufWriter::new(File::create(&out)?);
    let (_, summary) = run_ensemble(&cfg, &model, Some(sink))?;
    info!("{} records written to {}", summary.runs, out.display());
    print_json(&summary)
}

fn analyze_cmd(input: &Path, bins: usize, out: &Path) -> Result<()> {
    let records = read_records(input)?;
    let a = analyze(&records, bins)?;
    write_report(&a, out)?;
    print!("{}", report_text(&a));
    Ok(())
}

#[derive(Serialize)]
struct OracleReport {
    fingerprint: String,
    beta: f64,
    n: usize,
    seed: u64,
    mean_energy_exact: f64,
    mean_energy_sample: f64,
    energy_sd_exact: f64,
    bin_edges: Vec<(f64, f64)>,
    masses: Vec<f64>,
    counts: Vec<u64>,
    z: Vec<f64>,
    chi_square: f64,
    dof: usize,
    p_value: f64,
}

fn oracle(model: &Path, beta: f64, n: usize, bins: usize, seed: u64) -> Result<()> {
    if n < 1 {
        return Err(Error::InvalidParameter("--n must be at least 1".into()));
    }
    let doc = ModelDocument::load(model)?;
    let map = ThermalMap::new(&doc.eigenvalues, DEFAULT_BETA_MAX.max(beta.abs()))?;
    let probs = map.probs(beta);
    let draws = boltzmann_sample(&probs, n, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let energies: Vec<f64> = draws.iter().map(|&i| map.spectrum()[i]).collect();
    let set = equal_mass_bins(&probs, map.spectrum(), bins)?;
    let test = bin_test(&set.counts(&energies), &set.masses(), false)?;
    print_json(&OracleReport {
        fingerprint: doc.fingerprint,
        beta,
        n,
        seed,
        mean_energy_exact: map.mean_energy(beta),
        mean_energy_sample: energies.iter().sum::<f64>() / n as f64,
        energy_sd_exact: map.energy_sd(beta),
        bin_edges: set.bins.iter().map(|b| (b.lo, b.hi)).collect(),
        masses: set.masses(),
        counts: test.counts,
        z: test.z,
        chi_square: test.chi_square,
        dof: test.dof,
        p_value: test.p_value,
    })
}
