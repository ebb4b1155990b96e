//! `fpgmm`: run, sweep, trade-off and privacy experiments from JSON configs.
//!
//! Exit codes: 0 success, 1 configuration error, 2 protocol failure,
//! 3 privacy check failed.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fpgmm::config::{InstanceConfig, PrivacyConfig, SweepConfig, TradeoffConfig};
use fpgmm::costmodel::{tradeoff_table, write_tradeoff_csv};
use fpgmm::instance::DesiredSet;
use fpgmm::privacy::{privacy_check, NoiseMode, PrivacyOptions};
use fpgmm::simulator::{run, sweep, write_csv_summary, write_jsonl};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "fpgmm",
    version,
    about = "Fully private grouped matrix multiplication experiments"
)]
struct Cli {
    /// JSON configuration file for the subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output file (stdout if omitted).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker thread count for parallel phases.
    #[arg(long, global = true, value_name = "K")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One protocol run; writes a JSON report.
    Run,
    /// Runs a parameter grid; writes one JSON report per line.
    Sweep {
        /// Also write the CSV summary here.
        #[arg(long, value_name = "PATH")]
        summary: Option<PathBuf>,
    },
    /// Minimizes NDC under NCC bounds; writes a CSV table.
    Tradeoff,
    /// Exhaustively compares the colluders' views of two desired sets.
    Privacy {
        /// Forces the noise to zero (negative control for tests).
        #[arg(long, hide = true)]
        zero_noise: bool,
    },
}

const CONFIG_ERROR: u8 = 1;
const PROTOCOL_FAILURE: u8 = 2;
const PRIVACY_FAILURE: u8 = 3;

/// Failure classes mapped to exit codes.
enum Outcome {
    Ok,
    Protocol,
    Privacy,
}

fn read_config(path: Option<&Path>) -> Result<String> {
    let path = path.context("--config PATH is required")?;
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json(value: &impl Serialize, path: Option<&Path>) -> Result<()> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn cmd_run(cli: &Cli) -> Result<Outcome> {
    let mut cfg = InstanceConfig::from_json(&read_config(cli.config.as_deref())?)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let report = run(&cfg)?;
    write_json(&report, cli.out.as_deref())?;
    if !report.success {
        eprintln!(
            "protocol failure: {}",
            report.failure.as_deref().unwrap_or("unknown")
        );
        return Ok(Outcome::Protocol);
    }
    Ok(Outcome::Ok)
}

fn cmd_sweep(cli: &Cli, summary: Option<&Path>) -> Result<Outcome> {
    let mut cfg = SweepConfig::from_json(&read_config(cli.config.as_deref())?)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let records = sweep(&cfg);
    let mut out = output(cli.out.as_deref())?;
    write_jsonl(&records, &mut out)?;
    out.flush()?;
    if let Some(path) = summary {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_csv_summary(&records, BufWriter::new(file))?;
    }
    let failed = records
        .iter()
        .filter(|r| r.report.as_ref().is_none_or(|rep| !rep.success))
        .count();
    if failed > 0 {
        eprintln!("{failed} of {} sweep runs did not succeed", records.len());
        return Ok(Outcome::Protocol);
    }
    Ok(Outcome::Ok)
}

fn cmd_tradeoff(cli: &Cli) -> Result<Outcome> {
    let cfg = TradeoffConfig::from_json(&read_config(cli.config.as_deref())?)?;
    let rows = tradeoff_table(
        &cfg.schemes,
        &cfg.bounds()?,
        &cfg.worker_caps,
        cfg.t,
        cfg.s_size,
        cfg.search_limits,
    );
    for scheme in &cfg.schemes {
        if let Some(note) = scheme.caveat() {
            eprintln!("note ({scheme}): {note}");
        }
    }
    let mut out = output(cli.out.as_deref())?;
    write_tradeoff_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(Outcome::Ok)
}

fn cmd_privacy(cli: &Cli, zero_noise: bool) -> Result<Outcome> {
    let cfg = PrivacyConfig::from_json(&read_config(cli.config.as_deref())?)?;
    let params = cfg.params()?;
    let s1 = DesiredSet::new(cfg.s1.iter().copied()).context("s1")?;
    let s2 = DesiredSet::new(cfg.s2.iter().copied()).context("s2")?;
    let options = PrivacyOptions {
        budget: cfg.budget,
        noise: if zero_noise {
            NoiseMode::Zeroed
        } else {
            NoiseMode::Uniform
        },
        seed: cli.seed.unwrap_or(cfg.seed),
        grouping: cfg.grouping_policy,
        points: cfg.point_policy,
    };
    let verdict = privacy_check(params, &s1, &s2, &cfg.colluders, &options)?;
    write_json(&verdict, cli.out.as_deref())?;
    if !verdict.in_contract {
        eprintln!(
            "note: {} colluders exceed T = {}; result is not covered by the guarantee",
            cfg.colluders.len(),
            cfg.t
        );
        return Ok(Outcome::Ok);
    }
    if !verdict.pass {
        eprintln!("privacy check FAILED");
        return Ok(Outcome::Privacy);
    }
    Ok(Outcome::Ok)
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .context("configuring thread pool")?;
    }
    match &cli.command {
        Command::Run => cmd_run(cli),
        Command::Sweep { summary } => cmd_sweep(cli, summary.as_deref()),
        Command::Tradeoff => cmd_tradeoff(cli),
        Command::Privacy { zero_noise } => cmd_privacy(cli, *zero_noise),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are configuration errors, not protocol failures
            return if e.use_stderr() {
                ExitCode::from(CONFIG_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Protocol) => ExitCode::from(PROTOCOL_FAILURE),
        Ok(Outcome::Privacy) => ExitCode::from(PRIVACY_FAILURE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(CONFIG_ERROR)
        }
    }
}
