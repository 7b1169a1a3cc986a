//! `ftb`: verification suites, grid training and sweeps, and LLM-batch
//! loss evaluation.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ftb_core::experiment::{fmt_f64, load_config, run_sweep, run_training, SweepConfig};
use ftb_core::gfn::TrainConfig;
use ftb_core::llm::{llm_devgrad, CompletionBatch};
use ftb_core::verify::{run_suite, Suite};
use ftb_core::{Divergence, Error};

const SEED_ENV: &str = "FTB_SEED";

#[derive(Parser)]
#[command(
    name = "ftb",
    version,
    about = "f-divergence trajectory-balance losses and grid experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a verification suite and print a JSON report.
    Verify {
        /// losses, devgrad, gradients, inverse, variance or all
        #[arg(long, default_value = "all")]
        suite: String,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one hypergrid run.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides both the config seed and FTB_SEED.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every (divergence, seed) pair of a sweep config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate the DevGrad loss and per-row weights on a completion batch.
    LlmEval {
        /// CSV with columns log_pi, log_ref, reward.
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        divergence: String,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        tempered: bool,
        /// Normalize by the mean reward instead of the exact minimizer.
        #[arg(long)]
        kimi: bool,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit 2 for bad configuration or input, 1 for failures while running.
enum Failure {
    Config(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::InvalidBatch(_)
            | Error::Domain { .. }
            | Error::NonFinite(_) => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn config_error(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    load_config(path).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn seed_override(flag: Option<u64>) -> Result<Option<u64>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| config_error(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn verify(suite: &str, out: Option<&Path>) -> Result<bool, Failure> {
    let suite: Suite = suite.parse()?;
    let report = run_suite(suite);
    for c in &report.checks {
        eprintln!("{c}");
    }
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| Failure::Run(e.to_string()))? + "\n";
    if let Some(path) = out {
        std::fs::write(path, &json)
            .map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
    }
    print!("{json}");
    Ok(report.all_pass())
}

fn train(config: &Path, seed: Option<u64>, out: &Path) -> Result<bool, Failure> {
    let mut config: TrainConfig = load(config)?;
    if let Some(s) = seed_override(seed)? {
        config.seed = s;
    }
    config.validate()?;
    let o = run_training(&config, out)?;
    let m = o.final_metrics;
    println!(
        "step {} trajectories {} loss {} log_z {} l1 {} jsd {} modes {}",
        m.step,
        m.trajectories_seen,
        fmt_f64(m.loss),
        fmt_f64(m.log_z),
        fmt_f64(m.l1),
        fmt_f64(m.jsd),
        m.modes_found
    );
    Ok(true)
}

fn sweep(config: &Path, out: &Path, jobs: usize) -> Result<bool, Failure> {
    let config: SweepConfig = load(config)?;
    config.validate()?;
    if jobs == 0 {
        return Err(config_error("--jobs must be at least 1"));
    }
    let rows = run_sweep(&config, out, jobs)?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    println!(
        "{} runs, {} failed; summary in {}",
        rows.len(),
        failed,
        out.join("summary.csv").display()
    );
    Ok(true)
}

fn read_batch(path: &Path) -> Result<CompletionBatch, Failure> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(config_error)?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| config_error(format!("{}: missing column {name}", path.display())))
    };
    let (ip, ir, iw) = (column("log_pi")?, column("log_ref")?, column("reward")?);
    let (mut log_pi, mut log_ref, mut reward) = (Vec::new(), Vec::new(), Vec::new());
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(config_error)?;
        let field = |i: usize| -> Result<f64, Failure> {
            let raw = record.get(i).unwrap_or("");
            raw.trim()
                .parse()
                .map_err(|_| config_error(format!("row {}: {raw:?} is not a number", line + 1)))
        };
        log_pi.push(field(ip)?);
        log_ref.push(field(ir)?);
        reward.push(field(iw)?);
    }
    Ok(CompletionBatch::new(log_pi, log_ref, reward)?)
}

fn llm_eval(
    csv_path: &Path,
    divergence: &str,
    beta: f64,
    tempered: bool,
    kimi: bool,
    out: Option<&Path>,
) -> Result<bool, Failure> {
    let div: Divergence = divergence.parse()?;
    let batch = read_batch(csv_path)?;
    let r = llm_devgrad(&batch, div, beta, tempered, kimi)?;
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(
            std::fs::File::create(p).map_err(|e| Failure::Run(format!("{}: {e}", p.display())))?,
        ),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| Failure::Run(e.to_string());
    w.write_record(["row", "loss", "log_z_hat", "weight"])
        .map_err(io)?;
    for (i, wi) in r.weights.iter().enumerate() {
        w.write_record([
            i.to_string(),
            fmt_f64(r.loss),
            fmt_f64(r.log_z_hat),
            fmt_f64(*wi),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Failure::Run(e.to_string()))?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Verify { suite, out } => verify(suite, out.as_deref()),
        Command::Train { config, seed, out } => train(config, *seed, out),
        Command::Sweep { config, out, jobs } => sweep(config, out, *jobs),
        Command::LlmEval {
            csv,
            divergence,
            beta,
            tempered,
            kimi,
            out,
        } => llm_eval(csv, divergence, *beta, *tempered, *kimi, out.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("ftb: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("ftb: {msg}");
            ExitCode::from(1)
        }
    }
}
