//! Run and sweep orchestration: config files, metrics CSV, manifests and
//! sweep summaries.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::divergence::Divergence;
use crate::error::{Error, Result};
use crate::gfn::{RunMetrics, TrainConfig, Trainer};

pub const METRICS_HEADER: [&str; 7] = [
    "step",
    "trajectories_seen",
    "loss",
    "log_z",
    "l1",
    "jsd",
    "modes_found",
];
pub const SUMMARY_HEADER: [&str; 6] = [
    "divergence",
    "seed",
    "trajectories_to_4_modes",
    "final_jsd",
    "final_modes",
    "status",
];

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Parses a config as JSON when the file ends in `.json` or the content
/// starts with `{`, otherwise as TOML.
pub fn parse_config<T: DeserializeOwned>(text: &str, path: Option<&Path>) -> Result<T> {
    let is_json = path
        .and_then(|p| p.extension())
        .is_some_and(|e| e == "json")
        || text.trim_start().starts_with('{');
    if is_json {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    } else {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    parse_config(&text, Some(path))
}

/// Git blob hash (`sha256("blob <len>\0" ++ bytes)`), hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: TrainConfig,
    /// Content hash of the canonical JSON encoding of `config`.
    pub config_hash: String,
    pub version: String,
}

impl Manifest {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let canonical = serde_json::to_vec(config)?;
        Ok(Self {
            config: config.clone(),
            config_hash: content_hash(&canonical),
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub final_metrics: RunMetrics,
    pub trajectories_to_all_modes: Option<u64>,
}

fn metrics_record(m: &RunMetrics) -> [String; 7] {
    [
        m.step.to_string(),
        m.trajectories_seen.to_string(),
        fmt_f64(m.loss),
        fmt_f64(m.log_z),
        fmt_f64(m.l1),
        fmt_f64(m.jsd),
        m.modes_found.to_string(),
    ]
}

/// Trains one run, writing `manifest.json` before training and one
/// `metrics.csv` row per evaluation.
pub fn run_training(config: &TrainConfig, out: &Path) -> Result<RunOutcome> {
    config.validate()?;
    fs::create_dir_all(out)?;
    let manifest = Manifest::new(config)?;
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    let mut writer = csv::Writer::from_path(out.join("metrics.csv"))?;
    writer.write_record(METRICS_HEADER)?;
    let mut trainer = Trainer::new(config.clone())?;
    let final_metrics = trainer.run(|m| {
        writer.write_record(metrics_record(m))?;
        Ok(())
    })?;
    writer.flush()?;
    Ok(RunOutcome {
        final_metrics,
        trajectories_to_all_modes: trainer.trajectories_to_all_modes(),
    })
}

/// A base training config crossed with divergences and seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub divergences: Vec<Divergence>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.divergences.is_empty() {
            return Err(Error::Config("sweep has no divergences".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("sweep has no seeds".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("sweep seeds must be distinct".into()));
        }
        Ok(())
    }

    /// The `(divergence, seed)` grid in row-major order.
    pub fn jobs(&self) -> Vec<(Divergence, u64)> {
        self.divergences
            .iter()
            .flat_map(|&d| self.seeds.iter().map(move |&s| (d, s)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub divergence: Divergence,
    pub seed: u64,
    pub trajectories_to_4_modes: Option<u64>,
    pub final_jsd: f64,
    pub final_modes: usize,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

pub fn run_dir_name(div: Divergence, seed: u64) -> String {
    format!("{}_seed{seed}", div.to_string().replace(':', "-"))
}

/// Runs every job on a pool of `jobs` threads, each in its own directory
/// under `out`, and writes `summary.csv`. Failed runs are recorded in the
/// summary rather than aborting the sweep.
pub fn run_sweep(sweep: &SweepConfig, out: &Path, jobs: usize) -> Result<Vec<SweepRow>> {
    sweep.validate()?;
    if jobs == 0 {
        return Err(Error::Config("jobs must be at least 1".into()));
    }
    fs::create_dir_all(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        sweep
            .jobs()
            .into_par_iter()
            .map(|(div, seed)| {
                let mut config = sweep.train.clone();
                config.divergence = div;
                config.seed = seed;
                let dir: PathBuf = out.join(run_dir_name(div, seed));
                match run_training(&config, &dir) {
                    Ok(o) => SweepRow {
                        divergence: div,
                        seed,
                        trajectories_to_4_modes: o.trajectories_to_all_modes,
                        final_jsd: o.final_metrics.jsd,
                        final_modes: o.final_metrics.modes_found,
                        status: "ok".into(),
                    },
                    Err(e) => SweepRow {
                        divergence: div,
                        seed,
                        trajectories_to_4_modes: None,
                        final_jsd: f64::NAN,
                        final_modes: 0,
                        status: format!("failed: {e}"),
                    },
                }
            })
            .collect()
    });
    let mut writer = csv::Writer::from_path(out.join("summary.csv"))?;
    writer.write_record(SUMMARY_HEADER)?;
    for r in &rows {
        writer.write_record([
            r.divergence.to_string(),
            r.seed.to_string(),
            r.trajectories_to_4_modes
                .map(|t| t.to_string())
                .unwrap_or_default(),
            fmt_f64(r.final_jsd),
            r.final_modes.to_string(),
            r.status.clone(),
        ])?;
    }
    writer.flush()?;
    Ok(rows)
}
