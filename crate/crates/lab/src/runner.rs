//! Runs configs over seeds and writes their outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use remer_core::learner::{
    weighted_q_learning_observed, weighted_value_iteration, BatchLog, Checkpoint, LearnerObserver, QlTrace,
};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Mode};
use crate::error::{LabError, Result};
use crate::metrics::{self, MetricsRow};

/// Stamps each trace row with the elapsed time when timing is on.
struct Clock {
    start: Option<Instant>,
    marks: Vec<u64>,
}

impl Clock {
    fn new(enabled: bool) -> Self {
        Self {
            start: enabled.then(Instant::now),
            marks: Vec::new(),
        }
    }

    fn now_ms(&self) -> u64 {
        self.start.map_or(0, |t| t.elapsed().as_millis() as u64)
    }
}

impl LearnerObserver for Clock {
    fn on_batch(&mut self, _batch: &BatchLog<'_>) {}

    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint<'_>) {
        let ms = self.now_ms();
        self.marks.push(ms);
    }
}

/// Q-learning for one seed, reporting to `observer`.
pub fn run_learner<O: LearnerObserver + ?Sized>(
    cfg: &ExperimentConfig,
    seed: u64,
    observer: &mut O,
) -> Result<QlTrace> {
    let p = &cfg.problem;
    Ok(weighted_q_learning_observed(
        &p.mdp,
        &cfg.learner_for(seed),
        Some(&p.q_star),
        observer,
    )?)
}

/// Metrics rows of one seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<MetricsRow>> {
    let name = cfg.strategy.kind.name();
    let p = &cfg.problem;
    let mut clock = Clock::new(cfg.record_timing);
    let rows = match cfg.mode {
        Mode::Vi => {
            // Deterministic: the seed only labels the rows.
            let trace = weighted_value_iteration(&p.mdp, &cfg.strategy, &cfg.vi, Some(&p.q_star))?;
            let total = clock.now_ms();
            trace
                .rows
                .iter()
                .map(|r| MetricsRow::from_trace(&cfg.id, seed, name, r, total))
                .collect()
        }
        Mode::QLearning => {
            let trace = run_learner(cfg, seed, &mut clock)?;
            trace
                .rows
                .iter()
                .zip(&clock.marks)
                .map(|(r, &ms)| MetricsRow::from_trace(&cfg.id, seed, name, r, ms))
                .collect()
        }
    };
    Ok(rows)
}

/// Maps `job` over `seeds` on a pool of `jobs` threads, keeping seed order.
pub fn par_seeds<T, F>(seeds: &[u64], jobs: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    if jobs <= 1 {
        return seeds.iter().map(|&s| job(s)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| LabError::Config(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| seeds.par_iter().map(|&s| job(s)).collect())
}

/// Rows for every seed, sorted by `(config_id, seed, iteration)`.
pub fn run_experiment(cfg: &ExperimentConfig, seeds: &[u64], jobs: usize) -> Result<Vec<MetricsRow>> {
    let per_seed = par_seeds(seeds, jobs, |s| run_seed(cfg, s))?;
    let mut rows: Vec<MetricsRow> = per_seed.into_iter().flatten().collect();
    metrics::sort_rows(&mut rows);
    Ok(rows)
}

/// Hex SHA-256 over the resolved config and the seed list.
pub fn manifest_hash(cfg: &ExperimentConfig, seeds: &[u64]) -> String {
    let mut h = Sha256::new();
    h.update(cfg.echo().as_bytes());
    h.update(b"seeds=");
    for s in seeds {
        h.update(s.to_string().as_bytes());
        h.update(b",");
    }
    hex::encode(h.finalize())
}

pub fn manifest(cfg: &ExperimentConfig, seeds: &[u64]) -> String {
    let seeds_text: Vec<String> = seeds.iter().map(u64::to_string).collect();
    format!(
        "config_id = {}\ncode_version = {} {}\nseeds = {}\nhash = sha256:{}\n\n[resolved]\n{}",
        cfg.id,
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        seeds_text.join(","),
        manifest_hash(cfg, seeds),
        cfg.echo()
    )
}

/// Paths written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct Written {
    pub metrics: PathBuf,
    pub manifest: PathBuf,
}

/// Writes `<id>.csv` and `<id>.manifest` into `out`.
pub fn write_outputs(cfg: &ExperimentConfig, seeds: &[u64], rows: &[MetricsRow], out: &Path) -> Result<Written> {
    std::fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    let metrics_path = out.join(format!("{}.csv", cfg.id));
    let manifest_path = out.join(format!("{}.manifest", cfg.id));
    let file = std::fs::File::create(&metrics_path).map_err(|e| LabError::io(&metrics_path, e))?;
    metrics::write_csv(std::io::BufWriter::new(file), rows)?;
    std::fs::write(&manifest_path, manifest(cfg, seeds)).map_err(|e| LabError::io(&manifest_path, e))?;
    Ok(Written {
        metrics: metrics_path,
        manifest: manifest_path,
    })
}
