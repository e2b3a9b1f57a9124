//! Metrics rows and their CSV form.
//!
//! Columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `config_id` | `experiment.id` of the run |
//! | `seed` | run seed |
//! | `iteration` | VI iteration or environment step |
//! | `strategy` | weighting strategy name |
//! | `td_error_l1` | VI: `Σ|B*Q − Q|`; Q-learning: mean sampled `|y − Q|` since the previous row |
//! | `q_gap_linf` | `max |Q − Q*|` |
//! | `greedy_return` | expected return of the greedy policy |
//! | `regret` | optimal return minus `greedy_return` |
//! | `mean_weight_entropy` | mean entropy (nats) of the batch weights since the previous row |
//! | `wall_ms` | elapsed milliseconds, 0 unless timing is recorded |
//! | `q_gap_mean` | `mean |Q − Q*|` |
//!
//! Floats use Rust's shortest round-trip formatting, so equal values always
//! print identically.

use std::io::Write;

use remer_core::learner::TraceRow;

use crate::error::Result;

pub const HEADER: [&str; 11] = [
    "config_id",
    "seed",
    "iteration",
    "strategy",
    "td_error_l1",
    "q_gap_linf",
    "greedy_return",
    "regret",
    "mean_weight_entropy",
    "wall_ms",
    "q_gap_mean",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub config_id: String,
    pub seed: u64,
    pub iteration: usize,
    pub strategy: String,
    pub td_error_l1: f64,
    pub q_gap_linf: f64,
    pub greedy_return: f64,
    pub regret: f64,
    pub mean_weight_entropy: f64,
    pub wall_ms: u64,
    pub q_gap_mean: f64,
}

impl MetricsRow {
    pub fn from_trace(config_id: &str, seed: u64, strategy: &str, row: &TraceRow, wall_ms: u64) -> Self {
        Self {
            config_id: config_id.to_string(),
            seed,
            iteration: row.iteration,
            strategy: strategy.to_string(),
            td_error_l1: row.td_error_l1,
            q_gap_linf: row.q_gap_linf,
            greedy_return: row.greedy_return,
            regret: row.regret,
            mean_weight_entropy: row.weight_entropy,
            wall_ms,
            q_gap_mean: row.q_gap_mean,
        }
    }

    fn record(&self) -> [String; 11] {
        [
            self.config_id.clone(),
            self.seed.to_string(),
            self.iteration.to_string(),
            self.strategy.clone(),
            self.td_error_l1.to_string(),
            self.q_gap_linf.to_string(),
            self.greedy_return.to_string(),
            self.regret.to_string(),
            self.mean_weight_entropy.to_string(),
            self.wall_ms.to_string(),
            self.q_gap_mean.to_string(),
        ]
    }
}

/// Sorts by `(config_id, seed, iteration)`; ties keep their order.
pub fn sort_rows(rows: &mut [MetricsRow]) {
    rows.sort_by(|a, b| (&a.config_id, a.seed, a.iteration).cmp(&(&b.config_id, b.seed, b.iteration)));
}

pub fn write_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn to_csv_string(rows: &[MetricsRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}
