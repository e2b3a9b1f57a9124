//! Canned experiments with pass/fail checks.
//!
//! Each recipe runs bundled configs (see `configs/`), optionally writes its
//! CSVs into an output directory and returns a [`Report`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use remer_core::env::{run_episode, EpisodeDriver, Transition};
use remer_core::learner::{Checkpoint, LearnerObserver};
use remer_core::mdp::{bellman_optimal_backup, recurring_probability, softmax_policy};
use remer_core::replay::ReplayBuffer;
use remer_core::stats::{mean, spearman, variance};
use remer_core::{PolicyTable, QTable};

use crate::config::{ExperimentConfig, Mode, Problem};
use crate::error::{LabError, Result};
use crate::metrics::{self, MetricsRow};
use crate::runner::{par_seeds, run_experiment, run_learner};

pub const CHAIN_VI_CONF: &str = include_str!("../configs/chain_vi.conf");
pub const FOUR_ROOMS_CONF: &str = include_str!("../configs/gridworld_four_rooms.conf");
pub const MAZE_CONF: &str = include_str!("../configs/gridworld_maze.conf");
pub const NOISE_CONF: &str = include_str!("../configs/noise.conf");
pub const H_ANALYSIS_CONF: &str = include_str!("../configs/h_analysis.conf");

/// Iterations over which the chain curves are compared.
pub const CHAIN_VI_WINDOW: RangeInclusive<usize> = 6..=16;

/// Truncation of the return-time sums.
const RECURRENCE_HORIZON: usize = 1000;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub recipe: String,
    pub checks: Vec<Check>,
    /// Informational lines with no verdict.
    pub notes: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl Report {
    fn new(recipe: &str) -> Self {
        Self {
            recipe: recipe.into(),
            ..Self::default()
        }
    }

    fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            pass,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let verdict = if c.pass { "PASS" } else { "FAIL" };
            writeln!(out, "{verdict} {}: {}", c.name, c.detail).unwrap();
        }
        for n in &self.notes {
            writeln!(out, "note: {n}").unwrap();
        }
        out
    }
}

/// Parses a bundled config with `overrides` on top.
pub fn bundled(text: &str, name: &str, overrides: &[(&str, &str)]) -> Result<ExperimentConfig> {
    ExperimentConfig::from_text(text, name, Path::new("."), overrides)
}

fn out_file(out: Option<&Path>, name: &str) -> Result<Option<PathBuf>> {
    let Some(dir) = out else { return Ok(None) };
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    Ok(Some(dir.join(name)))
}

fn save_metrics(report: &mut Report, out: Option<&Path>, name: &str, rows: &[MetricsRow]) -> Result<()> {
    if let Some(path) = out_file(out, name)? {
        let f = std::fs::File::create(&path).map_err(|e| LabError::io(&path, e))?;
        metrics::write_csv(std::io::BufWriter::new(f), rows)?;
        report.files.push(path);
    }
    Ok(())
}

fn save_table(
    report: &mut Report,
    out: Option<&Path>,
    name: &str,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    if let Some(path) = out_file(out, name)? {
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| LabError::io(&path, e))?;
        report.files.push(path);
    }
    Ok(())
}

/// Seed-averaged `field` per iteration.
pub fn mean_curve(rows: &[MetricsRow], field: impl Fn(&MetricsRow) -> f64) -> Vec<(usize, f64)> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.iteration).or_insert((0.0, 0));
        e.0 += field(r);
        e.1 += 1;
    }
    acc.into_iter().map(|(i, (sum, n))| (i, sum / n as f64)).collect()
}

fn final_value(curve: &[(usize, f64)]) -> f64 {
    curve.last().map_or(f64::NAN, |&(_, v)| v)
}

/// Trapezoid area under a curve, per unit of iteration.
fn auc(curve: &[(usize, f64)]) -> f64 {
    let span = match (curve.first(), curve.last()) {
        (Some(a), Some(b)) if b.0 > a.0 => (b.0 - a.0) as f64,
        _ => return f64::NAN,
    };
    let area: f64 = curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) as f64 * (w[0].1 + w[1].1) / 2.0)
        .sum();
    area / span
}

/// First iteration whose greedy policy is optimal.
pub fn first_optimal(rows: &[MetricsRow]) -> Option<usize> {
    rows.iter().find(|r| r.regret.abs() <= 1e-9).map(|r| r.iteration)
}

fn strategy_config(
    text: &str,
    name: &str,
    id_prefix: &str,
    strategy: &str,
    extra: &[(&str, &str)],
) -> Result<ExperimentConfig> {
    let id = format!("{id_prefix}-{strategy}");
    let mut overrides = vec![("experiment.id", id.as_str()), ("strategy.kind", strategy)];
    overrides.extend_from_slice(extra);
    bundled(text, name, &overrides)
}

/// Weighted VI on the chain: uniform vs PER vs DisCor.
pub fn chain_vi(out: Option<&Path>) -> Result<Report> {
    let mut report = Report::new("chain-vi");
    let mut runs: BTreeMap<&str, Vec<MetricsRow>> = BTreeMap::new();
    let mut all = Vec::new();
    for strategy in ["uniform", "per", "discor"] {
        let cfg = strategy_config(CHAIN_VI_CONF, "chain_vi.conf", "chain-vi", strategy, &[])?;
        let rows = run_experiment(&cfg, &[0], 1)?;
        all.extend(rows.iter().cloned());
        runs.insert(strategy, rows);
    }
    save_metrics(&mut report, out, "chain_vi.csv", &all)?;

    let at =
        |s: &str, k: usize, f: fn(&MetricsRow) -> f64| runs[s].iter().find(|r| r.iteration == k).map_or(f64::NAN, f);
    let below = |s: &str, f: fn(&MetricsRow) -> f64| -> (bool, f64) {
        // smallest margin uniform − s over the window
        let margin = CHAIN_VI_WINDOW
            .clone()
            .map(|k| at("uniform", k, f) - at(s, k, f))
            .fold(f64::INFINITY, f64::min);
        (margin > 0.0, margin)
    };

    let (ok, margin) = below("per", |r| r.td_error_l1);
    report.check(
        "per td error below uniform",
        ok,
        format!("iterations {CHAIN_VI_WINDOW:?}, smallest margin {margin:.3e}"),
    );
    let (ok, margin) = below("discor", |r| r.q_gap_mean);
    report.check(
        "discor mean |Q - Q*| below uniform",
        ok,
        format!("iterations {CHAIN_VI_WINDOW:?}, smallest margin {margin:.3e}"),
    );

    let first: BTreeMap<&str, Option<usize>> = runs.iter().map(|(&s, rows)| (s, first_optimal(rows))).collect();
    let fmt = |x: Option<usize>| x.map_or("never".to_string(), |k| k.to_string());
    let later = |s: &str| match (first[s], first["uniform"]) {
        (Some(a), Some(b)) => a > b,
        (None, Some(_)) => true,
        _ => false,
    };
    report.check(
        "per and discor reach the optimal policy after uniform",
        later("per") && later("discor"),
        format!(
            "first optimal iteration: uniform {}, per {}, discor {}",
            fmt(first["uniform"]),
            fmt(first["per"]),
            fmt(first["discor"])
        ),
    );
    Ok(report)
}

/// Oracle, ReMERT, DisCor and uniform replay on both gridworlds.
pub fn gridworld_tce(out: Option<&Path>, jobs: usize) -> Result<Report> {
    let mut report = Report::new("gridworld-tce");
    for (text, name, env) in [
        (FOUR_ROOMS_CONF, "gridworld_four_rooms.conf", "four_rooms"),
        (MAZE_CONF, "gridworld_maze.conf", "maze"),
    ] {
        let mut finals = BTreeMap::new();
        let mut all = Vec::new();
        for strategy in ["oracle", "remert", "discor", "uniform"] {
            let cfg = strategy_config(text, name, &format!("gridworld-{env}"), strategy, &[])?;
            let rows = run_experiment(&cfg, &cfg.seeds, jobs)?;
            let curve = mean_curve(&rows, |r| r.q_gap_mean);
            report.notes.push(format!(
                "{env} {strategy}: final mean |Q - Q*| {:.4}, area {:.4}, final regret {:.4}",
                final_value(&curve),
                auc(&curve),
                final_value(&mean_curve(&rows, |r| r.regret)),
            ));
            finals.insert(strategy, final_value(&curve));
            all.extend(rows);
        }
        save_metrics(&mut report, out, &format!("gridworld_{env}.csv"), &all)?;
        for rival in ["discor", "uniform"] {
            let (o, r, x) = (finals["oracle"], finals["remert"], finals[rival]);
            report.check(
                format!("{env}: oracle <= remert <= {rival}"),
                o <= r && r <= x,
                format!("final mean |Q - Q*|: oracle {o:.4}, remert {r:.4}, {rival} {x:.4}"),
            );
        }
    }
    Ok(report)
}

/// Field-by-field comparison ignoring rewards.
fn same_except_reward(a: &Transition, b: &Transition) -> bool {
    (
        a.s,
        a.a,
        a.s_next,
        a.done,
        a.censored,
        a.trajectory_id,
        a.step_index,
        a.distance_to_end,
    ) == (
        b.s,
        b.a,
        b.s_next,
        b.done,
        b.censored,
        b.trajectory_id,
        b.step_index,
        b.distance_to_end,
    )
}

/// Runs `episodes` uniform-random episodes at noise level `sigma`.
fn random_policy_buffer(
    problem: &Problem,
    seed: u64,
    max_steps: u32,
    sigma: f64,
    episodes: usize,
) -> Result<ReplayBuffer> {
    let mdp = &problem.mdp;
    let pi = softmax_policy(&QTable::zeros(mdp.layout()));
    let mut driver = EpisodeDriver::new(mdp, seed, max_steps, sigma)?;
    let episodes: Vec<Vec<Transition>> = (0..episodes)
        .map(|_| run_episode(&mut driver, &pi))
        .collect::<remer_core::Result<_>>()?;
    let stored: usize = episodes.iter().map(Vec::len).sum();
    let mut buffer = ReplayBuffer::new(stored.max(1), mdp.layout(), usize::MAX);
    for episode in episodes {
        let (id, censored) = episode.last().map_or((0, false), |t| (t.trajectory_id, t.censored));
        for t in episode {
            buffer.push(t);
        }
        buffer.on_episode_end(id, censored);
    }
    Ok(buffer)
}

/// Compares two buffers; returns `(identical, rewards_differ)`.
fn compare_buffers(clean: &ReplayBuffer, noisy: &ReplayBuffer) -> (bool, bool) {
    let same_len = clean.len() == noisy.len();
    let same_records = clean
        .iter_chronological()
        .zip(noisy.iter_chronological())
        .all(|(a, b)| same_except_reward(a, b));
    let same_h = (0..clean.layout().len()).all(|p| clean.h_record_at(p) == noisy.h_record_at(p));
    let rewards_differ = clean
        .iter_chronological()
        .zip(noisy.iter_chronological())
        .any(|(a, b)| a.r != b.r);
    (same_len && same_records && same_h, rewards_differ)
}

/// Reward noise: distance records are unaffected, and ReMERT vs uniform regret.
pub fn noise(out: Option<&Path>, jobs: usize) -> Result<Report> {
    const EPISODES: usize = 20;
    let mut report = Report::new("noise");
    let base = bundled(NOISE_CONF, "noise.conf", &[])?;
    let sigma = base.learner.reward_noise;

    let seeds = base.seeds.clone();
    let outcomes = par_seeds(&seeds, jobs, |seed| {
        let max_steps = base.learner.max_episode_steps;
        let clean = random_policy_buffer(&base.problem, seed, max_steps, 0.0, EPISODES)?;
        let noisy = random_policy_buffer(&base.problem, seed, max_steps, sigma, EPISODES)?;
        Ok((compare_buffers(&clean, &noisy), clean.len()))
    })?;
    let identical = outcomes.iter().all(|((same, _), _)| *same);
    let noisy = outcomes.iter().all(|((_, differ), _)| *differ);
    let transitions: usize = outcomes.iter().map(|(_, n)| n).sum();
    report.check(
        "distance to end unchanged by reward noise",
        identical && noisy,
        format!(
            "{} seeds x {EPISODES} random-policy episodes, {transitions} transitions; sigma 0 vs {sigma}: records identical {identical}, rewards differ {noisy}",
            seeds.len()
        ),
    );

    let mut finals = BTreeMap::new();
    let mut all = Vec::new();
    for strategy in ["remert", "uniform"] {
        let cfg = strategy_config(NOISE_CONF, "noise.conf", "noise", strategy, &[])?;
        let rows = run_experiment(&cfg, &cfg.seeds, jobs)?;
        let regret = final_value(&mean_curve(&rows, |r| r.regret));
        let gap = final_value(&mean_curve(&rows, |r| r.q_gap_mean));
        let solved = rows
            .iter()
            .filter(|r| r.iteration == cfg.learner.steps && r.regret.abs() <= 1e-9)
            .count();
        report.notes.push(format!(
            "{strategy} ({} ratio): final regret {regret:.4}, final mean |Q - Q*| {gap:.4}, seeds with optimal greedy policy {solved}/{}",
            cfg.strategy.ratio.name(),
            cfg.seeds.len()
        ));
        finals.insert(strategy, regret);
        all.extend(rows);
    }
    save_metrics(&mut report, out, "noise.csv", &all)?;
    let (r, u) = (finals["remert"], finals["uniform"]);
    report.check(
        "remert regret <= uniform under reward noise",
        r <= u,
        format!("final seed-mean regret: remert {r:.4}, uniform {u:.4}"),
    );
    Ok(report)
}

/// Mean recorded distance to end per pair, skipping censored records.
fn mean_h(buffer: &ReplayBuffer, pair: usize) -> Option<f64> {
    let hs: Vec<f64> = buffer
        .h_record_at(pair)
        .iter()
        .filter(|r| !r.censored)
        .map(|r| r.h as f64)
        .collect();
    (!hs.is_empty()).then(|| mean(&hs))
}

struct HCorrelation<'a> {
    problem: &'a Problem,
    seed: u64,
    rows: Vec<(u64, usize, usize, f64)>,
    failure: Option<LabError>,
}

impl LearnerObserver for HCorrelation<'_> {
    fn on_checkpoint(&mut self, c: &Checkpoint<'_>) {
        let backup = match bellman_optimal_backup(c.q, &self.problem.mdp) {
            Ok(b) => b,
            Err(e) => {
                self.failure.get_or_insert(e.into());
                return;
            }
        };
        let (mut hs, mut errs) = (Vec::new(), Vec::new());
        for (s, a, pair) in self.problem.mdp.layout().pairs() {
            if let Some(h) = mean_h(c.buffer, pair) {
                hs.push(h);
                errs.push((backup.get(s, a) - self.problem.q_star.get(s, a)).abs());
            }
        }
        let rho = if hs.len() >= 3 { spearman(&hs, &errs) } else { f64::NAN };
        self.rows.push((self.seed, c.row.iteration, hs.len(), rho));
    }
}

/// Spearman correlation between recorded distance to end and `|B*Q − Q*|`.
pub fn h_correlation(out: Option<&Path>, jobs: usize) -> Result<Report> {
    let mut report = Report::new("h-correlation");
    let cfg = bundled(H_ANALYSIS_CONF, "h_analysis.conf", &[])?;
    let per_seed = par_seeds(&cfg.seeds, jobs, |seed| {
        let mut obs = HCorrelation {
            problem: &cfg.problem,
            seed,
            rows: Vec::new(),
            failure: None,
        };
        run_learner(&cfg, seed, &mut obs)?;
        match obs.failure {
            Some(e) => Err(e),
            None => Ok(obs.rows),
        }
    })?;
    let rows: Vec<_> = per_seed.into_iter().flatten().collect();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|(s, i, n, rho)| vec![s.to_string(), i.to_string(), n.to_string(), rho.to_string()])
        .collect();
    save_table(
        &mut report,
        out,
        "h_correlation.csv",
        &["seed", "iteration", "pairs", "spearman"],
        &table,
    )?;
    let finite: Vec<f64> = rows.iter().map(|r| r.3).filter(|x| x.is_finite()).collect();
    report.notes.push(format!(
        "mean spearman over {} checkpoints: {:.4}",
        finite.len(),
        mean(&finite)
    ));
    Ok(report)
}

struct HVariance<'a> {
    problem: &'a Problem,
    seed: u64,
    rows: Vec<(u64, usize, usize, usize, f64)>,
}

impl LearnerObserver for HVariance<'_> {
    fn on_checkpoint(&mut self, c: &Checkpoint<'_>) {
        let layout = self.problem.mdp.layout();
        for s in 0..layout.n_states() {
            let hs: Vec<f64> = layout
                .range(s)
                .flat_map(|pair| c.buffer.h_record_at(pair).iter())
                .filter(|r| !r.censored)
                .map(|r| r.h as f64)
                .collect();
            if hs.len() >= 2 {
                self.rows.push((self.seed, c.row.iteration, s, hs.len(), variance(&hs)));
            }
        }
    }
}

/// Per-state variance of recorded distances to end over training.
pub fn h_variance(out: Option<&Path>, jobs: usize) -> Result<Report> {
    let mut report = Report::new("h-variance");
    let cfg = bundled(H_ANALYSIS_CONF, "h_analysis.conf", &[])?;
    let per_seed = par_seeds(&cfg.seeds, jobs, |seed| {
        let mut obs = HVariance {
            problem: &cfg.problem,
            seed,
            rows: Vec::new(),
        };
        run_learner(&cfg, seed, &mut obs)?;
        Ok(obs.rows)
    })?;
    let rows: Vec<_> = per_seed.into_iter().flatten().collect();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|(seed, i, s, n, v)| {
            vec![
                seed.to_string(),
                i.to_string(),
                s.to_string(),
                n.to_string(),
                v.to_string(),
            ]
        })
        .collect();
    save_table(
        &mut report,
        out,
        "h_variance.csv",
        &["seed", "iteration", "state", "records", "variance"],
        &table,
    )?;
    let mut by_iteration: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        by_iteration.entry(r.1).or_default().push(r.4);
    }
    for (i, vs) in [by_iteration.iter().next(), by_iteration.iter().next_back()]
        .into_iter()
        .flatten()
    {
        report.notes.push(format!(
            "iteration {i}: mean per-state variance {:.2} over {} (seed, state) cells",
            mean(vs),
            vs.len()
        ));
    }
    Ok(report)
}

/// Recurring probability of the softmax policy at the start and at each checkpoint.
pub fn recurrence(cfg: &ExperimentConfig, seeds: &[u64], out: Option<&Path>, jobs: usize) -> Result<Report> {
    let mut report = Report::new("recurrence");
    let mdp = &cfg.problem.mdp;
    let eps = |q: &QTable| -> Result<f64> {
        let pi: PolicyTable = softmax_policy(q);
        Ok(recurring_probability(mdp, &pi, RECURRENCE_HORIZON)?)
    };
    let initial = match cfg.mode {
        Mode::Vi => QTable::zeros(mdp.layout()),
        Mode::QLearning => QTable::filled(mdp.layout(), cfg.learner.q_init),
    };
    let start = eps(&initial)?;
    let per_seed = par_seeds(seeds, jobs, |seed| {
        let mut rows = vec![(seed, 0usize, start)];
        match cfg.mode {
            Mode::Vi => {
                let trace = remer_core::learner::weighted_value_iteration(
                    mdp,
                    &cfg.strategy,
                    &cfg.vi,
                    Some(&cfg.problem.q_star),
                )?;
                for (k, q) in trace.tables.iter().enumerate().skip(1) {
                    rows.push((seed, k, eps(q)?));
                }
            }
            Mode::QLearning => {
                let mut seen = Vec::new();
                let mut failure = None;
                let mut obs = |c: &Checkpoint<'_>| match eps(c.q) {
                    Ok(e) => seen.push((seed, c.row.iteration, e)),
                    Err(e) => {
                        failure.get_or_insert(e);
                    }
                };
                run_learner(cfg, seed, &mut CheckpointFn(&mut obs))?;
                if let Some(e) = failure {
                    return Err(e);
                }
                rows.extend(seen);
            }
        }
        Ok(rows)
    })?;
    let rows: Vec<_> = per_seed.into_iter().flatten().collect();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|(s, i, e)| vec![s.to_string(), i.to_string(), e.to_string()])
        .collect();
    save_table(
        &mut report,
        out,
        "recurrence.csv",
        &["seed", "iteration", "epsilon"],
        &table,
    )?;

    let last: Vec<f64> = seeds
        .iter()
        .filter_map(|&s| rows.iter().rev().find(|r| r.0 == s).map(|r| r.2))
        .collect();
    let end = mean(&last);
    let trend = if end < start - 1e-12 {
        "decreased"
    } else if end > start + 1e-12 {
        "increased"
    } else {
        "unchanged"
    };
    report.notes.push(format!(
        "{}: epsilon {start:.9} at the start, {end:.9} after training (seed mean); {trend}",
        cfg.id
    ));
    Ok(report)
}

/// Adapts a checkpoint closure to [`LearnerObserver`].
struct CheckpointFn<'f, F>(&'f mut F);

impl<F: FnMut(&Checkpoint<'_>)> LearnerObserver for CheckpointFn<'_, F> {
    fn on_checkpoint(&mut self, c: &Checkpoint<'_>) {
        (self.0)(c)
    }
}
