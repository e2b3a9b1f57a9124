//! Experiment configs: flat `key = value` text, one dotted key per line.
//!
//! ```text
//! # FourRooms, ReMERT, ten seeds
//! experiment.id = four-rooms-remert
//! env.name = four_rooms
//! learner.mode = q_learning
//! strategy.kind = remert
//! run.seeds = 0..10
//! ```
//!
//! `#` starts a comment. Every key has a default (see [`KEYS`]); unknown and
//! repeated keys are errors carrying their line number. Values written as
//! `auto` are resolved against the environment, and [`ExperimentConfig::echo`]
//! prints every key with its resolved value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use remer_core::env::{build_gridworld, chain_mdp, GridLayout, GridOptions, FOUR_ROOMS, MAZE};
use remer_core::estimators::{ClipSchedule, TceConfig};
use remer_core::learner::{LearnerConfig, ViConfig};
use remer_core::mdp::{solve_q_star, suboptimality_gap};
use remer_core::replay::SamplingMode;
use remer_core::weighting::{RatioSource, StrategyKind, WeightingStrategy};
use remer_core::{QTable, TabularMdp};

use crate::error::{LabError, Result};

/// Every accepted key with its default, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("experiment.id", "experiment"),
    ("env.name", "chain"),
    ("env.layout", ""),
    ("env.gamma", "auto"),
    ("env.goal_reward", "1"),
    ("env.step_reward", "0"),
    ("learner.mode", "q_learning"),
    ("learner.lr", "0.1"),
    ("learner.iterations", "100"),
    ("learner.max_horizon", "256"),
    ("learner.steps", "20000"),
    ("learner.batch", "32"),
    ("learner.target_update", "100"),
    ("learner.epsilon_start", "1"),
    ("learner.epsilon_end", "0.05"),
    ("learner.epsilon_anneal", "0.5"),
    ("learner.buffer_capacity", "10000"),
    ("learner.h_window", "16"),
    ("learner.fast_fraction", "0.1"),
    ("learner.max_episode_steps", "200"),
    ("learner.reward_noise", "0"),
    ("learner.sampling", "uniform"),
    ("learner.delta_lr", "0.5"),
    ("learner.lfiw_lr", "0.5"),
    ("learner.lfiw_batch", "64"),
    ("learner.occupancy_discount", "0.99"),
    ("learner.tracker_rate", "0.01"),
    ("learner.q_init", "0"),
    ("strategy.kind", "uniform"),
    ("strategy.temperature", "7.5"),
    ("strategy.per_exponent", "1"),
    ("strategy.ratio", "auto"),
    ("strategy.policy_factor", "true"),
    ("tce.gamma", "auto"),
    ("tce.c", "auto"),
    ("tce.clip_lower_start", "0.4"),
    ("tce.clip_lower_end", "0.9"),
    ("tce.clip_upper_start", "1.6"),
    ("tce.clip_upper_end", "1.1"),
    ("tce.include_censored", "false"),
    ("metrics.every", "500"),
    ("run.seeds", "0"),
    ("run.record_timing", "false"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvName {
    Chain,
    FourRooms,
    Maze,
    /// Layout read from `env.layout`.
    Grid,
}

impl EnvName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Chain => "chain",
            Self::FourRooms => "four_rooms",
            Self::Maze => "maze",
            Self::Grid => "grid",
        }
    }
}

impl FromStr for EnvName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "chain" => Ok(Self::Chain),
            "four_rooms" | "fourrooms" => Ok(Self::FourRooms),
            "maze" => Ok(Self::Maze),
            "grid" => Ok(Self::Grid),
            _ => Err(format!(
                "unknown environment {s:?}; valid: chain, four_rooms, maze, grid"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Synchronous weighted value iteration over the full table.
    Vi,
    /// Episodic Q-learning from replay.
    QLearning,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Vi => "vi",
            Self::QLearning => "q_learning",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "vi" => Ok(Self::Vi),
            "q_learning" | "ql" => Ok(Self::QLearning),
            _ => Err(format!("unknown mode {s:?}; valid: vi, q_learning")),
        }
    }
}

/// The MDP of a config plus its exact solution.
#[derive(Debug, Clone)]
pub struct Problem {
    pub mdp: TabularMdp,
    pub q_star: QTable,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub id: String,
    pub env: EnvName,
    pub layout_path: Option<PathBuf>,
    pub grid: GridOptions,
    pub mode: Mode,
    pub strategy: WeightingStrategy,
    pub vi: ViConfig,
    /// Seed and strategy are per run; the copy here holds everything else.
    pub learner: LearnerConfig,
    pub seeds: Vec<u64>,
    pub record_timing: bool,
    pub problem: Problem,
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    /// 1-based line, `None` for defaults and overrides.
    line: Option<usize>,
}

/// Reads `key = value` lines. Unknown or repeated keys are errors.
fn parse_entries(text: &str, source_name: &str) -> Result<BTreeMap<String, Entry>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| LabError::ConfigLine {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got {content:?}")))?;
        let key = key.trim();
        let value = value.trim();
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(err(format!("unknown key {key:?}")));
        }
        if let Some(prev) = out.get(key) {
            let prev: &Entry = prev;
            return Err(err(format!(
                "duplicate key {key:?} (first set on line {})",
                prev.line.unwrap_or(0)
            )));
        }
        out.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line: Some(line),
            },
        );
    }
    Ok(out)
}

/// Typed access to entries, falling back to the defaults in [`KEYS`].
struct Values<'a> {
    entries: &'a BTreeMap<String, Entry>,
    source_name: &'a str,
}

impl Values<'_> {
    fn raw(&self, key: &str) -> (&str, Option<usize>) {
        match self.entries.get(key) {
            Some(e) => (e.value.as_str(), e.line),
            None => {
                let default = KEYS.iter().find(|(k, _)| *k == key).expect("registered key").1;
                (default, None)
            }
        }
    }

    fn error(&self, key: &str, message: String) -> LabError {
        match self.raw(key).1 {
            Some(line) => LabError::ConfigLine {
                source_name: self.source_name.to_string(),
                line,
                message: format!("{key}: {message}"),
            },
            None => LabError::Config(format!("{key}: {message}")),
        }
    }

    fn get<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        let (v, _) = self.raw(key);
        v.parse()
            .map_err(|e| self.error(key, format!("cannot parse {v:?}: {e}")))
    }

    /// `None` for `auto`.
    fn get_auto<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if self.raw(key).0 == "auto" {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    fn check(&self, key: &str, ok: bool, message: &str) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(self.error(key, message.to_string()))
        }
    }
}

/// Seed lists: `3`, `0..10` (half-open), `0..=9`, or `1,4,7`.
pub fn parse_seeds(text: &str) -> std::result::Result<Vec<u64>, String> {
    let text = text.trim();
    let bad = |e: std::num::ParseIntError| format!("bad seed in {text:?}: {e}");
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..=") {
        (a.trim().parse().map_err(bad)?..=b.trim().parse().map_err(bad)?).collect()
    } else if let Some((a, b)) = text.split_once("..") {
        (a.trim().parse().map_err(bad)?..b.trim().parse().map_err(bad)?).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse().map_err(bad))
            .collect::<std::result::Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(format!("seed list {text:?} is empty"));
    }
    Ok(seeds)
}

fn format_seeds(seeds: &[u64]) -> String {
    let contiguous = seeds.windows(2).all(|w| w[1] == w[0] + 1);
    if contiguous && seeds.len() > 1 {
        format!("{}..{}", seeds[0], seeds[seeds.len() - 1] + 1)
    } else {
        seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
    }
}

fn build_problem(env: EnvName, layout_path: Option<&Path>, grid: GridOptions) -> Result<TabularMdp> {
    let text;
    let layout_text = match env {
        EnvName::Chain => return Ok(chain_mdp().with_gamma(grid.gamma)?),
        EnvName::FourRooms => FOUR_ROOMS,
        EnvName::Maze => MAZE,
        EnvName::Grid => {
            let path = layout_path.ok_or_else(|| LabError::Config("env.name = grid needs env.layout".into()))?;
            text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
            &text
        }
    };
    Ok(build_gridworld(&GridLayout::parse(layout_text)?, grid)?.mdp)
}

impl ExperimentConfig {
    /// Reads and resolves a config file; `env.layout` is relative to its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_text(&text, &path.display().to_string(), base, &[])
    }

    /// Parses `text`, then applies `overrides` on top (without line numbers).
    pub fn from_text(text: &str, source_name: &str, base_dir: &Path, overrides: &[(&str, &str)]) -> Result<Self> {
        let mut entries = parse_entries(text, source_name)?;
        for &(key, value) in overrides {
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(LabError::Config(format!("unknown override key {key:?}")));
            }
            entries.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    line: None,
                },
            );
        }
        let v = Values {
            entries: &entries,
            source_name,
        };

        let id: String = v.get("experiment.id")?;
        v.check(
            "experiment.id",
            !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)),
            "must be nonempty and use only [A-Za-z0-9-_.]",
        )?;
        let env: EnvName = v.get("env.name")?;
        let layout_raw: String = v.get("env.layout")?;
        let layout_path = (!layout_raw.is_empty()).then(|| base_dir.join(&layout_raw));
        let default_gamma = if env == EnvName::Chain { 1.0 } else { 0.99 };
        let grid = GridOptions {
            gamma: v.get_auto("env.gamma")?.unwrap_or(default_gamma),
            goal_reward: v.get("env.goal_reward")?,
            step_reward: v.get("env.step_reward")?,
        };
        v.check("env.gamma", grid.gamma > 0.0 && grid.gamma <= 1.0, "must be in (0, 1]")?;
        let mdp = build_problem(env, layout_path.as_deref(), grid)?;
        let q_star = solve_q_star(&mdp, 1e-12)?;

        let mode: Mode = v.get("learner.mode")?;
        let kind: StrategyKind = v.get("strategy.kind")?;
        let mut strategy = WeightingStrategy::new(kind);
        strategy.temperature = v.get("strategy.temperature")?;
        strategy.per_exponent = v.get("strategy.per_exponent")?;
        if let Some(ratio) = v.get_auto::<RatioSource>("strategy.ratio")? {
            strategy.ratio = ratio;
        }
        strategy.policy_factor = v.get("strategy.policy_factor")?;
        strategy.tce = TceConfig {
            gamma: v.get_auto("tce.gamma")?.unwrap_or(grid.gamma),
            c: v.get_auto("tce.c")?.unwrap_or_else(|| suboptimality_gap(&q_star)),
            clip: ClipSchedule {
                lower_start: v.get("tce.clip_lower_start")?,
                lower_end: v.get("tce.clip_lower_end")?,
                upper_start: v.get("tce.clip_upper_start")?,
                upper_end: v.get("tce.clip_upper_end")?,
            },
            include_censored: v.get("tce.include_censored")?,
        };
        strategy.validate()?;

        let lr: f64 = v.get("learner.lr")?;
        let vi = ViConfig {
            lr,
            iterations: v.get("learner.iterations")?,
            q_init: v.get("learner.q_init")?,
            occupancy_discount: v.get("learner.occupancy_discount")?,
            tracker_rate: v.get("learner.tracker_rate")?,
            max_horizon: v.get("learner.max_horizon")?,
        };
        v.check("learner.iterations", vi.iterations > 0, "must be positive")?;
        let sampling = match v.get::<String>("learner.sampling")?.as_str() {
            "uniform" => SamplingMode::Uniform,
            "prioritized" => SamplingMode::Prioritized,
            other => {
                return Err(v.error(
                    "learner.sampling",
                    format!("unknown sampling {other:?}; valid: uniform, prioritized"),
                ))
            }
        };
        let learner = LearnerConfig {
            lr,
            steps: v.get("learner.steps")?,
            batch: v.get("learner.batch")?,
            strategy,
            target_update: v.get("learner.target_update")?,
            epsilon_start: v.get("learner.epsilon_start")?,
            epsilon_end: v.get("learner.epsilon_end")?,
            epsilon_anneal: v.get("learner.epsilon_anneal")?,
            seed: 0,
            buffer_capacity: v.get("learner.buffer_capacity")?,
            h_window: v.get("learner.h_window")?,
            fast_fraction: v.get("learner.fast_fraction")?,
            max_episode_steps: v.get("learner.max_episode_steps")?,
            reward_noise: v.get("learner.reward_noise")?,
            sampling,
            delta_lr: v.get("learner.delta_lr")?,
            lfiw_lr: v.get("learner.lfiw_lr")?,
            lfiw_batch: v.get("learner.lfiw_batch")?,
            occupancy_discount: vi.occupancy_discount,
            tracker_rate: vi.tracker_rate,
            metric_every: v.get("metrics.every")?,
            q_init: vi.q_init,
        };
        learner.validate()?;
        let seeds = parse_seeds(v.raw("run.seeds").0).map_err(|m| v.error("run.seeds", m))?;

        Ok(Self {
            id,
            env,
            layout_path,
            grid,
            mode,
            strategy,
            vi,
            learner,
            seeds,
            record_timing: v.get("run.record_timing")?,
            problem: Problem { mdp, q_star },
        })
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn resolved(&self) -> Vec<(&'static str, String)> {
        let l = &self.learner;
        let s = &self.strategy;
        let layout = self
            .layout_path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let values: Vec<String> = vec![
            self.id.clone(),
            self.env.as_str().into(),
            layout,
            self.grid.gamma.to_string(),
            self.grid.goal_reward.to_string(),
            self.grid.step_reward.to_string(),
            self.mode.as_str().into(),
            l.lr.to_string(),
            self.vi.iterations.to_string(),
            self.vi.max_horizon.to_string(),
            l.steps.to_string(),
            l.batch.to_string(),
            l.target_update.to_string(),
            l.epsilon_start.to_string(),
            l.epsilon_end.to_string(),
            l.epsilon_anneal.to_string(),
            l.buffer_capacity.to_string(),
            l.h_window.to_string(),
            l.fast_fraction.to_string(),
            l.max_episode_steps.to_string(),
            l.reward_noise.to_string(),
            match l.sampling {
                SamplingMode::Uniform => "uniform".into(),
                SamplingMode::Prioritized => "prioritized".into(),
            },
            l.delta_lr.to_string(),
            l.lfiw_lr.to_string(),
            l.lfiw_batch.to_string(),
            l.occupancy_discount.to_string(),
            l.tracker_rate.to_string(),
            l.q_init.to_string(),
            s.kind.name().into(),
            s.temperature.to_string(),
            s.per_exponent.to_string(),
            s.ratio.name().into(),
            s.policy_factor.to_string(),
            s.tce.gamma.to_string(),
            s.tce.c.to_string(),
            s.tce.clip.lower_start.to_string(),
            s.tce.clip.lower_end.to_string(),
            s.tce.clip.upper_start.to_string(),
            s.tce.clip.upper_end.to_string(),
            s.tce.include_censored.to_string(),
            l.metric_every.to_string(),
            format_seeds(&self.seeds),
            self.record_timing.to_string(),
        ];
        KEYS.iter().map(|(k, _)| *k).zip(values).collect()
    }

    /// The resolved config as parseable text.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.resolved() {
            writeln!(out, "{k} = {v}").expect("write to string");
        }
        out
    }

    /// Learner settings for one seed.
    pub fn learner_for(&self, seed: u64) -> LearnerConfig {
        LearnerConfig {
            seed,
            strategy: self.strategy,
            ..self.learner
        }
    }
}
