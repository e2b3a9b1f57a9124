//! Training loops: synchronous weighted value iteration and episodic tabular
//! Q-learning from a replay buffer.

use alloc::{format, vec, vec::Vec};

use rand::Rng;

use crate::env::{EpisodeDriver, Transition};
use crate::estimators::{
    discor_penalty_exact, discor_penalty_sample, discor_target, exact_delta_step, expected_tce_from, tce_raw,
    DeltaTable, LossTracker, RatioTable, TceMoments,
};
use crate::mdp::{
    bellman_optimal_backup, discounted_occupancy, distance_to_end_pmf, greedy_policy, greedy_return, optimal_return,
    softmax_policy,
};
use crate::replay::{apply_weighted_updates, FastSlowBuffers, ReplayBuffer, SamplingMode, WeightedTarget};
use crate::rng::{self, Stream};
use crate::table::QTable;
use crate::weighting::{compute_weights, weight_entropy, RatioSource, SampleFeatures, StrategyKind, WeightingStrategy};
use crate::{Error, Result, TabularMdp};

/// One logged point of a training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    /// VI iteration or environment step (1-based).
    pub iteration: usize,
    /// VI: `Σ |B*Q − Q|` over the table. Q-learning: mean sampled `|y − Q|`
    /// since the previous row.
    pub td_error_l1: f64,
    /// `max |Q − Q*|`, NaN without `Q*`.
    pub q_gap_linf: f64,
    /// `mean |Q − Q*|`, NaN without `Q*`.
    pub q_gap_mean: f64,
    pub greedy_return: f64,
    /// NaN without `Q*`.
    pub regret: f64,
    /// Mean entropy of the weight vectors since the previous row.
    pub weight_entropy: f64,
}

fn gaps(q: &QTable, q_star: Option<&QTable>) -> Result<(f64, f64)> {
    match q_star {
        Some(qs) => {
            let d = q.abs_diff(qs)?;
            let n = d.values().len().max(1) as f64;
            Ok((d.max_abs(), d.sum() / n))
        }
        None => Ok((f64::NAN, f64::NAN)),
    }
}

/// Synchronous weighted value-iteration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViConfig {
    pub lr: f64,
    pub iterations: usize,
    /// Initial value of every table entry.
    pub q_init: f64,
    /// Discount for occupancy measures (ratio terms).
    pub occupancy_discount: f64,
    /// EMA rate of the mean |TD| tracker.
    pub tracker_rate: f64,
    /// Longest distance to end enumerated for expected TCE.
    pub max_horizon: usize,
}

impl Default for ViConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            iterations: 100,
            q_init: 0.0,
            occupancy_discount: 0.99,
            tracker_rate: 0.01,
            max_horizon: 256,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ViTrace {
    pub rows: Vec<TraceRow>,
    /// `Q_0, Q_1, …, Q_K`.
    pub tables: Vec<QTable>,
    /// Weights used at iterations `1..=K`.
    pub weights: Vec<Vec<f64>>,
    /// First iteration whose greedy policy is optimal, if any.
    pub first_optimal: Option<usize>,
}

/// Runs `Q ← Q + α·w⊙(B*Q − Q)` with strategy weights over the whole table,
/// normalized to mean 1 across all legal pairs.
///
/// The Δ table is stepped exactly with the greedy policy of the previous
/// iterate; the ratio source `Exact` uses the softmax occupancy over a
/// uniform table distribution, any other source contributes 1.
pub fn weighted_value_iteration(
    mdp: &TabularMdp,
    strategy: &WeightingStrategy,
    cfg: &ViConfig,
    q_star: Option<&QTable>,
) -> Result<ViTrace> {
    strategy.validate()?;
    if !(cfg.lr > 0.0 && cfg.lr <= 1.0) {
        return Err(Error::Config(format!("lr {} outside (0, 1]", cfg.lr)));
    }
    if strategy.kind.needs_q_star() && q_star.is_none() {
        return Err(Error::Config(format!("strategy {} requires Q*", strategy.kind)));
    }
    let layout = mdp.layout().clone();
    let n = layout.len();
    let mut q = QTable::filled(&layout, cfg.q_init);
    let mut delta = DeltaTable::zeros(&layout);
    let mut tracker = LossTracker::new(cfg.tracker_rate);
    let mut prev_error: Option<Vec<f64>> = None;
    let target_return = q_star.map(|qs| optimal_return(mdp, qs));

    let mut trace = ViTrace {
        rows: Vec::with_capacity(cfg.iterations),
        tables: vec![q.clone()],
        weights: Vec::with_capacity(cfg.iterations),
        first_optimal: None,
    };

    for k in 1..=cfg.iterations {
        let progress = k as f64 / cfg.iterations as f64;
        let backup = bellman_optimal_backup(&q, mdp)?;
        let td: Vec<f64> = backup.values().iter().zip(q.values()).map(|(b, v)| b - v).collect();
        tracker.observe(td.iter().map(|x| x.abs()).sum::<f64>() / n as f64);

        let greedy = greedy_policy(&q);
        let soft = softmax_policy(&q);
        let ratio = match strategy.ratio {
            RatioSource::Exact if strategy.kind.uses_ratio() => {
                let d = discounted_occupancy(mdp, &soft, cfg.occupancy_discount)?;
                d.values().iter().map(|&x| x * n as f64).collect()
            }
            _ => vec![1.0; n],
        };
        let l = tracker.value();
        let features: Vec<SampleFeatures> = layout
            .pairs()
            .map(|(s, a, idx)| -> Result<SampleFeatures> {
                let expected_tce = if strategy.kind == StrategyKind::ReMert {
                    exact_expected_tce(mdp, &greedy, strategy, s, a, l, progress, cfg.max_horizon)?
                } else {
                    0.0
                };
                Ok(SampleFeatures {
                    td_abs: td[idx].abs(),
                    penalty: if strategy.kind.uses_delta() {
                        discor_penalty_exact(&delta, mdp, &greedy, s, a)
                    } else {
                        0.0
                    },
                    ratio: ratio[idx],
                    expected_tce,
                    q_gap: q_star.map(|qs| (q.values()[idx] - qs.values()[idx]).abs()),
                    prev_bellman_error: Some(prev_error.as_ref().map_or(td[idx].abs(), |e| e[idx])),
                    policy_prob: soft.values()[idx],
                })
            })
            .collect::<Result<_>>()?;
        let w = compute_weights(strategy, &features, tracker.divisor())?;

        let next = damped_step(&q, &td, &w, cfg.lr);
        if strategy.kind.uses_delta() {
            delta = exact_delta_step(&delta, &next, &backup, mdp, &greedy)?;
        }
        prev_error = Some(
            next.values()
                .iter()
                .zip(backup.values())
                .map(|(a, b)| (a - b).abs())
                .collect(),
        );
        q = next;

        let post = bellman_optimal_backup(&q, mdp)?;
        let td_l1 = post.values().iter().zip(q.values()).map(|(b, v)| (b - v).abs()).sum();
        let (q_gap_linf, q_gap_mean) = gaps(&q, q_star)?;
        let ret = greedy_return(mdp, &q)?;
        let regret = target_return.map_or(f64::NAN, |t| t - ret);
        if trace.first_optimal.is_none() && regret.abs() <= 1e-9 {
            trace.first_optimal = Some(k);
        }
        trace.rows.push(TraceRow {
            iteration: k,
            td_error_l1: td_l1,
            q_gap_linf,
            q_gap_mean,
            greedy_return: ret,
            regret,
            weight_entropy: weight_entropy(&w),
        });
        trace.weights.push(w);
        trace.tables.push(q.clone());
    }
    Ok(trace)
}

/// One synchronous weighted update `Q + lr·w⊙(B*Q − Q)` with caller-supplied
/// weights (one per legal pair, not renormalized).
pub fn weighted_vi_step(q: &QTable, mdp: &TabularMdp, weights: &[f64], lr: f64) -> Result<QTable> {
    if weights.len() != q.values().len() {
        return Err(Error::Shape(format!(
            "{} weights for {} pairs",
            weights.len(),
            q.values().len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::Contract(format!("weight {w} is negative or non-finite")));
    }
    let backup = bellman_optimal_backup(q, mdp)?;
    let td: Vec<f64> = backup.values().iter().zip(q.values()).map(|(b, v)| b - v).collect();
    Ok(damped_step(q, &td, weights, lr))
}

fn damped_step(q: &QTable, td: &[f64], w: &[f64], lr: f64) -> QTable {
    let mut next = q.clone();
    for ((v, &w), &t) in next.values_mut().iter_mut().zip(w).zip(td) {
        *v += lr * w * t;
    }
    next
}

/// Expected TCE of `(s, a)` under the exact distance-to-end distribution of
/// `pi`; mass surviving past `max_h` is counted at `max_h`.
#[allow(clippy::too_many_arguments)]
fn exact_expected_tce(
    mdp: &TabularMdp,
    pi: &crate::PolicyTable,
    strategy: &WeightingStrategy,
    s: usize,
    a: usize,
    l: f64,
    progress: f64,
    max_h: usize,
) -> Result<f64> {
    let cfg = &strategy.tce;
    let (pmf, tail) = distance_to_end_pmf(mdp, pi, s, a, max_h)?;
    let mut acc = tail * tce_raw(max_h as u32, cfg.gamma, l, cfg.c);
    for (h, p) in pmf.iter().enumerate() {
        acc += p * tce_raw(h as u32, cfg.gamma, l, cfg.c);
    }
    let (lo, hi) = cfg.clip.at(progress);
    Ok(acc.clamp(lo, hi))
}

/// Replay Q-learning settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerConfig {
    pub lr: f64,
    /// Environment steps.
    pub steps: usize,
    pub batch: usize,
    pub strategy: WeightingStrategy,
    /// Updates between target-table syncs.
    pub target_update: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of training over which ε is annealed.
    pub epsilon_anneal: f64,
    pub seed: u64,
    pub buffer_capacity: usize,
    pub h_window: usize,
    pub fast_fraction: f64,
    pub max_episode_steps: u32,
    pub reward_noise: f64,
    pub sampling: SamplingMode,
    pub delta_lr: f64,
    pub lfiw_lr: f64,
    pub lfiw_batch: usize,
    pub occupancy_discount: f64,
    pub tracker_rate: f64,
    /// Steps between trace rows.
    pub metric_every: usize,
    pub q_init: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            steps: 20_000,
            batch: 32,
            strategy: WeightingStrategy::uniform(),
            target_update: 100,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal: 0.5,
            seed: 0,
            buffer_capacity: 10_000,
            h_window: 16,
            fast_fraction: 0.1,
            max_episode_steps: 200,
            reward_noise: 0.0,
            sampling: SamplingMode::Uniform,
            delta_lr: 0.5,
            lfiw_lr: 0.5,
            lfiw_batch: 64,
            occupancy_discount: 0.99,
            tracker_rate: 0.01,
            metric_every: 500,
            q_init: 0.0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr > 0.0 && self.lr <= 1.0) {
            return bad("learner.lr must be in (0, 1]");
        }
        if self.batch == 0 || self.steps == 0 || self.target_update == 0 || self.metric_every == 0 {
            return bad("batch, steps, target_update and metric_every must be positive");
        }
        if self.batch > self.buffer_capacity {
            return bad("batch exceeds buffer capacity");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon values must be in [0, 1]");
        }
        if !(self.epsilon_anneal > 0.0 && self.epsilon_anneal <= 1.0) {
            return bad("epsilon_anneal must be in (0, 1]");
        }
        if !(self.fast_fraction > 0.0 && self.fast_fraction <= 1.0) {
            return bad("fast_fraction must be in (0, 1]");
        }
        if !(self.delta_lr > 0.0 && self.delta_lr <= 1.0) {
            return bad("delta_lr must be in (0, 1]");
        }
        if !(self.lfiw_lr > 0.0) || self.lfiw_batch == 0 {
            return bad("lfiw_lr and lfiw_batch must be positive");
        }
        if !(self.occupancy_discount > 0.0 && self.occupancy_discount < 1.0) {
            return bad("occupancy_discount must be in (0, 1)");
        }
        if !(self.reward_noise >= 0.0) {
            return bad("reward_noise must be >= 0");
        }
        if self.max_episode_steps == 0 || self.h_window == 0 {
            return bad("max_episode_steps and h_window must be positive");
        }
        Ok(())
    }

    pub fn epsilon(&self, step: usize) -> f64 {
        let t = step as f64 / (self.epsilon_anneal * self.steps as f64);
        if t >= 1.0 {
            self.epsilon_end
        } else {
            self.epsilon_start + t * (self.epsilon_end - self.epsilon_start)
        }
    }
}

/// One update batch as seen by the weighting strategy.
#[derive(Debug, Clone)]
pub struct BatchLog<'a> {
    pub update: usize,
    pub pairs: &'a [(usize, usize)],
    pub features: &'a [SampleFeatures],
    pub weights: &'a [f64],
}

/// State of a run at a trace row.
#[derive(Debug, Clone, Copy)]
pub struct Checkpoint<'a> {
    pub row: &'a TraceRow,
    pub q: &'a QTable,
    pub buffer: &'a ReplayBuffer,
}

/// Hooks called during [`weighted_q_learning_observed`]. Closures taking a
/// [`BatchLog`] observe batches only.
pub trait LearnerObserver {
    fn on_batch(&mut self, _batch: &BatchLog<'_>) {}
    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint<'_>) {}
}

impl<F: FnMut(&BatchLog<'_>)> LearnerObserver for F {
    fn on_batch(&mut self, batch: &BatchLog<'_>) {
        self(batch)
    }
}

#[derive(Debug, Clone)]
pub struct QlTrace {
    pub rows: Vec<TraceRow>,
    /// Undiscounted (noisy) return of every finished episode.
    pub episode_returns: Vec<f64>,
    /// Steps at which no update happened because the buffer was too small.
    pub warmup_skips: usize,
    pub updates: usize,
    pub q: QTable,
    pub delta: DeltaTable,
    pub kappa: RatioTable,
    pub buffer: ReplayBuffer,
}

/// Episodic Q-learning from replay with strategy-weighted tabular updates.
///
/// `q_star` enables the oracle strategies and the gap/regret columns.
pub fn weighted_q_learning(mdp: &TabularMdp, cfg: &LearnerConfig, q_star: Option<&QTable>) -> Result<QlTrace> {
    weighted_q_learning_observed(mdp, cfg, q_star, &mut |_: &BatchLog<'_>| {})
}

/// [`weighted_q_learning`] reporting every update batch and trace row to `observer`.
pub fn weighted_q_learning_observed<O: LearnerObserver + ?Sized>(
    mdp: &TabularMdp,
    cfg: &LearnerConfig,
    q_star: Option<&QTable>,
    observer: &mut O,
) -> Result<QlTrace> {
    cfg.validate()?;
    let strategy = &cfg.strategy;
    if strategy.kind.needs_q_star() && q_star.is_none() {
        return Err(Error::Config(format!("strategy {} requires Q*", strategy.kind)));
    }
    let layout = mdp.layout().clone();
    let gamma = mdp.gamma();
    let mut driver = EpisodeDriver::new(mdp, cfg.seed, cfg.max_episode_steps, cfg.reward_noise)?;
    let mut explore = rng::stream(cfg.seed, Stream::Exploration);
    let mut sampler = rng::stream(cfg.seed, Stream::Sampling);
    let mut fast_rng = rng::stream(cfg.seed, Stream::FastBuffer);
    let mut slow_rng = rng::stream(cfg.seed, Stream::SlowBuffer);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, &layout, cfg.h_window);
    let mut fast_slow = FastSlowBuffers::new(cfg.fast_fraction);

    let mut q = QTable::filled(&layout, cfg.q_init);
    let mut target_q = q.clone();
    let mut delta = DeltaTable::zeros(&layout);
    let mut target_delta = delta.clone();
    let mut kappa = RatioTable::new(&layout, strategy.temperature)?;
    let mut tracker = LossTracker::new(cfg.tracker_rate);
    let target_return = q_star.map(|qs| optimal_return(mdp, qs));

    let use_ratio = strategy.kind.uses_ratio() && strategy.ratio != RatioSource::None;
    let lfiw = strategy.kind.uses_ratio() && strategy.ratio == RatioSource::Lfiw;
    let exact_ratio = strategy.kind.uses_ratio() && strategy.ratio == RatioSource::Exact;
    let hindsight = strategy.kind == StrategyKind::FullTheorem;
    let mut ratio_cache: Option<Vec<f64>> = None;
    // Per-pair TCE moments; the outer `None` marks a stale entry.
    let mut tce_cache: Vec<Option<Option<TceMoments>>> = vec![None; layout.len()];
    let mut episode_pairs: Vec<usize> = Vec::new();
    let mut target_backup: Option<QTable> = None;

    let mut rows = Vec::new();
    let mut episode_returns = Vec::new();
    let mut warmup_skips = 0;
    let mut updates = 0;
    let mut window_td = 0.0;
    let mut window_td_n = 0usize;
    let mut window_entropy = 0.0;
    let mut window_batches = 0usize;

    let mut ep_return = 0.0;
    driver.reset();

    let mut pairs = Vec::with_capacity(cfg.batch);
    let mut features = Vec::with_capacity(cfg.batch);
    let mut targets = Vec::with_capacity(cfg.batch);
    let mut nexts = Vec::with_capacity(cfg.batch);

    for step in 0..cfg.steps {
        let progress = step as f64 / cfg.steps as f64;
        let s = driver.state().expect("driver is mid-episode");
        let a = if explore.random::<f64>() < cfg.epsilon(step) {
            explore.random_range(0..mdp.n_actions(s))
        } else {
            q.greedy_action(s).expect("non-terminal state has actions")
        };
        let t = driver.step(a);
        ep_return += t.r;
        let over = t.done || t.censored;
        let (traj, censored) = (t.trajectory_id, t.censored);
        episode_pairs.push(layout.index(t.s, t.a));
        buffer.push(t);
        if over {
            buffer.on_episode_end(traj, censored);
            for &p in &episode_pairs {
                tce_cache[p] = None;
            }
            episode_pairs.clear();
            fast_slow.refresh(&buffer);
            episode_returns.push(ep_return);
            ep_return = 0.0;
            driver.reset();
        }

        if buffer.len() < cfg.batch {
            warmup_skips += 1;
        } else {
            if exact_ratio && ratio_cache.is_none() {
                ratio_cache = Some(exact_ratio_table(mdp, &q, &buffer, cfg.occupancy_discount)?);
            }
            if hindsight && target_backup.is_none() {
                target_backup = Some(bellman_optimal_backup(&target_q, mdp)?);
            }
            let drawn = buffer.sample(cfg.batch, cfg.sampling, &mut sampler)?;
            pairs.clear();
            features.clear();
            targets.clear();
            nexts.clear();
            let l = tracker.value();
            let mut batch_td = 0.0;
            for d in &drawn {
                let tr: &Transition = buffer.get(d.slot);
                let next = if tr.done {
                    None
                } else {
                    Some((
                        tr.s_next,
                        target_q.greedy_action(tr.s_next).expect("live state has actions"),
                    ))
                };
                let boot = next.map_or(0.0, |(sn, an)| target_q.get(sn, an));
                let y = tr.r + gamma * boot;
                let q_sa = q.get(tr.s, tr.a);
                batch_td += (y - q_sa).abs();
                let idx = layout.index(tr.s, tr.a);
                let ratio = if !use_ratio {
                    1.0
                } else if lfiw {
                    kappa.kappa(tr.s, tr.a)
                } else {
                    ratio_cache.as_ref().expect("cache filled")[idx]
                };
                let etce = if strategy.kind == StrategyKind::ReMert {
                    let moments = *tce_cache[idx]
                        .get_or_insert_with(|| TceMoments::from_records(buffer.h_record_at(idx), &strategy.tce));
                    expected_tce_from(moments, &strategy.tce, l, progress)
                } else {
                    0.0
                };
                let row = q.row(tr.s);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|&v| crate::math::exp(v - m)).sum();
                features.push(SampleFeatures {
                    td_abs: (y - q_sa).abs(),
                    penalty: if strategy.kind.uses_delta() {
                        discor_penalty_sample(&target_delta, gamma, next)
                    } else {
                        0.0
                    },
                    ratio,
                    expected_tce: etce,
                    q_gap: q_star.map(|qs| (y - qs.get(tr.s, tr.a)).abs()),
                    prev_bellman_error: target_backup.as_ref().map(|b| (q_sa - b.get(tr.s, tr.a)).abs()),
                    policy_prob: crate::math::exp(q_sa - m) / z,
                });
                pairs.push((tr.s, tr.a));
                targets.push(y);
                nexts.push(next);
            }
            let batch_mean_td = batch_td / cfg.batch as f64;
            tracker.observe(batch_mean_td);
            let weights = compute_weights(strategy, &features, tracker.divisor())?;
            updates += 1;
            observer.on_batch(&BatchLog {
                update: updates,
                pairs: &pairs,
                features: &features,
                weights: &weights,
            });
            window_td += batch_mean_td;
            window_td_n += 1;
            window_entropy += weight_entropy(&weights);
            window_batches += 1;

            if strategy.kind.uses_delta() {
                for (i, &(s, a)) in pairs.iter().enumerate() {
                    let tgt = discor_target(q.get(s, a), targets[i], &target_delta, nexts[i], gamma);
                    delta.update_toward(s, a, tgt, cfg.delta_lr);
                }
            }

            let applied: Vec<WeightedTarget> = pairs
                .iter()
                .zip(&targets)
                .zip(&weights)
                .map(|((&(s, a), &target), &w)| WeightedTarget {
                    s,
                    a,
                    target,
                    weight: if cfg.sampling == SamplingMode::Prioritized {
                        1.0
                    } else {
                        w
                    },
                })
                .collect();
            apply_weighted_updates(&mut q, &applied, cfg.lr)?;
            if cfg.sampling == SamplingMode::Prioritized {
                for (d, &w) in drawn.iter().zip(&weights) {
                    buffer.set_priority(d.slot, w)?;
                }
            }

            if lfiw {
                let fast = fast_slow.sample_fast(&buffer, cfg.lfiw_batch, &mut fast_rng)?;
                let slow = fast_slow.sample_slow(&buffer, cfg.lfiw_batch, &mut slow_rng)?;
                let to_pairs = |slots: Vec<usize>| -> Vec<(usize, usize)> {
                    slots
                        .into_iter()
                        .map(|i| {
                            let t = buffer.get(i);
                            (t.s, t.a)
                        })
                        .collect()
                };
                kappa.lfiw_update(&to_pairs(fast), &to_pairs(slow), cfg.lfiw_lr)?;
            }

            if updates % cfg.target_update == 0 {
                target_q = q.clone();
                target_delta = delta.clone();
                if exact_ratio {
                    ratio_cache = Some(exact_ratio_table(mdp, &q, &buffer, cfg.occupancy_discount)?);
                }
                if hindsight {
                    target_backup = Some(bellman_optimal_backup(&target_q, mdp)?);
                }
            }
        }

        if (step + 1) % cfg.metric_every == 0 || step + 1 == cfg.steps {
            let (q_gap_linf, q_gap_mean) = gaps(&q, q_star)?;
            let ret = greedy_return(mdp, &q)?;
            let row = TraceRow {
                iteration: step + 1,
                td_error_l1: if window_td_n > 0 {
                    window_td / window_td_n as f64
                } else {
                    f64::NAN
                },
                q_gap_linf,
                q_gap_mean,
                greedy_return: ret,
                regret: target_return.map_or(f64::NAN, |t| t - ret),
                weight_entropy: if window_batches > 0 {
                    window_entropy / window_batches as f64
                } else {
                    f64::NAN
                },
            };
            observer.on_checkpoint(&Checkpoint {
                row: &row,
                q: &q,
                buffer: &buffer,
            });
            rows.push(row);
            window_td = 0.0;
            window_td_n = 0;
            window_entropy = 0.0;
            window_batches = 0;
        }
    }

    Ok(QlTrace {
        rows,
        episode_returns,
        warmup_skips,
        updates,
        q,
        delta,
        kappa,
        buffer,
    })
}

/// `d^{softmax(q)}(s,a) / max(μ(s,a), 1/(2·len))`.
fn exact_ratio_table(mdp: &TabularMdp, q: &QTable, buffer: &ReplayBuffer, gamma_d: f64) -> Result<Vec<f64>> {
    let d = discounted_occupancy(mdp, &softmax_policy(q), gamma_d)?;
    let floor = 1.0 / (2.0 * buffer.len().max(1) as f64);
    let mu = buffer.mu();
    Ok(d.values()
        .iter()
        .zip(mu.values())
        .map(|(d, m)| d / m.max(floor))
        .collect())
}
