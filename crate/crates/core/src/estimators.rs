//! Estimators feeding the prioritization weights.
//!
//! * [`DeltaTable`]: DisCor's accumulated Bellman error Δ, trained by
//!   bootstrapping (`Δ̂ = |Q − y| + γ Δ(s', â)`) or stepped exactly.
//! * [`RatioTable`]: likelihood-free importance weights κ ≈ d_fast / d_slow,
//!   fit with the KL variational objective.
//! * Temporal correctness estimation ([`tce`], [`expected_tce`]): a closed-form
//!   upper-bound surrogate for `|Q − Q*|` driven by the distance to end.

use alloc::{format, vec::Vec};

use crate::math;
use crate::mdp::{bellman_optimal_backup, TabularMdp};
use crate::replay::HRecord;
use crate::table::{ActionLayout, PolicyTable, QTable};
use crate::{Error, Result};

/// Nonnegative table Δ(s, a), initialized to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaTable {
    table: QTable,
}

impl DeltaTable {
    pub fn zeros(layout: &ActionLayout) -> Self {
        Self {
            table: QTable::zeros(layout),
        }
    }

    pub fn from_values(layout: &ActionLayout, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::Contract("Δ entries must be nonnegative".into()));
        }
        Ok(Self {
            table: QTable::from_values(layout, values)?,
        })
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.table.get(s, a)
    }

    pub fn values(&self) -> &[f64] {
        self.table.values()
    }

    pub fn layout(&self) -> &ActionLayout {
        self.table.layout()
    }

    /// Moves Δ(s, a) toward a (nonnegative) target with step `lr ∈ [0, 1]`.
    pub fn update_toward(&mut self, s: usize, a: usize, target: f64, lr: f64) {
        let cur = self.table.get(s, a);
        let next = cur + lr * (target - cur);
        self.table.set(s, a, next.max(0.0));
    }
}

/// Bootstrapped Δ target for one sample:
/// `|q(s,a) − y| + γ Δ_target(s', â)`, with no bootstrap when `next` is
/// `None` (terminal `s'`). `â` is the greedy action of the target Q at `s'`.
pub fn discor_target(q_sa: f64, y: f64, delta_target: &DeltaTable, next: Option<(usize, usize)>, gamma: f64) -> f64 {
    let boot = next.map_or(0.0, |(s_next, a_hat)| delta_target.get(s_next, a_hat));
    (q_sa - y).abs() + gamma * boot
}

/// Exact penalty `γ [P^π Δ](s,a) = γ Σ_{s'} P(s'|s,a) Σ_{a'} π(a'|s') Δ(s',a')`.
pub fn discor_penalty_exact(delta: &DeltaTable, mdp: &TabularMdp, pi: &PolicyTable, s: usize, a: usize) -> f64 {
    let mut acc = 0.0;
    for &(next, p) in mdp.outcomes(s, a) {
        if mdp.is_terminal(next) {
            continue;
        }
        let inner: f64 = pi
            .row(next)
            .iter()
            .enumerate()
            .map(|(a2, &pa)| pa * delta.get(next, a2))
            .sum();
        acc += p * inner;
    }
    mdp.gamma() * acc
}

/// Single-sample estimate of the penalty from an observed `s'` and greedy `â`.
pub fn discor_penalty_sample(delta: &DeltaTable, gamma: f64, next: Option<(usize, usize)>) -> f64 {
    next.map_or(0.0, |(s_next, a_hat)| gamma * delta.get(s_next, a_hat))
}

/// Exact synchronous step `Δ_k = |Q_k − B*Q_{k−1}| + γ P^{π_{k−1}} Δ_{k−1}`.
pub fn exact_delta_step(
    prev: &DeltaTable,
    q_k: &QTable,
    backup_prev: &QTable,
    mdp: &TabularMdp,
    pi_prev: &PolicyTable,
) -> Result<DeltaTable> {
    q_k.ensure_layout(mdp.layout())?;
    backup_prev.ensure_layout(mdp.layout())?;
    pi_prev.ensure_layout(mdp.layout())?;
    let values = mdp
        .layout()
        .pairs()
        .map(|(s, a, idx)| {
            (q_k.values()[idx] - backup_prev.values()[idx]).abs() + discor_penalty_exact(prev, mdp, pi_prev, s, a)
        })
        .collect();
    DeltaTable::from_values(mdp.layout(), values)
}

/// Density-ratio table κ(s, a) = exp(θ(s, a)), initialized to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    logits: QTable,
    temperature: f64,
}

impl RatioTable {
    pub fn new(layout: &ActionLayout, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::Contract(format!("temperature {temperature} must be positive")));
        }
        Ok(Self {
            logits: QTable::zeros(layout),
            temperature,
        })
    }

    pub fn kappa(&self, s: usize, a: usize) -> f64 {
        math::exp(self.logits.get(s, a))
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn layout(&self) -> &ActionLayout {
        self.logits.layout()
    }

    /// `κ(s,a)^{1/T}`.
    pub fn tempered(&self, s: usize, a: usize) -> f64 {
        math::exp(self.logits.get(s, a) / self.temperature)
    }

    /// `κ̃ = κ^{1/T} / mean_{slow}(κ^{1/T})` for each pair in `pairs`, with the
    /// mean taken over `slow` (the slow buffer sample).
    pub fn normalized(&self, pairs: &[(usize, usize)], slow: &[(usize, usize)]) -> Vec<f64> {
        let z = if slow.is_empty() {
            1.0
        } else {
            slow.iter().map(|&(s, a)| self.tempered(s, a)).sum::<f64>() / slow.len() as f64
        };
        pairs.iter().map(|&(s, a)| self.tempered(s, a) / z).collect()
    }

    /// One gradient step on the KL-based LFIW objective
    /// `E_slow[f*(f'(κ))] − E_fast[f'(κ)]` with `f(u) = u log u`, i.e.
    /// `E_slow[κ] − E_fast[log κ + 1]`. In logits the gradient at a pair is
    /// `p̂_slow·κ − p̂_fast`, so the fixed point is `κ = p_fast / p_slow`.
    pub fn lfiw_update(&mut self, fast: &[(usize, usize)], slow: &[(usize, usize)], lr: f64) -> Result<()> {
        if fast.is_empty() || slow.is_empty() {
            return Err(Error::Contract(
                "LFIW update needs nonempty fast and slow batches".into(),
            ));
        }
        let layout = self.logits.layout().clone();
        let mut grad = alloc::vec![0.0; layout.len()];
        let ns = slow.len() as f64;
        let nf = fast.len() as f64;
        for &(s, a) in slow {
            let i = layout.index(s, a);
            grad[i] += math::exp(self.logits.values()[i]) / ns;
        }
        for &(s, a) in fast {
            grad[layout.index(s, a)] -= 1.0 / nf;
        }
        for (theta, g) in self.logits.values_mut().iter_mut().zip(grad) {
            *theta -= lr * g;
        }
        Ok(())
    }

    /// Current loss on the given batches (useful for monitoring).
    pub fn lfiw_loss(&self, fast: &[(usize, usize)], slow: &[(usize, usize)]) -> f64 {
        let slow_term = slow.iter().map(|&(s, a)| self.kappa(s, a)).sum::<f64>() / slow.len().max(1) as f64;
        let fast_term = fast.iter().map(|&(s, a)| self.logits.get(s, a) + 1.0).sum::<f64>() / fast.len().max(1) as f64;
        slow_term - fast_term
    }
}

/// Linear-in-progress clip bounds `[b1(t), b2(t)]` for truncated TCE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipSchedule {
    pub lower_start: f64,
    pub lower_end: f64,
    pub upper_start: f64,
    pub upper_end: f64,
}

impl Default for ClipSchedule {
    /// Lower bound rises 0.4 → 0.9, upper bound falls 1.6 → 1.1.
    fn default() -> Self {
        Self {
            lower_start: 0.4,
            lower_end: 0.9,
            upper_start: 1.6,
            upper_end: 1.1,
        }
    }
}

impl ClipSchedule {
    pub fn fixed(lower: f64, upper: f64) -> Self {
        Self {
            lower_start: lower,
            lower_end: lower,
            upper_start: upper,
            upper_end: upper,
        }
    }

    /// Bounds at training progress `t ∈ [0, 1]` (clamped).
    pub fn at(&self, progress: f64) -> (f64, f64) {
        let t = progress.clamp(0.0, 1.0);
        (
            self.lower_start + t * (self.lower_end - self.lower_start),
            self.upper_start + t * (self.upper_end - self.upper_start),
        )
    }

    pub fn validate(&self) -> Result<()> {
        for t in [0.0, 1.0] {
            let (lo, hi) = self.at(t);
            if !(lo <= hi) {
                return Err(Error::Contract(format!(
                    "clip bounds cross: [{lo}, {hi}] at progress {t}"
                )));
            }
        }
        Ok(())
    }
}

/// TCE hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TceConfig {
    pub gamma: f64,
    /// Suboptimality constant `c ≥ 0` (reward units).
    pub c: f64,
    pub clip: ClipSchedule,
    /// Use distances from step-limited episodes too.
    pub include_censored: bool,
}

impl TceConfig {
    pub fn new(gamma: f64, c: f64) -> Self {
        Self {
            gamma,
            c,
            clip: ClipSchedule::default(),
            include_censored: false,
        }
    }
}

/// Exponential moving average of batch-mean |TD error|.
///
/// Serves as `L` in TCE and as the divisor τ of the DisCor penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTracker {
    rate: f64,
    value: Option<f64>,
}

impl LossTracker {
    pub fn new(rate: f64) -> Self {
        Self { rate, value: None }
    }

    /// First observation initializes the average.
    pub fn observe(&mut self, x: f64) {
        self.value = Some(match self.value {
            None => x,
            Some(v) => v + self.rate * (x - v),
        });
    }

    pub fn value(&self) -> f64 {
        self.value.unwrap_or(0.0).max(0.0)
    }

    /// The average as a divisor, floored away from zero.
    pub fn divisor(&self) -> f64 {
        self.value().max(1e-8)
    }
}

/// `f(h) = (γ − γ^{h+1}) / (1 − γ)`, i.e. `Σ_{t=1}^{h} γ^t`; equals `h` at γ = 1.
pub fn horizon_weight(h: u32, gamma: f64) -> f64 {
    if gamma == 1.0 {
        h as f64
    } else {
        (gamma - math::powi(gamma, h as i32 + 1)) / (1.0 - gamma)
    }
}

/// Unclipped `TCE(h) = f(h)(L + c) + γ^{h+1} c`.
pub fn tce_raw(h: u32, gamma: f64, l: f64, c: f64) -> f64 {
    horizon_weight(h, gamma) * (l + c) + math::powi(gamma, h as i32 + 1) * c
}

/// TCE clipped into the schedule's bounds at `progress`.
pub fn tce(h: u32, cfg: &TceConfig, l: f64, progress: f64) -> f64 {
    let (lo, hi) = cfg.clip.at(progress);
    tce_raw(h, cfg.gamma, l, cfg.c).clamp(lo, hi)
}

/// Record averages `E[f(h)]` and `E[γ^{h+1}]`. Raw TCE is affine in these,
/// so a pair's expected TCE for any `L` comes from two numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TceMoments {
    pub mean_horizon: f64,
    pub mean_tail: f64,
}

impl TceMoments {
    /// `None` when no record is usable (empty, or all censored and excluded).
    pub fn from_records<'a, I>(records: I, cfg: &TceConfig) -> Option<Self>
    where
        I: IntoIterator<Item = &'a HRecord>,
    {
        let mut f = 0.0;
        let mut g = 0.0;
        let mut n = 0usize;
        for r in records {
            if r.censored && !cfg.include_censored {
                continue;
            }
            f += horizon_weight(r.h, cfg.gamma);
            g += math::powi(cfg.gamma, r.h as i32 + 1);
            n += 1;
        }
        (n > 0).then(|| Self {
            mean_horizon: f / n as f64,
            mean_tail: g / n as f64,
        })
    }

    /// Mean of the raw TCE values.
    pub fn raw(&self, l: f64, c: f64) -> f64 {
        self.mean_horizon * (l + c) + self.mean_tail * c
    }
}

/// Clipped expected TCE from precomputed moments; the clip midpoint when
/// there are none.
pub fn expected_tce_from(moments: Option<TceMoments>, cfg: &TceConfig, l: f64, progress: f64) -> f64 {
    let (lo, hi) = cfg.clip.at(progress);
    match moments {
        Some(m) => m.raw(l, cfg.c).clamp(lo, hi),
        None => 0.5 * (lo + hi),
    }
}

/// Monte-Carlo `E_τ TCE(s,a)` over a pair's recorded distances: the mean of
/// the raw values, clipped afterwards. Without usable records the clip
/// midpoint is returned.
pub fn expected_tce<'a, I>(records: I, cfg: &TceConfig, l: f64, progress: f64) -> f64
where
    I: IntoIterator<Item = &'a HRecord>,
{
    expected_tce_from(TceMoments::from_records(records, cfg), cfg, l, progress)
}

/// Trajectory bound on `|Q_k − Q*|` for an acyclic MDP:
/// `|Q_k − B*Q_{k−1}|(s,a) + γ E_{s'}[J(s')]`, where following the greedy
/// action `â` of `Q_{k−1}` accumulates
/// `J(s) = |Q_{k−1} − B*Q_{k−1}|(s, â) + c + γ E[J(s'')]` and a terminal
/// successor contributes `c`.
pub fn cumulative_error_bound(q_k: &QTable, q_prev: &QTable, mdp: &TabularMdp, c: f64) -> Result<QTable> {
    q_k.ensure_layout(mdp.layout())?;
    let order = mdp
        .topological_order()
        .ok_or_else(|| Error::Unsupported("cumulative error bound needs an acyclic MDP".into()))?;
    let backup_prev = bellman_optimal_backup(q_prev, mdp)?;
    let err_prev = q_prev.abs_diff(&backup_prev)?;
    let gamma = mdp.gamma();
    let mut j = alloc::vec![0.0; mdp.n_states()];
    let tail = |j: &[f64], s: usize, a: usize| -> f64 {
        mdp.outcomes(s, a)
            .iter()
            .map(|&(y, p)| p * if mdp.is_terminal(y) { c } else { j[y] })
            .sum::<f64>()
    };
    for &s in order.iter().rev() {
        let a = q_prev.greedy_action(s).expect("non-terminal state has actions");
        j[s] = err_prev.get(s, a) + c + gamma * tail(&j, s, a);
    }
    let values = mdp
        .layout()
        .pairs()
        .map(|(s, a, idx)| (q_k.values()[idx] - backup_prev.values()[idx]).abs() + gamma * tail(&j, s, a))
        .collect();
    QTable::from_values(mdp.layout(), values)
}

/// Entrywise `|q − q*|`.
pub fn oracle_q_gap(q: &QTable, q_star: &QTable) -> Result<QTable> {
    q.abs_diff(q_star)
}
