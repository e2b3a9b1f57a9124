//! Prioritization strategies: per-sample features in, weights with batch mean 1 out.

use alloc::{format, string::String, vec, vec::Vec};
use core::fmt;
use core::str::FromStr;

use crate::estimators::TceConfig;
use crate::math;
use crate::replay::PRIORITY_FLOOR;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    Uniform,
    Per,
    DisCor,
    ReMern,
    ReMert,
    Oracle,
    FullTheorem,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::Uniform,
        StrategyKind::Per,
        StrategyKind::DisCor,
        StrategyKind::ReMern,
        StrategyKind::ReMert,
        StrategyKind::Oracle,
        StrategyKind::FullTheorem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Uniform => "uniform",
            StrategyKind::Per => "per",
            StrategyKind::DisCor => "discor",
            StrategyKind::ReMern => "remern",
            StrategyKind::ReMert => "remert",
            StrategyKind::Oracle => "oracle",
            StrategyKind::FullTheorem => "full_theorem",
        }
    }

    /// Needs `|Q − Q*|`.
    pub fn needs_q_star(self) -> bool {
        matches!(self, StrategyKind::Oracle | StrategyKind::FullTheorem)
    }

    /// Uses the Δ table.
    pub fn uses_delta(self) -> bool {
        matches!(self, StrategyKind::DisCor | StrategyKind::ReMern)
    }

    /// Multiplies in an on-policiness ratio.
    pub fn uses_ratio(self) -> bool {
        matches!(
            self,
            StrategyKind::ReMern | StrategyKind::ReMert | StrategyKind::Oracle | StrategyKind::FullTheorem
        )
    }

    pub fn valid_names() -> String {
        let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
        names.join(", ")
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let key = match lower.as_str() {
            "tce" => "remert",
            "full-theorem" | "fulltheorem" => "full_theorem",
            other => other,
        };
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`; valid: {}", Self::valid_names())))
    }
}

/// Where `d^π / μ` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioSource {
    /// Constant 1.
    None,
    /// Learned fast/slow density ratio κ.
    Lfiw,
    /// Softmax-policy occupancy over the buffer histogram (needs the model).
    Exact,
}

impl RatioSource {
    pub fn name(self) -> &'static str {
        match self {
            RatioSource::None => "none",
            RatioSource::Lfiw => "lfiw",
            RatioSource::Exact => "exact",
        }
    }
}

impl FromStr for RatioSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(RatioSource::None),
            "lfiw" => Ok(RatioSource::Lfiw),
            "exact" => Ok(RatioSource::Exact),
            _ => Err(Error::Config(format!(
                "unknown ratio source `{s}`; valid: none, lfiw, exact"
            ))),
        }
    }
}

/// A strategy and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightingStrategy {
    pub kind: StrategyKind,
    /// Ratio temperature T (`ratio^{1/T}`).
    pub temperature: f64,
    pub per_exponent: f64,
    pub tce: TceConfig,
    pub ratio: RatioSource,
    /// Include the `(2 − π(a|s))` factor of the discrete-action weight.
    pub policy_factor: bool,
}

impl WeightingStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        let ratio = if kind.uses_ratio() {
            RatioSource::Lfiw
        } else {
            RatioSource::None
        };
        Self {
            kind,
            temperature: 7.5,
            per_exponent: 1.0,
            tce: TceConfig::new(0.99, 1.0),
            ratio,
            policy_factor: true,
        }
    }

    pub fn uniform() -> Self {
        Self::new(StrategyKind::Uniform)
    }

    pub fn with_ratio(mut self, ratio: RatioSource) -> Self {
        self.ratio = ratio;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.per_exponent >= 0.0) {
            return Err(Error::Config(format!(
                "PER exponent must be ≥ 0, got {}",
                self.per_exponent
            )));
        }
        if !(self.tce.c >= 0.0) {
            return Err(Error::Config(format!("TCE c must be ≥ 0, got {}", self.tce.c)));
        }
        self.tce.clip.validate().map_err(|e| Error::Config(format!("{e}")))
    }

    /// Unnormalized weight for one sample.
    pub fn raw_weight(&self, f: &SampleFeatures, tau: f64) -> Result<f64> {
        Ok(math::exp(self.log_weight(f, tau)?))
    }

    /// Natural log of the unnormalized weight (`-inf` for a zero weight).
    /// Exponential strategies stay finite here even where `exp` underflows.
    pub fn log_weight(&self, f: &SampleFeatures, tau: f64) -> Result<f64> {
        let log_ratio = || math::ln(f.ratio) / self.temperature;
        let lw = match self.kind {
            StrategyKind::Uniform => 0.0,
            StrategyKind::Per => math::ln(math::powf(f.td_abs, self.per_exponent) + PRIORITY_FLOOR),
            StrategyKind::DisCor => -f.penalty / tau,
            StrategyKind::ReMern => log_ratio() - f.penalty / tau,
            StrategyKind::ReMert => log_ratio() - f.expected_tce,
            StrategyKind::Oracle => log_ratio() - self.require(f.q_gap, "|Q - Q*|")?,
            StrategyKind::FullTheorem => {
                let gap = self.require(f.q_gap, "|Q - Q*|")?;
                let hindsight = self.require(f.prev_bellman_error, "previous Bellman error")?;
                let factor = if self.policy_factor { 2.0 - f.policy_prob } else { 1.0 };
                math::ln(f.ratio) + math::ln(factor) - gap + math::ln(hindsight)
            }
        };
        if lw.is_nan() || lw == f64::INFINITY {
            return Err(Error::Contract(format!(
                "{} produced log weight {lw} from {f:?}",
                self.kind
            )));
        }
        Ok(lw)
    }

    fn require(&self, v: Option<f64>, what: &str) -> Result<f64> {
        v.ok_or_else(|| Error::Config(format!("strategy {} requires {what}, which is unavailable", self.kind)))
    }
}

/// Everything any strategy may look at for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleFeatures {
    /// `|y − Q(s,a)|`.
    pub td_abs: f64,
    /// `γ E[Δ(s', a')]`, before division by τ.
    pub penalty: f64,
    /// Untempered on-policiness ratio (1 when unavailable).
    pub ratio: f64,
    /// Clipped `E_τ TCE(s,a)`.
    pub expected_tce: f64,
    pub q_gap: Option<f64>,
    pub prev_bellman_error: Option<f64>,
    /// Current softmax `π(a|s)`.
    pub policy_prob: f64,
}

impl Default for SampleFeatures {
    fn default() -> Self {
        Self {
            td_abs: 0.0,
            penalty: 0.0,
            ratio: 1.0,
            expected_tce: 0.0,
            q_gap: None,
            prev_bellman_error: None,
            policy_prob: 0.0,
        }
    }
}

/// Weights for a batch, normalized to mean 1. `tau` is the DisCor divisor.
///
/// Computed from log weights shifted by their maximum, so a batch whose raw
/// weights all underflow keeps its relative sizes.
pub fn compute_weights(strategy: &WeightingStrategy, batch: &[SampleFeatures], tau: f64) -> Result<Vec<f64>> {
    let tau = tau.max(1e-8);
    let logs = batch
        .iter()
        .map(|f| strategy.log_weight(f, tau))
        .collect::<Result<Vec<_>>>()?;
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Ok(vec![1.0; batch.len()]);
    }
    let raw: Vec<f64> = logs.iter().map(|&l| math::exp(l - top)).collect();
    normalize_batch(&raw)
}

/// Divide by the batch mean; an all-zero batch becomes uniform.
pub fn normalize_batch(raw: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = raw.iter().find(|&&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::Contract(format!(
            "raw weight {bad} is not a finite nonnegative number"
        )));
    }
    let n = raw.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Ok(vec![1.0; n]);
    }
    let mean = total / n as f64;
    let mut w: Vec<f64> = raw.iter().map(|&x| x / mean).collect();
    // Bring the mean back to 1 exactly up to one rounding step.
    let drift = w.iter().sum::<f64>() / n as f64;
    if drift != 1.0 {
        for x in &mut w {
            *x /= drift;
        }
    }
    Ok(w)
}

/// Shannon entropy (nats) of the weights viewed as a distribution over the batch.
pub fn weight_entropy(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| {
            let p = w / total;
            -p * math::ln(p)
        })
        .sum()
}
