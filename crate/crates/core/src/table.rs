//! Real-valued tables over the legal state-action pairs of an MDP.
//!
//! States may expose different numbers of legal actions, so tables are
//! stored flat with per-state offsets. A marker type distinguishes Q values,
//! policies and distributions at compile time while sharing one layout.

use alloc::{format, vec, vec::Vec};
use core::{fmt, marker::PhantomData};

use crate::{Error, Result};

/// Legal-action structure: state `s` owns flat indices `offsets[s]..offsets[s + 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionLayout {
    offsets: Vec<usize>,
}

impl ActionLayout {
    pub fn new(actions_per_state: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(actions_per_state.len() + 1);
        offsets.push(0);
        let mut acc = 0;
        for &n in actions_per_state {
            acc += n;
            offsets.push(acc);
        }
        Self { offsets }
    }

    pub fn n_states(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_actions(&self, s: usize) -> usize {
        self.offsets[s + 1] - self.offsets[s]
    }

    /// Number of legal state-action pairs.
    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of `(s, a)`. Panics on an illegal action.
    #[inline]
    pub fn index(&self, s: usize, a: usize) -> usize {
        assert!(a < self.n_actions(s), "action {a} is not legal in state {s}");
        self.offsets[s] + a
    }

    #[inline]
    pub fn range(&self, s: usize) -> core::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    /// Inverse of [`index`](Self::index).
    pub fn pair(&self, idx: usize) -> (usize, usize) {
        let s = match self.offsets.binary_search(&idx) {
            // Several states may share an offset when some have no actions;
            // the owner is the last one starting at `idx`.
            Ok(mut i) => {
                while i + 1 < self.offsets.len() && self.offsets[i + 1] == idx {
                    i += 1;
                }
                i
            }
            Err(i) => i - 1,
        };
        (s, idx - self.offsets[s])
    }

    /// Iterates `(s, a, flat_index)` over every legal pair.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.n_states()).flat_map(move |s| self.range(s).enumerate().map(move |(a, idx)| (s, a, idx)))
    }

    pub fn actions_per_state(&self) -> Vec<usize> {
        (0..self.n_states()).map(|s| self.n_actions(s)).collect()
    }
}

pub mod kind {
    //! Table markers.

    /// Action values (units of discounted return).
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct Values;
    /// Row-stochastic action probabilities π(a|s).
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct Probabilities;
    /// Nonnegative mass over pairs, e.g. an occupancy measure.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct Mass;
}

/// A table of reals over legal `(s, a)` pairs.
pub struct SaTable<K> {
    layout: ActionLayout,
    values: Vec<f64>,
    _kind: PhantomData<K>,
}

pub type QTable = SaTable<kind::Values>;
pub type PolicyTable = SaTable<kind::Probabilities>;
pub type DistributionTable = SaTable<kind::Mass>;

impl<K> Clone for SaTable<K> {
    fn clone(&self) -> Self {
        Self {
            layout: self.layout.clone(),
            values: self.values.clone(),
            _kind: PhantomData,
        }
    }
}

impl<K> PartialEq for SaTable<K> {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout && self.values == other.values
    }
}

impl<K> fmt::Debug for SaTable<K> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SaTable")
            .field("layout", &self.layout.actions_per_state())
            .field("values", &self.values)
            .finish()
    }
}

impl<K> SaTable<K> {
    pub fn filled(layout: &ActionLayout, value: f64) -> Self {
        Self {
            layout: layout.clone(),
            values: vec![value; layout.len()],
            _kind: PhantomData,
        }
    }

    pub fn zeros(layout: &ActionLayout) -> Self {
        Self::filled(layout, 0.0)
    }

    /// Wraps flat values; every entry must be finite.
    pub fn from_values(layout: &ActionLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Shape(format!(
                "{} values for {} state-action pairs",
                values.len(),
                layout.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite table entry at index {i}")));
        }
        Ok(Self {
            layout: layout.clone(),
            values,
            _kind: PhantomData,
        })
    }

    pub fn layout(&self) -> &ActionLayout {
        &self.layout
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[self.layout.index(s, a)]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        let i = self.layout.index(s, a);
        self.values[i] = v;
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[self.layout.range(s)]
    }

    #[inline]
    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        let r = self.layout.range(s);
        &mut self.values[r]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn ensure_layout(&self, layout: &ActionLayout) -> Result<()> {
        if &self.layout != layout {
            return Err(Error::Shape(format!(
                "table layout {:?} does not match {:?}",
                self.layout.actions_per_state(),
                layout.actions_per_state()
            )));
        }
        Ok(())
    }

    /// Reinterprets the same numbers under another marker.
    pub fn retag<L>(self) -> SaTable<L> {
        SaTable {
            layout: self.layout,
            values: self.values,
            _kind: PhantomData,
        }
    }

    /// Entrywise `|self - other|`.
    pub fn abs_diff<L>(&self, other: &SaTable<L>) -> Result<SaTable<K>> {
        other.ensure_layout(&self.layout)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .collect();
        Ok(Self {
            layout: self.layout.clone(),
            values,
            _kind: PhantomData,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

impl QTable {
    /// Lowest-index argmax over the legal actions of `s`.
    pub fn greedy_action(&self, s: usize) -> Option<usize> {
        argmax(self.row(s))
    }

    /// Max over legal actions, `None` for a state without actions.
    pub fn max_value(&self, s: usize) -> Option<f64> {
        self.greedy_action(s).map(|a| self.get(s, a))
    }
}

impl PolicyTable {
    /// Checks row-stochasticity (± `tol`) and nonnegativity. States without
    /// actions are skipped.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for s in 0..self.layout.n_states() {
            let row = self.row(s);
            if row.is_empty() {
                continue;
            }
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(Error::Contract(format!(
                    "negative or non-finite probability in state {s}"
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > tol {
                return Err(Error::Contract(format!("policy row {s} sums to {total}")));
            }
        }
        Ok(())
    }
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}
