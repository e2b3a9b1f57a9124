//! Episodic replay buffer with sum-tree sampling.

use alloc::{collections::VecDeque, format, vec, vec::Vec};

use rand::Rng;

use crate::env::Transition;
use crate::table::{ActionLayout, DistributionTable, QTable};
use crate::{Error, Result};

/// Floor added to every priority before it enters the tree.
pub const PRIORITY_FLOOR: f64 = 1e-6;

/// Complete binary tree over leaf priorities; each internal node holds the
/// sum of its children.
#[derive(Debug, Clone)]
pub struct SumTree {
    capacity: usize,
    /// Leaves start at `leaf_base`; node `i` has children `2i` and `2i + 1`.
    leaf_base: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaf_base = capacity.max(1).next_power_of_two();
        Self {
            capacity,
            leaf_base,
            nodes: vec![0.0; 2 * leaf_base],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, leaf: usize) -> f64 {
        self.nodes[self.leaf_base + leaf]
    }

    /// Sets a leaf and recomputes its ancestors from their children.
    pub fn set(&mut self, leaf: usize, priority: f64) {
        assert!(leaf < self.capacity, "leaf {leaf} out of range");
        assert!(
            priority >= 0.0 && priority.is_finite(),
            "priority must be finite and nonnegative, got {priority}"
        );
        let mut i = self.leaf_base + leaf;
        self.nodes[i] = priority;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative-priority interval contains `mass`, for
    /// `0 ≤ mass < total`. Zero-priority leaves are never returned while a
    /// positive leaf exists.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut i = 1;
        while i < self.leaf_base {
            let left = self.nodes[2 * i];
            let right = self.nodes[2 * i + 1];
            if mass < left || right <= 0.0 {
                i *= 2;
            } else {
                mass -= left;
                i = 2 * i + 1;
            }
        }
        let mut leaf = i - self.leaf_base;
        // Rounding can land on an empty leaf at the very end of the mass.
        while self.nodes[self.leaf_base + leaf] <= 0.0 && leaf > 0 {
            leaf -= 1;
        }
        leaf
    }

    /// Maximum deviation of any internal node from the sum of its children.
    pub fn consistency_error(&self) -> f64 {
        (1..self.leaf_base)
            .map(|i| (self.nodes[i] - self.nodes[2 * i] - self.nodes[2 * i + 1]).abs())
            .fold(0.0, f64::max)
    }

    /// Stratified draw: `[0, total)` is split into `batch` equal segments and
    /// one uniform point is taken inside each.
    pub fn sample_stratified<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        let total = self.total();
        let seg = total / batch as f64;
        (0..batch)
            .map(|i| {
                let u: f64 = rng.random();
                let mass = ((i as f64 + u) * seg).min(total * (1.0 - f64::EPSILON));
                self.find(mass)
            })
            .collect()
    }
}

/// One recorded distance to end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HRecord {
    pub h: u32,
    pub censored: bool,
}

/// A sampled slot with its current priority.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampled {
    pub slot: usize,
    pub priority: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Uniform over stored transitions (weights enter the loss).
    Uniform,
    /// Proportional to sum-tree priority.
    Prioritized,
}

/// FIFO replay buffer keeping the empirical pair distribution μ and a
/// bounded record of observed distances to end per pair.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    layout: ActionLayout,
    storage: Vec<Transition>,
    /// Slot written next once the ring is full.
    head: usize,
    /// Insertion counter; slot ages are derived from it.
    pushed: u64,
    counts: Vec<u32>,
    h_window: usize,
    h_records: Vec<VecDeque<HRecord>>,
    tree: SumTree,
    max_priority: f64,
    /// `(slot, pair index, step)` of the episode still in progress.
    open: Vec<(usize, usize, u32)>,
    open_trajectory: Option<u64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, layout: &ActionLayout, h_window: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            layout: layout.clone(),
            storage: Vec::with_capacity(capacity),
            head: 0,
            pushed: 0,
            counts: vec![0; layout.len()],
            h_window: h_window.max(1),
            h_records: vec![VecDeque::new(); layout.len()],
            tree: SumTree::new(capacity),
            max_priority: 1.0,
            open: Vec::new(),
            open_trajectory: None,
        }
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn layout(&self) -> &ActionLayout {
        &self.layout
    }

    pub fn get(&self, slot: usize) -> &Transition {
        &self.storage[slot]
    }

    /// Stored transitions, oldest first.
    pub fn iter_chronological(&self) -> impl Iterator<Item = &Transition> + '_ {
        let split = if self.storage.len() < self.capacity {
            0
        } else {
            self.head
        };
        self.storage[split..].iter().chain(self.storage[..split].iter())
    }

    /// Slot of the `k`-th newest transition (`k = 0` is the newest).
    pub fn newest_slot(&self, k: usize) -> usize {
        debug_assert!(k < self.len());
        let newest = if self.storage.len() < self.capacity {
            self.storage.len() - 1
        } else {
            (self.head + self.capacity - 1) % self.capacity
        };
        (newest + self.capacity - k) % self.capacity
    }

    /// Appends a transition, evicting the oldest at capacity. New entries
    /// get the largest priority seen so far.
    pub fn push(&mut self, t: Transition) -> usize {
        let pair = self.layout.index(t.s, t.a);
        match self.open_trajectory {
            Some(id) if id == t.trajectory_id => {}
            _ => {
                self.open.clear();
                self.open_trajectory = Some(t.trajectory_id);
            }
        }
        let slot = if self.storage.len() < self.capacity {
            self.storage.push(t);
            self.storage.len() - 1
        } else {
            let slot = self.head;
            let old = core::mem::replace(&mut self.storage[slot], t);
            let old_pair = self.layout.index(old.s, old.a);
            self.counts[old_pair] -= 1;
            self.head = (self.head + 1) % self.capacity;
            slot
        };
        self.counts[pair] += 1;
        self.pushed += 1;
        let step = self.storage[slot].step_index;
        self.open.push((slot, pair, step));
        self.tree.set(slot, self.max_priority);
        slot
    }

    /// Closes the episode `trajectory_id`: distances are backfilled on the
    /// transitions still stored and every pair of the episode gets its `h`
    /// appended to its record (oldest values drop out past the window).
    pub fn on_episode_end(&mut self, trajectory_id: u64, censored: bool) {
        if self.open_trajectory != Some(trajectory_id) {
            return;
        }
        let Some(last) = self.open.iter().map(|o| o.2).max() else {
            return;
        };
        for &(slot, pair, step) in &self.open {
            let h = last - step;
            let t = &mut self.storage[slot];
            if t.trajectory_id == trajectory_id && t.step_index == step {
                t.distance_to_end = Some(h);
                t.censored = censored;
            }
            let rec = &mut self.h_records[pair];
            rec.push_back(HRecord { h, censored });
            while rec.len() > self.h_window {
                rec.pop_front();
            }
        }
        self.open.clear();
        self.open_trajectory = None;
    }

    /// Recorded distances to end for `(s, a)`, oldest first.
    pub fn h_record(&self, s: usize, a: usize) -> &VecDeque<HRecord> {
        &self.h_records[self.layout.index(s, a)]
    }

    pub fn h_record_at(&self, pair: usize) -> &VecDeque<HRecord> {
        &self.h_records[pair]
    }

    pub fn count(&self, s: usize, a: usize) -> u32 {
        self.counts[self.layout.index(s, a)]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Empirical μ over pairs.
    pub fn mu(&self) -> DistributionTable {
        let n = self.len().max(1) as f64;
        let values = self.counts.iter().map(|&c| c as f64 / n).collect();
        DistributionTable::from_values(&self.layout, values).expect("counts match layout")
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    /// Sets the priority of `slot` (plus [`PRIORITY_FLOOR`]).
    pub fn set_priority(&mut self, slot: usize, priority: f64) -> Result<()> {
        if !(priority >= 0.0) || !priority.is_finite() {
            return Err(Error::Contract(format!("priority {priority} must be finite and >= 0")));
        }
        let p = priority + PRIORITY_FLOOR;
        self.max_priority = self.max_priority.max(p);
        self.tree.set(slot, p);
        Ok(())
    }

    /// Draws a batch. `Prioritized` uses stratified sum-tree sampling,
    /// `Uniform` i.i.d. uniform slots.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, mode: SamplingMode, rng: &mut R) -> Result<Vec<Sampled>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let slots: Vec<usize> = match mode {
            SamplingMode::Uniform => (0..batch).map(|_| rng.random_range(0..self.len())).collect(),
            SamplingMode::Prioritized => {
                if !(self.tree.total() > 0.0) {
                    return Err(Error::Contract("total priority is zero".into()));
                }
                self.tree.sample_stratified(batch, rng)
            }
        };
        Ok(slots
            .into_iter()
            .map(|slot| Sampled {
                slot,
                priority: self.tree.get(slot),
            })
            .collect())
    }
}

/// Splits a [`ReplayBuffer`] into a fast part (the newest transitions) and a
/// slow part (everything stored) for density-ratio estimation.
#[derive(Debug, Clone)]
pub struct FastSlowBuffers {
    fast_fraction: f64,
    fast_len: usize,
}

impl FastSlowBuffers {
    pub fn new(fast_fraction: f64) -> Self {
        assert!(
            fast_fraction > 0.0 && fast_fraction <= 1.0,
            "fast fraction must be in (0, 1]"
        );
        Self {
            fast_fraction,
            fast_len: 0,
        }
    }

    /// Recomputes the fast window size from the buffer's current capacity
    /// share; called once per finished episode.
    pub fn refresh(&mut self, buffer: &ReplayBuffer) {
        let target = libm::ceil(self.fast_fraction * buffer.capacity() as f64) as usize;
        self.fast_len = target.clamp(1, buffer.len().max(1));
    }

    pub fn fast_len(&self, buffer: &ReplayBuffer) -> usize {
        self.fast_len.clamp(1, buffer.len().max(1))
    }

    /// Uniform draws from the newest `fast_len` transitions.
    pub fn sample_fast<R: Rng + ?Sized>(&self, buffer: &ReplayBuffer, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if buffer.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let len = self.fast_len(buffer);
        Ok((0..n).map(|_| buffer.newest_slot(rng.random_range(0..len))).collect())
    }

    /// Uniform draws from the whole buffer.
    pub fn sample_slow<R: Rng + ?Sized>(&self, buffer: &ReplayBuffer, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if buffer.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..n).map(|_| rng.random_range(0..buffer.len())).collect())
    }
}

/// `w_i · (y_i − q_i)²` per sample.
pub fn weighted_squared_errors(errors: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    check_weights(weights, errors.len())?;
    Ok(errors.iter().zip(weights).map(|(e, w)| w * e * e).collect())
}

/// One sample of a weighted tabular regression step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedTarget {
    pub s: usize,
    pub a: usize,
    pub target: f64,
    pub weight: f64,
}

/// Applies `Q(s,a) += min(1, lr·w)·(y − Q(s,a))` sample by sample, in order.
///
/// The step factor is capped at 1 so a heavily weighted sample lands on its
/// target instead of overshooting it.
pub fn apply_weighted_updates(q: &mut QTable, samples: &[WeightedTarget], lr: f64) -> Result<()> {
    for (i, smp) in samples.iter().enumerate() {
        if !(smp.weight >= 0.0) || !smp.weight.is_finite() {
            return Err(Error::Contract(format!(
                "weight {} at sample {i} is negative or non-finite",
                smp.weight
            )));
        }
    }
    for smp in samples {
        let step = (lr * smp.weight).min(1.0);
        let cur = q.get(smp.s, smp.a);
        q.set(smp.s, smp.a, cur + step * (smp.target - cur));
    }
    Ok(())
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::Shape(format!("{} weights for {} samples", weights.len(), n)));
    }
    if let Some(i) = weights.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Contract(format!(
            "weight {} at sample {i} is negative or non-finite",
            weights[i]
        )));
    }
    Ok(())
}
