//! Exact finite-MDP machinery.
//!
//! Transitions are stored sparsely per legal `(s, a)` pair. Terminal states
//! have no legal actions and contribute a zero bootstrap everywhere.

use alloc::{format, vec, vec::Vec};

use crate::math::{self, solve_dense};
use crate::table::{argmax, ActionLayout, DistributionTable, PolicyTable, QTable};
use crate::{Error, Result};

const PROB_TOL: f64 = 1e-12;

/// A finite MDP with per-state legal actions.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    layout: ActionLayout,
    /// Sparse `(next_state, probability)` outcomes per flat pair index.
    transitions: Vec<Vec<(usize, f64)>>,
    rewards: Vec<f64>,
    terminal: Vec<bool>,
    gamma: f64,
    initial: Vec<f64>,
}

/// Incremental construction of a [`TabularMdp`]; invariants are checked in
/// [`build`](MdpBuilder::build).
/// `(reward, outcomes)` of one action.
type ActionSpec = (f64, Vec<(usize, f64)>);

#[derive(Debug, Clone)]
pub struct MdpBuilder {
    n_states: usize,
    gamma: f64,
    actions: Vec<Vec<ActionSpec>>,
    terminal: Vec<bool>,
    initial: Option<Vec<f64>>,
}

impl MdpBuilder {
    pub fn new(n_states: usize, gamma: f64) -> Self {
        Self {
            n_states,
            gamma,
            actions: vec![Vec::new(); n_states],
            terminal: vec![false; n_states],
            initial: None,
        }
    }

    /// Appends a legal action to `s`; its index is the number of actions
    /// already declared for `s`.
    pub fn action(mut self, s: usize, reward: f64, outcomes: &[(usize, f64)]) -> Self {
        self.actions[s].push((reward, outcomes.to_vec()));
        self
    }

    pub fn terminal(mut self, s: usize) -> Self {
        self.terminal[s] = true;
        self
    }

    pub fn initial(mut self, dist: &[f64]) -> Self {
        self.initial = Some(dist.to_vec());
        self
    }

    pub fn initial_state(mut self, s: usize) -> Self {
        let mut d = vec![0.0; self.n_states];
        d[s] = 1.0;
        self.initial = Some(d);
        self
    }

    pub fn build(self) -> Result<TabularMdp> {
        let n = self.n_states;
        if n == 0 {
            return Err(Error::InvalidMdp("no states".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidMdp(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        let counts: Vec<usize> = self.actions.iter().map(Vec::len).collect();
        for s in 0..n {
            if self.terminal[s] && counts[s] > 0 {
                return Err(Error::InvalidMdp(format!("terminal state {s} declares actions")));
            }
            if !self.terminal[s] && counts[s] == 0 {
                return Err(Error::InvalidMdp(format!("non-terminal state {s} has no actions")));
            }
        }
        let layout = ActionLayout::new(&counts);
        let mut transitions = Vec::with_capacity(layout.len());
        let mut rewards = Vec::with_capacity(layout.len());
        for (s, acts) in self.actions.into_iter().enumerate() {
            for (a, (r, outcomes)) in acts.into_iter().enumerate() {
                if !r.is_finite() {
                    return Err(Error::InvalidMdp(format!("reward r({s},{a}) is not finite")));
                }
                let mut total = 0.0;
                let mut cleaned: Vec<(usize, f64)> = Vec::with_capacity(outcomes.len());
                for (next, p) in outcomes {
                    if next >= n {
                        return Err(Error::InvalidMdp(format!("({s},{a}) leads to unknown state {next}")));
                    }
                    if !(p >= 0.0) || !p.is_finite() {
                        return Err(Error::InvalidMdp(format!("bad probability {p} at ({s},{a})")));
                    }
                    total += p;
                    if p > 0.0 {
                        match cleaned.iter_mut().find(|(t, _)| *t == next) {
                            Some(slot) => slot.1 += p,
                            None => cleaned.push((next, p)),
                        }
                    }
                }
                if (total - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidMdp(format!("P(.|{s},{a}) sums to {total}")));
                }
                transitions.push(cleaned);
                rewards.push(r);
            }
        }
        let initial = self
            .initial
            .ok_or_else(|| Error::InvalidMdp("initial distribution not set".into()))?;
        if initial.len() != n {
            return Err(Error::InvalidMdp("initial distribution has wrong length".into()));
        }
        let total: f64 = initial.iter().sum();
        if initial.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidMdp(format!("initial distribution sums to {total}")));
        }
        // Undiscounted cyclic MDPs are representable; the solvers reject them.
        Ok(TabularMdp {
            layout,
            transitions,
            rewards,
            terminal: self.terminal,
            gamma: self.gamma,
            initial,
        })
    }
}

impl TabularMdp {
    pub fn layout(&self) -> &ActionLayout {
        &self.layout
    }

    pub fn n_states(&self) -> usize {
        self.layout.n_states()
    }

    pub fn n_actions(&self, s: usize) -> usize {
        self.layout.n_actions(s)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Same dynamics under another discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} outside (0, 1]")));
        }
        let mut m = self.clone();
        m.gamma = gamma;
        Ok(m)
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[self.layout.index(s, a)]
    }

    pub fn outcomes(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[self.layout.index(s, a)]
    }

    /// Outcomes by flat pair index.
    pub fn outcomes_at(&self, idx: usize) -> &[(usize, f64)] {
        &self.transitions[idx]
    }

    pub fn reward_at(&self, idx: usize) -> f64 {
        self.rewards[idx]
    }

    /// True when no state can be revisited, i.e. the graph of positive-probability
    /// transitions between non-terminal states has no cycle.
    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// Kahn order of non-terminal states (predecessors first), or `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.n_states();
        let mut indegree = vec![0usize; n];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for s in 0..n {
            for idx in self.layout.range(s) {
                for &(next, _) in &self.transitions[idx] {
                    if !self.terminal[next] && !succ[s].contains(&next) {
                        succ[s].push(next);
                        indegree[next] += 1;
                    }
                }
            }
        }
        let mut stack: Vec<usize> = (0..n).filter(|&s| !self.terminal[s] && indegree[s] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(s) = stack.pop() {
            order.push(s);
            for &t in &succ[s] {
                indegree[t] -= 1;
                if indegree[t] == 0 {
                    stack.push(t);
                }
            }
        }
        let live = (0..n).filter(|&s| !self.terminal[s]).count();
        (order.len() == live).then_some(order)
    }

    fn require_solvable(&self) -> Result<Option<Vec<usize>>> {
        let order = self.topological_order();
        if self.gamma >= 1.0 && order.is_none() {
            return Err(Error::Unsupported(
                "gamma = 1 requires an acyclic (episodic) MDP".into(),
            ));
        }
        Ok(order)
    }

    /// State-level transition matrix under `pi`, row-major `n × n`; terminal rows are zero.
    pub fn policy_state_matrix(&self, pi: &PolicyTable) -> Result<Vec<f64>> {
        pi.ensure_layout(&self.layout)?;
        let n = self.n_states();
        let mut m = vec![0.0; n * n];
        for (s, a, idx) in self.layout.pairs() {
            let p_a = pi.get(s, a);
            if p_a == 0.0 {
                continue;
            }
            for &(next, p) in &self.transitions[idx] {
                m[s * n + next] += p_a * p;
            }
        }
        Ok(m)
    }
}

fn expected_next_value(mdp: &TabularMdp, idx: usize, value: &[f64]) -> f64 {
    mdp.transitions[idx]
        .iter()
        .map(|&(next, p)| if mdp.terminal[next] { 0.0 } else { p * value[next] })
        .sum()
}

fn greedy_values(q: &QTable) -> Vec<f64> {
    (0..q.layout().n_states())
        .map(|s| q.max_value(s).unwrap_or(0.0))
        .collect()
}

/// Applies the Bellman optimality operator:
/// `r(s,a) + γ Σ_{s'} P(s'|s,a) max_{a'} q(s',a')`, with zero bootstrap from terminal states.
pub fn bellman_optimal_backup(q: &QTable, mdp: &TabularMdp) -> Result<QTable> {
    q.ensure_layout(&mdp.layout)?;
    let v = greedy_values(q);
    let values = (0..mdp.layout.len())
        .map(|idx| mdp.rewards[idx] + mdp.gamma * expected_next_value(mdp, idx, &v))
        .collect();
    QTable::from_values(&mdp.layout, values)
}

/// Bellman evaluation operator for a fixed policy.
pub fn bellman_policy_backup(q: &QTable, pi: &PolicyTable, mdp: &TabularMdp) -> Result<QTable> {
    q.ensure_layout(&mdp.layout)?;
    pi.ensure_layout(&mdp.layout)?;
    let v: Vec<f64> = (0..mdp.n_states())
        .map(|s| q.row(s).iter().zip(pi.row(s)).map(|(q, p)| q * p).sum())
        .collect();
    let values = (0..mdp.layout.len())
        .map(|idx| mdp.rewards[idx] + mdp.gamma * expected_next_value(mdp, idx, &v))
        .collect();
    QTable::from_values(&mdp.layout, values)
}

/// Optimal action values.
///
/// Acyclic MDPs (any γ) are solved exactly by backward induction; cyclic
/// ones with γ < 1 by value iteration until `‖Q − B*Q‖∞ ≤ tol`. Cyclic MDPs
/// with γ = 1 are rejected.
pub fn solve_q_star(mdp: &TabularMdp, tol: f64) -> Result<QTable> {
    match mdp.require_solvable()? {
        Some(order) => {
            let mut v = vec![0.0; mdp.n_states()];
            let mut q = QTable::zeros(&mdp.layout);
            for &s in order.iter().rev() {
                for idx in mdp.layout.range(s) {
                    q.values_mut()[idx] = mdp.rewards[idx] + mdp.gamma * expected_next_value(mdp, idx, &v);
                }
                v[s] = q.max_value(s).unwrap_or(0.0);
            }
            Ok(q)
        }
        None => {
            let mut q = QTable::zeros(&mdp.layout);
            loop {
                let next = bellman_optimal_backup(&q, mdp)?;
                let residual = next
                    .values()
                    .iter()
                    .zip(q.values())
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                if residual <= tol {
                    return Ok(q);
                }
                q = next;
            }
        }
    }
}

/// Largest one-step suboptimality `max_{s,a} (Q*(s,a*) − Q*(s,a))`.
pub fn suboptimality_gap(q_star: &QTable) -> f64 {
    let layout = q_star.layout();
    let mut c: f64 = 0.0;
    for s in 0..layout.n_states() {
        if let Some(best) = q_star.max_value(s) {
            for &v in q_star.row(s) {
                c = c.max(best - v);
            }
        }
    }
    c
}

/// Deterministic greedy policy (lowest-index tie breaking).
pub fn greedy_policy(q: &QTable) -> PolicyTable {
    let mut pi = PolicyTable::zeros(q.layout());
    for s in 0..q.layout().n_states() {
        if let Some(a) = q.greedy_action(s) {
            pi.set(s, a, 1.0);
        }
    }
    pi
}

/// Boltzmann policy `π(a|s) ∝ exp(q(s,a))`, computed with max-subtraction.
pub fn softmax_policy(q: &QTable) -> PolicyTable {
    let mut pi = PolicyTable::zeros(q.layout());
    for s in 0..q.layout().n_states() {
        let row = q.row(s);
        if row.is_empty() {
            continue;
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&x| math::exp(x - m)).collect();
        let z: f64 = exps.iter().sum();
        for (p, e) in pi.row_mut(s).iter_mut().zip(exps) {
            *p = e / z;
        }
    }
    pi
}

/// `Q^π` for a fixed policy.
pub fn evaluate_policy(mdp: &TabularMdp, pi: &PolicyTable) -> Result<QTable> {
    pi.ensure_layout(&mdp.layout)?;
    let n = mdp.n_states();
    let v = match mdp.require_solvable()? {
        Some(order) => {
            let mut v = vec![0.0; n];
            for &s in order.iter().rev() {
                v[s] = mdp
                    .layout
                    .range(s)
                    .zip(pi.row(s))
                    .map(|(idx, p)| p * (mdp.rewards[idx] + mdp.gamma * expected_next_value(mdp, idx, &v)))
                    .sum();
            }
            v
        }
        None => {
            // (I − γ P_π) V = r_π over all states; terminal rows reduce to V = 0.
            let p = mdp.policy_state_matrix(pi)?;
            let mut a = vec![0.0; n * n];
            let mut b = vec![0.0; n];
            for s in 0..n {
                a[s * n + s] = 1.0;
                if mdp.terminal[s] {
                    continue;
                }
                for t in 0..n {
                    if !mdp.terminal[t] {
                        a[s * n + t] -= mdp.gamma * p[s * n + t];
                    }
                }
                b[s] = mdp
                    .layout
                    .range(s)
                    .zip(pi.row(s))
                    .map(|(idx, p)| p * mdp.rewards[idx])
                    .sum();
            }
            solve_dense(a, b)?
        }
    };
    let values = (0..mdp.layout.len())
        .map(|idx| mdp.rewards[idx] + mdp.gamma * expected_next_value(mdp, idx, &v))
        .collect();
    QTable::from_values(&mdp.layout, values)
}

/// `η(π) = E_{s∼ρ0}[V^π(s)]`.
pub fn expected_return(mdp: &TabularMdp, pi: &PolicyTable) -> Result<f64> {
    let q = evaluate_policy(mdp, pi)?;
    Ok(state_values_under(&q, pi)
        .iter()
        .zip(&mdp.initial)
        .map(|(v, p)| v * p)
        .sum())
}

fn state_values_under(q: &QTable, pi: &PolicyTable) -> Vec<f64> {
    (0..q.layout().n_states())
        .map(|s| q.row(s).iter().zip(pi.row(s)).map(|(q, p)| q * p).sum())
        .collect()
}

/// Optimal return `η(π*)` from a solved `Q*`.
pub fn optimal_return(mdp: &TabularMdp, q_star: &QTable) -> f64 {
    greedy_values(q_star).iter().zip(&mdp.initial).map(|(v, p)| v * p).sum()
}

/// `η(π*) − η(π)`.
pub fn regret(mdp: &TabularMdp, pi: &PolicyTable) -> Result<f64> {
    let q_star = solve_q_star(mdp, 1e-12)?;
    Ok(optimal_return(mdp, &q_star) - expected_return(mdp, pi)?)
}

/// Discounted state-action occupancy `(1−γ_d) Σ_t γ_d^t Pr(s_t = s) π(a|s)`.
///
/// Solves the state flow system `(I − γ_d P_πᵀ) d = (1 − γ_d) ρ0` and spreads
/// the state mass over actions. Mass absorbed by terminal states is dropped
/// and the result renormalized over the legal pairs, so episodic MDPs yield
/// the occupancy conditioned on being in a live state.
pub fn discounted_occupancy(mdp: &TabularMdp, pi: &PolicyTable, gamma_d: f64) -> Result<DistributionTable> {
    if !(gamma_d > 0.0 && gamma_d < 1.0) {
        return Err(Error::Contract(format!("occupancy discount {gamma_d} outside (0, 1)")));
    }
    let n = mdp.n_states();
    let p = mdp.policy_state_matrix(pi)?;
    // a[s][t] = δ_st − γ_d P_π(t → s)
    let mut a = vec![0.0; n * n];
    for s in 0..n {
        a[s * n + s] += 1.0;
        for t in 0..n {
            a[s * n + t] -= gamma_d * p[t * n + s];
        }
    }
    let b: Vec<f64> = mdp.initial.iter().map(|&r| (1.0 - gamma_d) * r).collect();
    let d_state = solve_dense(a, b)?;
    let mut d = DistributionTable::zeros(&mdp.layout);
    for (s, a, _) in mdp.layout.pairs() {
        d.set(s, a, (d_state[s] * pi.get(s, a)).max(0.0));
    }
    let total = d.sum();
    if !(total > 0.0) {
        return Err(Error::Contract("occupancy has no mass on live states".into()));
    }
    for v in d.values_mut() {
        *v /= total;
    }
    Ok(d)
}

/// Recurring probability `ε_π = sup_{s,a} Σ_{t=1}^{horizon} γ^t ρ^π(s,a,t)`,
/// with `ρ^π(s,a,t)` the probability of first returning to `s` at time `t`
/// after taking `a` in `s`.
///
/// For each target state a backward recursion over the chain with `s`
/// absorbing computes `G_t(x) = Σ_{k≤t} γ^k Pr(first visit to s at k | x)`;
/// terminal states absorb without returning.
pub fn recurring_probability(mdp: &TabularMdp, pi: &PolicyTable, horizon: usize) -> Result<f64> {
    Ok(recurring_table(mdp, pi, horizon)?
        .values()
        .iter()
        .cloned()
        .fold(0.0, f64::max))
}

/// Per-pair `Σ_t γ^t ρ^π(s,a,t)`; its maximum is [`recurring_probability`].
pub fn recurring_table(mdp: &TabularMdp, pi: &PolicyTable, horizon: usize) -> Result<DistributionTable> {
    pi.ensure_layout(&mdp.layout)?;
    let n = mdp.n_states();
    let gamma = mdp.gamma;
    let p = mdp.policy_state_matrix(pi)?;
    let mut sparse: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for s in 0..n {
        for t in 0..n {
            let v = p[s * n + t];
            if v > 0.0 {
                sparse[s].push((t, v));
            }
        }
    }
    let mut out = DistributionTable::zeros(&mdp.layout);
    let mut g = vec![0.0; n];
    let mut next = vec![0.0; n];
    for target in 0..n {
        if mdp.terminal[target] {
            continue;
        }
        // g(x) for x ≠ target: discounted probability of first reaching
        // `target` from x within the horizon (counting steps from x).
        g.iter_mut().for_each(|v| *v = 0.0);
        for _ in 1..horizon {
            let mut change: f64 = 0.0;
            for x in 0..n {
                if x == target || mdp.terminal[x] {
                    next[x] = 0.0;
                    continue;
                }
                let mut acc = 0.0;
                for &(y, pxy) in &sparse[x] {
                    acc += pxy * if y == target { 1.0 } else { g[y] };
                }
                next[x] = gamma * acc;
                change = change.max((next[x] - g[x]).abs());
            }
            core::mem::swap(&mut g, &mut next);
            if change < 1e-17 {
                break;
            }
        }
        for idx in mdp.layout.range(target) {
            let mut acc = 0.0;
            for &(y, pr) in &mdp.transitions[idx] {
                if y == target {
                    acc += pr;
                } else if !mdp.terminal[y] && horizon > 1 {
                    acc += pr * g[y];
                }
            }
            out.values_mut()[idx] = (gamma * acc).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Distribution of the distance to end `h` of `(s, a)` when actions after the
/// first follow `pi`: entry `n` is `Pr(h = n)` for `n ≤ max_h`; the second
/// value is the mass still alive after `max_h` steps.
pub fn distance_to_end_pmf(
    mdp: &TabularMdp,
    pi: &PolicyTable,
    s: usize,
    a: usize,
    max_h: usize,
) -> Result<(Vec<f64>, f64)> {
    pi.ensure_layout(&mdp.layout)?;
    let n = mdp.n_states();
    let mut pmf = Vec::with_capacity(max_h + 1);
    let mut alive = vec![0.0; n];
    let mut ended = 0.0;
    for &(next, p) in mdp.outcomes(s, a) {
        if mdp.terminal[next] {
            ended += p;
        } else {
            alive[next] += p;
        }
    }
    pmf.push(ended);
    let mut buf = vec![0.0; n];
    for _ in 1..=max_h {
        buf.iter_mut().for_each(|v| *v = 0.0);
        let mut ended = 0.0;
        for x in 0..n {
            if alive[x] == 0.0 {
                continue;
            }
            for (idx, &pa) in mdp.layout.range(x).zip(pi.row(x)) {
                if pa == 0.0 {
                    continue;
                }
                for &(y, p) in &mdp.transitions[idx] {
                    let m = alive[x] * pa * p;
                    if mdp.terminal[y] {
                        ended += m;
                    } else {
                        buf[y] += m;
                    }
                }
            }
        }
        pmf.push(ended);
        core::mem::swap(&mut alive, &mut buf);
    }
    let tail = alive.iter().sum();
    Ok((pmf, tail))
}

/// Expected return of the greedy policy of `q`.
pub fn greedy_return(mdp: &TabularMdp, q: &QTable) -> Result<f64> {
    expected_return(mdp, &greedy_policy(q))
}

/// True when the greedy policy of `q` picks an optimal action at every
/// state reachable under that greedy policy.
pub fn greedy_is_optimal(mdp: &TabularMdp, q: &QTable, q_star: &QTable, tol: f64) -> Result<bool> {
    let pi = greedy_policy(q);
    Ok((expected_return(mdp, &pi)? - optimal_return(mdp, q_star)).abs() <= tol)
}

/// Index of the best action in a slice of values; lowest index on ties.
pub fn best_action(values: &[f64]) -> Option<usize> {
    argmax(values)
}
