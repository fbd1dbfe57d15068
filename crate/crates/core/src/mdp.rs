//! Finite MDPs, gridworld construction and exact dynamic programming.
//!
//! Episodic tasks are embedded as infinite-horizon discounted MDPs: a goal
//! cell hands out its reward once and then moves to a zero-reward absorbing
//! sink, so every return in the crate is the same discounted sum.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{CailError, Result};

const PROB_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 200_000;

/// Finite MDP with dense transition and reward tables.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `transition[(s * n_actions + a) * n_states + s']`
    transition: Vec<f64>,
    /// `reward[s * n_actions + a]`
    reward: Vec<f64>,
    initial: Vec<f64>,
    discount: f64,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        initial: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(CailError::InvalidMdp("empty state or action space".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(CailError::InvalidMdp(format!(
                "transition table has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(CailError::InvalidMdp("reward table has wrong shape".into()));
        }
        if initial.len() != n_states {
            return Err(CailError::InvalidMdp("initial distribution has wrong length".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(CailError::InvalidMdp(format!("discount {discount} outside [0, 1)")));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(CailError::InvalidMdp("non-finite reward".into()));
        }
        for (row_idx, row) in transition.chunks(n_states).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(CailError::InvalidMdp(format!(
                    "transition probability outside [0, 1] for (s, a) = ({}, {})",
                    row_idx / n_actions,
                    row_idx % n_actions
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_TOL {
                return Err(CailError::InvalidMdp(format!(
                    "transition row ({}, {}) sums to {total}",
                    row_idx / n_actions,
                    row_idx % n_actions
                )));
            }
        }
        if initial.iter().any(|p| !(0.0..=1.0).contains(p))
            || (initial.iter().sum::<f64>() - 1.0).abs() > PROB_TOL
        {
            return Err(CailError::InvalidMdp("initial distribution is not a distribution".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            initial,
            discount,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Next-state distribution for `(s, a)`.
    #[inline]
    pub fn next(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// A state is absorbing when every action loops back with certainty and
    /// pays nothing; trajectories are truncated on entry.
    pub fn is_absorbing(&self, s: usize) -> bool {
        (0..self.n_actions).all(|a| self.next(s, a)[s] == 1.0 && self.reward(s, a) == 0.0)
    }

    /// Same dynamics with a different reward table.
    pub fn with_reward(&self, reward: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            reward,
            self.initial.clone(),
            self.discount,
        )
    }

    fn check_policy(&self, policy: &PolicyTable) -> Result<()> {
        if policy.n_states != self.n_states || policy.n_actions != self.n_actions {
            return Err(CailError::arg("policy shape does not match MDP"));
        }
        Ok(())
    }
}

/// Stochastic policy `pi[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(CailError::arg("policy table has wrong shape"));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(CailError::arg(format!("negative or non-finite probability in row {s}")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_TOL {
                return Err(CailError::arg(format!("policy row {s} sums to {total}")));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Deterministic policy from one action per state.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        Self {
            n_states: actions.len(),
            n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Convex combination `(1 - weight) * self + weight * other`, rows
    /// renormalized.
    pub fn mix(&self, other: &PolicyTable, weight: f64) -> PolicyTable {
        if weight == 0.0 {
            return self.clone();
        }
        let mut probs: Vec<f64> = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| (1.0 - weight) * p + weight * q)
            .collect();
        for row in probs.chunks_mut(self.n_actions) {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
        }
        PolicyTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            probs,
        }
    }
}

/// Discounted state-action visitation `rho` and its normalization `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub rho: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl OccupancyTable {
    pub fn from_rho(n_states: usize, n_actions: usize, rho: Vec<f64>) -> Self {
        let total: f64 = rho.iter().sum();
        let normalized = rho.iter().map(|r| r / total).collect();
        Self {
            n_states,
            n_actions,
            rho,
            normalized,
        }
    }

    #[inline]
    pub fn rho(&self, s: usize, a: usize) -> f64 {
        self.rho[s * self.n_actions + a]
    }
}

/// Grid cell as `(row, col)`.
pub type Cell = (usize, usize);

pub const ACTION_NAMES: [&str; 4] = ["up", "right", "down", "left"];
pub const UP: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub obstacles: Vec<Cell>,
    pub goal: Cell,
    pub start: Cell,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub obstacle_reward: f64,
    /// Probability that the intended move is replaced by a uniformly random one.
    pub slip: f64,
    pub discount: f64,
    /// When set, acting in the goal cell pays `goal_reward` and moves to an
    /// absorbing sink state (index `rows * cols`).
    pub absorbing_goal: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            rows: 5,
            cols: 5,
            obstacles: Vec::new(),
            goal: (4, 4),
            start: (0, 0),
            step_reward: -0.05,
            goal_reward: 1.0,
            obstacle_reward: -1.0,
            slip: 0.1,
            discount: 0.95,
            absorbing_goal: true,
        }
    }
}

impl GridSpec {
    pub fn cell_index(&self, cell: Cell) -> usize {
        cell.0 * self.cols + cell.1
    }

    pub fn n_states(&self) -> usize {
        self.rows * self.cols + usize::from(self.absorbing_goal)
    }

    fn step(&self, (r, c): Cell, action: usize) -> Cell {
        match action {
            UP if r > 0 => (r - 1, c),
            RIGHT if c + 1 < self.cols => (r, c + 1),
            DOWN if r + 1 < self.rows => (r + 1, c),
            LEFT if c > 0 => (r, c - 1),
            _ => (r, c),
        }
    }
}

/// Four-action gridworld. Obstacle cells are enterable but acting from them
/// pays `obstacle_reward`; moves off the grid leave the agent in place.
pub fn build_gridworld(spec: &GridSpec) -> Result<TabularMdp> {
    if spec.rows * spec.cols < 2 || spec.rows == 0 || spec.cols == 0 {
        return Err(CailError::InvalidGrid(format!(
            "grid {}x{} has fewer than two cells",
            spec.rows, spec.cols
        )));
    }
    let inside = |(r, c): Cell| r < spec.rows && c < spec.cols;
    if !inside(spec.goal) {
        return Err(CailError::InvalidGrid(format!("goal {:?} outside grid", spec.goal)));
    }
    if !inside(spec.start) {
        return Err(CailError::InvalidGrid(format!("start {:?} outside grid", spec.start)));
    }
    if let Some(bad) = spec.obstacles.iter().find(|c| !inside(**c)) {
        return Err(CailError::InvalidGrid(format!("obstacle {bad:?} outside grid")));
    }
    if spec.obstacles.contains(&spec.goal) {
        return Err(CailError::InvalidGrid("goal cell is an obstacle".into()));
    }
    if !(0.0..=1.0).contains(&spec.slip) {
        return Err(CailError::InvalidGrid(format!("slip probability {} outside [0, 1]", spec.slip)));
    }
    for (name, v) in [
        ("step_reward", spec.step_reward),
        ("goal_reward", spec.goal_reward),
        ("obstacle_reward", spec.obstacle_reward),
    ] {
        if !v.is_finite() {
            return Err(CailError::InvalidGrid(format!("{name} is not finite")));
        }
    }

    let n_cells = spec.rows * spec.cols;
    let n_states = spec.n_states();
    let n_actions = ACTION_NAMES.len();
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward = vec![0.0; n_states * n_actions];
    let goal = spec.cell_index(spec.goal);

    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let s = spec.cell_index((r, c));
            let cell_reward = if s == goal {
                spec.goal_reward
            } else if spec.obstacles.contains(&(r, c)) {
                spec.obstacle_reward
            } else {
                spec.step_reward
            };
            for a in 0..n_actions {
                reward[s * n_actions + a] = cell_reward;
                let row = &mut transition[(s * n_actions + a) * n_states..][..n_states];
                if spec.absorbing_goal && s == goal {
                    row[n_cells] = 1.0;
                    continue;
                }
                for actual in 0..n_actions {
                    let mut p = spec.slip / n_actions as f64;
                    if actual == a {
                        p += 1.0 - spec.slip;
                    }
                    row[spec.cell_index(spec.step((r, c), actual))] += p;
                }
            }
        }
    }
    if spec.absorbing_goal {
        for a in 0..n_actions {
            transition[(n_cells * n_actions + a) * n_states + n_cells] = 1.0;
        }
    }
    let mut initial = vec![0.0; n_states];
    initial[spec.cell_index(spec.start)] = 1.0;
    TabularMdp::new(n_states, n_actions, transition, reward, initial, spec.discount)
}

fn bellman_q(mdp: &TabularMdp, reward: &[f64], values: &[f64], s: usize, a: usize) -> f64 {
    let expected: f64 = mdp.next(s, a).iter().zip(values).map(|(p, v)| p * v).sum();
    reward[s * mdp.n_actions + a] + mdp.discount * expected
}

/// Optimal values and the greedy deterministic policy. Ties go to the lowest
/// action index.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<(Vec<f64>, PolicyTable)> {
    if !(tol > 0.0) {
        return Err(CailError::arg("value_iteration: tol must be positive"));
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut values = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    for _ in 0..MAX_SWEEPS {
        for (s, v) in next.iter_mut().enumerate() {
            *v = (0..na)
                .map(|a| bellman_q(mdp, &mdp.reward, &values, s, a))
                .fold(f64::NEG_INFINITY, f64::max);
        }
        let delta = max_abs_diff(&values, &next);
        std::mem::swap(&mut values, &mut next);
        if delta <= tol {
            break;
        }
    }
    let greedy: Vec<usize> = (0..ns)
        .map(|s| {
            let mut best = 0;
            let mut best_q = f64::NEG_INFINITY;
            for a in 0..na {
                let q = bellman_q(mdp, &mdp.reward, &values, s, a);
                if q > best_q {
                    best_q = q;
                    best = a;
                }
            }
            best
        })
        .collect();
    Ok((values, PolicyTable::deterministic(na, &greedy)))
}

/// Boltzmann policy `pi(a|s) ∝ exp(Q_soft(s, a) / temperature)` from
/// entropy-regularized value iteration.
///
/// Iteration stops once `‖V_{k+1} - V_k‖∞ ≤ tol · (1 + ‖V‖∞)`; the relative
/// form keeps very high temperatures (soft values of order `τ / (1 - γ)`)
/// from stalling on round-off.
pub fn soft_value_iteration(
    mdp: &TabularMdp,
    reward_override: Option<&[f64]>,
    temperature: f64,
    tol: f64,
) -> Result<PolicyTable> {
    if !(temperature > 0.0) || !(tol > 0.0) {
        return Err(CailError::arg("soft_value_iteration: temperature and tol must be positive"));
    }
    let reward = match reward_override {
        Some(r) if r.len() != mdp.reward.len() => {
            return Err(CailError::arg("reward override has wrong shape"))
        }
        Some(r) => r,
        None => &mdp.reward[..],
    };
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut values = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut q = vec![0.0; na];
    for _ in 0..MAX_SWEEPS {
        for (s, v) in next.iter_mut().enumerate() {
            for (a, qa) in q.iter_mut().enumerate() {
                *qa = bellman_q(mdp, reward, &values, s, a);
            }
            *v = temperature * log_sum_exp(&q, temperature);
        }
        let delta = max_abs_diff(&values, &next);
        let scale = 1.0 + next.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        std::mem::swap(&mut values, &mut next);
        if delta <= tol * scale {
            break;
        }
    }
    let mut probs = vec![0.0; ns * na];
    for s in 0..ns {
        for (a, qa) in q.iter_mut().enumerate() {
            *qa = bellman_q(mdp, reward, &values, s, a);
        }
        let max = q.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let row = &mut probs[s * na..(s + 1) * na];
        for (p, qa) in row.iter_mut().zip(&q) {
            *p = ((qa - max) / temperature).exp();
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    Ok(PolicyTable {
        n_states: ns,
        n_actions: na,
        probs,
    })
}

/// `log Σ exp(q / t)`, shifted by the max for stability.
fn log_sum_exp(q: &[f64], t: f64) -> f64 {
    let max = q.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let sum: f64 = q.iter().map(|v| ((v - max) / t).exp()).sum();
    max / t + sum.ln()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Discounted occupancy by fixed-point iteration of the state-visitation
/// recursion `d = ρ0 + γ P_πᵀ d`.
pub fn occupancy_measure(mdp: &TabularMdp, policy: &PolicyTable, tol: f64) -> Result<OccupancyTable> {
    mdp.check_policy(policy)?;
    if !(tol > 0.0) {
        return Err(CailError::arg("occupancy_measure: tol must be positive"));
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut visits = mdp.initial.clone();
    let mut next = vec![0.0; ns];
    for _ in 0..MAX_SWEEPS {
        next.copy_from_slice(&mdp.initial);
        for s in 0..ns {
            if visits[s] == 0.0 {
                continue;
            }
            for a in 0..na {
                let mass = mdp.discount * visits[s] * policy.prob(s, a);
                if mass == 0.0 {
                    continue;
                }
                for (n, p) in next.iter_mut().zip(mdp.next(s, a)) {
                    *n += mass * p;
                }
            }
        }
        let delta = max_abs_diff(&visits, &next);
        std::mem::swap(&mut visits, &mut next);
        if delta <= tol {
            break;
        }
    }
    let rho = (0..ns * na).map(|i| visits[i / na] * policy.probs[i]).collect();
    Ok(OccupancyTable::from_rho(ns, na, rho))
}

/// `V_π` from the linear system `(I - γ P_π) V = R_π`.
pub fn policy_value(mdp: &TabularMdp, policy: &PolicyTable) -> Result<Vec<f64>> {
    mdp.check_policy(policy)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut system = DMatrix::<f64>::identity(ns, ns);
    let mut rhs = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        for a in 0..na {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            rhs[s] += pa * mdp.reward(s, a);
            for (t, p) in mdp.next(s, a).iter().enumerate() {
                system[(s, t)] -= mdp.discount * pa * p;
            }
        }
    }
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| CailError::InvalidMdp("singular policy-evaluation system".into()))?;
    Ok(solution.iter().copied().collect())
}

/// Expected discounted return `η_π = ρ0ᵀ V_π`.
pub fn expected_return(mdp: &TabularMdp, policy: &PolicyTable) -> Result<f64> {
    let values = policy_value(mdp, policy)?;
    Ok(values.iter().zip(&mdp.initial).map(|(v, p)| v * p).sum())
}

/// Random dense MDP for property tests and oracle sweeps.
pub fn random_mdp<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, discount: f64) -> TabularMdp {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let row: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>().powi(3)).collect();
        let total: f64 = row.iter().sum();
        transition.extend(row.iter().map(|p| p / total));
    }
    let reward = (0..n_states * n_actions).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut initial: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>()).collect();
    let total: f64 = initial.iter().sum();
    initial.iter_mut().for_each(|p| *p /= total);
    TabularMdp::new(n_states, n_actions, transition, reward, initial, discount)
        .expect("random MDP satisfies invariants")
}

/// Random stochastic policy.
pub fn random_policy<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize) -> PolicyTable {
    let mut probs: Vec<f64> = (0..n_states * n_actions).map(|_| rng.gen::<f64>() + 1e-3).collect();
    for row in probs.chunks_mut(n_actions) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    PolicyTable {
        n_states,
        n_actions,
        probs,
    }
}
