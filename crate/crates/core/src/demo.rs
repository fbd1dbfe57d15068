//! Demonstration mixtures with graded optimality and the ranked subset used
//! as evaluation data.

use std::fmt::Write as _;

use rand::seq::index;

use crate::error::{CailError, Result};
use crate::mdp::{soft_value_iteration, PolicyTable, TabularMdp};
use crate::rng::{derive_seed, sample_categorical, seeded};

const SOFT_VI_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateAction {
    pub state: usize,
    pub action: usize,
}

impl StateAction {
    pub fn new(state: usize, action: usize) -> Self {
        Self { state, action }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<StateAction>,
    /// Index of the behavior policy that generated the trajectory.
    pub source_level: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Back-reference from a flat pair slot to its trajectory step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSlot {
    pub trajectory: usize,
    pub step: usize,
}

/// The demonstration corpus and a flat index over all of its steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    trajectories: Vec<Trajectory>,
    pair_index: Vec<PairSlot>,
}

impl DemoSet {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        if let Some(i) = trajectories.iter().position(Trajectory::is_empty) {
            return Err(CailError::arg(format!("trajectory {i} is empty")));
        }
        let pair_index = trajectories
            .iter()
            .enumerate()
            .flat_map(|(t, traj)| (0..traj.len()).map(move |step| PairSlot { trajectory: t, step }))
            .collect();
        Ok(Self {
            trajectories,
            pair_index,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn pair_index(&self) -> &[PairSlot] {
        &self.pair_index
    }

    pub fn n_pairs(&self) -> usize {
        self.pair_index.len()
    }

    pub fn pair(&self, slot: usize) -> StateAction {
        let PairSlot { trajectory, step } = self.pair_index[slot];
        self.trajectories[trajectory].steps[step]
    }

    pub fn slot_level(&self, slot: usize) -> usize {
        self.trajectories[self.pair_index[slot].trajectory].source_level
    }

    /// One past the largest source level present.
    pub fn n_levels(&self) -> usize {
        self.trajectories.iter().map(|t| t.source_level + 1).max().unwrap_or(0)
    }

    /// Checks every step against the MDP's state and action counts.
    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        for traj in &self.trajectories {
            for sa in &traj.steps {
                if sa.state >= mdp.n_states() {
                    return Err(CailError::IndexOutOfRange {
                        what: "state",
                        index: sa.state,
                        bound: mdp.n_states(),
                    });
                }
                if sa.action >= mdp.n_actions() {
                    return Err(CailError::IndexOutOfRange {
                        what: "action",
                        index: sa.action,
                        bound: mdp.n_actions(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Line-oriented text form, one trajectory per record:
    /// `level=<int> return=<real> steps=(s,a) (s,a) ...`.
    pub fn to_text(&self, mdp: &TabularMdp) -> String {
        let mut out = String::from("# cail-demos v1\n");
        for traj in &self.trajectories {
            write!(out, "level={} return={} steps=", traj.source_level, trajectory_return(mdp, traj)).unwrap();
            let steps: Vec<String> = traj.steps.iter().map(|sa| format!("({},{})", sa.state, sa.action)).collect();
            out.push_str(&steps.join(" "));
            out.push('\n');
        }
        out
    }

    /// Inverse of [`DemoSet::to_text`]; the stored returns are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut trajectories = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| CailError::Parse(format!("demo line {}: {msg}", lineno + 1));
            let rest = line.strip_prefix("level=").ok_or_else(|| bad("missing level"))?;
            let (level, rest) = rest.split_once(' ').ok_or_else(|| bad("truncated record"))?;
            let level: usize = level.parse().map_err(|_| bad("bad level"))?;
            let (_, steps) = rest.split_once("steps=").ok_or_else(|| bad("missing steps"))?;
            let steps = steps
                .split_whitespace()
                .map(|tok| {
                    let inner = tok
                        .strip_prefix('(')
                        .and_then(|t| t.strip_suffix(')'))
                        .ok_or_else(|| bad("malformed pair"))?;
                    let (s, a) = inner.split_once(',').ok_or_else(|| bad("malformed pair"))?;
                    Ok(StateAction::new(
                        s.parse().map_err(|_| bad("bad state"))?,
                        a.parse().map_err(|_| bad("bad action"))?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            trajectories.push(Trajectory {
                steps,
                source_level: level,
            });
        }
        Self::new(trajectories)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedEntry {
    pub trajectory: usize,
    pub true_return: f64,
}

/// Ranked evaluation subset, best trajectory first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingDataset {
    pub entries: Vec<RankedEntry>,
    pub fraction: f64,
}

impl RankingDataset {
    /// Sorts by return descending, ties by trajectory index ascending.
    pub fn from_entries(mut entries: Vec<RankedEntry>, fraction: f64) -> Result<Self> {
        if entries.len() < 2 {
            return Err(CailError::arg("a ranking needs at least two trajectories"));
        }
        entries.sort_by(|a, b| {
            b.true_return
                .total_cmp(&a.true_return)
                .then(a.trajectory.cmp(&b.trajectory))
        });
        Ok(Self { entries, fraction })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `+1` when entry `i` is strictly better than entry `j`, else `-1`.
    pub fn indicator(&self, i: usize, j: usize) -> f64 {
        if self.entries[i].true_return > self.entries[j].true_return {
            1.0
        } else {
            -1.0
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# cail-ranking v1\n");
        for (rank, e) in self.entries.iter().enumerate() {
            writeln!(out, "rank={rank} trajectory={} return={}", e.trajectory, e.true_return).unwrap();
        }
        out
    }
}

/// How the ranked subset is drawn from the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankingSampling {
    #[default]
    Uniform,
    /// Round-robin over source levels, uniform within each level.
    Stratified,
}

/// One soft-optimal policy per temperature, in input order.
pub fn make_behavior_policies(mdp: &TabularMdp, temperatures: &[f64]) -> Result<Vec<PolicyTable>> {
    temperatures
        .iter()
        .map(|&t| {
            if !(t > 0.0) {
                return Err(CailError::arg(format!("temperature {t} must be positive")));
            }
            soft_value_iteration(mdp, None, t, SOFT_VI_TOL)
        })
        .collect()
}

/// Soft-optimal policy for the negated reward: the demonstrator that actively
/// works against the task.
pub fn make_adversarial_policy(mdp: &TabularMdp, temperature: f64) -> Result<PolicyTable> {
    let negated: Vec<f64> = mdp.rewards().iter().map(|r| -r).collect();
    soft_value_iteration(mdp, Some(&negated), temperature, SOFT_VI_TOL)
}

/// Rollouts from `ρ0`, truncated at `horizon` or on entering an absorbing
/// state.
pub fn sample_trajectories(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    count: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if count == 0 || horizon == 0 {
        return Err(CailError::arg("count and horizon must be at least 1"));
    }
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut s = sample_categorical(mdp.initial(), &mut rng);
        let mut steps = Vec::with_capacity(horizon);
        while steps.len() < horizon && !mdp.is_absorbing(s) {
            let a = sample_categorical(policy.row(s), &mut rng);
            steps.push(StateAction::new(s, a));
            s = sample_categorical(mdp.next(s, a), &mut rng);
        }
        if steps.is_empty() {
            // Started inside an absorbing state; record the single step so
            // the trajectory is non-empty.
            let a = sample_categorical(policy.row(s), &mut rng);
            steps.push(StateAction::new(s, a));
        }
        out.push(Trajectory {
            steps,
            source_level: 0,
        });
    }
    Ok(out)
}

/// Discounted true-reward sum along one trajectory.
pub fn trajectory_return(mdp: &TabularMdp, traj: &Trajectory) -> f64 {
    let gamma = mdp.discount();
    let mut weight = 1.0;
    let mut total = 0.0;
    for sa in &traj.steps {
        total += weight * mdp.reward(sa.state, sa.action);
        weight *= gamma;
    }
    total
}

/// Per-policy counts: `floor(p · total)` each, leftover to the first policy.
pub fn mixture_counts(proportions: &[f64], total: usize) -> Result<Vec<usize>> {
    if proportions.is_empty() {
        return Err(CailError::arg("mixture needs at least one policy"));
    }
    if let Some(p) = proportions.iter().find(|p| !(**p >= 0.0)) {
        return Err(CailError::arg(format!("negative mixture proportion {p}")));
    }
    let sum: f64 = proportions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CailError::arg(format!("mixture proportions sum to {sum}")));
    }
    let positive = proportions.iter().filter(|p| **p > 0.0).count();
    if total < positive {
        return Err(CailError::arg(format!(
            "total {total} is smaller than the number of active policies {positive}"
        )));
    }
    let mut counts: Vec<usize> = proportions
        .iter()
        .map(|p| (p * total as f64 + 1e-9).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    counts[0] += total - assigned;
    Ok(counts)
}

pub fn build_mixture(
    mdp: &TabularMdp,
    policies: &[PolicyTable],
    proportions: &[f64],
    total: usize,
    horizon: usize,
    seed: u64,
) -> Result<DemoSet> {
    if policies.len() != proportions.len() {
        return Err(CailError::arg("one proportion per policy required"));
    }
    let counts = mixture_counts(proportions, total)?;
    let mut trajectories = Vec::with_capacity(total);
    for (level, (policy, &count)) in policies.iter().zip(&counts).enumerate() {
        if count == 0 {
            continue;
        }
        let sampled = sample_trajectories(mdp, policy, count, horizon, derive_seed(seed, level as u64))?;
        trajectories.extend(sampled.into_iter().map(|t| Trajectory {
            source_level: level,
            ..t
        }));
    }
    DemoSet::new(trajectories)
}

/// `⌈fraction · |Ξ|⌉` trajectories drawn without replacement.
pub fn build_ranking_subset(demos: &DemoSet, mdp: &TabularMdp, fraction: f64, seed: u64) -> Result<RankingDataset> {
    build_ranking_subset_with(demos, mdp, fraction, seed, RankingSampling::Uniform)
}

pub fn build_ranking_subset_with(
    demos: &DemoSet,
    mdp: &TabularMdp,
    fraction: f64,
    seed: u64,
    sampling: RankingSampling,
) -> Result<RankingDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CailError::arg(format!("ranking fraction {fraction} outside (0, 1]")));
    }
    let n = demos.trajectories().len();
    let size = ((fraction * n as f64) - 1e-9).ceil() as usize;
    if size < 2 {
        return Err(CailError::arg(format!("ranking subset of size {size} cannot be ranked")));
    }
    let mut rng = seeded(seed);
    let chosen: Vec<usize> = match sampling {
        RankingSampling::Uniform => index::sample(&mut rng, n, size).into_vec(),
        RankingSampling::Stratified => {
            let mut by_level: Vec<Vec<usize>> = vec![Vec::new(); demos.n_levels()];
            for (i, t) in demos.trajectories().iter().enumerate() {
                by_level[t.source_level].push(i);
            }
            for bucket in by_level.iter_mut() {
                let order = index::sample(&mut rng, bucket.len(), bucket.len()).into_vec();
                *bucket = order.into_iter().map(|k| bucket[k]).collect();
            }
            let mut chosen = Vec::with_capacity(size);
            let mut round = 0;
            while chosen.len() < size {
                for bucket in &by_level {
                    if chosen.len() < size && round < bucket.len() {
                        chosen.push(bucket[round]);
                    }
                }
                round += 1;
            }
            chosen
        }
    };
    let entries = chosen
        .into_iter()
        .map(|i| RankedEntry {
            trajectory: i,
            true_return: trajectory_return(mdp, &demos.trajectories()[i]),
        })
        .collect();
    RankingDataset::from_entries(entries, fraction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_gridworld, GridSpec, RIGHT};

    fn corridor() -> TabularMdp {
        build_gridworld(&GridSpec {
            rows: 1,
            cols: 2,
            goal: (0, 1),
            slip: 0.0,
            ..GridSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn deterministic_world_gives_identical_rollouts() {
        let mdp = corridor();
        let pi = PolicyTable::deterministic(4, &[RIGHT, RIGHT, RIGHT]);
        let trajs = sample_trajectories(&mdp, &pi, 20, 10, 9).unwrap();
        assert!(trajs.iter().all(|t| t.steps == trajs[0].steps));
        assert_eq!(trajs[0].steps, vec![StateAction::new(0, RIGHT), StateAction::new(1, RIGHT)]);
    }

    #[test]
    fn same_seed_same_rollouts() {
        let mdp = build_gridworld(&GridSpec::default()).unwrap();
        let pi = PolicyTable::uniform(mdp.n_states(), mdp.n_actions());
        let a = sample_trajectories(&mdp, &pi, 100, 50, 42).unwrap();
        let b = sample_trajectories(&mdp, &pi, 100, 50, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trajectory_return_closed_form() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![1.0], vec![1.0], 0.5).unwrap();
        let t = Trajectory {
            steps: vec![StateAction::new(0, 0); 3],
            source_level: 0,
        };
        assert_eq!(trajectory_return(&mdp, &t), 1.75);
        let zero = mdp.with_reward(vec![0.0]).unwrap();
        assert_eq!(trajectory_return(&zero, &t), 0.0);
    }

    #[test]
    fn mixture_count_rules() {
        assert_eq!(mixture_counts(&[0.2; 5], 200).unwrap(), vec![40; 5]);
        assert_eq!(mixture_counts(&[0.5, 0.5], 3).unwrap(), vec![2, 1]);
        assert_eq!(mixture_counts(&[1.0], 7).unwrap(), vec![7]);
        assert!(mixture_counts(&[1.5, -0.5], 10).is_err());
        assert!(mixture_counts(&[0.5, 0.4], 10).is_err());
        assert!(mixture_counts(&[0.5, 0.5], 1).is_err());
    }

    #[test]
    fn mixture_tags_levels() {
        let mdp = build_gridworld(&GridSpec::default()).unwrap();
        let policies = make_behavior_policies(&mdp, &[0.01, 1e6]).unwrap();
        let demos = build_mixture(&mdp, &policies, &[0.5, 0.5], 10, 20, 1).unwrap();
        assert_eq!(demos.trajectories().len(), 10);
        assert_eq!(demos.trajectories().iter().filter(|t| t.source_level == 1).count(), 5);
        let slots = demos.pair_index().len();
        assert_eq!(slots, demos.trajectories().iter().map(Trajectory::len).sum::<usize>());
    }

    #[test]
    fn ranking_subset_sizes_and_order() {
        let mdp = build_gridworld(&GridSpec::default()).unwrap();
        let policies = make_behavior_policies(&mdp, &[0.01, 0.05, 1e6]).unwrap();
        let demos = build_mixture(&mdp, &policies, &[0.4, 0.3, 0.3], 200, 50, 3).unwrap();
        let ranking = build_ranking_subset(&demos, &mdp, 0.05, 11).unwrap();
        assert_eq!(ranking.len(), 10);
        for w in ranking.entries.windows(2) {
            assert!(w[0].true_return >= w[1].true_return);
        }
        let full = build_ranking_subset(&demos, &mdp, 1.0, 11).unwrap();
        assert_eq!(full.len(), 200);
        let strat = build_ranking_subset_with(&demos, &mdp, 0.05, 11, RankingSampling::Stratified).unwrap();
        let mut per_level = [0; 3];
        for e in &strat.entries {
            per_level[demos.trajectories()[e.trajectory].source_level] += 1;
        }
        assert_eq!(per_level, [4, 3, 3]);
        assert!(build_ranking_subset(&demos, &mdp, 0.0, 1).is_err());
        assert!(build_ranking_subset(&demos, &mdp, 0.001, 1).is_err());
    }

    #[test]
    fn ties_break_by_index() {
        let entries = vec![
            RankedEntry { trajectory: 5, true_return: 1.0 },
            RankedEntry { trajectory: 2, true_return: 1.0 },
            RankedEntry { trajectory: 9, true_return: 2.0 },
        ];
        let r = RankingDataset::from_entries(entries, 1.0).unwrap();
        let order: Vec<usize> = r.entries.iter().map(|e| e.trajectory).collect();
        assert_eq!(order, vec![9, 2, 5]);
        assert_eq!(r.indicator(0, 1), 1.0);
        assert_eq!(r.indicator(1, 2), -1.0);
    }

    #[test]
    fn text_round_trip() {
        let mdp = build_gridworld(&GridSpec::default()).unwrap();
        let policies = make_behavior_policies(&mdp, &[0.05]).unwrap();
        let demos = build_mixture(&mdp, &policies, &[1.0], 5, 30, 2).unwrap();
        let back = DemoSet::from_text(&demos.to_text(&mdp)).unwrap();
        assert_eq!(back, demos);
        assert!(DemoSet::from_text("level=0 return=1 steps=(1;2)").is_err());
    }
}
