//! Outer evaluation loss: pairwise ranking of learned trajectory returns with
//! a margin-zero hinge smoothed inside an `ε` band.

use crate::demo::{DemoSet, RankingDataset, StateAction, Trajectory};
use crate::error::{CailError, Result};
use crate::net::{GradVector, ParamVector};

pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingLossConfig {
    pub epsilon: f64,
    pub gamma: f64,
}

impl RankingLossConfig {
    pub fn new(epsilon: f64, gamma: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(CailError::arg(format!("ranking epsilon {epsilon} must be positive")));
        }
        Ok(Self { epsilon, gamma })
    }
}

/// `η'_ξ = Σ_t γ^t R'(s_t, a_t)`.
pub fn learned_return(params: &ParamVector, traj: &Trajectory, gamma: f64) -> f64 {
    let mut weight = 1.0;
    let mut total = 0.0;
    for sa in &traj.steps {
        total += weight * params.logit(*sa);
        weight *= gamma;
    }
    total
}

/// Value of the pairwise loss at `z = η'_i - η'_j`.
///
/// Outside the band it is the hinge `max(0, -I·z)`; inside, the quadratic
/// `max(0, (I·z - ε)² / 4ε)`, which meets the hinge with matching value and
/// slope at `z = ±ε`.
pub fn rk(learned_i: f64, learned_j: f64, indicator: f64, cfg: &RankingLossConfig) -> f64 {
    rk_z(learned_i - learned_j, indicator, cfg.epsilon)
}

pub(crate) fn rk_z(z: f64, indicator: f64, epsilon: f64) -> f64 {
    if z.abs() > epsilon {
        rk_linear_branch(z, indicator)
    } else {
        rk_quadratic_branch(z, indicator, epsilon)
    }
}

pub(crate) fn rk_linear_branch(z: f64, indicator: f64) -> f64 {
    (-indicator * z).max(0.0)
}

pub(crate) fn rk_quadratic_branch(z: f64, indicator: f64, epsilon: f64) -> f64 {
    let u = indicator * z - epsilon;
    // (u / 4ε) · u keeps z = 0 exactly at ε/4.
    ((u / (4.0 * epsilon)) * u).max(0.0)
}

/// `∂ rk / ∂z`.
pub fn rk_slope(z: f64, indicator: f64, epsilon: f64) -> f64 {
    if z.abs() > epsilon {
        if -indicator * z > 0.0 {
            -indicator
        } else {
            0.0
        }
    } else {
        (indicator * z - epsilon) * indicator / (2.0 * epsilon)
    }
}

fn check_ranking(ranking: &RankingDataset) -> Result<()> {
    if ranking.len() < 2 {
        return Err(CailError::arg("outer loss needs at least two ranked trajectories"));
    }
    Ok(())
}

/// `Σ_i Σ_{j>i} rk(η'_i, η'_j, I[η_i > η_j])` over the ranked subset.
pub fn outer_loss(params: &ParamVector, demos: &DemoSet, ranking: &RankingDataset, cfg: &RankingLossConfig) -> Result<f64> {
    check_ranking(ranking)?;
    let learned = ranked_learned_returns(params, demos, ranking, cfg.gamma);
    let mut total = 0.0;
    for i in 0..learned.len() {
        for j in i + 1..learned.len() {
            total += rk(learned[i], learned[j], ranking.indicator(i, j), cfg);
        }
    }
    Ok(total)
}

/// Learned returns of the ranked trajectories, best-ranked first. Logits are
/// evaluated once per distinct `(s, a)` and looked up along each trajectory.
pub fn ranked_learned_returns(params: &ParamVector, demos: &DemoSet, ranking: &RankingDataset, gamma: f64) -> Vec<f64> {
    let layout = params.layout();
    let na = layout.n_actions;
    let mut used = vec![false; layout.n_states * na];
    for e in &ranking.entries {
        for sa in &demos.trajectories()[e.trajectory].steps {
            used[sa.state * na + sa.action] = true;
        }
    }
    let pairs: Vec<StateAction> = (0..used.len())
        .filter(|&i| used[i])
        .map(|i| StateAction::new(i / na, i % na))
        .collect();
    let mut table = vec![0.0; used.len()];
    for (sa, f) in pairs.iter().zip(params.logits(&pairs)) {
        table[sa.state * na + sa.action] = f;
    }
    ranking
        .entries
        .iter()
        .map(|e| {
            let mut weight = 1.0;
            let mut total = 0.0;
            for sa in &demos.trajectories()[e.trajectory].steps {
                total += weight * table[sa.state * na + sa.action];
                weight *= gamma;
            }
            total
        })
        .collect()
}

/// Exact `∇_θ` of [`outer_loss`], chained through the learned returns into
/// per-`(s, a)` coefficients on `∇_θ f`.
pub fn outer_loss_grad_theta(
    params: &ParamVector,
    demos: &DemoSet,
    ranking: &RankingDataset,
    cfg: &RankingLossConfig,
) -> Result<GradVector> {
    check_ranking(ranking)?;
    let learned = ranked_learned_returns(params, demos, ranking, cfg.gamma);
    let m = learned.len();
    let mut d_learned = vec![0.0; m];
    for i in 0..m {
        for j in i + 1..m {
            let slope = rk_slope(learned[i] - learned[j], ranking.indicator(i, j), cfg.epsilon);
            d_learned[i] += slope;
            d_learned[j] -= slope;
        }
    }
    let layout = params.layout();
    let mut table = vec![0.0; layout.n_states * layout.n_actions];
    for (entry, dl) in ranking.entries.iter().zip(&d_learned) {
        if *dl == 0.0 {
            continue;
        }
        let mut weight = 1.0;
        for sa in &demos.trajectories()[entry.trajectory].steps {
            table[sa.state * layout.n_actions + sa.action] += dl * weight;
            weight *= cfg.gamma;
        }
    }
    Ok(params.grad_from_table(&table))
}
