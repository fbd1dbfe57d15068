//! Self-checks against the oracles, shared by the `check` and `oracle`
//! subcommands and the acceptance suite.

use std::fmt;

use rand::Rng;

use crate::airl::{disc_loss, disc_loss_grad, WeightedPair};
use crate::bilevel::{beta_grad, pseudo_update, run_airl, run_cail, Batches, BilevelConfig};
use crate::confidence::ConfidenceTable;
use crate::demo::{DemoSet, RankedEntry, RankingDataset, StateAction, Trajectory};
use crate::error::Result;
use crate::harness::{parse_config, serialize, ExperimentConfig};
use crate::mdp::{expected_return, occupancy_measure, random_mdp, random_policy, value_iteration, PolicyTable};
use crate::net::{relative_error, NetLayout, ParamVector};
use crate::oracle::{
    exact_occupancy, exact_policy_value, fd_param_grad, fd_pipeline_beta_grad, monte_carlo_return, occupancy_return,
    rk_seam_scan,
};
use crate::ranking::{outer_loss, outer_loss_grad_theta, RankingLossConfig, DEFAULT_EPSILON};
use crate::rng::seeded;

/// Finite-difference step for parameter-space checks.
pub const FD_STEP_PARAMS: f64 = 1e-5;
/// Finite-difference step for the confidence pipeline.
pub const FD_STEP_BETA: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn bound(name: &str, measured: f64, tol: f64) -> Self {
        Self::new(name, measured <= tol, format!("measured {measured:.3e}, tolerance {tol:.1e}"))
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// A small random learning problem: network, demonstrations, a full ranking
/// of them, and one batch.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub params: ParamVector,
    pub demos: DemoSet,
    pub ranking: RankingDataset,
    pub batches: Batches,
    pub beta: ConfidenceTable,
    pub cfg: RankingLossConfig,
}

impl RandomInstance {
    pub fn weighted_demo(&self) -> Vec<WeightedPair> {
        let w = self.beta.normalized_weights(&self.batches.demo_slots).unwrap();
        self.batches.demo_pairs.iter().copied().zip(w).collect()
    }
}

/// `n_traj` trajectories of length 1..=`max_len` on `n_states × n_actions`,
/// ranked by random distinct true returns.
pub fn random_instance(seed: u64, n_states: usize, n_actions: usize, hidden: [usize; 2], n_traj: usize, max_len: usize) -> RandomInstance {
    let mut rng = seeded(seed);
    let layout = NetLayout::new(n_states, n_actions, hidden);
    let params = ParamVector::init(layout, rng.gen());
    let trajectories: Vec<Trajectory> = (0..n_traj)
        .map(|k| Trajectory {
            steps: (0..rng.gen_range(1..=max_len))
                .map(|_| StateAction::new(rng.gen_range(0..n_states), rng.gen_range(0..n_actions)))
                .collect(),
            source_level: k % 2,
        })
        .collect();
    let demos = DemoSet::new(trajectories).unwrap();
    let entries = (0..n_traj)
        .map(|t| RankedEntry {
            trajectory: t,
            true_return: rng.gen_range(-1.0..1.0),
        })
        .collect();
    let ranking = RankingDataset::from_entries(entries, 1.0).unwrap();
    let batch = 2 * demos.n_pairs();
    let slots: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..demos.n_pairs())).collect();
    let generated = (0..batch)
        .map(|_| StateAction::new(rng.gen_range(0..n_states), rng.gen_range(0..n_actions)))
        .collect();
    let batches = Batches::new(&demos, slots, generated);
    let beta = ConfidenceTable::from_values((0..demos.n_pairs()).map(|_| rng.gen_range(0.2..2.0)).collect()).unwrap();
    RandomInstance {
        params,
        demos,
        ranking,
        batches,
        beta,
        cfg: RankingLossConfig::new(DEFAULT_EPSILON, 0.9).unwrap(),
    }
}

/// Largest relative L2 error of the analytic inner and outer gradients
/// against central differences over `draws` random instances.
pub fn gradient_fidelity(draws: usize) -> Result<(f64, f64)> {
    let mut worst = (0.0f64, 0.0f64);
    for d in 0..draws {
        let inst = random_instance(100 + d as u64, 5, 3, [8, 6], 6, 5);
        let demo = inst.weighted_demo();
        let gen = &inst.batches.generated;
        let analytic = disc_loss_grad(&inst.params, &demo, gen)?;
        let fd = fd_param_grad(|p| disc_loss(p, &demo, gen).unwrap(), &inst.params, FD_STEP_PARAMS);
        worst.0 = worst.0.max(relative_error(&analytic.values, &fd, 1e-12));
        let analytic = outer_loss_grad_theta(&inst.params, &inst.demos, &inst.ranking, &inst.cfg)?;
        let fd = fd_param_grad(
            |p| outer_loss(p, &inst.demos, &inst.ranking, &inst.cfg).unwrap(),
            &inst.params,
            FD_STEP_PARAMS,
        );
        worst.1 = worst.1.max(relative_error(&analytic.values, &fd, 1e-12));
    }
    Ok(worst)
}

/// Largest relative error of the closed-form confidence gradient against
/// differences through the whole pseudo-update pipeline. Instances have at
/// most 16 demonstrated pairs.
pub fn beta_pipeline_fidelity(draws: usize) -> Result<f64> {
    let mu = 0.5;
    let mut worst = 0.0f64;
    for d in 0..draws {
        let inst = random_instance(500 + d as u64, 5, 3, [8, 6], 4, 4);
        assert!(inst.demos.n_pairs() <= 16);
        let theta_prime = pseudo_update(&inst.params, &inst.beta, &inst.batches, mu)?;
        let analytic = beta_grad(
            &inst.params,
            &theta_prime,
            &inst.beta,
            &inst.batches,
            &inst.demos,
            &inst.ranking,
            mu,
            &inst.cfg,
        )?;
        let fd = fd_pipeline_beta_grad(
            &inst.params,
            &inst.beta,
            &inst.batches,
            &inst.demos,
            &inst.ranking,
            mu,
            &inst.cfg,
            FD_STEP_BETA,
        )?;
        worst = worst.max(relative_error(&analytic.values, &fd, 1e-12));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleAgreement {
    pub occupancy: f64,
    pub value: f64,
    pub occupancy_return: f64,
}

/// Fixed-point routines against direct linear solves on random MDPs with at
/// most 25 states.
pub fn oracle_agreement(instances: usize) -> Result<OracleAgreement> {
    let mut worst = OracleAgreement {
        occupancy: 0.0,
        value: 0.0,
        occupancy_return: 0.0,
    };
    let mut rng = seeded(9);
    for _ in 0..instances {
        let ns = rng.gen_range(2..=25);
        let na = rng.gen_range(1..=4);
        let gamma = rng.gen_range(0.5..0.97);
        let mdp = random_mdp(&mut rng, ns, na, gamma);
        let pi = random_policy(&mut rng, ns, na);
        let fixed = occupancy_measure(&mdp, &pi, 1e-12)?;
        let exact = exact_occupancy(&mdp, &pi)?;
        for (a, b) in fixed.rho.iter().zip(&exact.rho) {
            worst.occupancy = worst.occupancy.max((a - b).abs());
        }
        let (v_star, pi_star) = value_iteration(&mdp, 1e-10)?;
        let v_exact = exact_policy_value(&mdp, &pi_star)?;
        for (a, b) in v_star.iter().zip(&v_exact) {
            worst.value = worst.value.max((a - b).abs());
        }
        let eta = expected_return(&mdp, &pi)?;
        worst.occupancy_return = worst.occupancy_return.max((occupancy_return(&mdp, &exact) - eta).abs());
    }
    Ok(worst)
}

/// Exact returns against rollouts, in standard errors.
pub fn monte_carlo_agreement() -> Result<f64> {
    let mut rng = seeded(21);
    let mdp = random_mdp(&mut rng, 6, 2, 0.8);
    let pi = PolicyTable::uniform(6, 2);
    let (mean, se) = monte_carlo_return(&mdp, &pi, 20_000, 120, 5)?;
    Ok((mean - expected_return(&mdp, &pi)?).abs() / se)
}

/// `run_cail` with frozen unit confidences against `run_airl`, largest
/// parameter difference after a short run.
pub fn plumbing_equality() -> Result<f64> {
    let cfg = ExperimentConfig {
        total_trajectories: 20,
        ranking_fraction: 0.2,
        ..ExperimentConfig::default()
    };
    let data = crate::harness::prepare_seed(&cfg, 3)?;
    let train = BilevelConfig {
        total_steps: 20,
        use_schedule: false,
        alpha: 0.0,
        mu: 0.05,
        batch_size: 32,
        hidden: [16, 16],
        ..BilevelConfig::default()
    };
    let a = run_cail(&data.mdp, &data.demos, &data.ranking, &train, None)?;
    let b = run_airl(&data.mdp, &data.demos, &data.ranking, &train)?;
    Ok(a
        .disc
        .params
        .values()
        .iter()
        .zip(b.disc.params.values())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs())))
}

pub fn run_oracle_suite() -> Result<Vec<CheckOutcome>> {
    let (inner, outer) = gradient_fidelity(20)?;
    let agree = oracle_agreement(10)?;
    Ok(vec![
        CheckOutcome::bound("inner gradient vs finite differences (relative L2)", inner, 1e-4),
        CheckOutcome::bound("outer gradient vs finite differences (relative L2)", outer, 1e-4),
        CheckOutcome::bound("confidence gradient vs pipeline differences (relative L2)", beta_pipeline_fidelity(10)?, 1e-3),
        CheckOutcome::bound("occupancy fixed point vs linear solve (max abs)", agree.occupancy, 1e-5),
        CheckOutcome::bound("value iteration vs linear solve (max abs)", agree.value, 1e-5),
        CheckOutcome::bound("occupancy-weighted reward vs expected return", agree.occupancy_return, 1e-5),
        CheckOutcome::bound("expected return vs Monte Carlo (standard errors)", monte_carlo_agreement()?, 3.0),
    ])
}

/// Oracle suite plus the cheap structural invariants.
pub fn run_invariant_suite() -> Result<Vec<CheckOutcome>> {
    let mut out = run_oracle_suite()?;
    let seam = rk_seam_scan(DEFAULT_EPSILON, 10_000)?;
    out.push(CheckOutcome::bound("ranking loss value jump at seams", seam.max_value_jump, 1e-12));
    out.push(CheckOutcome::bound("ranking loss slope jump at seams", seam.max_derivative_jump, 1e-3));
    out.push(CheckOutcome::bound(
        "ranking loss curvature",
        seam.max_curvature,
        1.1 / (2.0 * DEFAULT_EPSILON),
    ));
    out.push(CheckOutcome::new(
        "ranking loss at z = 0 equals epsilon/4",
        seam.value_at_zero == [DEFAULT_EPSILON / 4.0; 2],
        format!("{:?}", seam.value_at_zero),
    ));
    out.push(CheckOutcome::bound(
        "frozen-confidence loop equals plain adversarial imitation",
        plumbing_equality()?,
        1e-12,
    ));
    let cfg = ExperimentConfig::default();
    out.push(CheckOutcome::new(
        "config round trip",
        parse_config(&serialize(&cfg)).ok().as_ref() == Some(&cfg),
        "default config",
    ));
    let weights_ok = {
        let beta = ConfidenceTable::from_values(vec![0.5, 1.5, 3.0, 0.25]).unwrap();
        let w = beta.normalized_weights(&[0, 1, 2, 3])?;
        (w.iter().sum::<f64>() / 4.0 - 1.0).abs() < 1e-12
    };
    out.push(CheckOutcome::new("normalized weights have mean one", weights_ok, "4-entry table"));
    Ok(out)
}
