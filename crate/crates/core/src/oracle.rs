//! Brute-force reference computations. Nothing here calls the routine it is
//! meant to check: returns and occupancies use a private Gaussian elimination,
//! rollouts use their own sampler, and gradients are central differences.

use rand::Rng;

use crate::airl::disc_loss_grad;
use crate::bilevel::Batches;
use crate::confidence::ConfidenceTable;
use crate::demo::{DemoSet, RankingDataset, StateAction, Trajectory};
use crate::error::{CailError, Result};
use crate::mdp::{OccupancyTable, PolicyTable, TabularMdp};
use crate::net::ParamVector;
use crate::ranking::{outer_loss, rk_linear_branch, rk_quadratic_branch, rk_z, RankingLossConfig};
use crate::rng::seeded;

/// Solves `A x = b` by Gaussian elimination with partial pivoting. `a` is
/// row-major `n × n`.
pub fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n * n {
        return Err(CailError::arg("solve_dense: matrix and right-hand side disagree"));
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[pivot * n + col].abs() < 1e-300 {
            return Err(CailError::InvalidMdp("singular linear system".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row * n + row];
    }
    Ok(x)
}

fn check_shapes(mdp: &TabularMdp, policy: &PolicyTable) -> Result<()> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(CailError::arg("policy shape does not match the MDP"));
    }
    Ok(())
}

/// State-to-state matrix `P_π[s][s'] = Σ_a π(a|s) T(s'|s, a)`, row-major.
fn policy_transition(mdp: &TabularMdp, policy: &PolicyTable) -> Vec<f64> {
    let ns = mdp.n_states();
    let mut p = vec![0.0; ns * ns];
    for s in 0..ns {
        for a in 0..mdp.n_actions() {
            let pa = policy.prob(s, a);
            for t in 0..ns {
                p[s * ns + t] += pa * mdp.next(s, a)[t];
            }
        }
    }
    p
}

/// `V_π` from `(I - γ P_π) V = R_π`.
pub fn exact_policy_value(mdp: &TabularMdp, policy: &PolicyTable) -> Result<Vec<f64>> {
    check_shapes(mdp, policy)?;
    let ns = mdp.n_states();
    let gamma = mdp.discount();
    let p = policy_transition(mdp, policy);
    let mut a = vec![0.0; ns * ns];
    for s in 0..ns {
        for t in 0..ns {
            a[s * ns + t] = if s == t { 1.0 } else { 0.0 } - gamma * p[s * ns + t];
        }
    }
    let r: Vec<f64> = (0..ns)
        .map(|s| (0..mdp.n_actions()).map(|a| policy.prob(s, a) * mdp.reward(s, a)).sum())
        .collect();
    solve_dense(a, r)
}

/// `ρ0ᵀ V_π` through [`exact_policy_value`].
pub fn exact_return(mdp: &TabularMdp, policy: &PolicyTable) -> Result<f64> {
    let v = exact_policy_value(mdp, policy)?;
    Ok(v.iter().zip(mdp.initial()).map(|(x, p)| x * p).sum())
}

/// Discounted occupancy from the balance equations `(I - γ P_πᵀ) d = ρ0`,
/// then `ρ(s, a) = d(s) π(a|s)`.
pub fn exact_occupancy(mdp: &TabularMdp, policy: &PolicyTable) -> Result<OccupancyTable> {
    check_shapes(mdp, policy)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.discount();
    let p = policy_transition(mdp, policy);
    let mut a = vec![0.0; ns * ns];
    for s in 0..ns {
        for t in 0..ns {
            a[s * ns + t] = if s == t { 1.0 } else { 0.0 } - gamma * p[t * ns + s];
        }
    }
    let d = solve_dense(a, mdp.initial().to_vec())?;
    let rho = (0..ns * na).map(|i| d[i / na] * policy.prob(i / na, i % na)).collect();
    Ok(OccupancyTable::from_rho(ns, na, rho))
}

/// `Σ_{s,a} ρ(s, a) R(s, a)`.
pub fn occupancy_return(mdp: &TabularMdp, occupancy: &OccupancyTable) -> f64 {
    let na = mdp.n_actions();
    occupancy
        .rho
        .iter()
        .enumerate()
        .map(|(i, r)| r * mdp.reward(i / na, i % na))
        .sum()
}

/// Greedy-policy optimality by exhaustive enumeration of deterministic
/// policies. Only usable on tiny MDPs: `n_actions^n_states` evaluations.
pub fn best_deterministic_return(mdp: &TabularMdp) -> Result<(f64, Vec<usize>)> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let total = (na as f64).powi(ns as i32);
    if total > 5e6 {
        return Err(CailError::arg("policy enumeration too large"));
    }
    let mut choice = vec![0usize; ns];
    let mut best = (f64::NEG_INFINITY, choice.clone());
    loop {
        let ret = exact_return(mdp, &PolicyTable::deterministic(na, &choice))?;
        if ret > best.0 + 1e-12 {
            best = (ret, choice.clone());
        }
        // Odometer increment.
        let mut k = 0;
        loop {
            if k == ns {
                return Ok(best);
            }
            choice[k] += 1;
            if choice[k] < na {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}

/// Mean discounted return of `episodes` rollouts of at most `horizon` steps,
/// with its standard error.
pub fn monte_carlo_return(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_shapes(mdp, policy)?;
    if episodes == 0 {
        return Err(CailError::arg("monte_carlo_return needs at least one episode"));
    }
    let mut rng = seeded(seed);
    let draw = |probs: &[f64], rng: &mut rand_chacha::ChaCha8Rng| -> usize {
        let u: f64 = rng.gen::<f64>() * probs.iter().sum::<f64>();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                last = i;
                acc += p;
                if u < acc {
                    return i;
                }
            }
        }
        last
    };
    let gamma = mdp.discount();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..episodes {
        let mut s = draw(mdp.initial(), &mut rng);
        let mut weight = 1.0;
        let mut ret = 0.0;
        for _ in 0..horizon {
            let a = draw(policy.row(s), &mut rng);
            ret += weight * mdp.reward(s, a);
            weight *= gamma;
            s = draw(mdp.next(s, a), &mut rng);
        }
        sum += ret;
        sum_sq += ret * ret;
    }
    let n = episodes as f64;
    let mean = sum / n;
    let var = if episodes > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok((mean, (var / n).sqrt()))
}

/// Discounted sum recomputed with explicit powers of `γ`.
pub fn summed_return(rewards: impl Iterator<Item = f64>, gamma: f64) -> f64 {
    rewards.enumerate().map(|(t, r)| gamma.powi(t as i32) * r).sum()
}

/// `Σ_t γ^t f(s_t, a_t)` with the network evaluated per step.
pub fn learned_return_direct(params: &ParamVector, traj: &Trajectory, gamma: f64) -> Result<f64> {
    let logits = traj.steps.iter().map(|sa| params.forward(*sa)).collect::<Result<Vec<_>>>()?;
    Ok(summed_return(logits.into_iter(), gamma))
}

/// Double loop over the ranked subset with the ranking loss written out from
/// its definition.
pub fn outer_loss_direct(params: &ParamVector, demos: &DemoSet, ranking: &RankingDataset, cfg: &RankingLossConfig) -> Result<f64> {
    let eps = cfg.epsilon;
    let mut learned = Vec::with_capacity(ranking.len());
    for e in &ranking.entries {
        learned.push(learned_return_direct(params, &demos.trajectories()[e.trajectory], cfg.gamma)?);
    }
    let mut total = 0.0;
    for i in 0..learned.len() {
        for j in 0..learned.len() {
            if j <= i {
                continue;
            }
            let ind = if ranking.entries[i].true_return > ranking.entries[j].true_return {
                1.0
            } else {
                -1.0
            };
            let z = learned[i] - learned[j];
            total += if z.abs() > eps {
                f64::max(0.0, -ind * z)
            } else {
                f64::max(0.0, (ind * z - eps).powi(2) / (4.0 * eps))
            };
        }
    }
    Ok(total)
}

/// `∂/∂β_i L_out(θ - μ ∇_θ L_in(θ, β))` by central differences for every
/// distinct sampled slot, in ascending slot order. The weights are rebuilt
/// here from their definition.
#[allow(clippy::too_many_arguments)]
pub fn fd_pipeline_beta_grad(
    theta: &ParamVector,
    beta: &ConfidenceTable,
    batches: &Batches,
    demos: &DemoSet,
    ranking: &RankingDataset,
    mu: f64,
    cfg: &RankingLossConfig,
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(CailError::arg("finite-difference step must be positive"));
    }
    let pipeline = |b: &[f64]| -> Result<f64> {
        let total: f64 = b.iter().sum();
        let n = b.len() as f64;
        let demo: Vec<(StateAction, f64)> = batches
            .demo_slots
            .iter()
            .map(|&i| (demos.pair(i), n * b[i] / total))
            .collect();
        let g = disc_loss_grad(theta, &demo, &batches.generated)?;
        outer_loss(&theta.offset(&g, -mu), demos, ranking, cfg)
    };
    let mut slots = batches.demo_slots.clone();
    slots.sort_unstable();
    slots.dedup();
    slots
        .iter()
        .map(|&i| {
            let mut plus = beta.values().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            Ok((pipeline(&plus)? - pipeline(&minus)?) / (2.0 * h))
        })
        .collect()
}

/// Central-difference gradient of an arbitrary scalar function of the
/// parameters.
pub fn fd_param_grad<F>(loss: F, params: &ParamVector, h: f64) -> Vec<f64>
where
    F: Fn(&ParamVector) -> f64,
{
    (0..params.len())
        .map(|k| {
            let mut plus = params.values().to_vec();
            let mut minus = plus.clone();
            plus[k] += h;
            minus[k] -= h;
            let p = ParamVector::from_values(params.layout(), plus).expect("same layout");
            let m = ParamVector::from_values(params.layout(), minus).expect("same layout");
            (loss(&p) - loss(&m)) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeamReport {
    pub epsilon: f64,
    pub resolution: usize,
    /// Largest `|linear - quadratic|` at `z = ±ε`.
    pub max_value_jump: f64,
    /// Largest gap between left and right difference quotients at a seam.
    pub max_derivative_jump: f64,
    /// Largest `|rk(z+Δ) - 2 rk(z) + rk(z-Δ)| / Δ²` over the scan.
    pub max_curvature: f64,
    /// `rk(0)` for indicator `+1` and `-1`.
    pub value_at_zero: [f64; 2],
}

/// Scans the ranking loss over `z ∈ [-3ε, 3ε]` in `resolution` equal steps
/// for both indicators.
pub fn rk_seam_scan(epsilon: f64, resolution: usize) -> Result<SeamReport> {
    if resolution < 100 || !(epsilon > 0.0) {
        return Err(CailError::arg("seam scan needs resolution >= 100 and epsilon > 0"));
    }
    let step = 6.0 * epsilon / resolution as f64;
    let mut report = SeamReport {
        epsilon,
        resolution,
        max_value_jump: 0.0,
        max_derivative_jump: 0.0,
        max_curvature: 0.0,
        value_at_zero: [rk_z(0.0, 1.0, epsilon), rk_z(0.0, -1.0, epsilon)],
    };
    for ind in [1.0, -1.0] {
        let f = |z: f64| rk_z(z, ind, epsilon);
        for seam in [-epsilon, epsilon] {
            let jump = (rk_linear_branch(seam, ind) - rk_quadratic_branch(seam, ind, epsilon)).abs();
            report.max_value_jump = report.max_value_jump.max(jump);
            let left = (f(seam) - f(seam - step)) / step;
            let right = (f(seam + step) - f(seam)) / step;
            report.max_derivative_jump = report.max_derivative_jump.max((left - right).abs());
        }
        for k in 1..resolution {
            let z = epsilon * (-3.0 + 6.0 * k as f64 / resolution as f64);
            let curvature = (f(z + step) - 2.0 * f(z) + f(z - step)).abs() / (step * step);
            report.max_curvature = report.max_curvature.max(curvature);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::random_mdp;

    #[test]
    fn elimination_small_system() {
        let x = solve_dense(vec![2.0, 1.0, 1.0, 3.0], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
        // Needs a row swap.
        let x = solve_dense(vec![0.0, 1.0, 1.0, 0.0], vec![2.0, 3.0]).unwrap();
        assert_eq!(x, vec![3.0, 2.0]);
        assert!(solve_dense(vec![1.0, 2.0, 2.0, 4.0], vec![1.0, 1.0]).is_err());
    }

    fn single_state(reward: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 1, vec![1.0], vec![reward], vec![1.0], gamma).unwrap()
    }

    #[test]
    fn value_closed_forms() {
        let pi = PolicyTable::uniform(1, 1);
        assert_eq!(exact_policy_value(&single_state(0.0, 0.9), &pi).unwrap(), vec![0.0]);
        assert!((exact_policy_value(&single_state(1.0, 0.5), &pi).unwrap()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn occupancy_mass_and_closed_form() {
        let mdp = TabularMdp::new(1, 2, vec![1.0, 1.0], vec![0.0, 0.0], vec![1.0], 0.9).unwrap();
        let occ = exact_occupancy(&mdp, &PolicyTable::uniform(1, 2)).unwrap();
        assert!((occ.rho[0] - 5.0).abs() < 1e-12 && (occ.rho[1] - 5.0).abs() < 1e-12);
        let mut rng = seeded(4);
        let mdp = random_mdp(&mut rng, 6, 3, 0.8);
        let occ = exact_occupancy(&mdp, &PolicyTable::uniform(6, 3)).unwrap();
        assert!((occ.rho.iter().sum::<f64>() - 5.0).abs() < 1e-10);
    }

    #[test]
    fn monte_carlo_deterministic_and_seeded() {
        let mdp = single_state(1.0, 0.5);
        let pi = PolicyTable::uniform(1, 1);
        let (mean, se) = monte_carlo_return(&mdp, &pi, 20, 60, 0).unwrap();
        assert!((mean - 2.0).abs() < 1e-12);
        assert_eq!(se, 0.0);
        let mut rng = seeded(1);
        let mdp = random_mdp(&mut rng, 5, 2, 0.9);
        let pi = PolicyTable::uniform(5, 2);
        assert_eq!(
            monte_carlo_return(&mdp, &pi, 50, 20, 3).unwrap(),
            monte_carlo_return(&mdp, &pi, 50, 20, 3).unwrap()
        );
    }

    #[test]
    fn seam_scan_rejects_coarse_grids() {
        assert!(rk_seam_scan(1e-5, 99).is_err());
        let r = rk_seam_scan(1e-5, 1000).unwrap();
        assert_eq!(r.value_at_zero, [2.5e-6, 2.5e-6]);
    }

    #[test]
    fn enumeration_picks_the_rewarding_action() {
        // Two states; action 1 in state 0 moves to a rewarding self-loop.
        let t = vec![
            1.0, 0.0, 0.0, 1.0, // s0: a0 stay, a1 go
            0.0, 1.0, 0.0, 1.0, // s1: both stay
        ];
        let r = vec![0.0, 0.0, 1.0, 1.0];
        let mdp = TabularMdp::new(2, 2, t, r, vec![1.0, 0.0], 0.9).unwrap();
        let (best, choice) = best_deterministic_return(&mdp).unwrap();
        assert_eq!(choice[0], 1);
        assert!((best - 9.0).abs() < 1e-12);
    }
}
