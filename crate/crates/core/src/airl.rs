//! Inner imitation learner: a logistic discriminator over `(s, a)` whose logit
//! doubles as the recovered reward, and a tabular MaxEnt generator.

use crate::demo::StateAction;
use crate::error::{CailError, Result};
use crate::mdp::{soft_value_iteration, PolicyTable, TabularMdp};
use crate::net::{GradVector, ParamVector};
use crate::rng::{sample_categorical, seeded};

const SOFT_VI_TOL: f64 = 1e-9;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `D(s, a) = sigmoid(f(s, a))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorModel {
    pub params: ParamVector,
}

impl DiscriminatorModel {
    pub fn new(params: ParamVector) -> Self {
        Self { params }
    }

    pub fn prob(&self, sa: StateAction) -> f64 {
        sigmoid(self.params.logit(sa))
    }

    /// `R'(s, a) = log D - log(1 - D)`, which under the sigmoid
    /// parameterization is exactly the logit.
    pub fn recovered_reward(&self, sa: StateAction) -> Result<f64> {
        self.params.forward(sa)
    }

    /// Recovered reward for every `(s, a)`, row-major.
    pub fn reward_table(&self) -> Vec<f64> {
        let l = self.params.layout();
        let all: Vec<StateAction> = (0..l.n_states * l.n_actions)
            .map(|i| StateAction::new(i / l.n_actions, i % l.n_actions))
            .collect();
        self.params.logits(&all)
    }
}

/// Demonstration pair with its confidence weight.
pub type WeightedPair = (StateAction, f64);

fn check_batches(demo: &[WeightedPair], generated: &[StateAction]) -> Result<()> {
    if demo.is_empty() || generated.is_empty() {
        return Err(CailError::arg("discriminator batches must be nonempty"));
    }
    if let Some((_, w)) = demo.iter().find(|(_, w)| !(*w >= 0.0)) {
        return Err(CailError::arg(format!("negative demonstration weight {w}")));
    }
    Ok(())
}

/// `(1/n_d) Σ w_i (-log D(s_i, a_i)) + (1/n_g) Σ (-log(1 - D(s_j, a_j)))`.
pub fn disc_loss(params: &ParamVector, demo: &[WeightedPair], generated: &[StateAction]) -> Result<f64> {
    check_batches(demo, generated)?;
    let n_d = demo.len() as f64;
    let n_g = generated.len() as f64;
    let demo_term: f64 = demo.iter().map(|(sa, w)| w * softplus(-params.logit(*sa))).sum();
    let gen_term: f64 = generated.iter().map(|sa| softplus(params.logit(*sa))).sum();
    Ok(demo_term / n_d + gen_term / n_g)
}

/// Exact gradient of [`disc_loss`]. Per-pair coefficients are pooled over
/// distinct inputs before back-propagation.
pub fn disc_loss_grad(params: &ParamVector, demo: &[WeightedPair], generated: &[StateAction]) -> Result<GradVector> {
    check_batches(demo, generated)?;
    let l = params.layout();
    let na = l.n_actions;
    let n_d = demo.len() as f64;
    let n_g = generated.len() as f64;
    let mut demo_weight = vec![0.0; l.n_states * na];
    let mut gen_count = vec![0.0; l.n_states * na];
    for (sa, w) in demo {
        demo_weight[sa.state * na + sa.action] += w;
    }
    for sa in generated {
        gen_count[sa.state * na + sa.action] += 1.0;
    }
    let active: Vec<StateAction> = (0..l.n_states * na)
        .filter(|&i| demo_weight[i] != 0.0 || gen_count[i] != 0.0)
        .map(|i| StateAction::new(i / na, i % na))
        .collect();
    let mut coef = vec![0.0; l.n_states * na];
    for (sa, f) in active.iter().zip(params.logits(&active)) {
        let i = sa.state * na + sa.action;
        let d = sigmoid(f);
        // d/df softplus(-f) = -(1 - D); d/df softplus(f) = D
        coef[i] = -demo_weight[i] * (1.0 - d) / n_d + gen_count[i] * d / n_g;
    }
    Ok(params.grad_from_table(&coef))
}

/// `∂/∂f (-log D)` at one input: the scalar that multiplies `∇_θ f` in the
/// per-sample demonstration gradient.
pub fn demo_logit_slope(params: &ParamVector, sa: StateAction) -> f64 {
    -(1.0 - sigmoid(params.logit(sa)))
}

/// Tabular generator policy improved by damped soft value iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorState {
    pub policy: PolicyTable,
    pub damping: f64,
    pub temperature: f64,
}

impl GeneratorState {
    pub fn uniform(mdp: &TabularMdp, damping: f64, temperature: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&damping) {
            return Err(CailError::arg(format!("damping {damping} outside [0, 1]")));
        }
        if !(temperature > 0.0) {
            return Err(CailError::arg("generator temperature must be positive"));
        }
        Ok(Self {
            policy: PolicyTable::uniform(mdp.n_states(), mdp.n_actions()),
            damping,
            temperature,
        })
    }
}

/// One policy-improvement step against the recovered reward:
/// `π ← (1 - damping) π + damping · softVI(R')`.
///
/// Absorbing states keep a zero reward: rollouts stop on entry, so `R'`
/// is never evaluated there.
pub fn generator_update(mdp: &TabularMdp, disc: &DiscriminatorModel, gen: &GeneratorState) -> Result<GeneratorState> {
    if gen.damping == 0.0 {
        return Ok(gen.clone());
    }
    improve_against(mdp, disc.reward_table(), gen)
}

/// Damped soft policy improvement against an explicit reward table.
pub fn improve_against(mdp: &TabularMdp, mut reward: Vec<f64>, gen: &GeneratorState) -> Result<GeneratorState> {
    let na = mdp.n_actions();
    for s in (0..mdp.n_states()).filter(|&s| mdp.is_absorbing(s)) {
        reward[s * na..(s + 1) * na].fill(0.0);
    }
    let improved = soft_value_iteration(mdp, Some(&reward), gen.temperature, SOFT_VI_TOL)?;
    Ok(GeneratorState {
        policy: gen.policy.mix(&improved, gen.damping),
        ..gen.clone()
    })
}

/// `batch_size` pairs from generator rollouts of at most `horizon` steps,
/// restarting from `ρ0` whenever a rollout ends.
pub fn generator_batch(
    gen: &GeneratorState,
    mdp: &TabularMdp,
    batch_size: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<StateAction>> {
    if batch_size == 0 || horizon == 0 {
        return Err(CailError::arg("generator batch size and horizon must be at least 1"));
    }
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(batch_size);
    while out.len() < batch_size {
        let mut s = sample_categorical(mdp.initial(), &mut rng);
        let mut t = 0;
        loop {
            let a = sample_categorical(gen.policy.row(s), &mut rng);
            out.push(StateAction::new(s, a));
            s = sample_categorical(mdp.next(s, a), &mut rng);
            t += 1;
            if t >= horizon || out.len() >= batch_size || mdp.is_absorbing(s) {
                break;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_gridworld, expected_return, value_iteration, GridSpec};
    use crate::net::{finite_difference_grad, relative_error, NetLayout};
    use crate::rng::seeded;
    use rand::Rng;

    fn layout() -> NetLayout {
        NetLayout::new(5, 3, [8, 6])
    }

    fn random_batches(seed: u64) -> (Vec<WeightedPair>, Vec<StateAction>) {
        let mut rng = seeded(seed);
        let demo = (0..12)
            .map(|_| (StateAction::new(rng.gen_range(0..5), rng.gen_range(0..3)), rng.gen_range(0.0..2.0)))
            .collect();
        let generated = (0..9)
            .map(|_| StateAction::new(rng.gen_range(0..5), rng.gen_range(0..3)))
            .collect();
        (demo, generated)
    }

    #[test]
    fn half_discriminator_loss_is_two_ln_two() {
        let p = ParamVector::zeros(layout());
        let (demo, generated) = random_batches(1);
        let ones: Vec<WeightedPair> = demo.iter().map(|(sa, _)| (*sa, 1.0)).collect();
        let loss = disc_loss(&p, &ones, &generated).unwrap();
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let zeros: Vec<WeightedPair> = demo.iter().map(|(sa, _)| (*sa, 0.0)).collect();
        assert!((disc_loss(&p, &zeros, &generated).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_literal_summation() {
        let p = ParamVector::init(layout(), 2);
        let (demo, generated) = random_batches(3);
        let mut expected = 0.0;
        for (sa, w) in &demo {
            let d = 1.0 / (1.0 + (-p.logit(*sa)).exp());
            expected += w * -d.ln() / demo.len() as f64;
        }
        for sa in &generated {
            let d = 1.0 / (1.0 + (-p.logit(*sa)).exp());
            expected += -(1.0 - d).ln() / generated.len() as f64;
        }
        assert!((disc_loss(&p, &demo, &generated).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_fd() {
        for seed in 0..5 {
            let p = ParamVector::init(layout(), 10 + seed);
            let (demo, generated) = random_batches(20 + seed);
            let analytic = disc_loss_grad(&p, &demo, &generated).unwrap();
            let numeric = finite_difference_grad(|q| disc_loss(q, &demo, &generated).unwrap(), &p, 1e-5);
            assert!(relative_error(&analytic.values, &numeric.values, 1e-12) < 1e-4);
        }
    }

    #[test]
    fn gradient_linear_in_weights() {
        let p = ParamVector::init(layout(), 4);
        let (demo, generated) = random_batches(5);
        let zeros: Vec<WeightedPair> = demo.iter().map(|(sa, _)| (*sa, 0.0)).collect();
        let doubled: Vec<WeightedPair> = demo.iter().map(|(sa, w)| (*sa, 2.0 * w)).collect();
        let gen_only = disc_loss_grad(&p, &zeros, &generated).unwrap();
        let base = disc_loss_grad(&p, &demo, &generated).unwrap();
        let twice = disc_loss_grad(&p, &doubled, &generated).unwrap();
        for i in 0..p.len() {
            let demo_part = base.values[i] - gen_only.values[i];
            let demo_part2 = twice.values[i] - gen_only.values[i];
            assert!((demo_part2 - 2.0 * demo_part).abs() < 1e-12);
        }
    }

    #[test]
    fn demo_gradient_decomposes_per_sample() {
        let p = ParamVector::init(layout(), 6);
        let (demo, generated) = random_batches(7);
        let zeros: Vec<WeightedPair> = demo.iter().map(|(sa, _)| (*sa, 0.0)).collect();
        let demo_part = {
            let mut g = disc_loss_grad(&p, &demo, &generated).unwrap();
            g.add_scaled(&disc_loss_grad(&p, &zeros, &generated).unwrap(), -1.0);
            g
        };
        let mut manual = GradVector::zeros(p.len());
        for (sa, w) in &demo {
            let per_sample = p.grad_params(&[(*sa, demo_logit_slope(&p, *sa))]);
            manual.add_scaled(&per_sample, w / demo.len() as f64);
        }
        for (a, b) in demo_part.values.iter().zip(&manual.values) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_batches() {
        let p = ParamVector::zeros(layout());
        assert!(disc_loss(&p, &[], &[StateAction::new(0, 0)]).is_err());
        assert!(disc_loss(&p, &[(StateAction::new(0, 0), -1.0)], &[StateAction::new(0, 0)]).is_err());
    }

    #[test]
    fn loss_descends_under_gradient_steps() {
        let mut p = ParamVector::init(layout(), 8);
        let (demo, generated) = random_batches(9);
        let start = disc_loss(&p, &demo, &generated).unwrap();
        let mut prev = start;
        for _ in 0..50 {
            let g = disc_loss_grad(&p, &demo, &generated).unwrap();
            p = p.offset(&g, -1e-2);
            let now = disc_loss(&p, &demo, &generated).unwrap();
            assert!(now <= prev + 1e-12);
            prev = now;
        }
        assert!(prev < start);
    }

    #[test]
    fn recovered_reward_is_logit() {
        let disc = DiscriminatorModel::new(ParamVector::init(layout(), 12));
        for s in 0..5 {
            for a in 0..3 {
                let sa = StateAction::new(s, a);
                let d = disc.prob(sa);
                let literal = d.ln() - (1.0 - d).ln();
                assert!((literal - disc.recovered_reward(sa).unwrap()).abs() < 1e-9);
            }
        }
        let half = DiscriminatorModel::new(ParamVector::zeros(layout()));
        assert_eq!(half.recovered_reward(StateAction::new(0, 0)).unwrap(), 0.0);
    }

    #[test]
    fn generator_update_limits() {
        let mdp = build_gridworld(&GridSpec::default()).unwrap();
        let layout = NetLayout::new(mdp.n_states(), mdp.n_actions(), [8, 8]);
        let disc = DiscriminatorModel::new(ParamVector::init(layout, 1));
        let frozen = GeneratorState {
            damping: 0.0,
            ..GeneratorState::uniform(&mdp, 0.3, 0.1).unwrap()
        };
        assert_eq!(generator_update(&mdp, &disc, &frozen).unwrap(), frozen);

        let zero = DiscriminatorModel::new(ParamVector::zeros(layout));
        let gen = GeneratorState::uniform(&mdp, 1.0, 0.1).unwrap();
        let updated = generator_update(&mdp, &zero, &gen).unwrap();
        for p in updated.policy.probs() {
            assert!((p - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn generator_batch_is_seeded() {
        let mdp = build_gridworld(&GridSpec::default()).unwrap();
        let gen = GeneratorState::uniform(&mdp, 0.3, 0.1).unwrap();
        let a = generator_batch(&gen, &mdp, 256, 50, 4).unwrap();
        assert_eq!(a.len(), 256);
        assert_eq!(a, generator_batch(&gen, &mdp, 256, 50, 4).unwrap());
        let single = crate::mdp::TabularMdp::new(1, 1, vec![1.0], vec![1.0], vec![1.0], 0.5).unwrap();
        let g1 = GeneratorState::uniform(&single, 0.3, 0.1).unwrap();
        assert!(generator_batch(&g1, &single, 20, 5, 0)
            .unwrap()
            .iter()
            .all(|sa| *sa == StateAction::new(0, 0)));
    }

    #[test]
    fn true_reward_generator_is_near_optimal() {
        let mdp = build_gridworld(&GridSpec::default()).unwrap();
        let (_, greedy) = value_iteration(&mdp, 1e-10).unwrap();
        let best = expected_return(&mdp, &greedy).unwrap();
        let gen = GeneratorState::uniform(&mdp, 1.0, 0.01).unwrap();
        let improved = improve_against(&mdp, mdp.rewards().to_vec(), &gen).unwrap();
        let got = expected_return(&mdp, &improved.policy).unwrap();
        assert!((best - got).abs() <= 0.05 * best.abs(), "{got} vs {best}");
    }
}
