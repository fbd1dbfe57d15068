//! The confidence-aware training loop.
//!
//! Each iteration takes one provisional discriminator step with the current
//! confidences, differentiates the ranking loss at the provisional parameters
//! with respect to the sampled confidences, moves the confidences, and then
//! takes the real discriminator step with the updated confidences:
//!
//! ```text
//! θ'      = θ - μ ∇_θ L_in(θ, β)
//! β_next  = max(0, β - α ∇_β L_out(θ'))
//! θ_next  = θ - μ ∇_θ L_in(θ, β_next)
//! ```
//!
//! `∇_β L_out(θ')` is closed-form. With mean-one weights
//! `w_k = n β_k / Σβ`, the demonstration term of `∇_θ L_in` is
//! `(1/n_d) Σ_k w_k ∇ℓ_k`, so
//!
//! ```text
//! ∂L_out/∂β_i = -μ (n / (n_d S²)) [ S Σ_{k: slot_k = i} d_k - Σ_k β_{slot_k} d_k ]
//! ```
//!
//! with `S = Σβ` and `d_k = ∇_θ ℓ_k(θ) · ∇_θ L_out(θ')`, a directional
//! derivative of the network, so no second-order machinery is needed.

use log::warn;
use rand::Rng;

use crate::airl::{
    sigmoid, disc_loss_grad, generator_batch, generator_update, DiscriminatorModel, GeneratorState,
    WeightedPair,
};
use crate::confidence::ConfidenceTable;
use crate::demo::{DemoSet, RankingDataset, StateAction};
use crate::error::{CailError, Result};
use crate::mdp::{expected_return, TabularMdp};
use crate::net::{GradVector, NetLayout, ParamVector, DEFAULT_HIDDEN};
use crate::ranking::{outer_loss, outer_loss_grad_theta, RankingLossConfig, DEFAULT_EPSILON};
use crate::rng::{derive_seed, seeded};

const STREAM_INIT: u64 = 1;
const STREAM_DEMO_BATCH: u64 = 2;
const STREAM_GEN_BATCH: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct BilevelConfig {
    pub total_steps: usize,
    /// Fixed rates, used when `use_schedule` is false.
    pub alpha: f64,
    pub mu: f64,
    /// `α = C1/√T`, `μ = C2/T` when `use_schedule` is set.
    pub use_schedule: bool,
    pub c1: f64,
    pub c2: f64,
    /// Optional smoothness estimate for the `C1 ≤ 2/L1` warning.
    pub l1_estimate: Option<f64>,
    pub batch_size: usize,
    /// Rollout cap for generator batches.
    pub horizon: usize,
    pub generator_updates: usize,
    /// Provisional and real discriminator steps per iteration. Only the last
    /// provisional step is differentiated.
    pub inner_steps: usize,
    pub damping: f64,
    pub generator_temperature: f64,
    pub hidden: [usize; 2],
    pub epsilon: f64,
    /// Rescale `β` to mean one after every confidence step. The weights only
    /// see `β / Σβ`, so this leaves the inner problem unchanged; it stops the
    /// overall scale from drifting, which would otherwise rescale the
    /// confidence gradient by `1/Σβ`.
    pub rescale_beta: bool,
    pub seed: u64,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        Self {
            total_steps: 2000,
            alpha: 1.0,
            mu: 0.1,
            use_schedule: true,
            c1: 50.0,
            c2: 200.0,
            l1_estimate: None,
            batch_size: 256,
            horizon: 50,
            generator_updates: 1,
            inner_steps: 1,
            damping: 0.3,
            generator_temperature: 0.1,
            hidden: [DEFAULT_HIDDEN; 2],
            epsilon: DEFAULT_EPSILON,
            rescale_beta: true,
            seed: 0,
        }
    }
}

impl BilevelConfig {
    pub fn validate(&self) -> Result<()> {
        let (alpha, mu) = self.rates();
        if !(alpha >= 0.0) || !(mu >= 0.0) || !alpha.is_finite() || !mu.is_finite() {
            return Err(CailError::arg("learning rates must be finite and non-negative"));
        }
        if self.use_schedule && !(self.c1 >= 0.0 && self.c2 >= 0.0) {
            return Err(CailError::arg("schedule constants must be non-negative"));
        }
        if self.batch_size == 0 || self.horizon == 0 || self.inner_steps == 0 {
            return Err(CailError::arg("batch size, horizon and inner steps must be at least 1"));
        }
        if self.hidden.contains(&0) {
            return Err(CailError::arg("hidden widths must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(CailError::arg("ranking epsilon must be positive"));
        }
        if !(0.0..=1.0).contains(&self.damping) || !(self.generator_temperature > 0.0) {
            return Err(CailError::arg("generator damping must lie in [0, 1] and temperature be positive"));
        }
        Ok(())
    }

    /// Effective `(α, μ)`.
    pub fn rates(&self) -> (f64, f64) {
        if self.use_schedule {
            lr_schedule(self.total_steps.max(1), self.c1, self.c2, self.l1_estimate)
        } else {
            (self.alpha, self.mu)
        }
    }
}

/// `α = C1/√T`, `μ = C2/T`. Warns when `C1` exceeds `2/L1`.
pub fn lr_schedule(total_steps: usize, c1: f64, c2: f64, l1_estimate: Option<f64>) -> (f64, f64) {
    let t = total_steps.max(1) as f64;
    if let Some(l1) = l1_estimate {
        if l1 > 0.0 && c1 > 2.0 / l1 {
            warn!("C1 = {c1} exceeds 2/L1 = {}; the rate guarantee does not apply", 2.0 / l1);
        }
    }
    (c1 / t.sqrt(), c2 / t)
}

/// One iteration's minibatches. `demo_slots[k]` indexes the pair index of the
/// demonstration set; `demo_pairs[k]` is the pair it points to.
#[derive(Debug, Clone, PartialEq)]
pub struct Batches {
    pub demo_slots: Vec<usize>,
    pub demo_pairs: Vec<StateAction>,
    pub generated: Vec<StateAction>,
}

impl Batches {
    pub fn new(demos: &DemoSet, demo_slots: Vec<usize>, generated: Vec<StateAction>) -> Self {
        let demo_pairs = demo_slots.iter().map(|&i| demos.pair(i)).collect();
        Self {
            demo_slots,
            demo_pairs,
            generated,
        }
    }

    /// Distinct sampled slots, ascending.
    pub fn distinct_slots(&self) -> Vec<usize> {
        let mut slots = self.demo_slots.clone();
        slots.sort_unstable();
        slots.dedup();
        slots
    }

    fn weighted(&self, beta: &ConfidenceTable) -> Result<Vec<WeightedPair>> {
        let weights = beta.normalized_weights(&self.demo_slots)?;
        Ok(self.demo_pairs.iter().copied().zip(weights).collect())
    }
}

/// Uniform draw with replacement from the pair index.
pub fn sample_demo_slots(demos: &DemoSet, batch_size: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded(seed);
    (0..batch_size).map(|_| rng.gen_range(0..demos.n_pairs())).collect()
}

/// `∇_θ L_in(θ, β)` on the batch.
pub fn inner_grad(theta: &ParamVector, beta: &ConfidenceTable, batches: &Batches) -> Result<GradVector> {
    disc_loss_grad(theta, &batches.weighted(beta)?, &batches.generated)
}

/// `θ' = θ - μ ∇_θ L_in(θ, β)`. The input is left untouched.
pub fn pseudo_update(theta: &ParamVector, beta: &ConfidenceTable, batches: &Batches, mu: f64) -> Result<ParamVector> {
    Ok(theta.offset(&inner_grad(theta, beta, batches)?, -mu))
}

/// Same step as [`pseudo_update`], taken with the updated confidences.
pub fn theta_update(theta: &ParamVector, beta_new: &ConfidenceTable, batches: &Batches, mu: f64) -> Result<ParamVector> {
    pseudo_update(theta, beta_new, batches, mu)
}

/// Sparse gradient over the distinct sampled slots.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaGrad {
    pub slots: Vec<usize>,
    pub values: Vec<f64>,
}

impl BetaGrad {
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Closed-form `∇_β L_out(θ')` at the sampled slots, where `θ'` came from
/// [`pseudo_update`] at `theta`.
pub fn beta_grad(
    theta: &ParamVector,
    theta_prime: &ParamVector,
    beta: &ConfidenceTable,
    batches: &Batches,
    demos: &DemoSet,
    ranking: &RankingDataset,
    mu: f64,
    cfg: &RankingLossConfig,
) -> Result<BetaGrad> {
    let total = beta.sum();
    if !(total > 0.0) {
        return Err(CailError::DegenerateConfidence);
    }
    let outer = outer_loss_grad_theta(theta_prime, demos, ranking, cfg)?;

    // d(s, a) = (∂ℓ/∂f) (∇_θ f · ∇_θ L_out(θ')), once per distinct pair.
    let layout = theta.layout();
    let na = layout.n_actions;
    let mut distinct: Vec<StateAction> = batches.demo_pairs.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let jvp = theta.directional_batch(&distinct, &outer);
    let logits = theta.logits(&distinct);
    let mut per_pair = vec![0.0; layout.n_states * na];
    for ((sa, j), f) in distinct.iter().zip(&jvp).zip(&logits) {
        per_pair[sa.state * na + sa.action] = -(1.0 - sigmoid(*f)) * j;
    }
    let d: Vec<f64> = batches
        .demo_pairs
        .iter()
        .map(|sa| per_pair[sa.state * na + sa.action])
        .collect();

    let slots = batches.distinct_slots();
    let mut own = vec![0.0; slots.len()];
    let mut weighted_total = 0.0;
    for (&slot, dk) in batches.demo_slots.iter().zip(&d) {
        let pos = slots.binary_search(&slot).expect("slot is in the distinct list");
        own[pos] += dk;
        weighted_total += beta.values()[slot] * dk;
    }
    let n = beta.len() as f64;
    let n_d = batches.demo_slots.len() as f64;
    let scale = -mu * n / (n_d * total * total);
    let values = own.iter().map(|o| scale * (total * o - weighted_total)).collect();
    Ok(BetaGrad { slots, values })
}

/// `β - α g`, projected onto `β ≥ 0`.
pub fn beta_update(beta: &ConfidenceTable, grad: &BetaGrad, alpha: f64) -> ConfidenceTable {
    beta.step(&grad.slots, &grad.values, alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// `L_out(θ_τ)`.
    pub outer_loss_before: f64,
    /// `L_out(θ_{τ+1})`.
    pub outer_loss: f64,
    pub beta_grad_norm_sq: f64,
    /// `∇L_out(θ_{τ+1}) · ∇L_in(θ_τ, β_{τ+1}) / ‖∇L_in(θ_τ, β_{τ+1})‖²`.
    pub alignment: f64,
    /// Secant estimate `‖∇L_out(θ_{τ+1}) - ∇L_out(θ_τ)‖ / ‖θ_{τ+1} - θ_τ‖`.
    pub smoothness: f64,
    /// True expected return of the generator after this iteration.
    pub true_return: f64,
    pub beta_level_means: Vec<f64>,
}

/// Per-iteration diagnostics plus empirical constants. The constants are
/// estimates: maxima of what was observed along the run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceReport {
    pub records: Vec<IterationRecord>,
    pub alpha: f64,
    pub mu: f64,
    /// Largest secant smoothness ratio of `L_out` seen.
    pub smoothness_max_estimate: f64,
    /// Largest `‖∇_θ L_in‖` or `‖∇_θ L_out‖` seen.
    pub gradient_bound_estimate: f64,
    /// Set when the run stopped on a non-finite value.
    pub abort: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentSummary {
    pub qualifying: usize,
    pub satisfied: usize,
    pub fraction: f64,
}

/// `1e-6 · (1 + |L_out|)`.
pub fn monotonicity_tolerance(loss: f64) -> f64 {
    1e-6 * (1.0 + loss.abs())
}

/// Among iterations with `Ĉ ≥ 0` and `μ ≤ 2Ĉ/L̂`, the share where the outer
/// loss did not increase beyond [`monotonicity_tolerance`]. Vacuously 1 when
/// no iteration qualifies.
pub fn descent_check(report: &ConvergenceReport, mu: f64) -> DescentSummary {
    let mut qualifying = 0;
    let mut satisfied = 0;
    for r in &report.records {
        if !(r.alignment >= 0.0) {
            continue;
        }
        let bound = if r.smoothness > 0.0 {
            2.0 * r.alignment / r.smoothness
        } else {
            f64::INFINITY
        };
        if mu > bound {
            continue;
        }
        qualifying += 1;
        if r.outer_loss <= r.outer_loss_before + monotonicity_tolerance(r.outer_loss_before) {
            satisfied += 1;
        }
    }
    let fraction = if qualifying == 0 {
        1.0
    } else {
        satisfied as f64 / qualifying as f64
    };
    DescentSummary {
        qualifying,
        satisfied,
        fraction,
    }
}

/// `min_{τ ≤ T} ‖∇_β L_out‖²` for each checkpoint `T` (1-based iteration
/// counts). Checkpoints beyond the run are skipped.
pub fn min_beta_grad_norm_at(report: &ConvergenceReport, checkpoints: &[usize]) -> Vec<(usize, f64)> {
    checkpoints
        .iter()
        .filter(|&&t| t >= 1 && t <= report.records.len())
        .map(|&t| {
            let min = report.records[..t]
                .iter()
                .map(|r| r.beta_grad_norm_sq)
                .fold(f64::INFINITY, f64::min);
            (t, min)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub disc: DiscriminatorModel,
    pub generator: GeneratorState,
    pub beta: ConfidenceTable,
    pub report: ConvergenceReport,
}

/// Shared setup for the training loops.
struct Context<'a> {
    mdp: &'a TabularMdp,
    demos: &'a DemoSet,
    ranking: &'a RankingDataset,
    cfg: &'a BilevelConfig,
    ranking_cfg: RankingLossConfig,
    slot_levels: Vec<usize>,
    n_levels: usize,
}

impl<'a> Context<'a> {
    fn new(mdp: &'a TabularMdp, demos: &'a DemoSet, ranking: &'a RankingDataset, cfg: &'a BilevelConfig) -> Result<Self> {
        cfg.validate()?;
        demos.validate(mdp)?;
        let slot_levels = (0..demos.n_pairs()).map(|i| demos.slot_level(i)).collect();
        Ok(Self {
            mdp,
            demos,
            ranking,
            cfg,
            ranking_cfg: RankingLossConfig::new(cfg.epsilon, mdp.discount())?,
            slot_levels,
            n_levels: demos.n_levels(),
        })
    }

    fn initial_theta(&self) -> ParamVector {
        let layout = NetLayout::new(self.mdp.n_states(), self.mdp.n_actions(), self.cfg.hidden);
        ParamVector::init(layout, derive_seed(self.cfg.seed, STREAM_INIT))
    }

    fn batches(&self, iter: usize, generator: &GeneratorState) -> Result<Batches> {
        let demo_seed = derive_seed(derive_seed(self.cfg.seed, STREAM_DEMO_BATCH), iter as u64);
        let gen_seed = derive_seed(derive_seed(self.cfg.seed, STREAM_GEN_BATCH), iter as u64);
        let slots = sample_demo_slots(self.demos, self.cfg.batch_size, demo_seed);
        let generated = generator_batch(generator, self.mdp, self.cfg.batch_size, self.cfg.horizon, gen_seed)?;
        Ok(Batches::new(self.demos, slots, generated))
    }

    fn outer(&self, theta: &ParamVector) -> Result<(f64, GradVector)> {
        Ok((
            outer_loss(theta, self.demos, self.ranking, &self.ranking_cfg)?,
            outer_loss_grad_theta(theta, self.demos, self.ranking, &self.ranking_cfg)?,
        ))
    }

    fn improve_generator(&self, theta: &ParamVector, generator: GeneratorState) -> Result<GeneratorState> {
        let disc = DiscriminatorModel::new(theta.clone());
        let mut generator = generator;
        for _ in 0..self.cfg.generator_updates {
            generator = generator_update(self.mdp, &disc, &generator)?;
        }
        Ok(generator)
    }
}

/// Outer-loss state carried from one iteration to the next.
struct OuterState {
    loss: f64,
    grad: GradVector,
}

/// Builds the diagnostic record for one `θ_τ → θ_{τ+1}` step and advances the
/// carried outer state.
#[allow(clippy::too_many_arguments)]
fn record_step(
    ctx: &Context<'_>,
    report: &mut ConvergenceReport,
    iter: usize,
    theta: &ParamVector,
    theta_next: &ParamVector,
    inner: &GradVector,
    before: &OuterState,
    beta: &ConfidenceTable,
    beta_grad_norm_sq: f64,
    generator: &GeneratorState,
) -> Result<OuterState> {
    let (loss, grad) = ctx.outer(theta_next)?;
    let inner_norm_sq = inner.norm_sq();
    let alignment = if inner_norm_sq > 0.0 {
        grad.dot(inner) / inner_norm_sq
    } else {
        0.0
    };
    let step = theta_next.diff(theta);
    let step_norm = step.norm_sq().sqrt();
    let smoothness = if step_norm > 0.0 {
        let mut delta = grad.clone();
        delta.add_scaled(&before.grad, -1.0);
        delta.norm_sq().sqrt() / step_norm
    } else {
        0.0
    };
    report.smoothness_max_estimate = report.smoothness_max_estimate.max(smoothness);
    report.gradient_bound_estimate = report
        .gradient_bound_estimate
        .max(inner_norm_sq.sqrt())
        .max(grad.norm_sq().sqrt());
    report.records.push(IterationRecord {
        iter,
        outer_loss_before: before.loss,
        outer_loss: loss,
        beta_grad_norm_sq,
        alignment,
        smoothness,
        true_return: expected_return(ctx.mdp, &generator.policy)?,
        beta_level_means: beta.level_means(&ctx.slot_levels, ctx.n_levels),
    });
    Ok(OuterState { loss, grad })
}

fn non_finite(values: &[f64]) -> bool {
    values.iter().any(|v| !v.is_finite())
}

/// Runs the bi-level loop for `cfg.total_steps` iterations.
///
/// `initial_beta` defaults to all ones. With `α = 0` the confidences stay
/// frozen, which is how the fixed-confidence baseline runs.
pub fn run_cail(
    mdp: &TabularMdp,
    demos: &DemoSet,
    ranking: &RankingDataset,
    cfg: &BilevelConfig,
    initial_beta: Option<ConfidenceTable>,
) -> Result<TrainingOutcome> {
    run_cail_observed(mdp, demos, ranking, cfg, initial_beta, |_, _| {})
}

/// [`run_cail`] with a callback receiving `(iteration, β)` after every
/// confidence update.
pub fn run_cail_observed<F>(
    mdp: &TabularMdp,
    demos: &DemoSet,
    ranking: &RankingDataset,
    cfg: &BilevelConfig,
    initial_beta: Option<ConfidenceTable>,
    mut observe: F,
) -> Result<TrainingOutcome>
where
    F: FnMut(usize, &ConfidenceTable),
{
    let ctx = Context::new(mdp, demos, ranking, cfg)?;
    let (alpha, mu) = cfg.rates();
    let mut beta = match initial_beta {
        Some(b) if b.len() != demos.n_pairs() => {
            return Err(CailError::arg("initial confidence does not match the pair count"))
        }
        Some(b) => b,
        None => ConfidenceTable::init(demos.n_pairs())?,
    };
    let mut theta = ctx.initial_theta();
    let mut generator = GeneratorState::uniform(mdp, cfg.damping, cfg.generator_temperature)?;
    let mut report = ConvergenceReport {
        alpha,
        mu,
        ..ConvergenceReport::default()
    };
    let (loss, grad) = ctx.outer(&theta)?;
    let mut outer_state = OuterState { loss, grad };

    for iter in 0..cfg.total_steps {
        let batches = ctx.batches(iter, &generator)?;

        // Provisional step(s) with the current confidences.
        let mut base = theta.clone();
        for _ in 1..cfg.inner_steps {
            base = pseudo_update(&base, &beta, &batches, mu)?;
        }
        let theta_prime = pseudo_update(&base, &beta, &batches, mu)?;
        let grad_beta = beta_grad(&base, &theta_prime, &beta, &batches, demos, ranking, mu, &ctx.ranking_cfg)?;
        if non_finite(&grad_beta.values) {
            report.abort = Some(format!("non-finite confidence gradient at iteration {iter}"));
            break;
        }
        beta = beta_update(&beta, &grad_beta, alpha);
        if cfg.rescale_beta && alpha > 0.0 {
            beta = beta.rescaled_to_mean_one()?;
        }
        observe(iter, &beta);

        // Real step(s) with the updated confidences.
        let inner = inner_grad(&theta, &beta, &batches)?;
        let mut theta_next = theta.offset(&inner, -mu);
        for _ in 1..cfg.inner_steps {
            theta_next = theta_update(&theta_next, &beta, &batches, mu)?;
        }
        if non_finite(theta_next.values()) {
            report.abort = Some(format!("non-finite discriminator parameters at iteration {iter}"));
            break;
        }
        generator = ctx.improve_generator(&theta_next, generator)?;
        outer_state = record_step(
            &ctx,
            &mut report,
            iter,
            &theta,
            &theta_next,
            &inner,
            &outer_state,
            &beta,
            grad_beta.norm_sq(),
            &generator,
        )?;
        if !outer_state.loss.is_finite() {
            report.abort = Some(format!("non-finite outer loss at iteration {iter}"));
            break;
        }
        theta = theta_next;
    }
    Ok(TrainingOutcome {
        disc: DiscriminatorModel::new(theta),
        generator,
        beta,
        report,
    })
}

/// Plain adversarial imitation on the unweighted demonstrations: the same
/// batches and generator schedule as [`run_cail`], no confidences at all.
pub fn run_airl(mdp: &TabularMdp, demos: &DemoSet, ranking: &RankingDataset, cfg: &BilevelConfig) -> Result<TrainingOutcome> {
    let ctx = Context::new(mdp, demos, ranking, cfg)?;
    let (alpha, mu) = cfg.rates();
    let ones = ConfidenceTable::init(demos.n_pairs())?;
    let mut theta = ctx.initial_theta();
    let mut generator = GeneratorState::uniform(mdp, cfg.damping, cfg.generator_temperature)?;
    let mut report = ConvergenceReport {
        alpha,
        mu,
        ..ConvergenceReport::default()
    };
    let (loss, grad) = ctx.outer(&theta)?;
    let mut outer_state = OuterState { loss, grad };

    for iter in 0..cfg.total_steps {
        let batches = ctx.batches(iter, &generator)?;
        let demo: Vec<WeightedPair> = batches.demo_pairs.iter().map(|sa| (*sa, 1.0)).collect();
        let inner = disc_loss_grad(&theta, &demo, &batches.generated)?;
        let mut theta_next = theta.offset(&inner, -mu);
        for _ in 1..cfg.inner_steps {
            let g = disc_loss_grad(&theta_next, &demo, &batches.generated)?;
            theta_next = theta_next.offset(&g, -mu);
        }
        if non_finite(theta_next.values()) {
            report.abort = Some(format!("non-finite discriminator parameters at iteration {iter}"));
            break;
        }
        generator = ctx.improve_generator(&theta_next, generator)?;
        outer_state = record_step(
            &ctx,
            &mut report,
            iter,
            &theta,
            &theta_next,
            &inner,
            &outer_state,
            &ones,
            0.0,
            &generator,
        )?;
        theta = theta_next;
    }
    Ok(TrainingOutcome {
        disc: DiscriminatorModel::new(theta),
        generator,
        beta: ones,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let (a, m) = lr_schedule(100, 1.0, 10.0, None);
        assert!((a - 0.1).abs() < 1e-15 && (m - 0.1).abs() < 1e-15);
        assert_eq!(lr_schedule(1, 3.0, 4.0, None), (3.0, 4.0));
        let (a1, _) = lr_schedule(50, 1.0, 1.0, None);
        let (a2, _) = lr_schedule(100, 1.0, 1.0, None);
        assert!((a2 / a1 - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        // Over the 2/L1 limit only warns.
        assert_eq!(lr_schedule(1, 5.0, 1.0, Some(1.0)), (5.0, 1.0));
    }

    fn record(before: f64, after: f64, alignment: f64, smoothness: f64) -> IterationRecord {
        IterationRecord {
            iter: 0,
            outer_loss_before: before,
            outer_loss: after,
            beta_grad_norm_sq: 0.0,
            alignment,
            smoothness,
            true_return: 0.0,
            beta_level_means: vec![],
        }
    }

    #[test]
    fn descent_check_on_hand_built_reports() {
        let empty = ConvergenceReport::default();
        assert_eq!(descent_check(&empty, 0.1).fraction, 1.0);
        let decreasing = ConvergenceReport {
            records: (0..5).map(|i| record(5.0 - i as f64, 4.0 - i as f64, 1.0, 1.0)).collect(),
            ..ConvergenceReport::default()
        };
        let s = descent_check(&decreasing, 0.1);
        assert_eq!((s.qualifying, s.satisfied, s.fraction), (5, 5, 1.0));
        let mixed = ConvergenceReport {
            records: vec![
                record(1.0, 2.0, 1.0, 1.0),   // qualifies, violates
                record(1.0, 2.0, -1.0, 1.0),  // negative alignment: skipped
                record(1.0, 2.0, 0.01, 10.0), // μ > 2C/L: skipped
                record(2.0, 1.0, 1.0, 0.0),   // L = 0 qualifies
            ],
            ..ConvergenceReport::default()
        };
        let s = descent_check(&mixed, 0.1);
        assert_eq!((s.qualifying, s.satisfied), (2, 1));
    }

    #[test]
    fn checkpoint_minima() {
        let report = ConvergenceReport {
            records: [3.0, 1.0, 2.0, 0.5]
                .iter()
                .map(|&g| IterationRecord {
                    beta_grad_norm_sq: g,
                    ..record(0.0, 0.0, 0.0, 0.0)
                })
                .collect(),
            ..ConvergenceReport::default()
        };
        assert_eq!(min_beta_grad_norm_at(&report, &[1, 3, 4, 9]), vec![(1, 3.0), (3, 1.0), (4, 0.5)]);
    }
}
