//! Flat `key = value` experiment files with dotted section prefixes.
//!
//! ```text
//! # comments start with '#'
//! grid.rows = 5
//! mixture.levels = boltzmann:0.001, boltzmann:0.3, boltzmann:1, boltzmann:3, adversarial:0.01
//! train.total_steps = 2000
//! run.seeds = 1, 2, 3, 4, 5
//! ```
//!
//! Every key is optional. [`serialize`] writes every key, so
//! `parse_config(&serialize(&cfg)) == cfg`.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use crate::bilevel::BilevelConfig;
use crate::demo::RankingSampling;
use crate::error::{CailError, Result};
use crate::mdp::{Cell, GridSpec};

/// How one optimality level's behavior policy is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevelSpec {
    /// Soft-optimal policy for the true reward at this temperature.
    Boltzmann(f64),
    /// Soft-optimal policy for the negated reward at this temperature.
    Adversarial(f64),
}

impl LevelSpec {
    pub fn temperature(&self) -> f64 {
        match *self {
            LevelSpec::Boltzmann(t) | LevelSpec::Adversarial(t) => t,
        }
    }
}

impl fmt::Display for LevelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevelSpec::Boltzmann(t) => write!(f, "boltzmann:{t}"),
            LevelSpec::Adversarial(t) => write!(f, "adversarial:{t}"),
        }
    }
}

impl FromStr for LevelSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (kind, temp) = s.split_once(':').unwrap_or(("boltzmann", s));
        let t: f64 = temp.trim().parse().map_err(|_| format!("bad temperature {temp:?}"))?;
        if !(t > 0.0) || !t.is_finite() {
            return Err(format!("temperature {t} must be positive and finite"));
        }
        match kind.trim() {
            "boltzmann" => Ok(LevelSpec::Boltzmann(t)),
            "adversarial" => Ok(LevelSpec::Adversarial(t)),
            other => Err(format!("unknown level kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Cail,
    AirlUnweighted,
    FixedConfidence,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Cail, Method::AirlUnweighted, Method::FixedConfidence];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Cail => "cail",
            Method::AirlUnweighted => "airl_unweighted",
            Method::FixedConfidence => "fixed_confidence",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?} (expected cail, airl_unweighted or fixed_confidence)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub levels: Vec<LevelSpec>,
    pub proportions: Vec<f64>,
    pub total_trajectories: usize,
    pub horizon: usize,
    pub ranking_fraction: f64,
    pub ranking_sampling: RankingSampling,
    pub train: BilevelConfig,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    /// Write `beta_<iter>.txt` every this many iterations; 0 disables.
    pub beta_snapshot_every: usize,
}

/// Near-optimal, three graded Boltzmann levels, adversarial.
pub fn default_levels() -> Vec<LevelSpec> {
    vec![
        LevelSpec::Boltzmann(1e-3),
        LevelSpec::Boltzmann(0.3),
        LevelSpec::Boltzmann(1.0),
        LevelSpec::Boltzmann(3.0),
        LevelSpec::Adversarial(1e-2),
    ]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec { start: (2, 0), goal: (2, 4), ..GridSpec::default() },
            levels: default_levels(),
            proportions: vec![0.2; 5],
            total_trajectories: 200,
            horizon: 50,
            ranking_fraction: 0.05,
            ranking_sampling: RankingSampling::Uniform,
            train: BilevelConfig { c1: 2000.0, batch_size: 512, ..BilevelConfig::default() },
            method: Method::Cail,
            seeds: vec![1, 2, 3, 4, 5],
            out_dir: None,
            beta_snapshot_every: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CailError::Config { line: 0, message: m });
        if self.levels.is_empty() {
            return bad("at least one mixture level is required".into());
        }
        if self.levels.len() != self.proportions.len() {
            return bad(format!(
                "{} levels but {} proportions",
                self.levels.len(),
                self.proportions.len()
            ));
        }
        let sum: f64 = self.proportions.iter().sum();
        if self.proportions.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return bad(format!("mixture proportions must be non-negative and sum to 1 (got {sum})"));
        }
        if self.total_trajectories == 0 || self.horizon == 0 {
            return bad("mixture.total and mixture.horizon must be at least 1".into());
        }
        if !(self.ranking_fraction > 0.0 && self.ranking_fraction <= 1.0) {
            return bad(format!("ranking.fraction {} outside (0, 1]", self.ranking_fraction));
        }
        if self.seeds.is_empty() {
            return bad("run.seeds must list at least one seed".into());
        }
        self.train.validate().map_err(|e| CailError::Config {
            line: 0,
            message: e.to_string(),
        })?;
        crate::mdp::build_gridworld(&self.grid).map_err(|e| CailError::Config {
            line: 0,
            message: e.to_string(),
        })?;
        Ok(())
    }
}

fn parse_list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<T>().map_err(|_| format!("bad list element {v:?}")))
        .collect()
}

fn parse_cell(value: &str) -> std::result::Result<Cell, String> {
    let (r, c) = value.split_once(',').ok_or_else(|| format!("cell {value:?} must be 'row,col'"))?;
    Ok((
        r.trim().parse().map_err(|_| format!("bad row {r:?}"))?,
        c.trim().parse().map_err(|_| format!("bad column {c:?}"))?,
    ))
}

fn parse_cells(value: &str) -> std::result::Result<Vec<Cell>, String> {
    value
        .split(';')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(parse_cell)
        .collect()
}

fn parse_scalar<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("bad value {value:?}"))
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {value:?}")),
    }
}

fn parse_hidden(value: &str) -> std::result::Result<[usize; 2], String> {
    let widths: Vec<usize> = parse_list(value)?;
    match widths[..] {
        [a, b] => Ok([a, b]),
        _ => Err("train.hidden needs exactly two widths".into()),
    }
}

fn apply(cfg: &mut ExperimentConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    let t = &mut cfg.train;
    let g = &mut cfg.grid;
    match key {
        "grid.rows" => g.rows = parse_scalar(value)?,
        "grid.cols" => g.cols = parse_scalar(value)?,
        "grid.obstacles" => g.obstacles = parse_cells(value)?,
        "grid.goal" => g.goal = parse_cell(value)?,
        "grid.start" => g.start = parse_cell(value)?,
        "grid.step_reward" => g.step_reward = parse_scalar(value)?,
        "grid.goal_reward" => g.goal_reward = parse_scalar(value)?,
        "grid.obstacle_reward" => g.obstacle_reward = parse_scalar(value)?,
        "grid.slip" => g.slip = parse_scalar(value)?,
        "grid.discount" => g.discount = parse_scalar(value)?,
        "grid.absorbing_goal" => g.absorbing_goal = parse_bool(value)?,
        "mixture.levels" => cfg.levels = parse_list(value)?,
        "mixture.proportions" => cfg.proportions = parse_list(value)?,
        "mixture.total" => cfg.total_trajectories = parse_scalar(value)?,
        "mixture.horizon" => cfg.horizon = parse_scalar(value)?,
        "ranking.fraction" => cfg.ranking_fraction = parse_scalar(value)?,
        "ranking.sampling" => {
            cfg.ranking_sampling = match value {
                "uniform" => RankingSampling::Uniform,
                "stratified" => RankingSampling::Stratified,
                _ => return Err(format!("unknown sampling {value:?}")),
            }
        }
        "ranking.epsilon" => t.epsilon = parse_scalar(value)?,
        "train.total_steps" => t.total_steps = parse_scalar(value)?,
        "train.alpha" => t.alpha = parse_scalar(value)?,
        "train.mu" => t.mu = parse_scalar(value)?,
        "train.use_schedule" => t.use_schedule = parse_bool(value)?,
        "train.c1" => t.c1 = parse_scalar(value)?,
        "train.c2" => t.c2 = parse_scalar(value)?,
        "train.l1_estimate" => {
            t.l1_estimate = if value == "none" {
                None
            } else {
                Some(parse_scalar(value)?)
            }
        }
        "train.batch_size" => t.batch_size = parse_scalar(value)?,
        "train.horizon" => t.horizon = parse_scalar(value)?,
        "train.generator_updates" => t.generator_updates = parse_scalar(value)?,
        "train.inner_steps" => t.inner_steps = parse_scalar(value)?,
        "train.damping" => t.damping = parse_scalar(value)?,
        "train.generator_temperature" => t.generator_temperature = parse_scalar(value)?,
        "train.hidden" => t.hidden = parse_hidden(value)?,
        "train.rescale_beta" => t.rescale_beta = parse_bool(value)?,
        "run.method" => cfg.method = value.parse()?,
        "run.seeds" => cfg.seeds = parse_list(value)?,
        "run.out_dir" => cfg.out_dir = if value.is_empty() { None } else { Some(value.into()) },
        "run.beta_snapshot_every" => cfg.beta_snapshot_every = parse_scalar(value)?,
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

/// Parses a config document. Errors carry the 1-based line number; errors
/// found only by whole-config validation report line 0.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| CailError::Config { line, message };
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected 'key = value', got {content:?}")))?;
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(err(format!("duplicate key {key:?}")));
        }
        apply(&mut cfg, key, value.trim()).map_err(err)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn join<T: fmt::Display>(items: &[T], sep: &str) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

/// Writes every key in a fixed order.
pub fn serialize(cfg: &ExperimentConfig) -> String {
    let g = &cfg.grid;
    let t = &cfg.train;
    let mut out = String::new();
    let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
    kv("grid.rows", g.rows.to_string());
    kv("grid.cols", g.cols.to_string());
    kv(
        "grid.obstacles",
        join(&g.obstacles.iter().map(|(r, c)| format!("{r},{c}")).collect::<Vec<_>>(), "; "),
    );
    kv("grid.goal", format!("{},{}", g.goal.0, g.goal.1));
    kv("grid.start", format!("{},{}", g.start.0, g.start.1));
    kv("grid.step_reward", g.step_reward.to_string());
    kv("grid.goal_reward", g.goal_reward.to_string());
    kv("grid.obstacle_reward", g.obstacle_reward.to_string());
    kv("grid.slip", g.slip.to_string());
    kv("grid.discount", g.discount.to_string());
    kv("grid.absorbing_goal", g.absorbing_goal.to_string());
    kv("mixture.levels", join(&cfg.levels, ", "));
    kv("mixture.proportions", join(&cfg.proportions, ", "));
    kv("mixture.total", cfg.total_trajectories.to_string());
    kv("mixture.horizon", cfg.horizon.to_string());
    kv("ranking.fraction", cfg.ranking_fraction.to_string());
    kv(
        "ranking.sampling",
        match cfg.ranking_sampling {
            RankingSampling::Uniform => "uniform",
            RankingSampling::Stratified => "stratified",
        }
        .into(),
    );
    kv("ranking.epsilon", t.epsilon.to_string());
    kv("train.total_steps", t.total_steps.to_string());
    kv("train.alpha", t.alpha.to_string());
    kv("train.mu", t.mu.to_string());
    kv("train.use_schedule", t.use_schedule.to_string());
    kv("train.c1", t.c1.to_string());
    kv("train.c2", t.c2.to_string());
    kv(
        "train.l1_estimate",
        t.l1_estimate.map_or_else(|| "none".to_string(), |v| v.to_string()),
    );
    kv("train.batch_size", t.batch_size.to_string());
    kv("train.horizon", t.horizon.to_string());
    kv("train.generator_updates", t.generator_updates.to_string());
    kv("train.inner_steps", t.inner_steps.to_string());
    kv("train.damping", t.damping.to_string());
    kv("train.generator_temperature", t.generator_temperature.to_string());
    kv("train.hidden", join(&t.hidden, ", "));
    kv("train.rescale_beta", t.rescale_beta.to_string());
    kv("run.method", cfg.method.name().into());
    kv("run.seeds", join(&cfg.seeds, ", "));
    kv(
        "run.out_dir",
        cfg.out_dir.as_ref().map_or_else(String::new, |p| p.display().to_string()),
    );
    kv("run.beta_snapshot_every", cfg.beta_snapshot_every.to_string());
    out
}
