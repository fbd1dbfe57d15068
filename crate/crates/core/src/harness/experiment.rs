//! End-to-end runs: build the mixture, train the selected method, write the
//! per-iteration CSV and the per-run summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{error, info};

use super::config::{ExperimentConfig, LevelSpec, Method};
use crate::bilevel::{run_airl, run_cail, run_cail_observed, descent_check, BilevelConfig, TrainingOutcome};
use crate::confidence::ConfidenceTable;
use crate::demo::{
    build_mixture, build_ranking_subset_with, make_adversarial_policy, make_behavior_policies, DemoSet, RankingDataset,
};
use crate::error::{CailError, Result};
use crate::mdp::{build_gridworld, expected_return, PolicyTable, TabularMdp};
use crate::rng::derive_seed;

pub const CSV_SCHEMA: &str = "# cail-metrics v1";

const STREAM_MIXTURE: u64 = 11;
const STREAM_RANKING: u64 = 12;
const STREAM_TRAIN: u64 = 13;

/// Mixture, ranked subset and per-level behavior returns for one seed.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub mdp: TabularMdp,
    pub demos: DemoSet,
    pub ranking: RankingDataset,
    /// True expected return of each level's behavior policy.
    pub level_returns: Vec<f64>,
    /// Trajectories drawn from each level.
    pub level_counts: Vec<usize>,
}

impl SeedData {
    /// `Σ_l count_l η_l / Σ_l count_l`.
    pub fn demo_weighted_return(&self) -> f64 {
        let total: usize = self.level_counts.iter().sum();
        self.level_counts
            .iter()
            .zip(&self.level_returns)
            .map(|(&c, r)| c as f64 * r)
            .sum::<f64>()
            / total as f64
    }
}

pub fn behavior_policies(mdp: &TabularMdp, levels: &[LevelSpec]) -> Result<Vec<PolicyTable>> {
    levels
        .iter()
        .map(|level| match *level {
            LevelSpec::Boltzmann(t) => Ok(make_behavior_policies(mdp, &[t])?.remove(0)),
            LevelSpec::Adversarial(t) => make_adversarial_policy(mdp, t),
        })
        .collect()
}

pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let mdp = build_gridworld(&cfg.grid)?;
    let policies = behavior_policies(&mdp, &cfg.levels)?;
    let level_returns = policies
        .iter()
        .map(|p| expected_return(&mdp, p))
        .collect::<Result<Vec<_>>>()?;
    let demos = build_mixture(
        &mdp,
        &policies,
        &cfg.proportions,
        cfg.total_trajectories,
        cfg.horizon,
        derive_seed(seed, STREAM_MIXTURE),
    )?;
    let mut level_counts = vec![0; cfg.levels.len()];
    for t in demos.trajectories() {
        level_counts[t.source_level] += 1;
    }
    let ranking = build_ranking_subset_with(
        &demos,
        &mdp,
        cfg.ranking_fraction,
        derive_seed(seed, STREAM_RANKING),
        cfg.ranking_sampling,
    )?;
    Ok(SeedData {
        mdp,
        demos,
        ranking,
        level_returns,
        level_counts,
    })
}

pub fn train_config(cfg: &ExperimentConfig, seed: u64) -> BilevelConfig {
    BilevelConfig {
        seed: derive_seed(seed, STREAM_TRAIN),
        ..cfg.train.clone()
    }
}

/// Evenly spaced confidences over the ranked trajectories, 1 for the best
/// down to 0 for the worst; every other trajectory gets the ranked mean.
/// Each pair inherits its trajectory's value.
pub fn evenly_spaced_confidence(demos: &DemoSet, ranking: &RankingDataset) -> Result<ConfidenceTable> {
    let m = ranking.len();
    if m < 2 {
        return Err(CailError::arg("evenly spaced confidence needs at least two ranked trajectories"));
    }
    let ranked: Vec<f64> = (0..m).map(|k| 1.0 - k as f64 / (m - 1) as f64).collect();
    let mean = ranked.iter().sum::<f64>() / m as f64;
    let mut per_traj = vec![mean; demos.trajectories().len()];
    for (entry, c) in ranking.entries.iter().zip(&ranked) {
        per_traj[entry.trajectory] = *c;
    }
    let beta = demos.pair_index().iter().map(|slot| per_traj[slot.trajectory]).collect();
    ConfidenceTable::from_values(beta)
}

/// The fixed-confidence baseline: [`evenly_spaced_confidence`], frozen.
pub fn run_baseline_fixed_confidence(data: &SeedData, train: &BilevelConfig) -> Result<TrainingOutcome> {
    let (_, mu) = train.rates();
    let frozen = BilevelConfig {
        use_schedule: false,
        alpha: 0.0,
        mu,
        ..train.clone()
    };
    let beta = evenly_spaced_confidence(&data.demos, &data.ranking)?;
    run_cail(&data.mdp, &data.demos, &data.ranking, &frozen, Some(beta))
}

/// Per-run numbers kept in the CSV trailer and aggregated by the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub iterations: usize,
    pub final_return: f64,
    pub descent_fraction: f64,
    pub beta_level_means: Vec<f64>,
    pub level_returns: Vec<f64>,
    pub demo_weighted_return: f64,
    pub aborted: bool,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub summary: RunSummary,
    pub outcome: TrainingOutcome,
}

/// Trains one seed with the configured method. `snapshot` receives
/// `(iteration, β)` at the configured cadence (CAIL only).
pub fn run_seed<F>(cfg: &ExperimentConfig, seed: u64, mut snapshot: F) -> Result<RunLog>
where
    F: FnMut(usize, &ConfidenceTable),
{
    let data = prepare_seed(cfg, seed)?;
    let train = train_config(cfg, seed);
    let every = cfg.beta_snapshot_every;
    let outcome = match cfg.method {
        Method::Cail => run_cail_observed(&data.mdp, &data.demos, &data.ranking, &train, None, |iter, beta| {
            if every > 0 && (iter + 1) % every == 0 {
                snapshot(iter + 1, beta);
            }
        })?,
        Method::AirlUnweighted => run_airl(&data.mdp, &data.demos, &data.ranking, &train)?,
        Method::FixedConfidence => run_baseline_fixed_confidence(&data, &train)?,
    };
    let report = &outcome.report;
    let slot_levels: Vec<usize> = (0..data.demos.n_pairs()).map(|i| data.demos.slot_level(i)).collect();
    let summary = RunSummary {
        method: cfg.method,
        seed,
        iterations: report.records.len(),
        final_return: expected_return(&data.mdp, &outcome.generator.policy)?,
        descent_fraction: descent_check(report, report.mu).fraction,
        beta_level_means: outcome.beta.level_means(&slot_levels, cfg.levels.len()),
        level_returns: data.level_returns.clone(),
        demo_weighted_return: data.demo_weighted_return(),
        aborted: report.abort.is_some(),
    };
    Ok(RunLog { summary, outcome })
}

fn joined(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// Per-iteration rows followed by a `# summary` trailer. Columns are the same
/// for every method; `beta_mean_level_*` stays at 1 when confidences are not
/// learned.
pub fn render_csv(log: &RunLog, n_levels: usize) -> String {
    let mut out = String::new();
    writeln!(out, "{CSV_SCHEMA}").unwrap();
    let mut header = String::from("iter,outer_loss_before,outer_loss,beta_grad_norm_sq,alignment_C,smoothness_L,true_return");
    for l in 0..n_levels {
        write!(header, ",beta_mean_level_{l}").unwrap();
    }
    writeln!(out, "{header}").unwrap();
    for r in &log.outcome.report.records {
        write!(
            out,
            "{},{},{},{},{},{},{}",
            r.iter, r.outer_loss_before, r.outer_loss, r.beta_grad_norm_sq, r.alignment, r.smoothness, r.true_return
        )
        .unwrap();
        for m in &r.beta_level_means {
            write!(out, ",{m}").unwrap();
        }
        out.push('\n');
    }
    let s = &log.summary;
    writeln!(
        out,
        "# summary method={} seed={} iterations={} final_return={} descent_fraction={} beta_level_means={} level_returns={} demo_weighted_return={} aborted={}",
        s.method.name(),
        s.seed,
        s.iterations,
        s.final_return,
        s.descent_fraction,
        joined(&s.beta_level_means),
        joined(&s.level_returns),
        s.demo_weighted_return,
        s.aborted
    )
    .unwrap();
    out
}

/// Reads the `# summary` trailer written by [`render_csv`].
pub fn parse_summary_line(line: &str) -> Result<RunSummary> {
    let body = line
        .strip_prefix("# summary ")
        .ok_or_else(|| CailError::Parse("not a summary line".into()))?;
    let mut fields = std::collections::HashMap::new();
    for tok in body.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| CailError::Parse(format!("bad summary field {tok:?}")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| CailError::Parse(format!("summary is missing {k}")))
    };
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| CailError::Parse(format!("bad number for {k}"))) };
    let list = |k: &str| -> Result<Vec<f64>> {
        let v = get(k)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(';')
            .map(|x| x.parse().map_err(|_| CailError::Parse(format!("bad list for {k}"))))
            .collect()
    };
    Ok(RunSummary {
        method: get("method")?.parse().map_err(CailError::Parse)?,
        seed: get("seed")?.parse().map_err(|_| CailError::Parse("bad seed".into()))?,
        iterations: get("iterations")?
            .parse()
            .map_err(|_| CailError::Parse("bad iteration count".into()))?,
        final_return: num("final_return")?,
        descent_fraction: num("descent_fraction")?,
        beta_level_means: list("beta_level_means")?,
        level_returns: list("level_returns")?,
        demo_weighted_return: num("demo_weighted_return")?,
        aborted: get("aborted")? == "true",
    })
}

#[derive(Debug, Default)]
pub struct MetricsLog {
    pub runs: Vec<RunLog>,
    /// Seeds that failed, with the error text. Other seeds still ran.
    pub failures: Vec<(u64, String)>,
}

/// Runs every seed, writes `run_<seed>.csv`, optional `beta_<iter>.txt`
/// snapshots (under `seed_<seed>/` when there are several seeds) and
/// `summary.txt` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<MetricsLog> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut log = MetricsLog::default();
    for &seed in &cfg.seeds {
        info!("seed {seed}: training {}", cfg.method.name());
        let snap_dir = if cfg.seeds.len() > 1 {
            out_dir.join(format!("seed_{seed}"))
        } else {
            out_dir.to_path_buf()
        };
        let mut snap_err: Option<std::io::Error> = None;
        let result = run_seed(cfg, seed, |iter, beta| {
            if snap_err.is_some() {
                return;
            }
            let write = fs::create_dir_all(&snap_dir)
                .and_then(|_| fs::write(snap_dir.join(format!("beta_{iter}.txt")), beta.to_text()));
            if let Err(e) = write {
                snap_err = Some(e);
            }
        })
        .and_then(|run| match snap_err {
            Some(e) => Err(e.into()),
            None => Ok(run),
        })
        .and_then(|run| {
            fs::write(out_dir.join(format!("run_{seed}.csv")), render_csv(&run, cfg.levels.len()))?;
            Ok(run)
        });
        match result {
            Ok(run) => log.runs.push(run),
            Err(e) => {
                error!("seed {seed} failed: {e}");
                log.failures.push((seed, e.to_string()));
            }
        }
    }
    let summaries: Vec<RunSummary> = log.runs.iter().map(|r| r.summary.clone()).collect();
    fs::write(out_dir.join("summary.txt"), emit_summary(&summaries))?;
    Ok(log)
}

/// Population mean and standard deviation (divide by `n`).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-method mean ± population std of the final true return, then one line
/// per run.
pub fn emit_summary(runs: &[RunSummary]) -> String {
    let mut out = String::from("# final true expected return, mean ± population std (divide by n) across seeds\n");
    writeln!(out, "{:<18} {:>5} {:>12} {:>12}", "method", "runs", "mean", "std").unwrap();
    for method in Method::ALL {
        let finals: Vec<f64> = runs.iter().filter(|r| r.method == method).map(|r| r.final_return).collect();
        if finals.is_empty() {
            continue;
        }
        let (mean, std) = mean_std(&finals);
        writeln!(out, "{:<18} {:>5} {:>12.6} {:>12.6}", method.name(), finals.len(), mean, std).unwrap();
    }
    out.push_str("\n# per run\n");
    for r in runs {
        writeln!(
            out,
            "{} seed={} final_return={:.6} demo_weighted_return={:.6} descent_fraction={:.4} beta_level_means={}{}",
            r.method.name(),
            r.seed,
            r.final_return,
            r.demo_weighted_return,
            r.descent_fraction,
            r.beta_level_means
                .iter()
                .map(|b| format!("{b:.4}"))
                .collect::<Vec<_>>()
                .join(";"),
            if r.aborted { " ABORTED" } else { "" }
        )
        .unwrap();
    }
    out
}

/// Re-aggregates `summary.txt` from the `run_*.csv` files in `dir`.
pub fn summarize(dir: &Path) -> Result<String> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("run_") && n.ends_with(".csv"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CailError::arg(format!("no run_*.csv files in {}", dir.display())));
    }
    let mut runs = Vec::with_capacity(paths.len());
    for p in paths {
        let text = fs::read_to_string(&p)?;
        let line = text
            .lines()
            .rev()
            .find(|l| l.starts_with("# summary "))
            .ok_or_else(|| CailError::Parse(format!("{} has no summary trailer", p.display())))?;
        runs.push(parse_summary_line(line)?);
    }
    Ok(emit_summary(&runs))
}

/// Spearman rank correlation with average ranks for ties. Pairs where either
/// value is NaN are dropped; fewer than two remaining pairs, or a constant
/// side, give NaN.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) = a
        .iter()
        .zip(b)
        .filter(|(p, q)| !p.is_nan() && !q.is_nan())
        .map(|(p, q)| (*p, *q))
        .unzip();
    if x.len() < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (average_ranks(&x), average_ranks(&y));
    let (mx, sx) = mean_std(&rx);
    let (my, sy) = mean_std(&ry);
    if sx == 0.0 || sy == 0.0 {
        return f64::NAN;
    }
    let cov = rx.iter().zip(&ry).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / rx.len() as f64;
    cov / (sx * sy)
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && v[order[end + 1]] == v[order[k]] {
            end += 1;
        }
        let avg = (k + end) as f64 / 2.0 + 1.0;
        for &idx in &order[k..=end] {
            ranks[idx] = avg;
        }
        k = end + 1;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::{RankedEntry, StateAction, Trajectory};

    fn summary(method: Method, final_return: f64) -> RunSummary {
        RunSummary {
            method,
            seed: 0,
            iterations: 1,
            final_return,
            descent_fraction: 1.0,
            beta_level_means: vec![1.0, f64::NAN],
            level_returns: vec![0.5, -0.25],
            demo_weighted_return: 0.125,
            aborted: false,
        }
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
        let text = emit_summary(&[summary(Method::Cail, 1.0), summary(Method::Cail, 3.0)]);
        assert!(text.contains("population std"));
        let row = text.lines().find(|l| l.starts_with("cail ")).unwrap();
        let cols: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(cols[1..], ["2", "2.000000", "1.000000"]);
    }

    #[test]
    fn summary_line_round_trip() {
        let s = summary(Method::FixedConfidence, -0.3);
        let log_line = format!(
            "# summary method={} seed={} iterations={} final_return={} descent_fraction={} beta_level_means={} level_returns={} demo_weighted_return={} aborted={}",
            s.method.name(), s.seed, s.iterations, s.final_return, s.descent_fraction,
            joined(&s.beta_level_means), joined(&s.level_returns), s.demo_weighted_return, s.aborted
        );
        let back = parse_summary_line(&log_line).unwrap();
        assert_eq!(back.final_return, s.final_return);
        assert_eq!(back.method, s.method);
        assert!(back.beta_level_means[1].is_nan());
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0, f64::NAN], &[1.0, 3.0, 2.0, 9.0]) - 0.5).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_nan());
    }

    fn demos_with(n: usize) -> DemoSet {
        DemoSet::new(
            (0..n)
                .map(|i| Trajectory {
                    steps: vec![StateAction::new(i, 0), StateAction::new(i, 1)],
                    source_level: 0,
                })
                .collect(),
        )
        .unwrap()
    }

    fn ranking_of(order: &[usize]) -> RankingDataset {
        let entries = order
            .iter()
            .enumerate()
            .map(|(k, &t)| RankedEntry {
                trajectory: t,
                true_return: -(k as f64),
            })
            .collect();
        RankingDataset::from_entries(entries, 1.0).unwrap()
    }

    #[test]
    fn evenly_spaced_examples() {
        let demos = demos_with(3);
        let two = evenly_spaced_confidence(&demos, &ranking_of(&[2, 0])).unwrap();
        assert_eq!(two.values(), &[0.0, 0.0, 0.5, 0.5, 1.0, 1.0]);
        let three = evenly_spaced_confidence(&demos, &ranking_of(&[1, 0, 2])).unwrap();
        assert_eq!(three.values(), &[0.5, 0.5, 1.0, 1.0, 0.0, 0.0]);
    }
}
