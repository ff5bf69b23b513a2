//! `run`, `compare` and `sweep` commands and their on-disk artifacts.
//!
//! Each run directory holds:
//!
//! - `events.jsonl`: one JSON object per processed event (`seq`, `time`,
//!   `kind` and the kind's fields: `invocation`, `client`, `round`, `cold`,
//!   `duration`, `included`, `loss`),
//! - `rounds.csv`: `round,selected,successful,eur,cold,stale,loss,sim_time`,
//! - `summary.json`: the resolved scenario, its seed, the inputs needed to
//!   recompute the summary, and the summary itself,
//! - `scenario.toml`: the resolved scenario as a loadable scenario file.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::metrics::{self, Summary, SummaryContext};
use crate::scenario::{parse_scenario, Scenario, ScenarioError};
use crate::sim::{simulate, RunResult, SimError, SimEvent};
use crate::strategy::StrategyKind;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("unknown sweep parameter {0:?} (expected concurrency_ratio, clients_per_round, rho or buffer_size)")]
    UnknownParameter(String),
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
}

impl CliError {
    /// 1 for invalid input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(ScenarioError::Io(_)) => 2,
            CliError::Scenario(_) | CliError::UnknownParameter(_) | CliError::InvalidArguments(_) => 1,
            CliError::Sim(SimError::ScenarioInvalid(_)) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Overrides applied to every scenario parsed from a file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seeds: Option<Vec<u64>>,
    pub strategy: Option<StrategyKind>,
}

impl RunOptions {
    pub fn apply(&self, scenarios: Vec<Scenario>) -> Vec<Scenario> {
        let mut scenarios = match &self.seeds {
            None => scenarios,
            Some(seeds) => {
                let base = scenarios[0].clone();
                let task_seed_follows = base.task.seed == base.seed;
                seeds
                    .iter()
                    .map(|&seed| {
                        let mut s = base.clone();
                        s.seed = seed;
                        if task_seed_follows {
                            s.task.seed = seed;
                        }
                        s
                    })
                    .collect()
            }
        };
        if let Some(strategy) = self.strategy {
            for s in &mut scenarios {
                s.strategy = strategy;
            }
        }
        scenarios
    }
}

/// What a run left on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub seed: u64,
    pub strategy: StrategyKind,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub scenario: Scenario,
    pub seed: u64,
    pub strategy: StrategyKind,
    pub context: SummaryContext,
    pub summary: Summary,
}

pub fn events_jsonl(events: &[SimEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_json_line());
        out.push('\n');
    }
    out
}

pub fn write_artifacts(result: &RunResult, dir: &Path) -> Result<RunArtifacts, CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let write = |name: &str, content: &str| -> Result<(), CliError> {
        let path = dir.join(name);
        fs::write(&path, content).map_err(io_err(&path))
    };
    write("events.jsonl", &events_jsonl(&result.events))?;
    write("rounds.csv", &metrics::rounds_csv(&result.rounds))?;
    let doc = SummaryDocument {
        scenario: result.scenario.clone(),
        seed: result.scenario.seed,
        strategy: result.scenario.strategy,
        context: result.context.clone(),
        summary: result.summary.clone(),
    };
    write(
        "summary.json",
        &(serde_json::to_string_pretty(&doc).expect("summary serializes") + "\n"),
    )?;
    write("scenario.toml", &result.scenario.to_toml())?;
    Ok(RunArtifacts {
        dir: dir.to_path_buf(),
        seed: result.scenario.seed,
        strategy: result.scenario.strategy,
        summary: result.summary.clone(),
    })
}

pub fn read_events(path: &Path) -> Result<Vec<SimEvent>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| CliError::Artifact {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_summary(path: &Path) -> Result<SummaryDocument, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Recomputes a run directory's summary from its event log.
pub fn recompute_summary(dir: &Path) -> Result<Summary, CliError> {
    let doc = read_summary(&dir.join("summary.json"))?;
    let events = read_events(&dir.join("events.jsonl"))?;
    Ok(metrics::summarize_events(&events, &doc.context)?)
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Simulates every scenario (in parallel) and writes `out/seed-<s>/`.
pub fn run_scenarios(scenarios: &[Scenario], out: &Path) -> Result<Vec<RunArtifacts>, CliError> {
    run_into(scenarios.iter().map(|s| (s.clone(), seed_dir(out, s.seed))).collect())
}

fn run_into(jobs: Vec<(Scenario, PathBuf)>) -> Result<Vec<RunArtifacts>, CliError> {
    jobs.into_par_iter()
        .map(|(scenario, dir)| {
            let result = simulate(&scenario)?;
            write_artifacts(&result, &dir)
        })
        .collect()
}

pub fn cmd_run(scenario_path: &Path, out: &Path, options: &RunOptions) -> Result<Vec<RunArtifacts>, CliError> {
    let scenarios = options.apply(parse_scenario(scenario_path)?);
    run_scenarios(&scenarios, out)
}

/// Aggregated metrics over the seeds of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub label: String,
    pub seeds: usize,
    pub reached: usize,
    /// Geometric mean over seeds; `None` unless every seed reached the target.
    pub time_to_target: Option<f64>,
    pub cost: f64,
    pub bias: f64,
    pub cold_start_ratio: f64,
    pub mean_eur: Option<f64>,
    pub final_loss: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub fn geometric_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    Some((values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp())
}

impl MetricRow {
    pub fn from_summaries(label: impl Into<String>, summaries: &[&Summary]) -> Self {
        let times: Vec<f64> = summaries.iter().filter_map(|s| s.time_to_target).collect();
        let eurs: Vec<f64> = summaries.iter().filter_map(|s| s.mean_eur).collect();
        Self {
            label: label.into(),
            seeds: summaries.len(),
            reached: times.len(),
            time_to_target: if times.len() == summaries.len() {
                geometric_mean(&times)
            } else {
                None
            },
            cost: mean(summaries.iter().map(|s| s.cost)),
            bias: mean(summaries.iter().map(|s| s.bias as f64)),
            cold_start_ratio: mean(summaries.iter().map(|s| s.cold_start_ratio)),
            mean_eur: (!eurs.is_empty()).then(|| mean(eurs.into_iter())),
            final_loss: mean(summaries.iter().map(|s| s.final_loss)),
        }
    }
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "unreached".into(),
    }
}

/// Geometric mean over seeds of `t_base / t` where both runs reached the target.
pub fn speedup(base: &[&Summary], other: &[&Summary]) -> Option<f64> {
    let ratios: Vec<f64> = base
        .iter()
        .zip(other)
        .filter_map(|(b, o)| Some(b.time_to_target? / o.time_to_target?))
        .collect();
    geometric_mean(&ratios)
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<(MetricRow, Option<f64>)>,
    pub runs: Vec<RunArtifacts>,
    pub table: String,
}

/// Runs each strategy on the same pools, tasks and seeds.
pub fn compare_scenarios(
    scenarios: &[Scenario],
    strategies: &[StrategyKind],
    out: &Path,
) -> Result<Comparison, CliError> {
    if strategies.len() < 2 {
        return Err(CliError::InvalidArguments("compare needs at least two strategies".into()));
    }
    let mut jobs = Vec::new();
    for (i, &strategy) in strategies.iter().enumerate() {
        let sdir = out.join(format!("{i}-{strategy}"));
        for s in scenarios {
            jobs.push((s.with_strategy(strategy), seed_dir(&sdir, s.seed)));
        }
    }
    let runs = run_into(jobs)?;
    let per = scenarios.len();
    let groups: Vec<Vec<&Summary>> = runs
        .chunks(per)
        .map(|c| c.iter().map(|r| &r.summary).collect())
        .collect();

    let mut table = String::from("strategy,seeds,reached,time_to_target,speedup,cost,bias,cold_start_ratio,mean_eur,final_loss\n");
    let mut rows = Vec::new();
    for (strategy, group) in strategies.iter().zip(&groups) {
        let row = MetricRow::from_summaries(strategy.name(), group);
        let sp = speedup(&groups[0], group);
        writeln!(
            table,
            "{},{},{},{},{},{:.9},{:.3},{:.6},{},{:.9e}",
            row.label,
            row.seeds,
            row.reached,
            cell(row.time_to_target),
            sp.map(|v| format!("{v:.2}x")).unwrap_or_else(|| "unreached".into()),
            row.cost,
            row.bias,
            row.cold_start_ratio,
            row.mean_eur.map(|v| format!("{v:.6}")).unwrap_or_default(),
            row.final_loss
        )
        .unwrap();
        rows.push((row, sp));
    }
    let path = out.join("compare.csv");
    fs::write(&path, &table).map_err(io_err(&path))?;
    Ok(Comparison { rows, runs, table })
}

pub fn cmd_compare(
    scenario_path: &Path,
    strategies: &[StrategyKind],
    out: &Path,
    options: &RunOptions,
) -> Result<Comparison, CliError> {
    let scenarios = options.apply(parse_scenario(scenario_path)?);
    compare_scenarios(&scenarios, strategies, out)
}

pub const SWEEP_PARAMS: [&str; 4] = ["concurrency_ratio", "clients_per_round", "rho", "buffer_size"];

/// Returns a copy of `scenario` with one sweepable parameter replaced.
pub fn apply_param(scenario: &Scenario, param: &str, value: f64) -> Result<Scenario, CliError> {
    let mut s = scenario.clone();
    let as_count = |v: f64| -> Result<usize, CliError> {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(CliError::InvalidArguments(format!("{param} needs a positive integer, got {v}")))
        }
    };
    match param {
        "concurrency_ratio" => s.params.apodotiko.concurrency_ratio = value,
        "rho" => s.params.apodotiko.rho = value,
        "clients_per_round" => s.clients_per_round = as_count(value)?,
        "buffer_size" => s.params.fedbuff.buffer_size = as_count(value)?,
        other => return Err(CliError::UnknownParameter(other.to_string())),
    }
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub rows: Vec<(f64, MetricRow)>,
    pub runs: Vec<RunArtifacts>,
    pub table: String,
}

pub fn sweep_scenarios(scenarios: &[Scenario], param: &str, values: &[f64], out: &Path) -> Result<Sweep, CliError> {
    if !SWEEP_PARAMS.contains(&param) {
        return Err(CliError::UnknownParameter(param.to_string()));
    }
    if values.is_empty() {
        return Err(CliError::InvalidArguments("sweep needs at least one value".into()));
    }
    let mut jobs = Vec::new();
    for &v in values {
        let vdir = out.join(format!("{param}-{v}"));
        for s in scenarios {
            jobs.push((apply_param(s, param, v)?, seed_dir(&vdir, s.seed)));
        }
    }
    let runs = run_into(jobs)?;
    let mut table = format!("{param},seeds,reached,time_to_target,cost,bias,cold_start_ratio,mean_eur,final_loss\n");
    let mut rows = Vec::new();
    for (&v, chunk) in values.iter().zip(runs.chunks(scenarios.len())) {
        let summaries: Vec<&Summary> = chunk.iter().map(|r| &r.summary).collect();
        let row = MetricRow::from_summaries(v.to_string(), &summaries);
        writeln!(
            table,
            "{},{},{},{},{:.9},{:.3},{:.6},{},{:.9e}",
            v,
            row.seeds,
            row.reached,
            cell(row.time_to_target),
            row.cost,
            row.bias,
            row.cold_start_ratio,
            row.mean_eur.map(|v| format!("{v:.6}")).unwrap_or_default(),
            row.final_loss
        )
        .unwrap();
        rows.push((v, row));
    }
    let path = out.join("sweep.csv");
    fs::write(&path, &table).map_err(io_err(&path))?;
    Ok(Sweep { rows, runs, table })
}

pub fn cmd_sweep(
    scenario_path: &Path,
    param: &str,
    values: &[f64],
    out: &Path,
    options: &RunOptions,
) -> Result<Sweep, CliError> {
    if !SWEEP_PARAMS.contains(&param) {
        return Err(CliError::UnknownParameter(param.to_string()));
    }
    let scenarios = options.apply(parse_scenario(scenario_path)?);
    sweep_scenarios(&scenarios, param, values, out)
}
