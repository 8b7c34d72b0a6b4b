//! Run configuration, solver dispatch, batch aggregation and output files.
//!
//! A run writes `result.json` (deterministic: no wall-clock values),
//! `timing.json`, `trace.csv` (positions, networks and packet counts per
//! agent per tick) and `packets.csv` (packet counts only).

use std::fmt;
use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{centralized_cbs, tpts_run, TptsError};
use crate::cbs::CbsConfig;
use crate::comms::{CommsConfig, Protocol, Range};
use crate::engine::{initialize_plans, EngineConfig, EngineError, EngineStats, RunStatus, SimulationResult, Timing};
use crate::env::{parse_map, parse_scenario, GridMap, MapError, ScenarioError};
use crate::replay;
use crate::scenario::{self, instance_from_entries, random_instance, Instance, InstanceError};
use crate::{AgentId, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Prism,
    Cbs,
    Tpts,
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::Prism => "prism",
            Solver::Cbs => "cbs",
            Solver::Tpts => "tpts",
        })
    }
}

impl FromStr for Solver {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prism" => Ok(Solver::Prism),
            "cbs" => Ok(Solver::Cbs),
            "tpts" => Ok(Solver::Tpts),
            other => Err(HarnessError::Solver(other.to_owned())),
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown solver {0:?} (expected prism, cbs or tpts)")]
    Solver(String),
    #[error("bad generated-map spec {0:?} (expected gen:maze-W-H-C[:seed] or gen:random-W-H-P[:seed])")]
    MapSpec(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Map { path: PathBuf, source: MapError },
    #[error("{path}: {source}")]
    Scenario { path: PathBuf, source: ScenarioError },
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Tpts(#[from] TptsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Buffer(#[from] std::io::Error),
}

fn io_err(path: &FsPath) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_owned(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// `.map` file path, or `gen:maze-W-H-C[:seed]` / `gen:random-W-H-P[:seed]`.
    pub map: String,
    /// `.scen` file; random endpoints from `seed` when absent.
    pub scen: Option<PathBuf>,
    pub solver: Solver,
    pub comms: CommsConfig,
    pub agents: usize,
    pub tasks: usize,
    pub seed: u64,
    /// Wall-clock cap per run, seconds.
    pub time_limit: f64,
    pub max_ticks: Time,
    /// One task per agent, starting where the agent stands.
    pub one_shot: bool,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(map: impl Into<String>, solver: Solver, comms: CommsConfig) -> Self {
        Self {
            map: map.into(),
            scen: None,
            solver,
            comms,
            agents: 4,
            tasks: 8,
            seed: 0,
            time_limit: 120.0,
            max_ticks: 10_000,
            one_shot: false,
            out: None,
        }
    }

    fn time_cap(&self) -> Option<Duration> {
        (self.time_limit > 0.0).then(|| Duration::from_secs_f64(self.time_limit))
    }
}

/// Loads a map file or builds a generated one.
pub fn load_map(spec: &str) -> Result<GridMap, HarnessError> {
    if let Some(rest) = spec.strip_prefix("gen:") {
        let bad = || HarnessError::MapSpec(spec.to_owned());
        let (shape, seed) = match rest.split_once(':') {
            Some((shape, seed)) => (shape, seed.parse::<u64>().map_err(|_| bad())?),
            None => (rest, 0),
        };
        let parts: Vec<&str> = shape.split('-').collect();
        let [kind, w, h, p] = parts[..] else { return Err(bad()) };
        let (w, h, p): (u32, u32, u32) = (w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?, p.parse().map_err(|_| bad())?);
        if w == 0 || h == 0 {
            return Err(bad());
        }
        let mut rng = scenario::rng(seed);
        return match kind {
            "maze" if p >= 1 => Ok(scenario::maze(w, h, p, &mut rng)),
            "random" if p < 100 => Ok(scenario::random_map(w, h, p as f64 / 100.0, &mut rng)),
            _ => Err(bad()),
        };
    }
    let path = PathBuf::from(spec);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    parse_map(&text).map_err(|source| HarnessError::Map { path, source })
}

pub fn build_instance(config: &RunConfig, map: &GridMap, seed: u64) -> Result<Instance, HarnessError> {
    match &config.scen {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let entries = parse_scenario(&text, map).map_err(|source| HarnessError::Scenario { path: path.clone(), source })?;
            Ok(instance_from_entries(&entries, config.agents, config.tasks, config.one_shot)?)
        }
        None => Ok(random_instance(map, config.agents, config.tasks, config.one_shot, &mut scenario::rng(seed))?),
    }
}

/// Dispatches to the configured solver.
///
/// `cbs` on a one-shot instance is a single centralized search; on a
/// multi-task instance it is centralized replanning at every task event,
/// i.e. the engine with every agent in one network.
pub fn run_instance(config: &RunConfig, map: &GridMap, instance: &Instance) -> Result<SimulationResult, HarnessError> {
    let mut engine = EngineConfig::new(config.comms);
    engine.max_ticks = config.max_ticks;
    engine.time_limit = config.time_cap();
    match config.solver {
        Solver::Prism => Ok(initialize_plans(map, &instance.starts, &instance.tasks, engine)?.run()),
        Solver::Cbs if config.one_shot => Ok(one_shot_cbs(map, instance, &engine.cbs)),
        Solver::Cbs => {
            engine.comms = CommsConfig::full();
            Ok(initialize_plans(map, &instance.starts, &instance.tasks, engine)?.run())
        }
        Solver::Tpts => Ok(tpts_run(map, &instance.starts, &instance.tasks, config.max_ticks, config.time_cap())?),
    }
}

fn one_shot_cbs(map: &GridMap, instance: &Instance, config: &CbsConfig) -> SimulationResult {
    let started = Instant::now();
    let ids = (0..instance.starts.len() as u32).map(AgentId);
    let starts = ids.clone().zip(instance.starts.iter().copied()).collect();
    let goals = ids.zip(instance.tasks.iter().map(|t| t.1)).collect();
    let solved = centralized_cbs(map, &starts, &goals, config);
    let elapsed = started.elapsed();
    let timing = Timing { planning: elapsed, allocation: Duration::ZERO, total: elapsed };
    match solved {
        Ok(sol) => {
            let trajectories = replay::paths_to_trajectories(sol.plans.values().map(|p| &p.path));
            let per_agent_cost: Vec<u64> = sol.plans.values().map(|p| p.path.end_time() as u64).collect();
            let violations = replay::find_conflicts(&trajectories).iter().map(|c| c.to_string()).collect();
            SimulationResult {
                status: RunStatus::Success,
                sum_of_costs: sol.cost,
                ticks: per_agent_cost.iter().copied().max().unwrap_or(0) as Time,
                per_agent_cost,
                tasks_done: instance.tasks.len(),
                tasks_total: instance.tasks.len(),
                trajectories,
                trace: Vec::new(),
                stats: EngineStats { cbs_calls: 1, cbs_expanded: sol.stats.expanded, ..EngineStats::default() },
                violations,
                timing,
            }
        }
        Err(_) => SimulationResult {
            status: RunStatus::Stalled,
            sum_of_costs: 0,
            per_agent_cost: vec![0; instance.starts.len()],
            ticks: 0,
            tasks_done: 0,
            tasks_total: instance.tasks.len(),
            trajectories: instance.starts.iter().map(|&s| vec![s]).collect(),
            trace: Vec::new(),
            stats: EngineStats { cbs_calls: 1, cbs_failures: 1, ..EngineStats::default() },
            violations: Vec::new(),
            timing,
        },
    }
}

/// The deterministic part of a run, as written to `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub solver: Solver,
    pub protocol: Protocol,
    pub range: Range,
    pub map: String,
    pub seed: u64,
    pub agents: usize,
    pub tasks: usize,
    pub status: RunStatus,
    pub success: bool,
    pub sum_of_costs: u64,
    pub per_agent_cost: Vec<u64>,
    pub ticks: Time,
    pub tasks_done: usize,
    pub tasks_total: usize,
    pub violations: Vec<String>,
    pub stats: EngineStats,
}

impl ResultRecord {
    pub fn new(config: &RunConfig, seed: u64, result: &SimulationResult) -> Self {
        Self {
            solver: config.solver,
            protocol: config.comms.protocol,
            range: config.comms.range,
            map: config.map.clone(),
            seed,
            agents: result.trajectories.len(),
            tasks: result.tasks_total,
            status: result.status,
            success: result.status == RunStatus::Success && result.violations.is_empty(),
            sum_of_costs: result.sum_of_costs,
            per_agent_cost: result.per_agent_cost.clone(),
            ticks: result.ticks,
            tasks_done: result.tasks_done,
            tasks_total: result.tasks_total,
            violations: result.violations.clone(),
            stats: result.stats,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub planning_seconds: f64,
    pub allocation_seconds: f64,
    pub total_seconds: f64,
}

impl From<&Timing> for TimingRecord {
    fn from(t: &Timing) -> Self {
        Self {
            planning_seconds: t.planning.as_secs_f64(),
            allocation_seconds: t.allocation.as_secs_f64(),
            total_seconds: t.total.as_secs_f64(),
        }
    }
}

#[derive(Debug, Serialize)]
struct PacketRow {
    tick: Time,
    agent: u32,
    bounded: usize,
    infinite: usize,
}

/// Packet counts per agent per tick: `tick,agent,bounded,infinite`.
pub fn emit_packet_trace(result: &SimulationResult) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if result.trace.is_empty() {
        w.write_record(["tick", "agent", "bounded", "infinite"])?;
    }
    for r in &result.trace {
        w.serialize(PacketRow { tick: r.tick, agent: r.agent, bounded: r.bounded, infinite: r.infinite })?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
}

/// Full per-tick trace: `tick,agent,x,y,network,bounded,infinite`.
pub fn emit_trace(result: &SimulationResult) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if result.trace.is_empty() {
        w.write_record(["tick", "agent", "x", "y", "network", "bounded", "infinite"])?;
    }
    for r in &result.trace {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
}

fn write(path: PathBuf, contents: &str) -> Result<(), HarnessError> {
    fs::write(&path, contents).map_err(io_err(&path))
}

/// Writes the four per-run files into `dir`.
pub fn write_run(dir: &FsPath, record: &ResultRecord, result: &SimulationResult) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write(dir.join("result.json"), &(serde_json::to_string_pretty(record)? + "\n"))?;
    write(dir.join("timing.json"), &(serde_json::to_string_pretty(&TimingRecord::from(&result.timing))? + "\n"))?;
    write(dir.join("trace.csv"), &emit_trace(result)?)?;
    write(dir.join("packets.csv"), &emit_packet_trace(result)?)?;
    Ok(())
}

/// One complete run: load, build, solve, and write outputs if configured.
pub fn run_once(config: &RunConfig) -> Result<(ResultRecord, SimulationResult), HarnessError> {
    let map = load_map(&config.map)?;
    let instance = build_instance(config, &map, config.seed)?;
    let result = run_instance(config, &map, &instance)?;
    let record = ResultRecord::new(config, config.seed, &result);
    if let Some(dir) = &config.out {
        write_run(dir, &record, &result)?;
    }
    Ok((record, result))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub scenario: usize,
    pub seed: u64,
    pub status: String,
    pub success: bool,
    /// Planning seconds; failed runs are recorded at the cap.
    pub runtime: f64,
    pub sum_of_costs: u64,
    pub ticks: Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub scenarios: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub runtime_mean: f64,
    pub runtime_std: f64,
    /// Over successful runs only; `None` when there were none.
    pub cost_mean: Option<f64>,
    pub cost_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub rows: Vec<BatchRow>,
    pub summary: BatchSummary,
}

/// Population mean and standard deviation; `(0, 0)` for no samples.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize(rows: &[BatchRow]) -> BatchSummary {
    let runtimes: Vec<f64> = rows.iter().map(|r| r.runtime).collect();
    let costs: Vec<f64> = rows.iter().filter(|r| r.success).map(|r| r.sum_of_costs as f64).collect();
    let (runtime_mean, runtime_std) = mean_std(&runtimes);
    let (cost_mean, cost_std) = mean_std(&costs);
    let successes = costs.len();
    BatchSummary {
        scenarios: rows.len(),
        successes,
        success_rate: if rows.is_empty() { 0.0 } else { successes as f64 / rows.len() as f64 },
        runtime_mean,
        runtime_std,
        cost_mean: (!costs.is_empty()).then_some(cost_mean),
        cost_std: (!costs.is_empty()).then_some(cost_std),
    }
}

/// Runs `count` scenarios with seeds `seed, seed + 1, ...`. A scenario that
/// errors is recorded as a failed row; the batch continues. With an output
/// directory, each run goes to `scenario-<k>/` and the batch writes
/// `batch.csv` and `summary.json`.
pub fn run_batch(config: &RunConfig, count: usize) -> Result<BatchReport, HarnessError> {
    let cap = config.time_limit.max(0.0);
    let map = load_map(&config.map);
    let mut rows = Vec::with_capacity(count);
    for k in 0..count {
        let seed = config.seed + k as u64;
        let outcome = map.as_ref().map_err(|e| e.to_string()).and_then(|map| {
            let instance = build_instance(config, map, seed).map_err(|e| e.to_string())?;
            let result = run_instance(config, map, &instance).map_err(|e| e.to_string())?;
            let record = ResultRecord::new(config, seed, &result);
            if let Some(dir) = &config.out {
                write_run(&dir.join(format!("scenario-{k}")), &record, &result).map_err(|e| e.to_string())?;
            }
            Ok((record, result))
        });
        rows.push(match outcome {
            Ok((record, result)) => {
                let runtime = if record.success { result.timing.planning.as_secs_f64() } else { cap };
                BatchRow {
                    scenario: k,
                    seed,
                    status: format!("{:?}", record.status).to_lowercase(),
                    success: record.success,
                    runtime,
                    sum_of_costs: record.sum_of_costs,
                    ticks: record.ticks,
                }
            }
            Err(message) => BatchRow {
                scenario: k,
                seed,
                status: format!("error: {message}"),
                success: false,
                runtime: cap,
                sum_of_costs: 0,
                ticks: 0,
            },
        });
    }
    let report = BatchReport { summary: summarize(&rows), rows };
    if let Some(dir) = &config.out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        if report.rows.is_empty() {
            w.write_record(["scenario", "seed", "status", "success", "runtime", "sum_of_costs", "ticks"])?;
        }
        for row in &report.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        fs::write(dir.join("batch.csv"), bytes).map_err(io_err(dir))?;
        write(dir.join("summary.json"), &(serde_json::to_string_pretty(&report.summary)? + "\n"))?;
    }
    Ok(report)
}
