//! End-to-end acceptance suite. Each test prints one `criterion N` line and
//! then asserts. Tests share cached run sets and take a global lock so the
//! timing criterion never competes with other work for the CPU.

mod common;

use std::collections::BTreeMap;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use common::{id_map, joint_optimum, small_instance};
use prism_core::baselines::{centralized_cbs, tpts_run};
use prism_core::cbs::CbsConfig;
use prism_core::comms::CommsConfig;
use prism_core::engine::{initialize_plans, EngineConfig, RunStatus, SimulationResult};
use prism_core::env::{GridMap, Vertex};
use prism_core::harness::{run_once, RunConfig, Solver};
use prism_core::replay::{find_conflicts, paths_to_trajectories};
use prism_core::scenario::{self, dead_end_instance, keep_largest_region, maze, random_instance, random_map};
use rand::Rng;

const ORACLE_INSTANCES: usize = 200;
const ORACLE_TIME_CAP: Duration = Duration::from_secs(60);
const EQUIVALENCE_INSTANCES: u64 = 50;
const MAZE_RUNS: u64 = 100;
const MAZE_TIME_CAP: Duration = Duration::from_secs(3);
const DEADLOCK_TICKS: u32 = 10_000;
const DEAD_END_INSTANCES: u64 = 20;
const DEAD_END_MIN_PRISM: usize = 18;
const DEAD_END_TIME_CAP: Duration = Duration::from_secs(5);
const SCALING_SEEDS: u64 = 10;
const SCALING_MAX_RATIO: f64 = 3.0;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {n} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn engine(map: &GridMap, starts: &[Vertex], tasks: &[(Vertex, Vertex)], comms: CommsConfig, cap: Option<Duration>) -> SimulationResult {
    let mut cfg = EngineConfig::new(comms);
    cfg.time_limit = cap;
    initialize_plans(map, starts, tasks, cfg).expect("valid instance").run()
}

// ---------------------------------------------------------------------------
// run sets, computed once and shared

struct OracleRun {
    seed: u64,
    cbs: Option<u64>,
    optimum: u64,
    trajectories: Vec<Vec<Vertex>>,
}

struct OracleSet {
    runs: Vec<OracleRun>,
    cbs_time: Duration,
}

/// The first solvable draws of small random instances, in seed order.
fn oracle_runs() -> &'static OracleSet {
    static CELL: OnceLock<OracleSet> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut runs = Vec::new();
        let mut cbs_time = Duration::ZERO;
        let mut seed = 1;
        while runs.len() < ORACLE_INSTANCES {
            seed += 1;
            let Some((map, starts, goals)) = small_instance(seed, 6, 3) else { continue };
            let Some(optimum) = joint_optimum(&map, &starts, &goals) else { continue };
            let started = Instant::now();
            let sol = centralized_cbs(&map, &id_map(&starts), &id_map(&goals), &CbsConfig::default());
            cbs_time += started.elapsed();
            let trajectories = match &sol {
                Ok(s) => paths_to_trajectories(s.plans.values().map(|p| &p.path)),
                Err(_) => Vec::new(),
            };
            runs.push(OracleRun { seed, cbs: sol.ok().map(|s| s.cost), optimum, trajectories });
        }
        OracleSet { runs, cbs_time }
    })
}

struct EquivalenceRun {
    seed: u64,
    agents: usize,
    side: (u32, u32),
    cbs: Option<u64>,
    cbs_trajectories: Vec<Vec<Vertex>>,
    prism: SimulationResult,
}

/// One-shot instances on random maps up to 32x32 with up to 8 agents.
fn equivalence_runs() -> &'static Vec<EquivalenceRun> {
    static CELL: OnceLock<Vec<EquivalenceRun>> = OnceLock::new();
    CELL.get_or_init(|| {
        (0..EQUIVALENCE_INSTANCES)
            .map(|seed| {
                let mut rng = scenario::rng(seed);
                let side = (rng.gen_range(8..=32), rng.gen_range(8..=32));
                let agents = rng.gen_range(2..=8);
                let map = keep_largest_region(&random_map(side.0, side.1, 0.2, &mut rng));
                let inst = random_instance(&map, agents, agents, true, &mut rng).expect("enough cells");
                let goals: Vec<Vertex> = inst.tasks.iter().map(|t| t.1).collect();
                let sol = centralized_cbs(&map, &id_map(&inst.starts), &id_map(&goals), &CbsConfig::default());
                let cbs_trajectories = match &sol {
                    Ok(s) => paths_to_trajectories(s.plans.values().map(|p| &p.path)),
                    Err(_) => Vec::new(),
                };
                let prism = engine(&map, &inst.starts, &inst.tasks, CommsConfig::full(), Some(Duration::from_secs(30)));
                EquivalenceRun { seed, agents, side, cbs: sol.ok().map(|s| s.cost), cbs_trajectories, prism }
            })
            .collect()
    })
}

struct MazeRun {
    seed: u64,
    protocol: &'static str,
    agents: usize,
    result: SimulationResult,
}

/// Constrained-communication runs on width-2 32x32 mazes, half proximity
/// and half line of sight, 2 to 10 agents with twice as many tasks.
fn maze_runs() -> &'static Vec<MazeRun> {
    static CELL: OnceLock<Vec<MazeRun>> = OnceLock::new();
    CELL.get_or_init(|| {
        (0..MAZE_RUNS)
            .map(|k| {
                let seed = k / 2;
                let (protocol, comms) =
                    if k % 2 == 0 { ("prox", CommsConfig::min_proximity()) } else { ("los", CommsConfig::line_of_sight()) };
                let agents = 2 + (seed as usize % 9);
                let mut rng = scenario::rng(seed);
                let map = maze(32, 32, 2, &mut rng);
                let inst = random_instance(&map, agents, 2 * agents, false, &mut rng).expect("enough cells");
                let result = engine(&map, &inst.starts, &inst.tasks, comms, Some(MAZE_TIME_CAP));
                MazeRun { seed, protocol, agents, result }
            })
            .collect()
    })
}

struct Scenario {
    name: &'static str,
    map: GridMap,
    starts: Vec<Vertex>,
    tasks: Vec<(Vertex, Vertex)>,
}

fn v(x: u32, y: u32) -> Vertex {
    Vertex::new(x, y)
}

/// Two networks meet head-on in a ring corridor with a single exit.
fn two_networks() -> Scenario {
    let map = GridMap::from_fn(18, 11, |p| p.x == 0 || p.y == 0 || p.y == 10 || p.x == 14 || (p.y == 5 && p.x > 14));
    Scenario {
        name: "two networks",
        map,
        starts: vec![v(0, 4), v(0, 6)],
        tasks: vec![(v(0, 4), v(17, 5)), (v(0, 6), v(16, 5))],
    }
}

/// One moving agent passes three agents resting in a wide corridor.
fn resting_agents() -> Scenario {
    Scenario {
        name: "resting agents",
        map: GridMap::open(30, 8),
        starts: vec![v(1, 1), v(8, 0), v(18, 2), v(15, 7)],
        tasks: vec![(v(1, 1), v(28, 1))],
    }
}

fn corridor_swap() -> Scenario {
    Scenario {
        name: "corridor swap",
        map: GridMap::from_rows(&["............", "@@@@@@.@@@@@"]).unwrap(),
        starts: vec![v(0, 0), v(11, 0)],
        tasks: vec![(v(0, 0), v(10, 0)), (v(11, 0), v(1, 0))],
    }
}

fn bottleneck() -> Scenario {
    Scenario {
        name: "bottleneck",
        map: GridMap::from_rows(&["....@....", "....@....", ".........", "....@....", "....@...."]).unwrap(),
        starts: vec![v(0, 1), v(1, 3), v(8, 2)],
        tasks: vec![(v(0, 1), v(7, 1)), (v(1, 3), v(8, 3)), (v(8, 2), v(0, 2))],
    }
}

fn deadlock_runs() -> &'static Vec<(Scenario, SimulationResult)> {
    static CELL: OnceLock<Vec<(Scenario, SimulationResult)>> = OnceLock::new();
    CELL.get_or_init(|| {
        [two_networks(), resting_agents(), corridor_swap(), bottleneck()]
            .into_iter()
            .map(|s| {
                let mut cfg = EngineConfig::new(CommsConfig::min_proximity());
                cfg.max_ticks = DEADLOCK_TICKS;
                let result = initialize_plans(&s.map, &s.starts, &s.tasks, cfg).expect("valid scenario").run();
                (s, result)
            })
            .collect()
    })
}

struct DeadEndRun {
    tpts: RunStatus,
    prism: SimulationResult,
}

fn dead_end_runs() -> &'static Vec<DeadEndRun> {
    static CELL: OnceLock<Vec<DeadEndRun>> = OnceLock::new();
    CELL.get_or_init(|| {
        (0..DEAD_END_INSTANCES)
            .map(|seed| {
                let (map, inst) = dead_end_instance(seed, 15, 0);
                let tpts = tpts_run(&map, &inst.starts, &inst.tasks, 10_000, Some(DEAD_END_TIME_CAP)).expect("valid instance");
                let prism = engine(&map, &inst.starts, &inst.tasks, CommsConfig::min_proximity(), Some(DEAD_END_TIME_CAP));
                DeadEndRun { tpts: tpts.status, prism }
            })
            .collect()
    })
}

fn successes(rs: impl IntoIterator<Item = bool>) -> usize {
    rs.into_iter().filter(|&b| b).count()
}

// ---------------------------------------------------------------------------
// criteria

#[test]
fn criterion_1_oracle_optimality() {
    let _g = serial();
    let set = oracle_runs();
    let matched = successes(set.runs.iter().map(|r| r.cbs == Some(r.optimum)));
    let misses: Vec<String> =
        set.runs.iter().filter(|r| r.cbs != Some(r.optimum)).map(|r| format!("seed {} cbs {:?} oracle {}", r.seed, r.cbs, r.optimum)).collect();
    let pass = matched == ORACLE_INSTANCES && set.cbs_time < ORACLE_TIME_CAP;
    report(
        1,
        "oracle optimality",
        pass,
        format!("{matched}/{ORACLE_INSTANCES} exact, cbs time {:.2}s (cap {}s) {misses:?}", set.cbs_time.as_secs_f64(), ORACLE_TIME_CAP.as_secs()),
    );
}

#[test]
fn criterion_2_full_connectivity_equals_cbs() {
    let _g = serial();
    let runs = equivalence_runs();
    let mut misses = Vec::new();
    for r in runs {
        let prism = (r.prism.status == RunStatus::Success).then_some(r.prism.sum_of_costs);
        if r.cbs.is_none() || prism != r.cbs {
            misses.push(format!("seed {} {}x{} {} agents: cbs {:?} prism {:?}", r.seed, r.side.0, r.side.1, r.agents, r.cbs, prism));
        }
    }
    let equal = runs.len() - misses.len();
    report(2, "full connectivity equals cbs", misses.is_empty(), format!("{equal}/{} identical sum of costs {misses:?}", runs.len()));
}

#[test]
fn criterion_3_replay_safety() {
    let _g = serial();
    let mut checked = 0;
    let mut conflicts = Vec::new();
    let mut check = |label: String, trajectories: &[Vec<Vertex>]| {
        checked += 1;
        let found = find_conflicts(trajectories);
        if !found.is_empty() {
            conflicts.push(format!("{label}: {}", found[0]));
        }
    };
    for r in &oracle_runs().runs {
        check(format!("oracle seed {}", r.seed), &r.trajectories);
    }
    for r in equivalence_runs() {
        check(format!("equivalence cbs seed {}", r.seed), &r.cbs_trajectories);
        check(format!("equivalence prism seed {}", r.seed), &r.prism.trajectories);
    }
    let mazes = maze_runs();
    for r in mazes {
        check(format!("maze {} seed {} ({} agents)", r.protocol, r.seed, r.agents), &r.result.trajectories);
    }
    let solved = successes(mazes.iter().map(|r| r.result.status == RunStatus::Success));
    report(
        3,
        "replay safety",
        conflicts.is_empty(),
        format!("{checked} runs replayed, {} with conflicts; maze runs solved {solved}/{} {conflicts:?}", conflicts.len(), mazes.len()),
    );
}

#[test]
fn criterion_4_deadlock_regression() {
    let _g = serial();
    let mut lines = Vec::new();
    let mut pass = true;
    for (s, r) in deadlock_runs() {
        let ok = r.status == RunStatus::Success && r.tasks_done == r.tasks_total && r.ticks <= DEADLOCK_TICKS;
        pass &= ok;
        lines.push(format!("{} {:?} in {} ticks", s.name, r.status, r.ticks));
    }
    report(4, "deadlock regression", pass, lines.join(", "));
}

#[test]
fn criterion_5_packet_lifecycle() {
    let _g = serial();
    let mut runs: Vec<(String, &SimulationResult, usize)> = Vec::new();
    for r in equivalence_runs() {
        runs.push((format!("equivalence seed {}", r.seed), &r.prism, r.agents));
    }
    for r in maze_runs() {
        runs.push((format!("maze {} seed {}", r.protocol, r.seed), &r.result, r.agents));
    }
    for (s, r) in deadlock_runs() {
        runs.push((s.name.to_owned(), r, s.starts.len()));
    }
    for (seed, r) in dead_end_runs().iter().enumerate() {
        runs.push((format!("dead end seed {seed}"), &r.prism, r.prism.per_agent_cost.len()));
    }
    let mut broken = Vec::new();
    for (label, r, agents) in &runs {
        let cap = agents.saturating_sub(2);
        if let Some(v) = r.violations.first() {
            broken.push(format!("{label}: {v}"));
        }
        if r.stats.max_infinite_held > cap || r.trace.iter().any(|row| row.infinite > cap) {
            broken.push(format!("{label}: more than {cap} infinite packets"));
        }
    }

    // the moving agent of the resting-agent scenario collects one infinite
    // packet per resting agent it passes, up to the cap, and drops them all
    // when its task completes
    let (scen, fig) = &deadlock_runs()[1];
    let cap = scen.starts.len() - 2;
    let series: Vec<(u32, usize)> = fig.trace.iter().filter(|row| row.agent == 0).map(|row| (row.tick, row.infinite)).collect();
    let peak = series.iter().position(|&(_, c)| c == cap);
    let rises = peak.is_some_and(|p| series[0].1 == 0 && series[..=p].windows(2).all(|w| w[1].1 >= w[0].1));
    let done = fig.per_agent_cost[0] as u32;
    let before: Vec<usize> = series.iter().filter(|(t, _)| *t < done).map(|&(_, c)| c).collect();
    let drops = peak.is_some_and(|p| series[p].0 < done)
        && before.last() == Some(&cap)
        && series.iter().filter(|(t, _)| *t >= done).all(|&(_, c)| c == 0);
    let shape = format!(
        "R0 infinite packets reach {cap} at tick {:?}, hold {cap} until tick {}, zero from task completion at tick {done}",
        peak.map(|p| series[p].0),
        done - 1
    );

    let pass = broken.is_empty() && rises && drops;
    report(5, "packet lifecycle", pass, format!("{} runs checked, {} broken; {shape} {broken:?}", runs.len(), broken.len()));
}

#[test]
fn criterion_6_tpts_stalls_where_prism_succeeds() {
    let _g = serial();
    let runs = dead_end_runs();
    let stalled = successes(runs.iter().map(|r| r.tpts == RunStatus::Stalled));
    let solved = successes(runs.iter().map(|r| r.prism.status == RunStatus::Success));
    let pass = stalled == runs.len() && solved >= DEAD_END_MIN_PRISM;
    report(
        6,
        "tpts failure mode",
        pass,
        format!("tpts stalled {stalled}/{}, prism solved {solved}/{} (need {DEAD_END_MIN_PRISM})", runs.len(), runs.len()),
    );
}

#[test]
fn criterion_7_scaling_trend() {
    let _g = serial();
    let mut means = BTreeMap::new();
    for agents in 2..=10usize {
        let mut total = Duration::ZERO;
        for seed in 0..SCALING_SEEDS {
            let mut rng = scenario::rng(seed);
            let map = keep_largest_region(&random_map(32, 32, 0.2, &mut rng));
            let inst = random_instance(&map, agents, 2 * agents, false, &mut rng).expect("enough cells");
            let r = engine(&map, &inst.starts, &inst.tasks, CommsConfig::min_proximity(), Some(Duration::from_secs(120)));
            total += r.timing.planning;
        }
        means.insert(agents, total.as_secs_f64() / SCALING_SEEDS as f64);
    }
    let ratios: Vec<(usize, f64)> = (3..=10).map(|n| (n, means[&n] / means[&(n - 1)])).collect();
    let worst = ratios.iter().copied().fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let detail = ratios.iter().map(|(n, r)| format!("{}->{n}: {r:.2}", n - 1)).collect::<Vec<_>>().join(", ");
    report(
        7,
        "scaling trend",
        worst.1 < SCALING_MAX_RATIO,
        format!("mean planning 2 agents {:.3}ms, 10 agents {:.3}ms; ratios {detail}", means[&2] * 1e3, means[&10] * 1e3),
    );
}

#[test]
fn criterion_8_determinism() {
    let _g = serial();
    let configs = [
        ("prism prox", "gen:maze-24-24-2:3", Solver::Prism, CommsConfig::min_proximity(), false),
        ("prism los", "gen:random-24-24-20:4", Solver::Prism, CommsConfig::line_of_sight(), false),
        ("prism full", "gen:random-20-20-20:5", Solver::Prism, CommsConfig::full(), true),
        ("cbs one shot", "gen:random-20-20-20:5", Solver::Cbs, CommsConfig::full(), true),
        ("tpts", "gen:random-24-24-10:6", Solver::Tpts, CommsConfig::full(), false),
    ];
    let dir = tempfile::tempdir().expect("temp dir");
    let mut differing = Vec::new();
    for (name, map, solver, comms, one_shot) in configs {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let mut cfg = RunConfig::new(map, solver, comms);
            cfg.agents = 5;
            cfg.tasks = 10;
            cfg.seed = 11;
            cfg.one_shot = one_shot;
            cfg.time_limit = 30.0;
            let out = dir.path().join(format!("{}-{rep}", name.replace(' ', "-")));
            cfg.out = Some(out.clone());
            run_once(&cfg).expect("run");
            let files: Vec<Vec<u8>> =
                ["result.json", "trace.csv", "packets.csv"].iter().map(|f| std::fs::read(out.join(f)).expect("output file")).collect();
            outputs.push(files);
        }
        if outputs[0] != outputs[1] {
            differing.push(name);
        }
    }
    report(8, "determinism", differing.is_empty(), format!("{} configurations run twice, differing: {differing:?}", configs.len()));
}
