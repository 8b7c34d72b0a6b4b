//! Reference solvers: one-shot centralized CBS, and token passing with
//! task swaps (TPTS).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::{Duration, Instant};

use crate::cbs::{modified_cbs, CbsAgent, CbsConfig, CbsError, CbsSolution};
use crate::engine::{RunStatus, SimulationResult, Timing, TraceRow};
use crate::env::{manhattan, GridMap, Vertex};
use crate::lowlevel::{
    default_horizon, plan_path_with, Constraint, ConstraintSet, DistanceCache, Path, PlanRequest, StaticObstacleSet,
};
use crate::replay;
use crate::tasking::TaskError;
use crate::{AgentId, TaskId, Time};

/// Classic CBS from `starts` to `goals` at t = 0, seeded with each agent's
/// unconstrained shortest path.
pub fn centralized_cbs(
    map: &GridMap,
    starts: &BTreeMap<AgentId, Vertex>,
    goals: &BTreeMap<AgentId, Vertex>,
    config: &CbsConfig,
) -> Result<CbsSolution, CbsError> {
    let cache = DistanceCache::new();
    let empty = ConstraintSet::new();
    let none = StaticObstacleSet::new();
    let mut agents = Vec::with_capacity(starts.len());
    for (&id, &start) in starts {
        let goal = goals[&id];
        let path =
            plan_path_with(map, &cache, &PlanRequest::new(start, goal, 0, &empty, &none)).map_err(|_| CbsError::Root(id))?;
        agents.push(CbsAgent {
            id,
            position: start,
            goal,
            path,
            constraints: ConstraintSet::new(),
            obstacles: StaticObstacleSet::new(),
        });
    }
    modified_cbs(map, &cache, 0, &agents, &[], config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    ToStart { arrival: Time },
    ToGoal,
}

#[derive(Debug, Clone)]
struct TptsAgent {
    position: Vertex,
    home: Vertex,
    task: Option<(TaskId, Phase)>,
    path: Path,
    idle_since: Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TaskStatus {
    Open,
    Assigned(AgentId),
    Started,
    Done,
}

/// Token state: the plan every agent has reserved, plus the task ledger.
/// Only the current holder mutates it.
#[derive(Debug, Clone)]
pub struct TptsToken {
    pub reserved: BTreeMap<AgentId, Path>,
    pub queue: VecDeque<AgentId>,
}

struct Tpts<'a> {
    map: &'a GridMap,
    cache: DistanceCache,
    clock: Time,
    agents: Vec<TptsAgent>,
    tasks: Vec<(Vertex, Vertex)>,
    status: Vec<TaskStatus>,
    token: TptsToken,
    planning: Duration,
}

impl Tpts<'_> {
    /// Reservations of everyone but `except`, as constraints plus cells
    /// blocked from the time each reserved path ends.
    fn reservations(&self, except: &BTreeSet<AgentId>) -> (ConstraintSet, Vec<(Vertex, Time)>) {
        let mut constraints = ConstraintSet::new();
        let mut parked = Vec::new();
        for (&id, path) in &self.token.reserved {
            if except.contains(&id) {
                continue;
            }
            let end = path.end_time().max(self.clock);
            for t in self.clock..end {
                let (here, next) = (path.position_at(t).unwrap(), path.position_at(t + 1).unwrap());
                constraints.insert(Constraint::vertex(next, t + 1, id));
                if here != next {
                    constraints.insert(Constraint::edge(next, here, t, id));
                }
            }
            parked.push((path.position_at(end).unwrap(), end));
        }
        (constraints, parked)
    }

    fn horizon(&self, constraints: &ConstraintSet) -> Time {
        default_horizon(self.map, self.agents.len(), self.clock, constraints)
    }

    /// Path for `id` via `waypoint` (pass-through) to `goal` (rest), avoiding
    /// reservations of everyone outside `ignore`.
    fn plan(&mut self, id: AgentId, waypoint: Option<Vertex>, goal: Vertex, ignore: &BTreeSet<AgentId>) -> Option<(Path, Time)> {
        let started = Instant::now();
        let mut except = ignore.clone();
        except.insert(id);
        let (constraints, parked) = self.reservations(&except);
        let horizon = self.horizon(&constraints);
        let none = StaticObstacleSet::new();
        let from = self.agents[id.0 as usize].position;
        let result = (|| {
            let (mut positions, arrival) = match waypoint {
                Some(w) => {
                    let req = PlanRequest::new(from, w, self.clock, &constraints, &none)
                        .occupied_from(&parked)
                        .pass_through()
                        .horizon(horizon);
                    let leg = plan_path_with(self.map, &self.cache, &req).ok()?;
                    let arrival = leg.end_time();
                    (leg.positions, arrival)
                }
                None => (vec![from], self.clock),
            };
            let at = *positions.last().unwrap();
            let req = PlanRequest::new(at, goal, arrival, &constraints, &none).occupied_from(&parked).horizon(horizon);
            let leg = plan_path_with(self.map, &self.cache, &req).ok()?;
            positions.extend_from_slice(&leg.positions[1..]);
            Some((Path::new(self.clock, positions), arrival))
        })();
        self.planning += started.elapsed();
        result
    }

    fn estimate(&self, id: AgentId, task: TaskId) -> u32 {
        manhattan(self.agents[id.0 as usize].position, self.tasks[task.0 as usize].0)
    }

    fn assign(&mut self, id: AgentId, task: TaskId, path: Path, arrival: Time) {
        let start = self.tasks[task.0 as usize].0;
        let phase = if arrival == self.clock && self.agents[id.0 as usize].position == start {
            self.status[task.0 as usize] = TaskStatus::Started;
            Phase::ToGoal
        } else {
            self.status[task.0 as usize] = TaskStatus::Assigned(id);
            Phase::ToStart { arrival }
        };
        let agent = &mut self.agents[id.0 as usize];
        agent.task = Some((task, phase));
        agent.path = path.clone();
        self.token.reserved.insert(id, path);
    }

    /// Go home, or failing that stay put, without a task.
    fn park(&mut self, id: AgentId, ignore: &BTreeSet<AgentId>) -> bool {
        let (home, here) = (self.agents[id.0 as usize].home, self.agents[id.0 as usize].position);
        for target in [home, here] {
            if let Some((path, _)) = self.plan(id, None, target, ignore) {
                let agent = &mut self.agents[id.0 as usize];
                agent.task = None;
                agent.path = path.clone();
                self.token.reserved.insert(id, path);
                return true;
            }
        }
        false
    }

    /// Token-holder step. Returns false when the holder must retry later.
    fn hold_token(&mut self, id: AgentId) -> bool {
        // A committed but unplannable task is retried as-is.
        if let Some((task, Phase::ToStart { .. })) = self.agents[id.0 as usize].task {
            let (s, g) = self.tasks[task.0 as usize];
            if let Some((path, arrival)) = self.plan(id, Some(s), g, &BTreeSet::new()) {
                self.assign(id, task, path, arrival);
                return true;
            }
            return false;
        }

        let mut options: Vec<(u32, TaskId, Option<AgentId>)> = Vec::new();
        for (i, status) in self.status.iter().enumerate() {
            let t = TaskId(i as u32);
            match *status {
                TaskStatus::Open => options.push((self.estimate(id, t), t, None)),
                TaskStatus::Assigned(other) if other != id && self.estimate(id, t) < self.estimate(other, t) => {
                    options.push((self.estimate(id, t), t, Some(other)))
                }
                _ => {}
            }
        }
        options.sort();

        for (_, task, holder) in options {
            let (s, g) = self.tasks[task.0 as usize];
            match holder {
                None => {
                    // Commit to the nearest open task even if no path exists yet.
                    if let Some((path, arrival)) = self.plan(id, Some(s), g, &BTreeSet::new()) {
                        self.assign(id, task, path, arrival);
                        return true;
                    }
                    self.status[task.0 as usize] = TaskStatus::Assigned(id);
                    self.agents[id.0 as usize].task = Some((task, Phase::ToStart { arrival: Time::MAX }));
                    return false;
                }
                Some(other) => {
                    let ignore = BTreeSet::from([other]);
                    let Some((path, arrival)) = self.plan(id, Some(s), g, &ignore) else { continue };
                    let saved = (self.agents[other.0 as usize].clone(), self.token.reserved.get(&other).cloned());
                    let previous = self.token.reserved.get(&id).cloned();
                    self.assign(id, task, path, arrival);
                    self.agents[other.0 as usize].task = None;
                    if self.displaced(other) {
                        return true;
                    }
                    // revert the swap
                    self.agents[other.0 as usize] = saved.0;
                    if let Some(p) = saved.1 {
                        self.token.reserved.insert(other, p);
                    }
                    self.status[task.0 as usize] = TaskStatus::Assigned(other);
                    self.agents[id.0 as usize].task = None;
                    match previous {
                        Some(p) => {
                            self.agents[id.0 as usize].path = p.clone();
                            self.token.reserved.insert(id, p);
                        }
                        None => {
                            self.token.reserved.remove(&id);
                        }
                    }
                }
            }
        }
        self.park(id, &BTreeSet::new())
    }

    /// An agent that just lost its task takes the nearest plannable open
    /// task, or parks.
    fn displaced(&mut self, id: AgentId) -> bool {
        let mut open: Vec<(u32, TaskId)> = (0..self.status.len())
            .filter(|&i| self.status[i] == TaskStatus::Open)
            .map(|i| (self.estimate(id, TaskId(i as u32)), TaskId(i as u32)))
            .collect();
        open.sort();
        if let Some(&(_, task)) = open.first() {
            let (s, g) = self.tasks[task.0 as usize];
            if let Some((path, arrival)) = self.plan(id, Some(s), g, &BTreeSet::new()) {
                self.assign(id, task, path, arrival);
                return true;
            }
        }
        self.park(id, &BTreeSet::new())
    }

    fn all_done(&self) -> bool {
        self.status.iter().all(|s| *s == TaskStatus::Done)
    }

    fn idle(&self) -> bool {
        self.agents.iter().all(|a| a.task.is_none() && self.clock >= a.path.end_time())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TptsError {
    #[error("agents {0} and {1} share start {2}")]
    SharedStart(AgentId, AgentId, Vertex),
    #[error(transparent)]
    Tasks(#[from] TaskError),
}

/// Runs token passing with task swaps until every task is done and every
/// agent is parked, or nothing can change any more (reported as
/// `Stalled`), or a limit trips.
pub fn tpts_run(
    map: &GridMap,
    starts: &[Vertex],
    tasks: &[(Vertex, Vertex)],
    max_ticks: Time,
    time_limit: Option<Duration>,
) -> Result<SimulationResult, TptsError> {
    let wall = Instant::now();
    crate::tasking::AllocationState::new(tasks, [])?;
    let mut seen = BTreeMap::new();
    for (i, &s) in starts.iter().enumerate() {
        if let Some(&j) = seen.get(&s) {
            return Err(TptsError::SharedStart(AgentId(j), AgentId(i as u32), s));
        }
        seen.insert(s, i as u32);
    }
    let n = starts.len();
    let mut sim = Tpts {
        map,
        cache: DistanceCache::new(),
        clock: 0,
        agents: starts
            .iter()
            .map(|&s| TptsAgent { position: s, home: s, task: None, path: Path::stationary(s, 0), idle_since: 0 })
            .collect(),
        tasks: tasks.to_vec(),
        status: vec![TaskStatus::Open; tasks.len()],
        token: TptsToken {
            reserved: (0..n).map(|i| (AgentId(i as u32), Path::stationary(starts[i], 0))).collect(),
            queue: (0..n as u32).map(AgentId).collect(),
        },
        planning: Duration::ZERO,
    };
    let mut trajectories: Vec<Vec<Vertex>> = starts.iter().map(|&s| vec![s]).collect();
    let mut trace = Vec::new();

    let status = loop {
        // token round: every queued request, in order; failures requeue
        let mut retry = VecDeque::new();
        let mut progressed = false;
        while let Some(id) = sim.token.queue.pop_front() {
            if sim.hold_token(id) {
                progressed = true;
            } else {
                retry.push_back(id);
            }
        }
        sim.token.queue = retry;

        if sim.all_done() && sim.idle() {
            break RunStatus::Success;
        }
        if !progressed && !sim.token.queue.is_empty() && sim.agents.iter().all(|a| sim.clock >= a.path.end_time()) {
            // nobody moves and every request failed: nothing can change
            break RunStatus::Stalled;
        }
        if sim.clock >= max_ticks || time_limit.is_some_and(|cap| wall.elapsed() >= cap) {
            break RunStatus::Timeout;
        }

        sim.clock += 1;
        let clock = sim.clock;
        for i in 0..n {
            let id = AgentId(i as u32);
            let agent = &mut sim.agents[i];
            agent.position = agent.path.position_at(clock).unwrap_or(agent.position);
            trajectories[i].push(agent.position);
            match agent.task {
                Some((task, Phase::ToStart { arrival })) if clock == arrival => {
                    agent.task = Some((task, Phase::ToGoal));
                    sim.status[task.0 as usize] = TaskStatus::Started;
                }
                Some((task, Phase::ToGoal)) if clock >= agent.path.end_time() => {
                    agent.task = None;
                    agent.home = agent.position;
                    sim.status[task.0 as usize] = TaskStatus::Done;
                    sim.token.queue.push_back(id);
                }
                _ => {}
            }
            let agent = &mut sim.agents[i];
            if agent.task.is_none() && clock == agent.path.end_time() {
                agent.idle_since = clock;
            }
            trace.push(TraceRow { tick: clock, agent: i as u32, x: agent.position.x, y: agent.position.y, network: 0, bounded: 0, infinite: 0 });
        }
    };

    let clock = sim.clock;
    let per_agent_cost: Vec<u64> = sim
        .agents
        .iter()
        .map(|a| if a.task.is_none() && clock >= a.path.end_time() { a.idle_since } else { clock } as u64)
        .collect();
    let violations = replay::find_conflicts(&trajectories).iter().map(|c| c.to_string()).collect();
    Ok(SimulationResult {
        status,
        sum_of_costs: per_agent_cost.iter().sum(),
        per_agent_cost,
        ticks: clock,
        tasks_done: sim.status.iter().filter(|s| **s == TaskStatus::Done).count(),
        tasks_total: tasks.len(),
        trajectories,
        trace,
        stats: Default::default(),
        violations,
        timing: Timing { planning: sim.planning, allocation: Duration::ZERO, total: wall.elapsed() },
    })
}
