//! The simulation loop: step, update, plan.
//!
//! `tick` advances the clock by one and then
//! 1. STEP: moves every agent to its path position at the new clock,
//!    processes task completions, flushes expired packets and allocates
//!    tasks to requesters;
//! 2. UPDATE: recomputes local networks, creates info packets for every
//!    pair that stopped sharing a network, drops packets whose subject is
//!    back in range, and marks networks whose membership or tasks changed;
//! 3. PLAN: runs modified CBS once per marked network and installs the
//!    result. A network whose search fails holds still and stays marked.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbs::{expand_packet_path, modified_cbs, CbsAgent, CbsConfig, VirtualAgent};
use crate::comms::{compute_networks, CommsConfig, NetworkPartition};
use crate::env::{GridMap, Vertex};
use crate::lowlevel::{plan_path_with, ConstraintSet, DistanceCache, Path, PlanRequest, StaticObstacleSet};
use crate::packets::{
    count_by_kind, create_packets_on_separation, flush_expired, flush_on_task_change, infinite_obstacles, receive,
    synchronize, PacketStore, SeparationParty, TaskSnapshot,
};
use crate::replay;
use crate::tasking::{allocate_tasks, on_task_complete, AllocationState, Completion, Objective, TaskError};
use crate::{AgentId, Time};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub comms: CommsConfig,
    pub cbs: CbsConfig,
    pub max_ticks: Time,
    /// Wall-clock cap for the whole run.
    pub time_limit: Option<Duration>,
    /// Consecutive stalled ticks allowed, as a multiple of `|V|`.
    pub stall_factor: u32,
    pub record_trace: bool,
}

impl EngineConfig {
    pub fn new(comms: CommsConfig) -> Self {
        Self { comms, cbs: CbsConfig::default(), max_ticks: 10_000, time_limit: None, stall_factor: 4, record_trace: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    Timeout,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("agent start {0} is impassable")]
    BadStart(Vertex),
    #[error("agents {0} and {1} share start {2}")]
    SharedStart(AgentId, AgentId, Vertex),
    #[error("task endpoint {0} is impassable")]
    BadTask(Vertex),
    #[error(transparent)]
    Tasks(#[from] TaskError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: AgentId,
    pub position: Vertex,
    /// Resting position: last mission goal, or the initial position.
    pub home: Vertex,
    pub objective: Objective,
    pub path: Path,
    pub constraints: ConstraintSet,
    /// Private obstacles in force when `path` was planned.
    pub path_obstacles: StaticObstacleSet,
    pub packets: PacketStore,
    pub at_rest: bool,
    /// Clock at which the current rest began.
    pub rest_since: Time,
}

impl AgentState {
    pub fn has_task(&self) -> bool {
        self.objective.task().is_some()
    }

    fn snapshot(&self) -> TaskSnapshot {
        TaskSnapshot {
            task: self.objective.task(),
            origin: self.path.first(),
            origin_time: self.path.start_time,
            target: self.path.last(),
            position: self.position,
        }
    }

    fn party(&self) -> SeparationParty {
        SeparationParty {
            id: self.id,
            at_rest: self.at_rest,
            has_task: self.has_task(),
            constraints: self.constraints.clone(),
            obstacles: self.path_obstacles.clone(),
            snapshot: self.snapshot(),
        }
    }
}

/// One row per agent per tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub tick: Time,
    pub agent: u32,
    pub x: u32,
    pub y: u32,
    pub network: u32,
    pub bounded: usize,
    pub infinite: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    pub cbs_calls: usize,
    pub cbs_failures: usize,
    pub cbs_expanded: usize,
    pub bounded_created: usize,
    pub infinite_created: usize,
    pub infinite_refused: usize,
    pub reconstruction_mismatches: usize,
    pub max_infinite_held: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timing {
    pub planning: Duration,
    pub allocation: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub status: RunStatus,
    pub sum_of_costs: u64,
    pub per_agent_cost: Vec<u64>,
    pub ticks: Time,
    pub tasks_done: usize,
    pub tasks_total: usize,
    /// Positions of each agent at t = 0..=ticks.
    pub trajectories: Vec<Vec<Vertex>>,
    pub trace: Vec<TraceRow>,
    pub stats: EngineStats,
    /// Invariant breaches detected while running; empty on a healthy run.
    pub violations: Vec<String>,
    pub timing: Timing,
}

pub struct WorldState {
    pub map: GridMap,
    pub config: EngineConfig,
    pub clock: Time,
    pub agents: Vec<AgentState>,
    pub tasks: AllocationState,
    pub partition: NetworkPartition,
    pub previous_partition: NetworkPartition,
    cache: DistanceCache,
    /// Agents whose last plan failed; their networks replan every tick.
    pending: BTreeSet<AgentId>,
    stalled_ticks: u64,
    trajectories: Vec<Vec<Vertex>>,
    trace: Vec<TraceRow>,
    pub stats: EngineStats,
    violations: Vec<String>,
    timing: Timing,
}

impl WorldState {
    fn ids(&self) -> impl Iterator<Item = AgentId> {
        (0..self.agents.len() as u32).map(AgentId)
    }

    fn agent(&self, id: AgentId) -> &AgentState {
        &self.agents[id.0 as usize]
    }

    fn agent_mut(&mut self, id: AgentId) -> &mut AgentState {
        &mut self.agents[id.0 as usize]
    }

    fn positions(&self) -> BTreeMap<AgentId, Vertex> {
        self.agents.iter().map(|a| (a.id, a.position)).collect()
    }

    fn infinite_cap(&self) -> usize {
        self.agents.len().saturating_sub(2)
    }

    pub fn is_finished(&self) -> bool {
        self.tasks.all_done() && self.agents.iter().all(|a| a.at_rest)
    }

    pub fn stalled_ticks(&self) -> u64 {
        self.stalled_ticks
    }

    fn violation(&mut self, message: String) {
        if self.violations.len() < 100 {
            self.violations.push(format!("t={}: {message}", self.clock));
        }
    }
}

/// Sets up agents at `starts` (agent `i` gets id `i`), builds the task pool
/// from `tasks`, allocates, plans initial paths and runs a first PLAN phase
/// over every network at clock 0.
pub fn initialize_plans(
    map: &GridMap,
    starts: &[Vertex],
    tasks: &[(Vertex, Vertex)],
    config: EngineConfig,
) -> Result<WorldState, EngineError> {
    let mut seen: BTreeMap<Vertex, AgentId> = BTreeMap::new();
    for (i, &s) in starts.iter().enumerate() {
        if !map.is_passable(s) {
            return Err(EngineError::BadStart(s));
        }
        if let Some(&other) = seen.get(&s) {
            return Err(EngineError::SharedStart(other, AgentId(i as u32), s));
        }
        seen.insert(s, AgentId(i as u32));
    }
    if let Some(&(s, g)) = tasks.iter().find(|(s, g)| !map.is_passable(*s) || !map.is_passable(*g)) {
        return Err(EngineError::BadTask(if map.is_passable(s) { g } else { s }));
    }
    let ids: Vec<AgentId> = (0..starts.len() as u32).map(AgentId).collect();
    let mut allocation = AllocationState::new(tasks, ids.iter().copied())?;

    let started = Instant::now();
    let positions: BTreeMap<_, _> = ids.iter().map(|&id| (id, starts[id.0 as usize])).collect();
    allocate_tasks(&mut allocation, &ids.iter().copied().collect(), &positions);
    let allocation_time = started.elapsed();

    let cache = DistanceCache::new();
    let empty = ConstraintSet::new();
    let no_obstacles = StaticObstacleSet::new();
    let mut agents = Vec::with_capacity(starts.len());
    for &id in &ids {
        let start = starts[id.0 as usize];
        let objective = allocation.objective_for(id, start, start);
        let req = PlanRequest::new(start, objective.goal(), 0, &empty, &no_obstacles);
        let path = plan_path_with(map, &cache, &req).unwrap_or_else(|_| Path::stationary(start, 0));
        let at_rest = objective == Objective::Home(start);
        agents.push(AgentState {
            id,
            position: start,
            home: start,
            objective,
            path,
            constraints: ConstraintSet::new(),
            path_obstacles: StaticObstacleSet::new(),
            packets: PacketStore::new(),
            at_rest,
            rest_since: 0,
        });
    }
    let partition = compute_networks(&positions.iter().map(|(&a, &v)| (a, v)).collect::<Vec<_>>(), &config.comms, map);
    let mut world = WorldState {
        map: map.clone(),
        config,
        clock: 0,
        trajectories: agents.iter().map(|a| vec![a.position]).collect(),
        agents,
        tasks: allocation,
        previous_partition: partition.clone(),
        partition,
        cache,
        pending: BTreeSet::new(),
        stalled_ticks: 0,
        trace: Vec::new(),
        stats: EngineStats::default(),
        violations: Vec::new(),
        timing: Timing { allocation: allocation_time, ..Timing::default() },
    };
    let all: BTreeSet<AgentId> = world.ids().collect();
    world.plan(&all);
    Ok(world)
}

impl WorldState {
    /// Advances the world by one timestep.
    pub fn tick(&mut self) {
        self.clock += 1;
        let clock = self.clock;
        self.previous_partition = self.partition.clone();

        // STEP
        for a in &mut self.agents {
            a.position = a.path.position_at(clock).unwrap_or(a.position);
        }
        for (a, traj) in self.agents.iter().zip(self.trajectories.iter_mut()) {
            traj.push(a.position);
        }

        let mut changed: BTreeSet<AgentId> = BTreeSet::new();
        let mut requesters: BTreeSet<AgentId> = BTreeSet::new();
        for id in self.ids().collect::<Vec<_>>() {
            let a = self.agent(id);
            if a.position != a.objective.goal() || clock < a.path.end_time() {
                continue;
            }
            let objective = a.objective;
            match on_task_complete(&mut self.tasks, id, objective) {
                Completion::MissionStarted(_) => {
                    changed.insert(id);
                }
                Completion::MissionDone(_) => {
                    self.agent_mut(id).home = objective.goal();
                    changed.insert(id);
                    requesters.insert(id);
                }
                Completion::Idle => {}
            }
        }
        for a in &mut self.agents {
            flush_expired(&mut a.packets, clock);
        }

        if !requesters.is_empty() {
            let started = Instant::now();
            let positions = self.positions();
            let reassigned = allocate_tasks(&mut self.tasks, &requesters, &positions);
            self.timing.allocation += started.elapsed();
            changed.extend(reassigned.keys());
        }
        for &id in &changed {
            let (position, home) = (self.agent(id).position, self.agent(id).home);
            let objective = self.tasks.objective_for(id, position, home);
            let a = self.agent_mut(id);
            a.objective = objective;
            flush_on_task_change(&mut a.packets);
        }
        for a in &mut self.agents {
            let resting = a.objective == Objective::Home(a.home) && a.position == a.home && clock >= a.path.end_time();
            if resting && !a.at_rest {
                flush_on_task_change(&mut a.packets);
                a.rest_since = clock;
            }
            a.at_rest = resting;
        }

        // UPDATE
        let located: Vec<(AgentId, Vertex)> = self.agents.iter().map(|a| (a.id, a.position)).collect();
        self.partition = compute_networks(&located, &self.config.comms, &self.map);
        let mut marked: BTreeSet<AgentId> = BTreeSet::new();
        let mut separated: BTreeSet<(AgentId, AgentId)> = BTreeSet::new();
        for id in self.ids().collect::<Vec<_>>() {
            let before = self.previous_partition.network_of(id).clone();
            if &before == self.partition.network_of(id) {
                continue;
            }
            marked.insert(id);
            for m in before {
                if m != id && !self.partition.same_network(id, m) && separated.insert((id.min(m), id.max(m))) {
                    self.separate(id, m);
                }
            }
        }
        for a in &mut self.agents {
            let network = self.partition.network_of(a.id);
            a.packets.retain(|subject, _| !network.contains(subject));
        }
        marked.extend(changed.iter().copied());
        marked.extend(self.pending.iter().copied());

        // PLAN
        self.plan(&marked);

        self.check_invariants(&changed);
        if self.config.record_trace {
            self.record_trace();
        }
    }

    fn separate(&mut self, departed: AgentId, remaining: AgentId) {
        let (d, r) = (self.agent(departed).party(), self.agent(remaining).party());
        let cap = self.infinite_cap();
        let map = &self.map;
        let cache = &self.cache;
        let agents = &self.agents;
        let mut refused = false;
        let created = create_packets_on_separation(&d, &r, self.clock, |moving, resting| {
            let holder = &agents[moving.id.0 as usize];
            let held = count_by_kind(&holder.packets).1;
            let ok = held < cap
                && verify_alternative_path(map, cache, holder.position, holder.objective.goal(), &holder.packets, resting.snapshot.position);
            refused = !ok;
            ok
        });
        if refused {
            self.stats.infinite_refused += 1;
        }
        for (holder, packet) in created {
            if packet.t_flush.is_infinite() {
                self.stats.infinite_created += 1;
            } else {
                self.stats.bounded_created += 1;
                let rebuilt = expand_packet_path(&packet, &self.map, &self.cache, self.agents.len());
                if rebuilt != self.agent(packet.subject).path {
                    self.stats.reconstruction_mismatches += 1;
                }
            }
            receive(&mut self.agent_mut(holder).packets, packet);
        }
    }

    /// Runs modified CBS for every current network with a marked member.
    fn plan(&mut self, marked: &BTreeSet<AgentId>) {
        let networks: Vec<BTreeSet<AgentId>> = self
            .partition
            .networks
            .values()
            .filter(|members| members.iter().any(|m| marked.contains(m)))
            .cloned()
            .collect();
        let mut failed = false;
        for members in networks {
            failed |= !self.plan_network(&members);
        }
        if failed {
            self.stalled_ticks += 1;
        } else {
            self.stalled_ticks = 0;
        }
    }

    fn plan_network(&mut self, members: &BTreeSet<AgentId>) -> bool {
        let clock = self.clock;
        let shared = synchronize(
            members,
            members.iter().flat_map(|&m| self.agent(m).packets.values().map(move |p| (m, p))),
        );
        let virtuals: Vec<VirtualAgent> = shared
            .values()
            .map(|p| VirtualAgent {
                subject: p.subject,
                path: expand_packet_path(p, &self.map, &self.cache, self.agents.len()),
                until: p.t_flush.bounded(),
            })
            .collect();
        let cbs_agents: Vec<CbsAgent> = members
            .iter()
            .map(|&m| {
                let a = self.agent(m);
                CbsAgent {
                    id: m,
                    position: a.position,
                    goal: a.objective.goal(),
                    path: a.path.clone(),
                    constraints: a.constraints.clone(),
                    obstacles: infinite_obstacles(&a.packets),
                }
            })
            .collect();

        let started = Instant::now();
        let result = modified_cbs(&self.map, &self.cache, clock, &cbs_agents, &virtuals, &self.config.cbs);
        self.timing.planning += started.elapsed();
        self.stats.cbs_calls += 1;

        match result {
            Ok(solution) => {
                self.stats.cbs_expanded += solution.stats.expanded;
                for (cbs_agent, (id, plan)) in cbs_agents.into_iter().zip(solution.plans) {
                    let a = self.agent_mut(id);
                    let start = plan.path.start_time;
                    a.constraints = plan.constraints.into_iter().filter(|c| c.time >= start).collect();
                    if plan.replanned {
                        a.path_obstacles = cbs_agent.obstacles;
                    }
                    a.path = plan.path;
                    self.pending.remove(&id);
                }
                true
            }
            Err(_) => {
                self.stats.cbs_failures += 1;
                for &m in members {
                    let a = self.agent_mut(m);
                    a.path = Path::stationary(a.position, clock);
                    a.path_obstacles = StaticObstacleSet::new();
                    self.pending.insert(m);
                }
                false
            }
        }
    }

    fn check_invariants(&mut self, changed: &BTreeSet<AgentId>) {
        let clock = self.clock;
        let mut messages = Vec::new();
        let mut occupied: BTreeMap<Vertex, AgentId> = BTreeMap::new();
        for a in &self.agents {
            if let Some(other) = occupied.insert(a.position, a.id) {
                messages.push(format!("vertex conflict {} {} at {}", other, a.id, a.position));
            }
            if a.path.position_at(clock) != Some(a.position) {
                messages.push(format!("{} is off its path", a.id));
            }
            let (_, infinite) = count_by_kind(&a.packets);
            if infinite > self.infinite_cap() {
                messages.push(format!("{} holds {infinite} infinite packets", a.id));
            }
            if infinite > 0 && (!a.has_task() || a.at_rest) {
                messages.push(format!("{} holds an infinite packet without an active task", a.id));
            }
            for p in a.packets.values() {
                if p.subject == a.id {
                    messages.push(format!("{} holds a packet about itself", a.id));
                }
                if p.t_flush.bounded().is_some_and(|t| t <= clock) {
                    messages.push(format!("{} holds an expired packet about {}", a.id, p.subject));
                }
                if changed.contains(&a.id) && p.t_receive < clock {
                    messages.push(format!("{} kept a packet about {} across a task change", a.id, p.subject));
                }
            }
        }
        for i in 0..self.trajectories.len() {
            for j in i + 1..self.trajectories.len() {
                let (a, b) = (&self.trajectories[i], &self.trajectories[j]);
                let t = a.len() - 1;
                if t > 0 && a[t] == b[t - 1] && b[t] == a[t - 1] && a[t] != a[t - 1] {
                    messages.push(format!("edge conflict R{i} R{j}"));
                }
            }
        }
        let held = self.agents.iter().map(|a| count_by_kind(&a.packets).1).max().unwrap_or(0);
        self.stats.max_infinite_held = self.stats.max_infinite_held.max(held);
        for m in messages {
            self.violation(m);
        }
    }

    fn record_trace(&mut self) {
        for a in &self.agents {
            let (bounded, infinite) = count_by_kind(&a.packets);
            self.trace.push(TraceRow {
                tick: self.clock,
                agent: a.id.0,
                x: a.position.x,
                y: a.position.y,
                network: self.partition.membership[&a.id].0,
                bounded,
                infinite,
            });
        }
    }

    fn finish(mut self, status: RunStatus, started: Instant) -> SimulationResult {
        let clock = self.clock;
        let per_agent_cost: Vec<u64> =
            self.agents.iter().map(|a| if a.at_rest { a.rest_since } else { clock } as u64).collect();
        for c in replay::find_conflicts(&self.trajectories) {
            self.violation(format!("replay: {c}"));
        }
        self.timing.total = started.elapsed();
        SimulationResult {
            status,
            sum_of_costs: per_agent_cost.iter().sum(),
            per_agent_cost,
            ticks: clock,
            tasks_done: self.tasks.done().len(),
            tasks_total: self.tasks.tasks.len(),
            trajectories: self.trajectories,
            trace: self.trace,
            stats: self.stats,
            violations: self.violations,
            timing: self.timing,
        }
    }

    /// Ticks until every task is done and every agent rests, or a limit
    /// trips.
    pub fn run(mut self) -> SimulationResult {
        let started = Instant::now();
        self.config.cbs.deadline = self.config.time_limit.map(|cap| started + cap);
        let stall_limit = self.config.stall_factor as u64 * self.map.passable_count() as u64;
        loop {
            if self.is_finished() {
                return self.finish(RunStatus::Success, started);
            }
            if self.stalled_ticks > stall_limit.max(1) {
                return self.finish(RunStatus::Stalled, started);
            }
            if self.clock >= self.config.max_ticks || self.config.time_limit.is_some_and(|cap| started.elapsed() >= cap) {
                return self.finish(RunStatus::Timeout, started);
            }
            self.tick();
        }
    }
}

/// Whether the holder can still reach `goal` with `resting` and its other
/// infinite-packet positions treated as walls.
pub fn verify_alternative_path(
    map: &GridMap,
    cache: &DistanceCache,
    position: Vertex,
    goal: Vertex,
    packets: &PacketStore,
    resting: Vertex,
) -> bool {
    let mut obstacles = infinite_obstacles(packets);
    obstacles.insert(resting);
    let none = ConstraintSet::new();
    plan_path_with(map, cache, &PlanRequest::new(position, goal, 0, &none, &obstacles)).is_ok()
}
