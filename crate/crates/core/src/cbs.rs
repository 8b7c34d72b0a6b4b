//! Modified conflict-based search over one local network.
//!
//! Network agents are planned jointly. Agents known only through bounded
//! info packets enter as virtual agents whose paths are fixed: a conflict
//! with a virtual agent yields a single child that constrains the network
//! agent, and two virtual agents never conflict with each other. Each
//! network agent's private obstacles (infinite packets) apply only to its
//! own low-level searches.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{GridMap, Vertex};
use crate::lowlevel::{
    check_path, default_horizon, plan_path_with, Constraint, ConstraintSet, DistanceCache, Path, PlanError,
    PlanRequest, StaticObstacleSet,
};
use crate::packets::InfoPacket;
use crate::{AgentId, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConflictKind {
    Vertex(Vertex),
    /// `a` traverses `a_from -> a_to` while `b` traverses the reverse.
    Edge { a_from: Vertex, a_to: Vertex },
}

/// Two participants colliding; `a < b`. For edge conflicts `time` is the
/// departure timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Conflict {
    pub time: Time,
    pub kind: ConflictKind,
    pub a: AgentId,
    pub b: AgentId,
}

/// A network member as seen by the planner.
#[derive(Debug, Clone)]
pub struct CbsAgent {
    pub id: AgentId,
    pub position: Vertex,
    /// Where the agent must end up and rest (task goal, or home when idle).
    pub goal: Vertex,
    pub path: Path,
    pub constraints: ConstraintSet,
    pub obstacles: StaticObstacleSet,
}

/// A fixed path reconstructed from a bounded info packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VirtualAgent {
    pub subject: AgentId,
    pub path: Path,
    /// Last timestep at which the packet is still held; `None` never expires.
    pub until: Option<Time>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CbsConfig {
    pub node_budget: usize,
    /// Wall-clock cutoff, so one search cannot overrun a run's time cap.
    #[serde(skip)]
    pub deadline: Option<Instant>,
}

impl CbsConfig {
    pub fn with_budget(node_budget: usize) -> Self {
        Self { node_budget, deadline: None }
    }
}

impl Default for CbsConfig {
    fn default() -> Self {
        Self::with_budget(50_000)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CbsStats {
    pub expanded: usize,
    pub generated: usize,
    pub low_level_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentPlan {
    pub path: Path,
    pub constraints: ConstraintSet,
    /// False when the incoming path was kept unchanged.
    pub replanned: bool,
}

#[derive(Debug, Clone)]
pub struct CbsSolution {
    pub plans: BTreeMap<AgentId, AgentPlan>,
    /// Remaining sum-of-costs over network agents, measured from `now`.
    pub cost: u64,
    pub stats: CbsStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CbsError {
    #[error("agent {0} has no feasible path under its own constraints")]
    Root(AgentId),
    #[error("conflict tree exhausted after {0} expansions")]
    Exhausted(usize),
    #[error("node budget of {0} expansions reached")]
    Budget(usize),
    #[error("deadline passed after {0} expansions")]
    Deadline(usize),
}

struct Participant<'a> {
    id: AgentId,
    path: &'a Path,
    is_virtual: bool,
    until: Time,
}

/// Scans for the earliest conflict and counts all conflicts. Vertex
/// conflicts are considered for `t > now`, edge conflicts for departures
/// `t >= now`; the present is fixed.
fn scan(participants: &[Participant<'_>], now: Time, include_now: bool, count_all: bool) -> (Option<Conflict>, usize) {
    let horizon = participants
        .iter()
        .map(|p| p.path.end_time().min(p.until))
        .max()
        .unwrap_or(now)
        .max(now);
    let mut first: Option<Conflict> = None;
    let mut count = 0usize;
    let pairs = |t: Time| {
        let active = move |p: &Participant<'_>| t <= p.until && p.path.start_time <= t;
        (0..participants.len()).flat_map(move |i| (i + 1..participants.len()).map(move |j| (i, j))).filter(
            move |&(i, j)| {
                let (p, q) = (&participants[i], &participants[j]);
                !(p.is_virtual && q.is_virtual) && active(p) && active(q)
            },
        )
    };
    let ordered = |i: usize, j: usize| {
        let (p, q) = (&participants[i], &participants[j]);
        if p.id < q.id {
            (p, q)
        } else {
            (q, p)
        }
    };
    let better = |c: &Conflict, best: &Option<Conflict>| best.is_none_or(|b| (c.a, c.b) < (b.a, b.b));

    for t in now..=horizon {
        if t > now || include_now {
            let mut best = None;
            for (i, j) in pairs(t) {
                let (p, q) = ordered(i, j);
                let at = p.path.position_at(t).expect("active");
                if Some(at) == q.path.position_at(t) {
                    count += 1;
                    let c = Conflict { time: t, kind: ConflictKind::Vertex(at), a: p.id, b: q.id };
                    if better(&c, &best) {
                        best = Some(c);
                    }
                }
            }
            if first.is_none() {
                first = best;
            }
        }
        if t < horizon {
            let mut best = None;
            for (i, j) in pairs(t) {
                let (p, q) = ordered(i, j);
                if t + 1 > p.until || t + 1 > q.until {
                    continue;
                }
                let (pa, pb) = (p.path.position_at(t).expect("active"), p.path.position_at(t + 1).expect("active"));
                let (qa, qb) = (q.path.position_at(t).expect("active"), q.path.position_at(t + 1).expect("active"));
                if pa != pb && pa == qb && pb == qa {
                    count += 1;
                    let c = Conflict { time: t, kind: ConflictKind::Edge { a_from: pa, a_to: pb }, a: p.id, b: q.id };
                    if better(&c, &best) {
                        best = Some(c);
                    }
                }
            }
            if first.is_none() {
                first = best;
            }
        }
        if first.is_some() && !count_all {
            break;
        }
    }
    (first, count)
}

/// Earliest conflict among `plans` from time 0, with rest occupancy after
/// each path ends. Ties: vertex before edge at equal time, then lowest
/// participant pair.
pub fn detect_first_conflict(plans: &BTreeMap<AgentId, Path>) -> Option<Conflict> {
    let participants: Vec<_> = plans
        .iter()
        .map(|(&id, path)| Participant { id, path, is_virtual: false, until: Time::MAX })
        .collect();
    let from = plans.values().map(|p| p.start_time).min().unwrap_or(0);
    scan(&participants, from, true, false).0
}

/// Reconstructs the path a packet's subject was following.
pub fn expand_packet_path(packet: &InfoPacket, map: &GridMap, cache: &DistanceCache, agent_count: usize) -> Path {
    let snap = &packet.task;
    let horizon = default_horizon(map, agent_count, snap.origin_time, &packet.constraints);
    let req = PlanRequest::new(snap.origin, snap.target, snap.origin_time, &packet.constraints, &packet.obstacles)
        .horizon(horizon);
    match plan_path_with(map, cache, &req) {
        Ok(path) => path,
        // The subject was holding still without a feasible plan.
        Err(_) => Path::stationary(snap.position, snap.origin_time),
    }
}

#[derive(Clone)]
struct Node {
    constraints: BTreeMap<AgentId, Arc<ConstraintSet>>,
    paths: BTreeMap<AgentId, Arc<Path>>,
    replanned: BTreeMap<AgentId, bool>,
    cost: u64,
    conflicts: usize,
    first: Option<Conflict>,
}

struct Planner<'a> {
    map: &'a GridMap,
    cache: &'a DistanceCache,
    now: Time,
    agents: BTreeMap<AgentId, &'a CbsAgent>,
    virtuals: &'a [VirtualAgent],
    total: usize,
    stats: CbsStats,
}

impl Planner<'_> {
    fn low_level(&mut self, id: AgentId, constraints: &ConstraintSet) -> Result<Path, PlanError> {
        let agent = self.agents[&id];
        self.stats.low_level_calls += 1;
        let horizon = default_horizon(self.map, self.total, self.now, constraints);
        let req = PlanRequest::new(agent.position, agent.goal, self.now, constraints, &agent.obstacles).horizon(horizon);
        plan_path_with(self.map, self.cache, &req)
    }

    fn path_cost(&self, path: &Path) -> u64 {
        path.remaining_after(self.now) as u64
    }

    fn evaluate(&self, node: &mut Node) {
        let mut participants: Vec<Participant<'_>> = node
            .paths
            .iter()
            .map(|(&id, path)| Participant { id, path, is_virtual: false, until: Time::MAX })
            .collect();
        participants.extend(self.virtuals.iter().map(|v| Participant {
            id: v.subject,
            path: &v.path,
            is_virtual: true,
            until: v.until.unwrap_or(Time::MAX),
        }));
        let (first, count) = scan(&participants, self.now, false, true);
        node.first = first;
        node.conflicts = count;
        node.cost = node.paths.values().map(|p| self.path_cost(p)).sum();
    }

    fn usable(&self, agent: &CbsAgent) -> bool {
        let path = &agent.path;
        path.start_time <= self.now
            && path.position_at(self.now) == Some(agent.position)
            && path.last() == agent.goal
            && check_path(self.map, path, &agent.constraints, &agent.obstacles, self.now).is_ok()
    }
}

/// Runs the modified conflict-tree search for one network at time `now`.
///
/// Root plans are the agents' current paths; a path that no longer fits its
/// agent (wrong position, goal, or violated constraints) is replanned.
pub fn modified_cbs(
    map: &GridMap,
    cache: &DistanceCache,
    now: Time,
    agents: &[CbsAgent],
    virtuals: &[VirtualAgent],
    config: &CbsConfig,
) -> Result<CbsSolution, CbsError> {
    let mut planner = Planner {
        map,
        cache,
        now,
        agents: agents.iter().map(|a| (a.id, a)).collect(),
        virtuals,
        total: agents.len() + virtuals.len(),
        stats: CbsStats::default(),
    };

    let mut root = Node {
        constraints: BTreeMap::new(),
        paths: BTreeMap::new(),
        replanned: BTreeMap::new(),
        cost: 0,
        conflicts: 0,
        first: None,
    };
    for agent in agents {
        let (path, replanned) = if planner.usable(agent) {
            (agent.path.clone(), false)
        } else {
            (planner.low_level(agent.id, &agent.constraints).map_err(|_| CbsError::Root(agent.id))?, true)
        };
        root.constraints.insert(agent.id, Arc::new(agent.constraints.clone()));
        root.paths.insert(agent.id, Arc::new(path));
        root.replanned.insert(agent.id, replanned);
    }
    planner.evaluate(&mut root);
    planner.stats.generated = 1;

    let mut nodes = vec![root];
    let mut open = BinaryHeap::new();
    open.push(Reverse((nodes[0].cost, nodes[0].conflicts, 0usize)));

    while let Some(Reverse((_, _, idx))) = open.pop() {
        if planner.stats.expanded >= config.node_budget {
            return Err(CbsError::Budget(config.node_budget));
        }
        if planner.stats.expanded.is_multiple_of(64) && config.deadline.is_some_and(|d| Instant::now() >= d) {
            return Err(CbsError::Deadline(planner.stats.expanded));
        }
        planner.stats.expanded += 1;
        let node = std::mem::replace(
            &mut nodes[idx],
            Node {
                constraints: BTreeMap::new(),
                paths: BTreeMap::new(),
                replanned: BTreeMap::new(),
                cost: 0,
                conflicts: 0,
                first: None,
            },
        );
        let Some(conflict) = node.first else {
            let plans = node
                .paths
                .iter()
                .map(|(id, path)| {
                    let plan = AgentPlan {
                        path: (**path).clone(),
                        constraints: (*node.constraints[id]).clone(),
                        replanned: node.replanned[id],
                    };
                    (*id, plan)
                })
                .collect();
            return Ok(CbsSolution { plans, cost: node.cost, stats: planner.stats });
        };

        for (target, other) in [(conflict.a, conflict.b), (conflict.b, conflict.a)] {
            if !planner.agents.contains_key(&target) {
                continue; // virtual participant: never constrained
            }
            let new = match conflict.kind {
                ConflictKind::Vertex(v) => Constraint::vertex(v, conflict.time, other),
                ConflictKind::Edge { a_from, a_to } => {
                    let (from, to) = if target == conflict.a { (a_from, a_to) } else { (a_to, a_from) };
                    Constraint::edge(from, to, conflict.time, other)
                }
            };
            let mut set = (*node.constraints[&target]).clone();
            if !set.insert(new) {
                continue;
            }
            let Ok(path) = planner.low_level(target, &set) else { continue };
            let mut child = node.clone();
            child.constraints.insert(target, Arc::new(set));
            child.paths.insert(target, Arc::new(path));
            child.replanned.insert(target, true);
            planner.evaluate(&mut child);
            planner.stats.generated += 1;
            let id = nodes.len();
            open.push(Reverse((child.cost, child.conflicts, id)));
            nodes.push(child);
        }
    }
    Err(CbsError::Exhausted(planner.stats.expanded))
}
