//! Constrained single-agent space-time search.
//!
//! Searches the time-expanded grid (`(vertex, time)` states, with wait as a
//! self-edge) for a minimum-length path that honors vertex and edge
//! constraints and avoids static obstacle cells. Once the clock passes the
//! latest constraint the problem is time-invariant, so states beyond that
//! point are merged per vertex; this makes the state space finite and lets
//! infeasibility be detected by exhausting the frontier.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{GridMap, Vertex};
use crate::{AgentId, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintKind {
    /// The agent may not occupy the vertex at the constraint time.
    Vertex(Vertex),
    /// The agent may not traverse `from -> to` departing at the constraint time.
    Edge { from: Vertex, to: Vertex },
}

/// A forbidden vertex-or-edge occupancy, annotated with the agent whose
/// conflict produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Constraint {
    pub time: Time,
    pub kind: ConstraintKind,
    pub source: AgentId,
}

impl Constraint {
    pub fn vertex(at: Vertex, time: Time, source: AgentId) -> Self {
        Self { time, kind: ConstraintKind::Vertex(at), source }
    }

    pub fn edge(from: Vertex, to: Vertex, time: Time, source: AgentId) -> Self {
        Self { time, kind: ConstraintKind::Edge { from, to }, source }
    }
}

pub type ConstraintSet = BTreeSet<Constraint>;

/// Positions occupied at consecutive timesteps, beginning at `start_time`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path {
    pub start_time: Time,
    pub positions: Vec<Vertex>,
}

impl Path {
    pub fn new(start_time: Time, positions: Vec<Vertex>) -> Self {
        assert!(!positions.is_empty(), "a path holds at least one position");
        Self { start_time, positions }
    }

    /// A single-position path: the agent stays at `at` from `time` onward.
    pub fn stationary(at: Vertex, time: Time) -> Self {
        Self { start_time: time, positions: vec![at] }
    }

    pub fn end_time(&self) -> Time {
        self.start_time + self.positions.len() as Time - 1
    }

    /// Number of timesteps spent (moves and waits).
    pub fn cost(&self) -> u32 {
        self.positions.len() as u32 - 1
    }

    pub fn first(&self) -> Vertex {
        self.positions[0]
    }

    pub fn last(&self) -> Vertex {
        *self.positions.last().expect("nonempty path")
    }

    /// Position at `t`; the agent rests on its final vertex after the path
    /// ends. `None` before the path starts.
    pub fn position_at(&self, t: Time) -> Option<Vertex> {
        if t < self.start_time {
            return None;
        }
        let k = (t - self.start_time) as usize;
        Some(*self.positions.get(k).unwrap_or_else(|| self.positions.last().expect("nonempty path")))
    }

    /// Timesteps remaining after `now` until the path ends.
    pub fn remaining_after(&self, now: Time) -> u32 {
        self.end_time().saturating_sub(now)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticObstacleSet(BTreeSet<Vertex>);

impl StaticObstacleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, v: Vertex) -> bool {
        self.0.insert(v)
    }

    pub fn contains(&self, v: Vertex) -> bool {
        self.0.contains(&v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Vertex> + '_ {
        self.0.iter().copied()
    }
}

impl FromIterator<Vertex> for StaticObstacleSet {
    fn from_iter<I: IntoIterator<Item = Vertex>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("goal unreachable under the given constraints and obstacles")]
    Infeasible,
    #[error("endpoint {0} is impassable or an obstacle")]
    InvalidEndpoint(Vertex),
}

/// Backward-BFS distance tables keyed by goal, shared between searches on
/// one map.
#[derive(Debug, Default)]
pub struct DistanceCache {
    tables: Mutex<HashMap<Vertex, Arc<Vec<u32>>>>,
}

impl DistanceCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn distances(&self, map: &GridMap, goal: Vertex) -> Arc<Vec<u32>> {
        let mut tables = self.tables.lock().expect("distance cache poisoned");
        tables.entry(goal).or_insert_with(|| Arc::new(map.bfs_distances(goal))).clone()
    }
}

/// Everything one search needs beyond the map.
#[derive(Debug, Clone, Copy)]
pub struct PlanRequest<'a> {
    pub start: Vertex,
    pub goal: Vertex,
    pub start_time: Time,
    pub constraints: &'a ConstraintSet,
    pub obstacles: &'a StaticObstacleSet,
    /// Cells that become permanently occupied from the given time onward
    /// (parked agents in reservation-based planners).
    pub occupied_from: &'a [(Vertex, Time)],
    /// Whether the agent stays at the goal after arriving. When set, the
    /// arrival must come after every vertex constraint on the goal.
    pub rest_at_goal: bool,
    /// Latest timestep the search may reach. `None` uses [`default_horizon`]
    /// for a single agent.
    pub horizon: Option<Time>,
}

impl<'a> PlanRequest<'a> {
    pub fn new(
        start: Vertex,
        goal: Vertex,
        start_time: Time,
        constraints: &'a ConstraintSet,
        obstacles: &'a StaticObstacleSet,
    ) -> Self {
        Self {
            start,
            goal,
            start_time,
            constraints,
            obstacles,
            occupied_from: &[],
            rest_at_goal: true,
            horizon: None,
        }
    }

    pub fn horizon(mut self, horizon: Time) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn occupied_from(mut self, occupied: &'a [(Vertex, Time)]) -> Self {
        self.occupied_from = occupied;
        self
    }

    pub fn pass_through(mut self) -> Self {
        self.rest_at_goal = false;
        self
    }
}

/// `passable cells x planning agents + latest constraint time + 1`.
pub fn default_horizon(map: &GridMap, agent_count: usize, start_time: Time, constraints: &ConstraintSet) -> Time {
    let latest = constraints.iter().map(|c| c.time).max().unwrap_or(0).max(start_time);
    let span = (map.passable_count() as u64 * agent_count.max(1) as u64).min(u32::MAX as u64 / 2) as Time;
    latest.saturating_add(span).saturating_add(1)
}

/// Shortest constrained path from `start` (at `start_time`) to `goal`.
pub fn plan_path(
    map: &GridMap,
    start: Vertex,
    goal: Vertex,
    start_time: Time,
    constraints: &ConstraintSet,
    obstacles: &StaticObstacleSet,
) -> Result<Path, PlanError> {
    let cache = DistanceCache::new();
    plan_path_with(map, &cache, &PlanRequest::new(start, goal, start_time, constraints, obstacles))
}

#[derive(Clone, Copy)]
struct Node {
    at: Vertex,
    time: Time,
    parent: u32,
}

const NO_PARENT: u32 = u32::MAX;

pub fn plan_path_with(map: &GridMap, cache: &DistanceCache, req: &PlanRequest<'_>) -> Result<Path, PlanError> {
    for endpoint in [req.start, req.goal] {
        if !map.is_passable(endpoint) || req.obstacles.contains(endpoint) {
            return Err(PlanError::InvalidEndpoint(endpoint));
        }
    }

    let mut vertex_blocks: HashSet<(Vertex, Time)> = HashSet::new();
    let mut edge_blocks: HashSet<(Vertex, Vertex, Time)> = HashSet::new();
    let mut latest = req.start_time;
    let mut goal_free_from = req.start_time;
    for c in req.constraints {
        let stale = match c.kind {
            // the start state is reality and earlier times are past
            ConstraintKind::Vertex(_) => c.time <= req.start_time,
            ConstraintKind::Edge { .. } => c.time < req.start_time,
        };
        if stale {
            continue;
        }
        latest = latest.max(c.time);
        match c.kind {
            ConstraintKind::Vertex(v) => {
                vertex_blocks.insert((v, c.time));
                if v == req.goal && req.rest_at_goal {
                    goal_free_from = goal_free_from.max(c.time + 1);
                }
            }
            ConstraintKind::Edge { from, to } => {
                edge_blocks.insert((from, to, c.time));
            }
        }
    }
    let mut occupied: HashMap<Vertex, Time> = HashMap::new();
    for &(v, from) in req.occupied_from {
        let slot = occupied.entry(v).or_insert(from);
        *slot = (*slot).min(from);
        latest = latest.max(from);
    }
    if req.rest_at_goal && occupied.contains_key(&req.goal) {
        return Err(PlanError::Infeasible);
    }

    let horizon = req.horizon.unwrap_or_else(|| default_horizon(map, 1, req.start_time, req.constraints));
    let settle = latest + 1;
    let clamp = |t: Time| t.min(settle);

    let dist = cache.distances(map, req.goal);
    let h = |v: Vertex, t: Time| -> Option<u32> {
        let d = dist[map.index(v)];
        (d != u32::MAX).then(|| d.max(goal_free_from.saturating_sub(t)))
    };

    let blocked = |v: Vertex, t: Time| -> bool {
        req.obstacles.contains(v)
            || vertex_blocks.contains(&(v, t))
            || occupied.get(&v).is_some_and(|&from| t >= from)
    };

    // Late states are merged per vertex, so g is not implied by the state;
    // keep the best g seen and close states only on expansion.
    let mut nodes: Vec<Node> = Vec::new();
    let mut best_g: HashMap<(Vertex, Time), u32> = HashMap::new();
    let mut closed: HashSet<(Vertex, Time)> = HashSet::new();
    let mut open = BinaryHeap::new();

    let Some(h0) = h(req.start, req.start_time) else {
        return Err(PlanError::Infeasible);
    };
    nodes.push(Node { at: req.start, time: req.start_time, parent: NO_PARENT });
    best_g.insert((req.start, clamp(req.start_time)), 0);
    open.push(Reverse((h0, Reverse(0u32), req.start.row_major(), 0u32)));

    while let Some(Reverse((_, Reverse(g), _, idx))) = open.pop() {
        let node = nodes[idx as usize];
        if !closed.insert((node.at, clamp(node.time))) {
            continue;
        }
        if node.at == req.goal && node.time >= goal_free_from {
            return Ok(reconstruct(&nodes, idx, req.start_time));
        }
        let next_t = node.time + 1;
        if next_t > horizon {
            continue;
        }
        let successors = std::iter::once(node.at).chain(map.neighbors(node.at));
        for next in successors {
            if blocked(next, next_t) {
                continue;
            }
            if next != node.at && edge_blocks.contains(&(node.at, next, node.time)) {
                continue;
            }
            let key = (next, clamp(next_t));
            if closed.contains(&key) || best_g.get(&key).is_some_and(|&b| b <= g + 1) {
                continue;
            }
            best_g.insert(key, g + 1);
            let Some(hn) = h(next, next_t) else { continue };
            let id = nodes.len() as u32;
            nodes.push(Node { at: next, time: next_t, parent: idx });
            open.push(Reverse((g + 1 + hn, Reverse(g + 1), next.row_major(), id)));
        }
    }
    Err(PlanError::Infeasible)
}

fn reconstruct(nodes: &[Node], mut idx: u32, start_time: Time) -> Path {
    let mut positions = Vec::new();
    while idx != NO_PARENT {
        let n = nodes[idx as usize];
        positions.push(n.at);
        idx = n.parent;
    }
    positions.reverse();
    Path::new(start_time, positions)
}

/// Why a path fails to honor its constraints.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathViolation {
    #[error("invalid move {from} -> {to} at t={time}")]
    InvalidMove { from: Vertex, to: Vertex, time: Time },
    #[error("vertex constraint {at} at t={time} violated")]
    Vertex { at: Vertex, time: Time },
    #[error("edge constraint {from} -> {to} at t={time} violated")]
    Edge { from: Vertex, to: Vertex, time: Time },
    #[error("obstacle {at} entered at t={time}")]
    Obstacle { at: Vertex, time: Time },
    #[error("resting on goal {at} collides with a constraint at t={time}")]
    GoalRest { at: Vertex, time: Time },
}

/// Replays `path` against `constraints` and `obstacles` for every timestep
/// strictly after `after`, including the rest period on the final vertex.
pub fn check_path(
    map: &GridMap,
    path: &Path,
    constraints: &ConstraintSet,
    obstacles: &StaticObstacleSet,
    after: Time,
) -> Result<(), PathViolation> {
    for (k, pair) in path.positions.windows(2).enumerate() {
        let time = path.start_time + k as Time;
        let (from, to) = (pair[0], pair[1]);
        if !map.is_passable(to) || !(from == to || from.is_adjacent(to)) {
            return Err(PathViolation::InvalidMove { from, to, time });
        }
    }
    for (k, &at) in path.positions.iter().enumerate() {
        let time = path.start_time + k as Time;
        if time >= after && obstacles.contains(at) {
            return Err(PathViolation::Obstacle { at, time });
        }
    }
    let end = path.end_time();
    for c in constraints {
        match c.kind {
            ConstraintKind::Vertex(v) => {
                if c.time <= after {
                    continue;
                }
                match path.position_at(c.time) {
                    Some(p) if p == v && c.time > end => return Err(PathViolation::GoalRest { at: v, time: c.time }),
                    Some(p) if p == v => return Err(PathViolation::Vertex { at: v, time: c.time }),
                    _ => {}
                }
            }
            ConstraintKind::Edge { from, to } => {
                if c.time < after {
                    continue;
                }
                if path.position_at(c.time) == Some(from) && path.position_at(c.time + 1) == Some(to) && from != to {
                    return Err(PathViolation::Edge { from, to, time: c.time });
                }
            }
        }
    }
    Ok(())
}
