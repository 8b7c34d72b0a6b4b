//! Mission tasks, their lifecycle, and greedy allocation with swaps.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{manhattan, Vertex};
use crate::{AgentId, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Unassigned,
    Assigned,
    Started,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub start: Vertex,
    pub goal: Vertex,
    pub state: TaskState,
    pub assignee: Option<AgentId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Mission,
    Transition,
}

/// What an agent is currently driving toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Heading to the start of its assigned mission.
    Transition { mission: TaskId, goal: Vertex },
    Mission { task: TaskId, goal: Vertex },
    /// No task: return to (or stay at) the resting position.
    Home(Vertex),
}

impl Objective {
    pub fn goal(self) -> Vertex {
        match self {
            Objective::Transition { goal, .. } | Objective::Mission { goal, .. } | Objective::Home(goal) => goal,
        }
    }

    pub fn task(self) -> Option<TaskId> {
        match self {
            Objective::Transition { mission, .. } => Some(mission),
            Objective::Mission { task, .. } => Some(task),
            Objective::Home(_) => None,
        }
    }

    pub fn kind(self) -> Option<TaskKind> {
        match self {
            Objective::Transition { .. } => Some(TaskKind::Transition),
            Objective::Mission { .. } => Some(TaskKind::Mission),
            Objective::Home(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskError {
    #[error("tasks {0} and {1} share an endpoint {2}")]
    SharedEndpoint(TaskId, TaskId, Vertex),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationState {
    /// Indexed by task id.
    pub tasks: Vec<Task>,
    pub assignment: BTreeMap<AgentId, Option<TaskId>>,
}

impl AllocationState {
    /// Builds the pool from `(start, goal)` pairs in order. Endpoints must be
    /// pairwise distinct across the pool.
    pub fn new(pairs: &[(Vertex, Vertex)], agents: impl IntoIterator<Item = AgentId>) -> Result<Self, TaskError> {
        let mut owner: BTreeMap<Vertex, TaskId> = BTreeMap::new();
        for (i, &(s, g)) in pairs.iter().enumerate() {
            let id = TaskId(i as u32);
            for v in [s, g] {
                if let Some(&other) = owner.get(&v) {
                    return Err(TaskError::SharedEndpoint(other, id, v));
                }
                owner.insert(v, id);
            }
        }
        let tasks = pairs
            .iter()
            .enumerate()
            .map(|(i, &(start, goal))| Task { id: TaskId(i as u32), start, goal, state: TaskState::Unassigned, assignee: None })
            .collect();
        Ok(Self { tasks, assignment: agents.into_iter().map(|a| (a, None)).collect() })
    }

    pub fn task(&self, id: TaskId) -> &Task {
        &self.tasks[id.0 as usize]
    }

    fn task_mut(&mut self, id: TaskId) -> &mut Task {
        &mut self.tasks[id.0 as usize]
    }

    fn with_state(&self, state: TaskState) -> BTreeSet<TaskId> {
        self.tasks.iter().filter(|t| t.state == state).map(|t| t.id).collect()
    }

    /// Assigned or in the pool, but not yet begun.
    pub fn unstarted(&self) -> BTreeSet<TaskId> {
        self.tasks.iter().filter(|t| matches!(t.state, TaskState::Unassigned | TaskState::Assigned)).map(|t| t.id).collect()
    }

    pub fn started(&self) -> BTreeSet<TaskId> {
        self.with_state(TaskState::Started)
    }

    pub fn done(&self) -> BTreeSet<TaskId> {
        self.with_state(TaskState::Done)
    }

    pub fn pool(&self) -> BTreeSet<TaskId> {
        self.with_state(TaskState::Unassigned)
    }

    pub fn all_done(&self) -> bool {
        self.tasks.iter().all(|t| t.state == TaskState::Done)
    }

    pub fn assigned(&self, agent: AgentId) -> Option<TaskId> {
        self.assignment.get(&agent).copied().flatten()
    }

    fn set(&mut self, agent: AgentId, task: Option<TaskId>) {
        if let Some(t) = task {
            let entry = self.task_mut(t);
            entry.assignee = Some(agent);
            entry.state = TaskState::Assigned;
        }
        self.assignment.insert(agent, task);
    }

    /// The objective implied by the agent's assignment. A mission whose
    /// start the agent already occupies begins immediately.
    pub fn objective_for(&mut self, agent: AgentId, position: Vertex, home: Vertex) -> Objective {
        let Some(id) = self.assigned(agent) else {
            return Objective::Home(home);
        };
        let task = self.task(id).clone();
        match task.state {
            TaskState::Started => Objective::Mission { task: id, goal: task.goal },
            TaskState::Assigned if position == task.start => {
                self.task_mut(id).state = TaskState::Started;
                Objective::Mission { task: id, goal: task.goal }
            }
            TaskState::Assigned => Objective::Transition { mission: id, goal: task.start },
            TaskState::Unassigned | TaskState::Done => unreachable!("assignment points at a {:?} task", task.state),
        }
    }
}

/// Result of reaching the current objective's goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Completion {
    /// Transition finished; the mission is now started.
    MissionStarted(TaskId),
    /// Mission finished; the agent needs a new task.
    MissionDone(TaskId),
    /// Already home; nothing changes.
    Idle,
}

pub fn on_task_complete(state: &mut AllocationState, agent: AgentId, objective: Objective) -> Completion {
    match objective {
        Objective::Transition { mission, .. } => {
            state.task_mut(mission).state = TaskState::Started;
            Completion::MissionStarted(mission)
        }
        Objective::Mission { task, .. } => {
            state.task_mut(task).state = TaskState::Done;
            state.assignment.insert(agent, None);
            Completion::MissionDone(task)
        }
        Objective::Home(_) => Completion::Idle,
    }
}

/// Greedy nearest-start allocation for `requesters` (ascending id, ties to
/// the lower task id), followed by up to `|agents|` rounds of the single
/// best strictly-improving swap of an unstarted task between its holder and
/// a requesting or displaced agent. Estimates are Manhattan distances from
/// agent position to task start; no task costs 0.
///
/// Returns every agent whose assignment changed, with its new assignment.
pub fn allocate_tasks(
    state: &mut AllocationState,
    requesters: &BTreeSet<AgentId>,
    positions: &BTreeMap<AgentId, Vertex>,
) -> BTreeMap<AgentId, Option<TaskId>> {
    let before = state.assignment.clone();
    let mut pool = state.pool();
    for &r in requesters {
        if state.assigned(r).is_some() {
            continue;
        }
        let pos = positions[&r];
        let best = pool.iter().copied().min_by_key(|&t| (manhattan(pos, state.task(t).start), t));
        if let Some(t) = best {
            pool.remove(&t);
            state.set(r, Some(t));
        }
    }

    let estimate = |state: &AllocationState, agent: AgentId, task: Option<TaskId>| -> u64 {
        task.map_or(0, |t| manhattan(positions[&agent], state.task(t).start) as u64)
    };
    let unstarted_holding = |state: &AllocationState, agent: AgentId| -> Option<Option<TaskId>> {
        match state.assigned(agent) {
            None => Some(None),
            Some(t) if state.task(t).state == TaskState::Assigned => Some(Some(t)),
            Some(_) => None,
        }
    };

    let mut candidates = requesters.clone();
    for _ in 0..state.assignment.len() {
        let mut best: Option<(u64, AgentId, AgentId)> = None;
        for &a in state.assignment.keys() {
            let Some(Some(u)) = unstarted_holding(state, a) else { continue };
            for &b in &candidates {
                if a == b {
                    continue;
                }
                let Some(tb) = unstarted_holding(state, b) else { continue };
                let current = estimate(state, a, Some(u)) + estimate(state, b, tb);
                let swapped = estimate(state, b, Some(u)) + estimate(state, a, tb);
                if swapped < current {
                    let gain = current - swapped;
                    if best.is_none_or(|(g, _, _)| gain > g) {
                        best = Some((gain, a, b));
                    }
                }
            }
        }
        let Some((_, a, b)) = best else { break };
        let u = state.assigned(a);
        let tb = state.assigned(b);
        state.set(b, u);
        state.set(a, tb);
        candidates.insert(a);
    }

    state
        .assignment
        .iter()
        .filter(|(a, t)| before.get(a) != Some(t))
        .map(|(&a, &t)| (a, t))
        .collect()
}
