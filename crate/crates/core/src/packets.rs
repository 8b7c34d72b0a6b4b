//! Info packets: snapshots of agents that left a local network.
//!
//! A bounded packet describes a moving agent and lives until its flush
//! time, the latest mutual constraint between the two parties. An infinite
//! packet describes an agent at rest and is held by the moving party, which
//! treats the resting position as a private obstacle until its own task
//! changes.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::env::Vertex;
use crate::lowlevel::{ConstraintSet, StaticObstacleSet};
use crate::{AgentId, TaskId, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlushTime {
    At(Time),
    Infinite,
}

impl FlushTime {
    pub fn is_infinite(self) -> bool {
        matches!(self, FlushTime::Infinite)
    }

    pub fn bounded(self) -> Option<Time> {
        match self {
            FlushTime::At(t) => Some(t),
            FlushTime::Infinite => None,
        }
    }
}

impl fmt::Display for FlushTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlushTime::At(t) => write!(f, "{t}"),
            FlushTime::Infinite => f.write_str("inf"),
        }
    }
}

/// What a holder knows about the subject's task: enough to rebuild the
/// subject's current path with the low-level search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSnapshot {
    pub task: Option<TaskId>,
    /// First vertex and timestep of the subject's current path.
    pub origin: Vertex,
    pub origin_time: Time,
    /// Final vertex of the subject's current path.
    pub target: Vertex,
    /// Where the subject stood when the packet was made.
    pub position: Vertex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfoPacket {
    pub subject: AgentId,
    pub task: TaskSnapshot,
    pub constraints: ConstraintSet,
    /// The subject's private obstacles when its path was planned.
    pub obstacles: StaticObstacleSet,
    pub t_receive: Time,
    pub t_flush: FlushTime,
}

/// One side of a separating pair, as the packet logic needs it.
#[derive(Debug, Clone)]
pub struct SeparationParty {
    pub id: AgentId,
    pub at_rest: bool,
    pub has_task: bool,
    pub constraints: ConstraintSet,
    pub obstacles: StaticObstacleSet,
    pub snapshot: TaskSnapshot,
}

impl SeparationParty {
    fn packet(&self, t_receive: Time, t_flush: FlushTime) -> InfoPacket {
        InfoPacket {
            subject: self.id,
            task: self.snapshot.clone(),
            constraints: self.constraints.clone(),
            obstacles: self.obstacles.clone(),
            t_receive,
            t_flush,
        }
    }
}

/// Latest time among constraints each party holds because of the other;
/// 0 when there are none.
pub fn calculate_flush_time(cstr_i: &ConstraintSet, cstr_j: &ConstraintSet, id_i: AgentId, id_j: AgentId) -> Time {
    let from_j = cstr_i.iter().filter(|c| c.source == id_j).map(|c| c.time);
    let from_i = cstr_j.iter().filter(|c| c.source == id_i).map(|c| c.time);
    from_j.chain(from_i).max().unwrap_or(0)
}

/// Packets created when `departed` and `remaining` stop sharing a network,
/// as `(holder, packet)` pairs.
///
/// If exactly one party is at rest, the moving party may hold an infinite
/// packet about it, provided it has an active task and `accept_infinite`
/// approves (alternative-path check and per-holder cap). If both move, each
/// holds a bounded packet about the other when the flush time is still in
/// the future.
pub fn create_packets_on_separation(
    departed: &SeparationParty,
    remaining: &SeparationParty,
    t_current: Time,
    accept_infinite: impl FnOnce(&SeparationParty, &SeparationParty) -> bool,
) -> Vec<(AgentId, InfoPacket)> {
    match (departed.at_rest, remaining.at_rest) {
        (true, true) => Vec::new(),
        (true, false) | (false, true) => {
            let (resting, moving) = if departed.at_rest { (departed, remaining) } else { (remaining, departed) };
            if moving.has_task && accept_infinite(moving, resting) {
                vec![(moving.id, resting.packet(t_current, FlushTime::Infinite))]
            } else {
                Vec::new()
            }
        }
        (false, false) => {
            let t_flush = calculate_flush_time(&departed.constraints, &remaining.constraints, departed.id, remaining.id);
            if t_flush > t_current {
                vec![
                    (departed.id, remaining.packet(t_current, FlushTime::At(t_flush))),
                    (remaining.id, departed.packet(t_current, FlushTime::At(t_flush))),
                ]
            } else {
                Vec::new()
            }
        }
    }
}

/// A holder's packets, one per subject.
pub type PacketStore = BTreeMap<AgentId, InfoPacket>;

/// Stores `packet`, keeping the more recent one if the subject is known.
pub fn receive(store: &mut PacketStore, packet: InfoPacket) {
    match store.get(&packet.subject) {
        Some(old) if old.t_receive > packet.t_receive => {}
        _ => {
            store.insert(packet.subject, packet);
        }
    }
}

/// Drops bounded packets with `t_flush <= t_current`; returns how many.
pub fn flush_expired(store: &mut PacketStore, t_current: Time) -> usize {
    let before = store.len();
    store.retain(|_, p| p.t_flush.bounded().is_none_or(|t| t > t_current));
    before - store.len()
}

/// Task changed or completed: every packet goes, infinite ones included.
pub fn flush_on_task_change(store: &mut PacketStore) -> usize {
    let n = store.len();
    store.clear();
    n
}

/// Positions of the holder's infinite packets, as private obstacles.
pub fn infinite_obstacles(store: &PacketStore) -> StaticObstacleSet {
    store.values().filter(|p| p.t_flush.is_infinite()).map(|p| p.task.position).collect()
}

pub fn count_by_kind(store: &PacketStore) -> (usize, usize) {
    let infinite = store.values().filter(|p| p.t_flush.is_infinite()).count();
    (store.len() - infinite, infinite)
}

/// Network-wide packet view for planning: bounded packets about
/// non-members, most recent per subject, ties to the lower holder id.
pub fn synchronize<'a>(
    members: &BTreeSet<AgentId>,
    held: impl IntoIterator<Item = (AgentId, &'a InfoPacket)>,
) -> BTreeMap<AgentId, InfoPacket> {
    let mut best: BTreeMap<AgentId, (Time, Reverse<AgentId>, &InfoPacket)> = BTreeMap::new();
    for (holder, packet) in held {
        if members.contains(&packet.subject) || packet.t_flush.is_infinite() {
            continue;
        }
        let key = (packet.t_receive, Reverse(holder));
        match best.get(&packet.subject) {
            Some(&(t, h, _)) if (t, h) >= key => {}
            _ => {
                best.insert(packet.subject, (key.0, key.1, packet));
            }
        }
    }
    best.into_iter().map(|(subject, (_, _, p))| (subject, p.clone())).collect()
}
