//! Online decentralized multi-task multi-agent pathfinding on 4-connected
//! grids under limited communication.
//!
//! Agents plan jointly inside local networks with a modified conflict-based
//! search, and remember agents that left their network through info packets
//! that act as fixed-path virtual agents (bounded packets) or as private
//! obstacles (infinite packets, for agents at rest).

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod baselines;
pub mod cbs;
pub mod comms;
pub mod engine;
pub mod env;
pub mod harness;
pub mod lowlevel;
pub mod packets;
pub mod replay;
pub mod scenario;
pub mod tasking;

/// Discrete timestep.
pub type Time = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.0)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}
