//! Communication predicates and local networks.
//!
//! Two agents can talk directly when the protocol's pairwise predicate
//! holds; a local network is a connected component of that relation, so
//! messages relay over multiple hops.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{GridMap, Vertex};
use crate::AgentId;

/// Smallest usable range, in cells. Agents this close always communicate
/// under every protocol.
pub const MIN_DIAMETER: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Proximity,
    LineOfSight,
    Full,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Proximity => "prox",
            Protocol::LineOfSight => "los",
            Protocol::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommsError {
    #[error("unknown protocol {0:?} (expected prox, los or full)")]
    Protocol(String),
    #[error("range must be `min` or a fraction in (0, 1], got {0:?}")]
    Range(String),
}

impl FromStr for Protocol {
    type Err = CommsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prox" | "proximity" => Ok(Protocol::Proximity),
            "los" | "line_of_sight" => Ok(Protocol::LineOfSight),
            "full" => Ok(Protocol::Full),
            other => Err(CommsError::Protocol(other.to_owned())),
        }
    }
}

/// Proximity range: the minimum diameter, or a fraction of the longer map
/// dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Range {
    Min,
    Fraction(f64),
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Range::Min => f.write_str("min"),
            Range::Fraction(x) => write!(f, "{x}"),
        }
    }
}

impl FromStr for Range {
    type Err = CommsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "min" {
            return Ok(Range::Min);
        }
        match s.parse::<f64>() {
            Ok(x) if x > 0.0 && x <= 1.0 => Ok(Range::Fraction(x)),
            _ => Err(CommsError::Range(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommsConfig {
    pub protocol: Protocol,
    pub range: Range,
}

impl CommsConfig {
    pub fn new(protocol: Protocol, range: Range) -> Self {
        Self { protocol, range }
    }

    pub fn full() -> Self {
        Self::new(Protocol::Full, Range::Min)
    }

    pub fn min_proximity() -> Self {
        Self::new(Protocol::Proximity, Range::Min)
    }

    pub fn line_of_sight() -> Self {
        Self::new(Protocol::LineOfSight, Range::Min)
    }

    /// Proximity diameter in whole cells, e.g. 0.1 on a 64-wide map gives 6.
    pub fn diameter(&self, map: &GridMap) -> f64 {
        match self.range {
            Range::Min => MIN_DIAMETER,
            Range::Fraction(f) => (f * map.width().max(map.height()) as f64).round().max(MIN_DIAMETER),
        }
    }
}

fn squared_distance(p: Vertex, q: Vertex) -> u64 {
    let dx = p.x.abs_diff(q.x) as u64;
    let dy = p.y.abs_diff(q.y) as u64;
    dx * dx + dy * dy
}

fn within(p: Vertex, q: Vertex, diameter: f64) -> bool {
    squared_distance(p, q) as f64 <= diameter * diameter
}

/// Every cell the segment between the centers of `p` and `q` touches,
/// including both side cells where it passes exactly through a corner.
pub fn supercover(p: Vertex, q: Vertex) -> Vec<Vertex> {
    let (dx, dy) = (q.x as i64 - p.x as i64, q.y as i64 - p.y as i64);
    let (nx, ny) = (dx.abs(), dy.abs());
    let (sx, sy) = (dx.signum(), dy.signum());
    let (mut x, mut y) = (p.x as i64, p.y as i64);
    let mut cells = vec![p];
    let (mut ix, mut iy) = (0, 0);
    let at = |x: i64, y: i64| Vertex::new(x as u32, y as u32);
    while ix < nx || iy < ny {
        let decision = (1 + 2 * ix) * ny - (1 + 2 * iy) * nx;
        if decision == 0 {
            cells.push(at(x + sx, y));
            cells.push(at(x, y + sy));
            x += sx;
            y += sy;
            ix += 1;
            iy += 1;
        } else if decision < 0 {
            x += sx;
            ix += 1;
        } else {
            y += sy;
            iy += 1;
        }
        cells.push(at(x, y));
    }
    cells
}

pub fn line_of_sight(map: &GridMap, p: Vertex, q: Vertex) -> bool {
    supercover(p, q).into_iter().all(|c| map.is_passable(c))
}

pub fn in_range(config: &CommsConfig, map: &GridMap, p: Vertex, q: Vertex) -> bool {
    match config.protocol {
        Protocol::Full => true,
        Protocol::Proximity => within(p, q, config.diameter(map)),
        Protocol::LineOfSight => within(p, q, MIN_DIAMETER) || line_of_sight(map, p, q),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkPartition {
    /// Agent to network id; a network's id is its lowest member id.
    pub membership: BTreeMap<AgentId, AgentId>,
    pub networks: BTreeMap<AgentId, BTreeSet<AgentId>>,
}

impl NetworkPartition {
    pub fn network_of(&self, agent: AgentId) -> &BTreeSet<AgentId> {
        &self.networks[&self.membership[&agent]]
    }

    pub fn same_network(&self, a: AgentId, b: AgentId) -> bool {
        self.membership.get(&a).is_some_and(|n| self.membership.get(&b) == Some(n))
    }
}

/// Connected components of the pairwise range relation.
pub fn compute_networks(agents: &[(AgentId, Vertex)], config: &CommsConfig, map: &GridMap) -> NetworkPartition {
    let mut sorted = agents.to_vec();
    sorted.sort();
    let n = sorted.len();
    let mut adjacent = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if in_range(config, map, sorted[i].1, sorted[j].1) {
                adjacent[i].push(j);
                adjacent[j].push(i);
            }
        }
    }
    let mut partition = NetworkPartition::default();
    let mut seen = vec![false; n];
    for root in 0..n {
        if seen[root] {
            continue;
        }
        let id = sorted[root].0;
        let mut members = BTreeSet::new();
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(i) = queue.pop_front() {
            members.insert(sorted[i].0);
            partition.membership.insert(sorted[i].0, id);
            for &j in &adjacent[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        partition.networks.insert(id, members);
    }
    partition
}
