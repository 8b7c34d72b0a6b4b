//! Collision replay over executed (or planned) trajectories.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::env::Vertex;
use crate::lowlevel::Path;
use crate::Time;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayConflict {
    Vertex { a: usize, b: usize, at: Vertex, time: Time },
    Edge { a: usize, b: usize, from: Vertex, to: Vertex, time: Time },
    /// A step that is neither a wait nor a move to a 4-neighbor.
    Jump { agent: usize, from: Vertex, to: Vertex, time: Time },
}

impl fmt::Display for ReplayConflict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ReplayConflict::Vertex { a, b, at, time } => write!(f, "vertex conflict R{a}/R{b} at {at} t={time}"),
            ReplayConflict::Edge { a, b, from, to, time } => {
                write!(f, "edge conflict R{a}/R{b} on {from}-{to} departing t={time}")
            }
            ReplayConflict::Jump { agent, from, to, time } => write!(f, "R{agent} jumps {from}->{to} at t={time}"),
        }
    }
}

/// All conflicts among trajectories indexed from t = 0. Shorter
/// trajectories rest on their last position.
pub fn find_conflicts(trajectories: &[Vec<Vertex>]) -> Vec<ReplayConflict> {
    let horizon = trajectories.iter().map(Vec::len).max().unwrap_or(0);
    let at = |k: usize, t: usize| -> Vertex {
        let traj = &trajectories[k];
        traj[t.min(traj.len() - 1)]
    };
    let mut out = Vec::new();
    for t in 0..horizon {
        let mut seen: BTreeMap<Vertex, usize> = BTreeMap::new();
        for k in 0..trajectories.len() {
            if trajectories[k].is_empty() {
                continue;
            }
            let here = at(k, t);
            if let Some(&other) = seen.get(&here) {
                out.push(ReplayConflict::Vertex { a: other, b: k, at: here, time: t as Time });
            } else {
                seen.insert(here, k);
            }
            if t + 1 < horizon {
                let next = at(k, t + 1);
                if next != here && !next.is_adjacent(here) {
                    out.push(ReplayConflict::Jump { agent: k, from: here, to: next, time: t as Time });
                }
            }
        }
        if t + 1 < horizon {
            for a in 0..trajectories.len() {
                for b in a + 1..trajectories.len() {
                    if trajectories[a].is_empty() || trajectories[b].is_empty() {
                        continue;
                    }
                    let (a0, a1, b0, b1) = (at(a, t), at(a, t + 1), at(b, t), at(b, t + 1));
                    if a0 != a1 && a0 == b1 && a1 == b0 {
                        out.push(ReplayConflict::Edge { a, b, from: a0, to: a1, time: t as Time });
                    }
                }
            }
        }
    }
    out
}

/// Expands paths (all starting at t = 0) to trajectories for replay.
pub fn paths_to_trajectories<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Vec<Vec<Vertex>> {
    paths
        .into_iter()
        .map(|p| {
            assert_eq!(p.start_time, 0, "replay expects paths from t = 0");
            p.positions.clone()
        })
        .collect()
}
