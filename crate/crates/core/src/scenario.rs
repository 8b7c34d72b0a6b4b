//! Instance construction: map generators, random task sampling, and
//! instances read from `.scen` entries.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{GridMap, ScenarioEntry, Vertex};

/// Agent start cells plus the mission-task pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub starts: Vec<Vertex>,
    pub tasks: Vec<(Vertex, Vertex)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstanceError {
    #[error("need {needed} distinct cells but the map's largest region has {available}")]
    TooFewCells { needed: usize, available: usize },
    #[error("scenario has {available} usable entries, {needed} required")]
    TooFewEntries { needed: usize, available: usize },
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cells of the largest 4-connected passable region (ties to the region
/// containing the earliest cell in row-major order), row-major.
pub fn largest_region(map: &GridMap) -> Vec<Vertex> {
    let mut label = vec![usize::MAX; map.cell_count()];
    let mut best: Vec<Vertex> = Vec::new();
    for v in map.passable_cells() {
        if label[map.index(v)] != usize::MAX {
            continue;
        }
        let id = map.index(v);
        let mut region = Vec::new();
        let mut queue = VecDeque::from([v]);
        label[id] = id;
        while let Some(u) = queue.pop_front() {
            region.push(u);
            for w in map.neighbors(u) {
                if label[map.index(w)] == usize::MAX {
                    label[map.index(w)] = id;
                    queue.push_back(w);
                }
            }
        }
        if region.len() > best.len() {
            best = region;
        }
    }
    best.sort_by_key(|v| v.row_major());
    best
}

/// Keeps only the largest passable region; everything else becomes `@`.
pub fn keep_largest_region(map: &GridMap) -> GridMap {
    let keep: BTreeSet<Vertex> = largest_region(map).into_iter().collect();
    GridMap::from_fn(map.width(), map.height(), |v| keep.contains(&v))
}

/// Uniform random obstacles at density `obstacle_ratio`, reduced to the
/// largest connected region (a `random-W-H-P` style map).
pub fn random_map(width: u32, height: u32, obstacle_ratio: f64, rng: &mut impl Rng) -> GridMap {
    let raw = GridMap::from_fn(width, height, |_| !rng.gen_bool(obstacle_ratio));
    keep_largest_region(&raw)
}

/// A perfect maze with corridors `corridor` cells wide separated by
/// one-cell walls (a `maze-W-H-c` style map). Cells past the last full
/// corridor block stay walls.
pub fn maze(width: u32, height: u32, corridor: u32, rng: &mut impl Rng) -> GridMap {
    let pitch = corridor + 1;
    let (nx, ny) = ((width + 1) / pitch, (height + 1) / pitch);
    assert!(nx >= 1 && ny >= 1, "map too small for the corridor width");
    let mut open = vec![false; (width * height) as usize];
    let mut carve = |x0: u32, y0: u32, w: u32, h: u32| {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                open[(y * width + x) as usize] = true;
            }
        }
    };
    let mut visited = vec![false; (nx * ny) as usize];
    let mut stack = vec![(0u32, 0u32)];
    visited[0] = true;
    carve(0, 0, corridor, corridor);
    while let Some(&(cx, cy)) = stack.last() {
        let mut next = Vec::with_capacity(4);
        if cy > 0 {
            next.push((cx, cy - 1));
        }
        if cx > 0 {
            next.push((cx - 1, cy));
        }
        if cx + 1 < nx {
            next.push((cx + 1, cy));
        }
        if cy + 1 < ny {
            next.push((cx, cy + 1));
        }
        next.retain(|&(x, y)| !visited[(y * nx + x) as usize]);
        let Some(&(x, y)) = next.choose(rng) else {
            stack.pop();
            continue;
        };
        visited[(y * nx + x) as usize] = true;
        carve(x * pitch, y * pitch, corridor, corridor);
        // knock down the wall between the two blocks
        if x != cx {
            carve(x.min(cx) * pitch + corridor, y * pitch, 1, corridor);
        } else {
            carve(x * pitch, y.min(cy) * pitch + corridor, corridor, 1);
        }
        stack.push((x, y));
    }
    GridMap::from_fn(width, height, |v| open[(v.y * width + v.x) as usize])
}

/// Samples distinct cells for agent starts and task endpoints. With
/// `one_shot`, there is one task per agent and each agent starts on its
/// task's start.
pub fn random_instance(
    map: &GridMap,
    agents: usize,
    tasks: usize,
    one_shot: bool,
    rng: &mut impl Rng,
) -> Result<Instance, InstanceError> {
    let mut cells = largest_region(map);
    let needed = if one_shot { 2 * agents } else { agents + 2 * tasks };
    if cells.len() < needed {
        return Err(InstanceError::TooFewCells { needed, available: cells.len() });
    }
    cells.shuffle(rng);
    if one_shot {
        let tasks: Vec<_> = (0..agents).map(|i| (cells[2 * i], cells[2 * i + 1])).collect();
        return Ok(Instance { starts: tasks.iter().map(|t| t.0).collect(), tasks });
    }
    let starts = cells[..agents].to_vec();
    let tasks = (0..tasks).map(|i| (cells[agents + 2 * i], cells[agents + 2 * i + 1])).collect();
    Ok(Instance { starts, tasks })
}

/// Builds an instance from `.scen` entries in file order, skipping entries
/// that would reuse a cell. Agents start on the first `agents` usable
/// start cells; the following usable entries become tasks. With
/// `one_shot`, the first `agents` usable entries are both the tasks and
/// the starts.
pub fn instance_from_entries(
    entries: &[ScenarioEntry],
    agents: usize,
    tasks: usize,
    one_shot: bool,
) -> Result<Instance, InstanceError> {
    let mut used: BTreeSet<Vertex> = BTreeSet::new();
    let mut starts = Vec::new();
    let mut pool = Vec::new();
    let want_tasks = if one_shot { agents } else { tasks };
    for e in entries {
        if !one_shot && starts.len() < agents {
            if used.insert(e.start) {
                starts.push(e.start);
            }
            continue;
        }
        if pool.len() == want_tasks {
            break;
        }
        if e.start != e.goal && !used.contains(&e.start) && !used.contains(&e.goal) {
            used.insert(e.start);
            used.insert(e.goal);
            pool.push((e.start, e.goal));
        }
    }
    if one_shot {
        starts = pool.iter().map(|t| t.0).collect();
    }
    if starts.len() < agents || pool.len() < want_tasks {
        return Err(InstanceError::TooFewEntries { needed: agents + want_tasks, available: starts.len() + pool.len() });
    }
    Ok(Instance { starts, tasks: pool })
}

/// A deliberately non-well-formed instance on a width-1 maze.
///
/// Agent 0 parks at the mouth of a dead-end corridor before agent 1, whose
/// goal is the corridor's far end, can get past it. A planner that never
/// moves parked agents cannot finish; one that can ask the parked agent to
/// step aside into the junction can. `extra` further agents get tasks away
/// from the corridor.
pub fn dead_end_instance(seed: u64, size: u32, extra: usize) -> (GridMap, Instance) {
    let mut rng = rng(seed);
    loop {
        let map = maze(size, size, 1, &mut rng);
        if let Some(instance) = try_dead_end(&map, extra, &mut rng) {
            return (map, instance);
        }
    }
}

fn try_dead_end(map: &GridMap, extra: usize, rng: &mut impl Rng) -> Option<Instance> {
    let degree = |v: Vertex| map.neighbors(v).count();
    let mut leaves: Vec<Vertex> = map.passable_cells().filter(|&v| degree(v) == 1).collect();
    leaves.shuffle(rng);
    for leaf in leaves {
        let mut corridor = vec![leaf];
        let (mut prev, mut cur) = (leaf, map.neighbors(leaf).next()?);
        while degree(cur) == 2 {
            corridor.push(cur);
            let next = map.neighbors(cur).find(|&w| w != prev)?;
            prev = cur;
            cur = next;
        }
        let junction = cur;
        if corridor.len() < 2 || degree(junction) < 3 {
            continue;
        }
        let (mouth, end) = (*corridor.last().unwrap(), corridor[0]);
        let reserved: BTreeSet<Vertex> = corridor.iter().copied().chain([junction]).collect();
        let to_mouth = map.bfs_distances(mouth);
        let d = |v: Vertex| to_mouth[map.index(v)];

        let mut firsts: Vec<Vertex> =
            map.passable_cells().filter(|&v| !reserved.contains(&v) && (3..=10).contains(&d(v))).collect();
        firsts.shuffle(rng);
        for &sx in firsts.iter().take(8) {
            let mut seconds: Vec<Vertex> = map
                .passable_cells()
                .filter(|&v| v != sx && !reserved.contains(&v) && d(v) >= d(sx) + 2 && d(v) <= d(sx) + 10)
                .filter(|&v| !on_every_shortest_path(map, sx, mouth, v))
                .collect();
            seconds.shuffle(rng);
            let Some(&sy) = seconds.first() else { continue };
            let mut used: BTreeSet<Vertex> = reserved.iter().copied().chain([sx, sy]).collect();
            let mut starts = vec![sx, sy];
            let mut tasks = vec![(sx, mouth), (sy, end)];
            let to_junction = map.bfs_distances(junction);
            let mut far: Vec<Vertex> = map
                .passable_cells()
                .filter(|&v| !used.contains(&v) && to_junction[map.index(v)] >= 6)
                .collect();
            far.shuffle(rng);
            for pair in far.chunks(2).take(extra) {
                if pair.len() < 2 {
                    break;
                }
                starts.push(pair[0]);
                tasks.push((pair[0], pair[1]));
                used.extend(pair.iter().copied());
            }
            if starts.len() < 2 + extra {
                continue;
            }
            return Some(Instance { starts, tasks });
        }
    }
    None
}

/// Whether removing `blocker` lengthens (or cuts) every route `from -> to`.
fn on_every_shortest_path(map: &GridMap, from: Vertex, to: Vertex, blocker: Vertex) -> bool {
    let direct = map.bfs_distances(from)[map.index(to)];
    let without = GridMap::from_fn(map.width(), map.height(), |v| v != blocker && map.is_passable(v));
    without.bfs_distances(from)[without.index(to)] != direct
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maze_is_connected_and_perfect() {
        let map = maze(21, 21, 1, &mut rng(3));
        let region = largest_region(&map);
        assert_eq!(region.len(), map.passable_count());
        // a perfect maze on a tree of blocks: edges = vertices - 1
        let edges: usize = map.passable_cells().map(|v| map.neighbors(v).count()).sum::<usize>() / 2;
        assert_eq!(edges + 1, map.passable_count());
    }

    #[test]
    fn wide_maze_dimensions() {
        let map = maze(32, 32, 2, &mut rng(1));
        assert_eq!((map.width(), map.height()), (32, 32));
        assert_eq!(largest_region(&map).len(), map.passable_count());
    }

    #[test]
    fn random_map_is_one_region() {
        let map = random_map(32, 32, 0.2, &mut rng(9));
        assert_eq!(largest_region(&map).len(), map.passable_count());
        let ratio = map.passable_count() as f64 / 1024.0;
        assert!(ratio > 0.6 && ratio < 0.85, "{ratio}");
    }

    #[test]
    fn instances_use_distinct_cells() {
        let map = random_map(16, 16, 0.2, &mut rng(2));
        let inst = random_instance(&map, 5, 7, false, &mut rng(4)).unwrap();
        let mut cells: Vec<Vertex> = inst.starts.clone();
        cells.extend(inst.tasks.iter().flat_map(|&(s, g)| [s, g]));
        let distinct: BTreeSet<_> = cells.iter().collect();
        assert_eq!(distinct.len(), 5 + 14);
        let one = random_instance(&map, 4, 0, true, &mut rng(4)).unwrap();
        assert_eq!(one.starts, one.tasks.iter().map(|t| t.0).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_instance() {
        let a = dead_end_instance(11, 21, 2);
        let b = dead_end_instance(11, 21, 2);
        assert_eq!(a, b);
        let (map, inst) = a;
        let (mouth, end) = (inst.tasks[0].1, inst.tasks[1].1);
        let dm = map.bfs_distances(mouth);
        assert!(dm[map.index(inst.starts[1])] >= dm[map.index(inst.starts[0])] + 2);
        assert_eq!(map.neighbors(end).count(), 1);
    }

    #[test]
    fn entries_to_instance() {
        let e = |s: (u32, u32), g: (u32, u32)| ScenarioEntry {
            bucket: 0,
            map_name: "m".into(),
            start: Vertex::new(s.0, s.1),
            goal: Vertex::new(g.0, g.1),
            reference_length: 1.0,
        };
        let entries = [e((0, 0), (1, 0)), e((2, 0), (3, 0)), e((0, 0), (4, 0)), e((5, 0), (6, 0))];
        let inst = instance_from_entries(&entries, 1, 2, false).unwrap();
        assert_eq!(inst.starts, vec![Vertex::new(0, 0)]);
        assert_eq!(inst.tasks.len(), 2);
        assert!(instance_from_entries(&entries, 1, 5, false).is_err());
    }
}
