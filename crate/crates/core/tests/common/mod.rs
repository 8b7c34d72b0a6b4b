//! Independent reference implementations used as test oracles. These are
//! deliberately naive: exhaustive layer-by-layer search, exact rational
//! geometry, no shared code with the planners under test.
#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use prism_core::env::{GridMap, Vertex};
use prism_core::lowlevel::{ConstraintKind, ConstraintSet, StaticObstacleSet};
use prism_core::scenario;
use prism_core::Time;
use rand::Rng;

fn steps(map: &GridMap, v: Vertex) -> Vec<Vertex> {
    let mut out = vec![v];
    let (x, y) = (v.x as i64, v.y as i64);
    for (dx, dy) in [(0, -1), (-1, 0), (1, 0), (0, 1)] {
        let (nx, ny) = (x + dx, y + dy);
        if nx >= 0 && ny >= 0 && nx < map.width() as i64 && ny < map.height() as i64 {
            let n = Vertex::new(nx as u32, ny as u32);
            if map.is_passable(n) {
                out.push(n);
            }
        }
    }
    out
}

/// Shortest arrival cost over the time-expanded graph, found by growing the
/// set of reachable vertices one timestep at a time up to `horizon`. The
/// agent must be able to stay on the goal forever after arriving.
/// Vertex constraints at or before `start_time` are ignored.
pub fn brute_force_cost(
    map: &GridMap,
    start: Vertex,
    goal: Vertex,
    start_time: Time,
    constraints: &ConstraintSet,
    obstacles: &StaticObstacleSet,
    horizon: Time,
) -> Option<u32> {
    if !map.is_passable(start) || !map.is_passable(goal) || obstacles.contains(start) || obstacles.contains(goal) {
        return None;
    }
    let vertex_hit = |v: Vertex, t: Time| {
        constraints.iter().any(|c| c.time == t && t > start_time && c.kind == ConstraintKind::Vertex(v))
    };
    let edge_hit = |a: Vertex, b: Vertex, t: Time| {
        constraints.iter().any(|c| c.time == t && c.kind == ConstraintKind::Edge { from: a, to: b })
    };
    let goal_clear_after = |t: Time| {
        !constraints.iter().any(|c| c.time >= t && c.time > start_time && c.kind == ConstraintKind::Vertex(goal))
    };
    let mut frontier: BTreeSet<Vertex> = BTreeSet::from([start]);
    let mut t = start_time;
    loop {
        if frontier.contains(&goal) && goal_clear_after(t) {
            return Some(t - start_time);
        }
        if t >= horizon || frontier.is_empty() {
            return None;
        }
        let mut next = BTreeSet::new();
        for &u in &frontier {
            for w in steps(map, u) {
                if obstacles.contains(w) || vertex_hit(w, t + 1) || (w != u && edge_hit(u, w, t)) {
                    continue;
                }
                next.insert(w);
            }
        }
        frontier = next;
        t += 1;
    }
}

/// Optimal sum of costs for one-shot MAPF from t = 0, by Dijkstra over the
/// joint state (positions, which agents have committed to staying on their
/// goal). Committed agents cost nothing more but keep occupying their goal.
/// An agent's cost is its final arrival time.
pub fn joint_optimum(map: &GridMap, starts: &[Vertex], goals: &[Vertex]) -> Option<u64> {
    let n = starts.len();
    assert_eq!(n, goals.len());
    type State = (Vec<Vertex>, u32);
    let full = (1u32 << n) - 1;
    let mut best: HashMap<State, u64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    let start: State = (starts.to_vec(), 0);
    best.insert(start.clone(), 0);
    heap.push(Reverse((0u64, start)));
    while let Some(Reverse((cost, state))) = heap.pop() {
        if best.get(&state).is_some_and(|&b| b < cost) {
            continue;
        }
        let (pos, done) = &state;
        if *done == full {
            return Some(cost);
        }
        let mut relax = |next: State, c: u64| {
            if best.get(&next).is_none_or(|&b| c < b) {
                best.insert(next.clone(), c);
                heap.push(Reverse((c, next)));
            }
        };
        // commit one agent that is sitting on its goal
        for i in 0..n {
            if done & (1 << i) == 0 && pos[i] == goals[i] {
                relax((pos.clone(), done | (1 << i)), cost);
            }
        }
        // one joint step of every uncommitted agent
        let moving: Vec<usize> = (0..n).filter(|i| done & (1 << i) == 0).collect();
        let options: Vec<Vec<Vertex>> = moving.iter().map(|&i| steps(map, pos[i])).collect();
        let mut choice = vec![0usize; moving.len()];
        loop {
            let mut next = pos.clone();
            for (k, &i) in moving.iter().enumerate() {
                next[i] = options[k][choice[k]];
            }
            let distinct = (0..n).all(|a| (a + 1..n).all(|b| next[a] != next[b]));
            let no_swap = (0..n).all(|a| {
                (a + 1..n).all(|b| !(pos[a] != next[a] && pos[a] == next[b] && pos[b] == next[a]))
            });
            if distinct && no_swap {
                relax((next, *done), cost + moving.len() as u64);
            }
            let mut k = 0;
            while k < choice.len() {
                choice[k] += 1;
                if choice[k] < options[k].len() {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
            if k == choice.len() {
                break;
            }
        }
    }
    None
}

/// Whether the segment between the centers of `p` and `q` meets the closed
/// unit square of `cell`. Coordinates are doubled so that centers are even
/// integers and cell borders odd, then the segment is clipped with exact
/// rational comparisons.
pub fn segment_touches_cell(p: Vertex, q: Vertex, cell: Vertex) -> bool {
    let (x0, y0) = (2 * p.x as i64, 2 * p.y as i64);
    let (dx, dy) = (2 * q.x as i64 - x0, 2 * q.y as i64 - y0);
    let (cx, cy) = (2 * cell.x as i64, 2 * cell.y as i64);
    // t in [lo_n/lo_d, hi_n/hi_d], starting from [0, 1]
    let (mut lo, mut hi) = ((0i64, 1i64), (1i64, 1i64));
    for (origin, delta, min, max) in [(x0, dx, cx - 1, cx + 1), (y0, dy, cy - 1, cy + 1)] {
        if delta == 0 {
            if origin < min || origin > max {
                return false;
            }
            continue;
        }
        let (mut a, mut b) = ((min - origin, delta), (max - origin, delta));
        if delta < 0 {
            a = (-a.0, -delta);
            b = (-b.0, -delta);
            std::mem::swap(&mut a, &mut b);
        }
        // both fractions now have positive denominators
        if a.0 * lo.1 > lo.0 * a.1 {
            lo = a;
        }
        if b.0 * hi.1 < hi.0 * b.1 {
            hi = b;
        }
    }
    lo.0 * hi.1 <= hi.0 * lo.1
}

/// Random map with roughly `ratio` blocked cells, not necessarily connected.
pub fn random_grid(rng: &mut impl Rng, w: u32, h: u32, ratio: f64) -> GridMap {
    GridMap::from_fn(w, h, |_| !rng.gen_bool(ratio))
}

/// Reachable-from-first-cell component as a list, for sampling endpoints.
pub fn component_of(map: &GridMap, v: Vertex) -> Vec<Vertex> {
    let d = map.bfs_distances(v);
    map.passable_cells().filter(|&c| d[map.index(c)] != u32::MAX).collect()
}

/// A small one-shot instance: `agents` distinct starts and distinct goals
/// inside one connected region. `None` when the draw is too cramped.
pub fn small_instance(seed: u64, max_side: u32, max_agents: usize) -> Option<(GridMap, Vec<Vertex>, Vec<Vertex>)> {
    use rand::seq::SliceRandom;
    let mut rng = scenario::rng(seed);
    let w = rng.gen_range(2..=max_side);
    let h = rng.gen_range(2..=max_side);
    let map = scenario::keep_largest_region(&random_grid(&mut rng, w, h, 0.2));
    let agents = rng.gen_range(1..=max_agents);
    let mut cells: Vec<Vertex> = map.passable_cells().collect();
    if cells.len() < agents + 1 {
        return None;
    }
    cells.shuffle(&mut rng);
    let starts = cells[..agents].to_vec();
    cells.shuffle(&mut rng);
    let goals = cells[..agents].to_vec();
    Some((map, starts, goals))
}

pub fn id_map<T: Copy>(xs: &[T]) -> BTreeMap<prism_core::AgentId, T> {
    xs.iter().enumerate().map(|(i, &x)| (prism_core::AgentId(i as u32), x)).collect()
}
