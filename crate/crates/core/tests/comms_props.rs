mod common;

use std::collections::BTreeSet;

use common::{random_grid, segment_touches_cell};
use prism_core::comms::{compute_networks, in_range, line_of_sight, supercover, CommsConfig, Protocol, Range};
use prism_core::env::{GridMap, Vertex};
use prism_core::{scenario, AgentId};
use proptest::prelude::*;
use rand::Rng;

fn vertex(max: u32) -> impl Strategy<Value = Vertex> {
    (0..max, 0..max).prop_map(|(x, y)| Vertex::new(x, y))
}

fn configs() -> Vec<CommsConfig> {
    vec![
        CommsConfig::min_proximity(),
        CommsConfig::new(Protocol::Proximity, Range::Fraction(0.3)),
        CommsConfig::line_of_sight(),
        CommsConfig::full(),
    ]
}

#[test]
fn supercover_matches_closed_square_test_exhaustively() {
    let n = 7;
    let cells: Vec<Vertex> = (0..n).flat_map(|y| (0..n).map(move |x| Vertex::new(x, y))).collect();
    for &p in &cells {
        for &q in &cells {
            let got: BTreeSet<Vertex> = supercover(p, q).into_iter().collect();
            let want: BTreeSet<Vertex> = cells.iter().copied().filter(|&c| segment_touches_cell(p, q, c)).collect();
            assert_eq!(got, want, "{p} -> {q}");
        }
    }
}

#[test]
fn diagonal_through_corners_sees_both_sides() {
    let cover: BTreeSet<Vertex> = supercover(Vertex::new(0, 0), Vertex::new(2, 2)).into_iter().collect();
    assert_eq!(cover.len(), 7);
    let map = GridMap::from_rows(&["..@", "...", "..."]).unwrap();
    assert!(line_of_sight(&map, Vertex::new(0, 0), Vertex::new(2, 2)));
    let map = GridMap::from_rows(&[".@.", "...", "..."]).unwrap();
    assert!(!line_of_sight(&map, Vertex::new(0, 0), Vertex::new(2, 2)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn range_is_symmetric(seed in any::<u64>(), p in vertex(12), q in vertex(12)) {
        let map = random_grid(&mut scenario::rng(seed), 12, 12, 0.25);
        for config in configs() {
            prop_assert_eq!(in_range(&config, &map, p, q), in_range(&config, &map, q, p));
        }
    }

    #[test]
    fn partition_is_a_partition_and_closed_under_hops(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = scenario::rng(seed);
        let map = random_grid(&mut rng, 16, 16, 0.2);
        let mut used = BTreeSet::new();
        let agents: Vec<(AgentId, Vertex)> = (0..n)
            .filter_map(|i| {
                let v = Vertex::new(rng.gen_range(0..16), rng.gen_range(0..16));
                used.insert(v).then_some((AgentId(i as u32), v))
            })
            .collect();
        for config in configs() {
            let part = compute_networks(&agents, &config, &map);
            let total: usize = part.networks.values().map(BTreeSet::len).sum();
            prop_assert_eq!(total, agents.len());
            let union: BTreeSet<AgentId> = part.networks.values().flatten().copied().collect();
            prop_assert_eq!(union.len(), agents.len());
            for (id, members) in &part.networks {
                prop_assert_eq!(members.iter().next(), Some(id));
                for m in members {
                    prop_assert_eq!(part.membership[m], *id);
                }
            }
            for &(a, pa) in &agents {
                for &(b, pb) in &agents {
                    if in_range(&config, &map, pa, pb) {
                        prop_assert!(part.same_network(a, b));
                    }
                }
            }
            // every network is connected through in-range links
            for members in part.networks.values() {
                let pos = |id: &AgentId| agents.iter().find(|(a, _)| a == id).unwrap().1;
                let mut reached = BTreeSet::from([*members.iter().next().unwrap()]);
                loop {
                    let grow: Vec<AgentId> = members
                        .iter()
                        .filter(|m| !reached.contains(m) && reached.iter().any(|r| in_range(&config, &map, pos(r), pos(m))))
                        .copied()
                        .collect();
                    if grow.is_empty() {
                        break;
                    }
                    reached.extend(grow);
                }
                prop_assert_eq!(&reached, members);
            }
            if config.protocol == Protocol::Full {
                prop_assert_eq!(part.networks.len(), 1);
            }
        }
    }
}

#[test]
fn chain_of_three_is_one_network() {
    let map = GridMap::open(20, 1);
    let agents = [(AgentId(0), Vertex::new(0, 0)), (AgentId(1), Vertex::new(4, 0)), (AgentId(2), Vertex::new(8, 0))];
    let config = CommsConfig::min_proximity();
    assert!(!in_range(&config, &map, agents[0].1, agents[2].1));
    assert_eq!(compute_networks(&agents, &config, &map).networks.len(), 1);
}
