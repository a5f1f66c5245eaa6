//! Shortest-path searches checked against exhaustive enumeration.

use plan2vec_core::graph::{EdgeOrigin, TransitionGraph};
use plan2vec_core::planner::{self, Target, ZeroHeuristic};
use plan2vec_core::trainer::make_value_targets_amortized;
use proptest::prelude::*;

/// Minimum cost over every simple path, by depth-first enumeration.
fn enumerate_min(adj: &[Vec<(usize, f64)>], s: usize, t: usize) -> Option<f64> {
    fn go(adj: &[Vec<(usize, f64)>], u: usize, t: usize, acc: f64, seen: &mut [bool], best: &mut Option<f64>) {
        if u == t {
            *best = Some(best.map_or(acc, |b: f64| b.min(acc)));
            return;
        }
        for &(v, w) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                go(adj, v, t, acc + w, seen, best);
                seen[v] = false;
            }
        }
    }
    let mut seen = vec![false; adj.len()];
    seen[s] = true;
    let mut best = None;
    go(adj, s, t, 0.0, &mut seen, &mut best);
    best
}

fn build(n: usize, edges: &[(usize, usize, f32)]) -> (TransitionGraph, Vec<Vec<(usize, f64)>>) {
    let g = TransitionGraph::from_edges(n, 1.5, edges.iter().map(|&(u, v, w)| (u, v, w, EdgeOrigin::Inferred))).unwrap();
    let mut adj = vec![Vec::new(); n];
    for &(u, v, w) in edges {
        adj[u].push((v, w as f64));
    }
    (g, adj)
}

fn check_all_pairs(g: &TransitionGraph, adj: &[Vec<(usize, f64)>]) {
    let n = g.n_vertices();
    for s in 0..n {
        for t in 0..n {
            let want = enumerate_min(adj, s, t);
            let (d, _) = planner::dijkstra(g, s, Target::Vertex(t));
            let (a, _) = planner::astar(g, s, t, &ZeroHeuristic);
            for got in [d, a] {
                match (&got, want) {
                    (None, None) => {}
                    (Some(p), Some(w)) => {
                        assert!((p.cost - w).abs() < 1e-9, "{s}->{t}: {} vs {w}", p.cost);
                        assert_eq!(p.vertices.first(), Some(&s));
                        assert_eq!(p.vertices.last(), Some(&t));
                        let re = p.recompute_cost(g).expect("plan follows edges");
                        assert!((re - p.cost).abs() < 1e-9);
                    }
                    _ => panic!("{s}->{t}: reachability mismatch {got:?} vs {want:?}"),
                }
            }
        }
    }
}

#[test]
fn every_digraph_on_three_vertices() {
    let pairs: Vec<(usize, usize)> = (0..3).flat_map(|u| (0..3).map(move |v| (u, v))).filter(|(u, v)| u != v).collect();
    let weights = [0.5f32, 1.0, 1.25];
    for mask in 0u32..(1 << pairs.len()) {
        let edges: Vec<(usize, usize, f32)> = pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(i, &(u, v))| (u, v, weights[(i + mask as usize) % 3]))
            .collect();
        let (g, adj) = build(3, &edges);
        check_all_pairs(&g, &adj);
    }
}

fn sparse_graph(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize, f32)>)> {
    (2..=max_n).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (0..n).map(move |v| (u, v))).filter(|(u, v)| u != v).collect();
        let m = pairs.len();
        (Just(n), proptest::collection::vec((any::<bool>(), 1u8..=20), m).prop_map(move |picks| {
            picks
                .iter()
                .zip(&pairs)
                // keep roughly a quarter of the pairs so enumeration stays cheap
                .filter(|((keep, w), _)| *keep && w % 2 == 0)
                .map(|((_, w), &(u, v))| (u, v, *w as f32 / 10.0))
                .collect()
        }))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn searches_match_enumeration((n, edges) in sparse_graph(9)) {
        let (g, adj) = build(n, &edges);
        check_all_pairs(&g, &adj);
    }

    #[test]
    fn amortized_targets_are_graph_distances((n, edges) in sparse_graph(9), goal in 0usize..9) {
        let goal = goal % n;
        let (g, adj) = build(n, &edges);
        let targets = make_value_targets_amortized(&g.reversed(), goal);
        let mut expected: Vec<(usize, f64)> = (0..n).filter_map(|v| enumerate_min(&adj, v, goal).map(|d| (v, d))).collect();
        expected.sort_by_key(|e| e.0);
        prop_assert_eq!(targets.len(), expected.len());
        for ((v, d), (w, e)) in targets.iter().zip(&expected) {
            prop_assert_eq!(v, w);
            prop_assert!((d - e).abs() < 1e-9);
        }
    }

    #[test]
    fn tree_matches_point_queries((n, edges) in sparse_graph(9), s in 0usize..9) {
        let s = s % n;
        let (g, _) = build(n, &edges);
        let tree = planner::shortest_path_tree(&g, s);
        for (t, &row) in tree.iter().enumerate() {
            let (p, _) = planner::dijkstra(&g, s, Target::Vertex(t));
            match (row, p) {
                (None, None) => {}
                (Some((c, _)), Some(p)) => prop_assert!((c - p.cost).abs() < 1e-9),
                (a, b) => prop_assert!(false, "mismatch {a:?} {b:?}"),
            }
        }
    }

    #[test]
    fn graph_distance_obeys_triangle_inequality((n, edges) in sparse_graph(9)) {
        let (g, _) = build(n, &edges);
        let trees: Vec<_> = (0..n).map(|s| planner::shortest_path_tree(&g, s)).collect();
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if let (Some((ab, _)), Some((bc, _))) = (trees[a][b], trees[b][c]) {
                        let (ac, _) = trees[a][c].expect("reachable through b");
                        prop_assert!(ac <= ab + bc + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn lookahead_never_hurts_exact_values((n, edges) in sparse_graph(9), s in 0usize..9, t in 0usize..9) {
        // with exact distance-to-goal values the greedy walk succeeds whenever the goal is reachable
        let (s, t) = (s % n, t % n);
        let (g, _) = build(n, &edges);
        let targets = make_value_targets_amortized(&g.reversed(), t);
        let mut value = vec![f64::NEG_INFINITY; n];
        for (v, d) in targets {
            value[v] = -d;
        }
        let reachable = value[s].is_finite();
        for k in 1..=3 {
            let budget = planner::Budget { lookahead: k, frontier_cap: 1, step_limit: 50 };
            let out = planner::budget_limited_search(&g, s, &|v| v == t, &|v| value[v], budget);
            prop_assert_eq!(out.success, reachable);
        }
    }
}
