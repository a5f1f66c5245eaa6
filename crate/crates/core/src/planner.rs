//! Shortest-path search with expansion accounting.
//!
//! An expansion is a priority-queue pop (or BFS dequeue) that settles a
//! vertex and generates its successors. Ties are broken by smaller vertex id.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};

use crate::graph::TransitionGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub vertices: Vec<usize>,
    pub cost: f64,
}

impl Plan {
    /// Number of edges traversed.
    pub fn hops(&self) -> usize {
        self.vertices.len().saturating_sub(1)
    }

    /// Re-sums edge weights along the plan; `None` if some step is not an edge.
    pub fn recompute_cost(&self, g: &TransitionGraph) -> Option<f64> {
        self.vertices
            .windows(2)
            .map(|w| g.edge(w[0], w[1]).map(|e| e.weight as f64))
            .sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchStats {
    pub expansions: usize,
    pub peak_frontier: usize,
    /// Finalized `(vertex, cost)` pairs in settle order.
    pub settled: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Vertex(usize),
    All,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    priority: f64,
    cost: f64,
    vertex: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on (priority, vertex)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .priority
            .total_cmp(&self.priority)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Admissible-or-not estimate of remaining cost to a fixed goal.
pub trait Heuristic {
    fn estimate(&self, v: usize) -> f64;
}

pub struct ZeroHeuristic;

impl Heuristic for ZeroHeuristic {
    fn estimate(&self, _v: usize) -> f64 {
        0.0
    }
}

impl<F: Fn(usize) -> f64> Heuristic for F {
    fn estimate(&self, v: usize) -> f64 {
        self(v)
    }
}

/// Ground-truth Euclidean distance to the goal, scaled so that it never
/// exceeds any edge weight along the way (consistent by construction).
pub struct EuclideanHeuristic<'a> {
    positions: &'a [[f32; 2]],
    goal: [f32; 2],
    scale: f64,
}

impl<'a> EuclideanHeuristic<'a> {
    pub fn new(positions: &'a [[f32; 2]], goal: usize, scale: f64) -> Self {
        EuclideanHeuristic {
            positions,
            goal: positions[goal],
            scale,
        }
    }

    /// Largest factor `c` with `c·|pos(u) − pos(v)| <= w(u, v)` on every edge.
    pub fn consistent_scale(g: &TransitionGraph, positions: &[[f32; 2]]) -> f64 {
        let mut scale = f64::INFINITY;
        for (u, v, w, _) in g.edge_list() {
            let d = euclid(positions[u], positions[v]);
            if d > 0.0 {
                scale = scale.min(w as f64 / d);
            }
        }
        if scale.is_finite() {
            scale
        } else {
            0.0
        }
    }
}

impl Heuristic for EuclideanHeuristic<'_> {
    fn estimate(&self, v: usize) -> f64 {
        self.scale * euclid(self.positions[v], self.goal)
    }
}

fn euclid(a: [f32; 2], b: [f32; 2]) -> f64 {
    let dx = a[0] as f64 - b[0] as f64;
    let dy = a[1] as f64 - b[1] as f64;
    (dx * dx + dy * dy).sqrt()
}

pub fn dijkstra(g: &TransitionGraph, s: usize, t: Target) -> (Option<Plan>, SearchStats) {
    best_first(g, s, t, &ZeroHeuristic)
}

/// A* without re-opening settled vertices. With a consistent heuristic the
/// returned cost is optimal; otherwise the plan is valid but may be longer.
pub fn astar(g: &TransitionGraph, s: usize, t: usize, h: &dyn Heuristic) -> (Option<Plan>, SearchStats) {
    best_first(g, s, Target::Vertex(t), h)
}

/// Shortest-path tree from `s`: per vertex, `(cost, hops)` along the
/// tie-broken shortest path, or `None` when unreachable.
pub fn shortest_path_tree(g: &TransitionGraph, s: usize) -> Vec<Option<(f64, usize)>> {
    let (_, stats, parent) = best_first_with_parents(g, s, Target::All, &ZeroHeuristic);
    let mut out = vec![None; g.n_vertices()];
    // settle order guarantees parents come first
    for &(v, c) in &stats.settled {
        let hops = if v == s { 0 } else { out[parent[v]].map(|(_, h): (f64, usize)| h + 1).expect("parent settled") };
        out[v] = Some((c, hops));
    }
    out
}

fn best_first(g: &TransitionGraph, s: usize, t: Target, h: &dyn Heuristic) -> (Option<Plan>, SearchStats) {
    let (plan, stats, _) = best_first_with_parents(g, s, t, h);
    (plan, stats)
}

fn best_first_with_parents(
    g: &TransitionGraph,
    s: usize,
    t: Target,
    h: &dyn Heuristic,
) -> (Option<Plan>, SearchStats, Vec<usize>) {
    let n = g.n_vertices();
    let mut cost = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut stats = SearchStats::default();
    cost[s] = 0.0;
    heap.push(Entry {
        priority: h.estimate(s),
        cost: 0.0,
        vertex: s,
    });
    stats.peak_frontier = 1;
    while let Some(Entry { cost: c, vertex: u, .. }) = heap.pop() {
        if closed[u] || c > cost[u] {
            continue;
        }
        closed[u] = true;
        stats.expansions += 1;
        stats.settled.push((u, c));
        if t == Target::Vertex(u) {
            let plan = trace(&parent, s, u, c);
            return (Some(plan), stats, parent);
        }
        for e in g.edges(u) {
            let v = e.target as usize;
            if closed[v] {
                continue;
            }
            let nc = c + e.weight as f64;
            if nc < cost[v] || (nc == cost[v] && u < parent[v]) {
                cost[v] = nc;
                parent[v] = u;
                heap.push(Entry {
                    priority: nc + h.estimate(v),
                    cost: nc,
                    vertex: v,
                });
            }
        }
        stats.peak_frontier = stats.peak_frontier.max(heap.len());
    }
    (None, stats, parent)
}

fn trace(parent: &[usize], s: usize, t: usize, cost: f64) -> Plan {
    let mut vertices = vec![t];
    let mut v = t;
    while v != s {
        v = parent[v];
        vertices.push(v);
    }
    vertices.reverse();
    Plan { vertices, cost }
}

/// Breadth-first ball around `v`: vertices in BFS order with hop parents.
struct Ball {
    order: Vec<usize>,
    parent: HashMap<usize, usize>,
    expansions: usize,
}

impl Ball {
    fn path_to(&self, root: usize, target: usize) -> Vec<usize> {
        let mut path = vec![target];
        let mut v = target;
        while v != root {
            v = self.parent[&v];
            path.push(v);
        }
        path.reverse();
        path
    }
}

fn bfs_ball(g: &TransitionGraph, v: usize, k: usize) -> Ball {
    let mut parent = HashMap::new();
    parent.insert(v, v);
    let mut order = Vec::new();
    let mut queue = VecDeque::from([(v, 0usize)]);
    let mut expansions = 0;
    while let Some((u, depth)) = queue.pop_front() {
        if depth == k {
            continue;
        }
        expansions += 1;
        for e in g.edges(u) {
            let w = e.target as usize;
            if let std::collections::hash_map::Entry::Vacant(slot) = parent.entry(w) {
                slot.insert(u);
                order.push(w);
                queue.push_back((w, depth + 1));
            }
        }
    }
    Ball {
        order,
        parent,
        expansions,
    }
}

/// Vertices within `k` unweighted hops of `v`, excluding `v`, sorted by id.
pub fn bfs_neighborhood(g: &TransitionGraph, v: usize, k: usize) -> Vec<usize> {
    assert!(k >= 1, "lookahead k must be >= 1");
    let mut out = bfs_ball(g, v, k).order;
    out.sort_unstable();
    out
}

/// Fewest-hop path from `s` to `t` with the number of BFS expansions used.
pub fn bfs_path(g: &TransitionGraph, s: usize, t: usize) -> (Option<Vec<usize>>, usize) {
    if s == t {
        return (Some(vec![s]), 0);
    }
    let mut parent = HashMap::from([(s, s)]);
    let mut queue = VecDeque::from([s]);
    let mut expansions = 0;
    while let Some(u) = queue.pop_front() {
        expansions += 1;
        for e in g.edges(u) {
            let w = e.target as usize;
            if parent.contains_key(&w) {
                continue;
            }
            parent.insert(w, u);
            if w == t {
                let mut path = vec![t];
                let mut v = t;
                while v != s {
                    v = parent[&v];
                    path.push(v);
                }
                path.reverse();
                return (Some(path), expansions);
            }
            queue.push_back(w);
        }
    }
    (None, expansions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    /// Lookahead depth `k`.
    pub lookahead: usize,
    /// Frontier capacity `|ℋ|`.
    pub frontier_cap: usize,
    /// Maximum number of edges traversed.
    pub step_limit: usize,
}

impl Budget {
    pub fn reactive(step_limit: usize) -> Self {
        Budget {
            lookahead: 1,
            frontier_cap: 1,
            step_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetOutcome {
    pub success: bool,
    /// Walk actually taken, including the final vertex on failure.
    pub walk: Plan,
    pub stats: SearchStats,
    /// Picks made (moves of up to `k` hops).
    pub moves: usize,
}

/// Greedy best-first search under a lookahead and memory budget.
///
/// Each move enumerates `N(current, k)`, scores the unvisited members by
/// `value` (higher is better) and merges them into a frontier that keeps the
/// `frontier_cap` best; the best frontier entry becomes the next vertex,
/// reached via a fewest-hop subplan. The goal is never special-cased: the
/// value function has to rank it first. Succeeds as soon as any traversed
/// vertex satisfies `is_goal`; fails when the frontier runs dry or the walk
/// reaches `step_limit` edges.
pub fn budget_limited_search(
    g: &TransitionGraph,
    s: usize,
    is_goal: &dyn Fn(usize) -> bool,
    value: &dyn Fn(usize) -> f64,
    budget: Budget,
) -> BudgetOutcome {
    assert!(budget.lookahead >= 1 && budget.frontier_cap >= 1, "k and frontier_cap must be >= 1");
    let mut stats = SearchStats::default();
    let mut walk = vec![s];
    let mut cost = 0.0f64;
    let mut visited = HashSet::from([s]);
    let mut frontier: Vec<(f64, usize)> = Vec::new();
    let mut current = s;
    let mut moves = 0;

    let finish = |walk: Vec<usize>, cost, stats, success, moves| BudgetOutcome {
        success,
        walk: Plan { vertices: walk, cost },
        stats,
        moves,
    };

    loop {
        if is_goal(current) {
            return finish(walk, cost, stats, true, moves);
        }
        if walk.len() > budget.step_limit {
            return finish(walk, cost, stats, false, moves);
        }
        let ball = bfs_ball(g, current, budget.lookahead);
        stats.expansions += ball.expansions;

        let queued: HashSet<usize> = frontier.iter().map(|&(_, f)| f).collect();
        for &v in &ball.order {
            if !visited.contains(&v) && !queued.contains(&v) {
                frontier.push((value(v), v));
            }
        }
        frontier.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        frontier.truncate(budget.frontier_cap);
        stats.peak_frontier = stats.peak_frontier.max(frontier.len());
        if frontier.is_empty() {
            return finish(walk, cost, stats, false, moves);
        }
        let (_, next) = frontier.remove(0);
        let path = if ball.parent.contains_key(&next) {
            ball.path_to(current, next)
        } else {
            let (sub, exp) = bfs_path(g, current, next);
            stats.expansions += exp;
            match sub {
                Some(p) => p,
                None => return finish(walk, cost, stats, false, moves),
            }
        };

        moves += 1;
        for w in path.windows(2) {
            if walk.len() > budget.step_limit {
                return finish(walk, cost, stats, false, moves);
            }
            let e = g.edge(w[0], w[1]).expect("subplan follows graph edges");
            cost += e.weight as f64;
            walk.push(w[1]);
            visited.insert(w[1]);
            frontier.retain(|&(_, f)| f != w[1]);
            if is_goal(w[1]) {
                return finish(walk, cost, stats, true, moves);
            }
        }
        current = *path.last().expect("nonempty path");
    }
}
