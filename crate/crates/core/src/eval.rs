//! Goal-reaching success, lookahead sweeps, planning cost, and embedding
//! diagnostics.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::graph::{PairScorer, TransitionGraph};
use crate::maze::TrajectoryDataset;
use crate::planner::{self, Budget, EuclideanHeuristic, Target};
use crate::seed::{self, stream};
use crate::stats;
use crate::trainer::Embeddings;
use crate::{Error, Result};

pub const DEFAULT_SUCCESS_RADIUS: f32 = 0.15;
pub const DEFAULT_STEP_BUDGET: usize = 50;
pub const DEFAULT_MAX_GOAL_HOPS: usize = 50;
/// Normal quantile for 95% intervals.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Plan2vecValue,
    LocalMetricGreedy,
    GraphTruthOracle,
    Random,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Plan2vecValue,
        Method::LocalMetricGreedy,
        Method::GraphTruthOracle,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Plan2vecValue => "plan2vec-value",
            Method::LocalMetricGreedy => "local-metric-greedy",
            Method::GraphTruthOracle => "graph-truth-oracle",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::invalid(format!("unknown method {s:?}; expected one of {}", known.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalTask {
    pub start: usize,
    pub goal: usize,
    pub success_radius: f32,
    pub step_budget: usize,
    pub connected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub n_tasks: usize,
    pub success_radius: f32,
    pub step_budget: usize,
    /// Goals are drawn within this many unweighted hops of the start.
    pub max_goal_hops: usize,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            n_tasks: 200,
            success_radius: DEFAULT_SUCCESS_RADIUS,
            step_budget: DEFAULT_STEP_BUDGET,
            max_goal_hops: DEFAULT_MAX_GOAL_HOPS,
            seed: 0,
        }
    }
}

fn hop_ball(g: &TransitionGraph, s: usize, max_hops: usize) -> Vec<usize> {
    let mut seen = HashSet::from([s]);
    let mut out = Vec::new();
    let mut queue = VecDeque::from([(s, 0usize)]);
    while let Some((u, d)) = queue.pop_front() {
        if d == max_hops {
            continue;
        }
        for e in g.edges(u) {
            let v = e.target as usize;
            if seen.insert(v) {
                out.push(v);
                queue.push_back((v, d + 1));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Samples tasks whose goal is reachable within `max_goal_hops` of the
/// start and lies outside the success radius. Each task has its own seed.
pub fn sample_tasks(g: &TransitionGraph, dataset: &TrajectoryDataset, cfg: &TaskConfig, exec: Execution) -> Result<Vec<EvalTask>> {
    if cfg.n_tasks == 0 || cfg.step_budget == 0 || cfg.max_goal_hops == 0 {
        return Err(Error::invalid("n_tasks, step_budget and max_goal_hops must be >= 1"));
    }
    if !(cfg.success_radius > 0.0) {
        return Err(Error::invalid("success radius must be > 0"));
    }
    let n = g.n_vertices();
    const ATTEMPTS: usize = 100;
    let tasks = exec.map(cfg.n_tasks, |i| {
        let mut rng = seed::rng(cfg.seed, stream::TASKS, i as u64);
        for _ in 0..ATTEMPTS {
            let start = rng.random_range(0..n);
            let candidates: Vec<usize> = hop_ball(g, start, cfg.max_goal_hops)
                .into_iter()
                .filter(|&v| dataset.ground_truth_distance(start, v) > cfg.success_radius)
                .collect();
            if let Some(&goal) = candidates.get(rng.random_range(0..candidates.len().max(1))) {
                return Some(EvalTask {
                    start,
                    goal,
                    success_radius: cfg.success_radius,
                    step_budget: cfg.step_budget,
                    connected: true,
                });
            }
        }
        None
    });
    tasks
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::invalid("could not sample tasks: graph has too few reachable goals"))
}

/// Frozen models and graph shared by every evaluation.
pub struct EvalContext<'a> {
    pub graph: &'a TransitionGraph,
    pub dataset: &'a TrajectoryDataset,
    pub global: Option<&'a Embeddings>,
    pub local: Option<&'a dyn PairScorer>,
    pub seed: u64,
}

impl EvalContext<'_> {
    fn check(&self, method: Method) -> Result<()> {
        match method {
            Method::Plan2vecValue if self.global.is_none() => {
                Err(Error::invalid("plan2vec-value needs a trained global metric"))
            }
            Method::LocalMetricGreedy if self.local.is_none() => {
                Err(Error::invalid("local-metric-greedy needs a trained local metric"))
            }
            _ => Ok(()),
        }
    }

    /// Value of every vertex for reaching `goal` (higher is better).
    fn values(&self, method: Method, task_index: usize, goal: usize, reversed: Option<&TransitionGraph>) -> Vec<f64> {
        let n = self.graph.n_vertices();
        match method {
            Method::Plan2vecValue => {
                let emb = self.global.expect("checked");
                (0..n).map(|v| -(emb.distance(v, goal) as f64)).collect()
            }
            Method::LocalMetricGreedy => {
                let local = self.local.expect("checked");
                let col = local.score_block(goal..goal + 1, 0..n);
                col.into_iter().map(|d| -(d as f64)).collect()
            }
            Method::GraphTruthOracle => {
                let reversed = reversed.expect("reversed graph prepared for the oracle");
                let (_, st) = planner::dijkstra(reversed, goal, Target::All);
                let mut v = vec![f64::NEG_INFINITY; n];
                for (u, d) in st.settled {
                    v[u] = -d;
                }
                v
            }
            Method::Random => {
                let base = seed::derive(self.seed, stream::RANDOM_VALUE, task_index as u64);
                (0..n).map(|v| seed::unit_hash(base, stream::RANDOM_VALUE, v as u64)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task: usize,
    pub success: bool,
    pub expansions: usize,
    pub walk_hops: usize,
}

fn run_task(ctx: &EvalContext<'_>, index: usize, task: &EvalTask, values: &[f64], budget: Budget) -> TaskOutcome {
    let value = |v: usize| values[v];
    let out = planner::budget_limited_search(ctx.graph, task.start, &|v| v == task.goal, &value, budget);
    // the walk heads for the exact goal vertex; success is judged on where it stopped
    let reached = *out.walk.vertices.last().expect("walk starts at the start vertex");
    TaskOutcome {
        task: index,
        success: task.connected && ctx.dataset.ground_truth_distance(reached, task.goal) <= task.success_radius,
        expansions: out.stats.expansions,
        walk_hops: out.walk.hops(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub tasks: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub ci95: (f64, f64),
    pub standard_error: f64,
    pub mean_expansions: f64,
    pub mean_walk_hops: f64,
}

impl MethodResult {
    fn from_outcomes(method: Method, outcomes: &[TaskOutcome]) -> Self {
        let tasks = outcomes.len();
        let successes = outcomes.iter().filter(|o| o.success).count();
        MethodResult {
            method,
            tasks,
            successes,
            success_rate: successes as f64 / tasks.max(1) as f64,
            ci95: stats::wilson_interval(successes, tasks, Z95),
            standard_error: stats::binomial_se(successes, tasks),
            mean_expansions: stats::mean(&outcomes.iter().map(|o| o.expansions as f64).collect::<Vec<_>>()),
            mean_walk_hops: stats::mean(&outcomes.iter().map(|o| o.walk_hops as f64).collect::<Vec<_>>()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_tasks: usize,
    pub disconnected_tasks: usize,
    pub lookahead: usize,
    pub frontier_cap: usize,
    pub step_budget: usize,
    pub success_radius: f32,
    pub seed: u64,
    pub methods: Vec<MethodResult>,
    /// Per-task success for each method, in the order of `methods`.
    pub per_task: Vec<Vec<bool>>,
}

impl EvalReport {
    pub fn result(&self, method: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Runs each method on the same task sample with budget `k`, `frontier_cap`.
pub fn run_success_eval(
    ctx: &EvalContext<'_>,
    methods: &[Method],
    tasks: &[EvalTask],
    k: usize,
    frontier_cap: usize,
    exec: Execution,
) -> Result<EvalReport> {
    if tasks.is_empty() {
        return Err(Error::invalid("no evaluation tasks"));
    }
    if k == 0 || frontier_cap == 0 {
        return Err(Error::invalid("k and frontier_cap must be >= 1"));
    }
    for &m in methods {
        ctx.check(m)?;
    }
    let step_budget = tasks[0].step_budget;
    let mut results = Vec::with_capacity(methods.len());
    let mut per_task = Vec::with_capacity(methods.len());
    let reversed = methods.contains(&Method::GraphTruthOracle).then(|| ctx.graph.reversed());
    for &method in methods {
        let outcomes = exec.map(tasks.len(), |i| {
            let task = &tasks[i];
            let values = ctx.values(method, i, task.goal, reversed.as_ref());
            let budget = Budget {
                lookahead: k,
                frontier_cap,
                step_limit: task.step_budget,
            };
            run_task(ctx, i, task, &values, budget)
        });
        per_task.push(outcomes.iter().map(|o| o.success).collect());
        results.push(MethodResult::from_outcomes(method, &outcomes));
    }
    Ok(EvalReport {
        n_tasks: tasks.len(),
        disconnected_tasks: tasks.iter().filter(|t| !t.connected).count(),
        lookahead: k,
        frontier_cap,
        step_budget,
        success_radius: tasks[0].success_radius,
        seed: ctx.seed,
        methods: results,
        per_task,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookaheadPoint {
    pub k: usize,
    pub successes: usize,
    pub tasks: usize,
    pub success_rate: f64,
    pub standard_error: f64,
}

/// Success rate of one method at each lookahead depth on a fixed task sample.
/// The frontier keeps `k` entries so the memory budget grows with depth.
pub fn run_lookahead_sweep(
    ctx: &EvalContext<'_>,
    method: Method,
    k_values: &[usize],
    tasks: &[EvalTask],
    exec: Execution,
) -> Result<Vec<LookaheadPoint>> {
    ctx.check(method)?;
    let reversed = (method == Method::GraphTruthOracle).then(|| ctx.graph.reversed());
    let values: Vec<Vec<f64>> = exec.map(tasks.len(), |i| ctx.values(method, i, tasks[i].goal, reversed.as_ref()));
    k_values
        .iter()
        .map(|&k| {
            if k == 0 {
                return Err(Error::invalid("lookahead k must be >= 1"));
            }
            let outcomes = exec.map(tasks.len(), |i| {
                let budget = Budget {
                    lookahead: k,
                    frontier_cap: 1,
                    step_limit: tasks[i].step_budget,
                };
                run_task(ctx, i, &tasks[i], &values[i], budget)
            });
            let successes = outcomes.iter().filter(|o| o.success).count();
            Ok(LookaheadPoint {
                k,
                successes,
                tasks: tasks.len(),
                success_rate: successes as f64 / tasks.len().max(1) as f64,
                standard_error: stats::binomial_se(successes, tasks.len()),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Planner {
    Dijkstra,
    AstarEuclidean,
    AstarLearned,
    Reactive,
}

impl Planner {
    pub const ALL: [Planner; 4] = [Planner::Dijkstra, Planner::AstarEuclidean, Planner::AstarLearned, Planner::Reactive];

    pub fn name(self) -> &'static str {
        match self {
            Planner::Dijkstra => "dijkstra",
            Planner::AstarEuclidean => "astar-euclidean",
            Planner::AstarLearned => "astar-learned",
            Planner::Reactive => "reactive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub query: usize,
    pub planner: Planner,
    /// Hops of the optimal plan.
    pub plan_length: usize,
    pub cost: f64,
    pub expansions: usize,
    pub peak_frontier: usize,
    pub suboptimality_ratio: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    pub plan_lengths: Vec<usize>,
    pub queries_per_length: usize,
    pub seed: u64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            plan_lengths: vec![2, 3, 4, 5, 6, 8, 10],
            queries_per_length: 20,
            seed: 0,
        }
    }
}

/// Samples `(start, goal, hops)` queries whose optimal plan has each of the
/// requested hop counts.
pub fn sample_cost_queries(g: &TransitionGraph, cfg: &CostConfig) -> Vec<(usize, usize, usize)> {
    let n = g.n_vertices();
    let mut rng = seed::rng(cfg.seed, stream::QUERIES, 0);
    let mut buckets: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); cfg.plan_lengths.len()];
    let max_sources = 20 * cfg.queries_per_length.max(1);
    for _ in 0..max_sources {
        if buckets.iter().all(|b| b.len() >= cfg.queries_per_length) {
            break;
        }
        let s = rng.random_range(0..n);
        let tree = planner::shortest_path_tree(g, s);
        for (bi, &len) in cfg.plan_lengths.iter().enumerate() {
            if buckets[bi].len() >= cfg.queries_per_length {
                continue;
            }
            let at: Vec<usize> = (0..n).filter(|&v| matches!(tree[v], Some((_, h)) if h == len)).collect();
            if !at.is_empty() {
                let t = at[rng.random_range(0..at.len())];
                buckets[bi].push((s, t, len));
            }
        }
    }
    buckets.into_iter().flatten().collect()
}

/// Expansion counts of every planner on the same queries.
///
/// The reactive planner is greedy descent on the learned value with
/// `k = |ℋ| = 1`, stopping when it reaches the goal vertex.
pub fn run_planning_cost(
    g: &TransitionGraph,
    dataset: &TrajectoryDataset,
    global: &Embeddings,
    target_scale: f32,
    queries: &[(usize, usize, usize)],
    step_limit: usize,
    exec: Execution,
) -> Vec<CostRow> {
    let scale = EuclideanHeuristic::consistent_scale(g, dataset.positions());
    let rows = exec.map(queries.len(), |q| {
        let (s, t, len) = queries[q];
        let (opt, dij) = planner::dijkstra(g, s, Target::Vertex(t));
        let optimal = opt.expect("queries are reachable").cost;
        let row = |planner, cost: Option<f64>, st: &planner::SearchStats, success| CostRow {
            query: q,
            planner,
            plan_length: len,
            cost: cost.unwrap_or(f64::NAN),
            expansions: st.expansions,
            peak_frontier: st.peak_frontier,
            suboptimality_ratio: cost.map(|c| if optimal > 0.0 { c / optimal } else { 1.0 }).unwrap_or(f64::NAN),
            success,
        };
        let mut out = vec![row(Planner::Dijkstra, Some(optimal), &dij, true)];
        let euclid = EuclideanHeuristic::new(dataset.positions(), t, scale);
        let (p, st) = planner::astar(g, s, t, &euclid);
        out.push(row(Planner::AstarEuclidean, p.as_ref().map(|p| p.cost), &st, p.is_some()));
        let learned = |v: usize| target_scale as f64 * global.distance(v, t) as f64;
        let (p, st) = planner::astar(g, s, t, &learned);
        out.push(row(Planner::AstarLearned, p.as_ref().map(|p| p.cost), &st, p.is_some()));
        let value = |v: usize| -(global.distance(v, t) as f64);
        let r = planner::budget_limited_search(g, s, &|v| v == t, &value, Budget::reactive(step_limit));
        let cost = r.success.then_some(r.walk.cost);
        out.push(row(Planner::Reactive, cost, &r.stats, r.success));
        out
    });
    rows.into_iter().flatten().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub planner: Planner,
    pub exponent: f64,
    pub mean_expansions_per_step: f64,
    pub queries: usize,
    pub successes: usize,
}

/// Log-log slope of mean expansions against plan length, per planner,
/// over successful queries.
pub fn summarize_cost(rows: &[CostRow]) -> Vec<CostSummary> {
    Planner::ALL
        .iter()
        .filter_map(|&p| {
            let mine: Vec<&CostRow> = rows.iter().filter(|r| r.planner == p).collect();
            if mine.is_empty() {
                return None;
            }
            let ok: Vec<&CostRow> = mine.iter().copied().filter(|r| r.success).collect();
            let mut lengths: Vec<usize> = ok.iter().map(|r| r.plan_length).collect();
            lengths.sort_unstable();
            lengths.dedup();
            let means: Vec<f64> = lengths
                .iter()
                .map(|&l| stats::mean(&ok.iter().filter(|r| r.plan_length == l).map(|r| r.expansions as f64).collect::<Vec<_>>()))
                .collect();
            let xs: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
            let per_step: Vec<f64> = ok.iter().map(|r| r.expansions as f64 / r.plan_length.max(1) as f64).collect();
            Some(CostSummary {
                planner: p,
                exponent: stats::loglog_slope(&xs, &means),
                mean_expansions_per_step: stats::mean(&per_step),
                queries: mine.len(),
                successes: ok.len(),
            })
        })
        .collect()
}

/// Graph-truth distances for random reachable `(source, goal)` pairs.
pub fn sample_reachable_pairs(g: &TransitionGraph, n_pairs: usize, seed_base: u64, exec: Execution) -> Vec<(usize, usize, f64)> {
    const PER_GOAL: usize = 20;
    let goals = n_pairs.div_ceil(PER_GOAL);
    let reversed = g.reversed();
    let n = g.n_vertices();
    let per_goal = exec.map(goals, |i| {
        let mut rng = seed::rng(seed_base, stream::PROBE, i as u64);
        let goal = rng.random_range(0..n);
        let (_, st) = planner::dijkstra(&reversed, goal, Target::All);
        let settled: Vec<(usize, f64)> = st.settled.into_iter().filter(|&(v, _)| v != goal).collect();
        if settled.is_empty() {
            return Vec::new();
        }
        (0..PER_GOAL)
            .map(|_| {
                let (s, d) = settled[rng.random_range(0..settled.len())];
                (s, goal, d)
            })
            .collect()
    });
    per_goal.into_iter().flatten().take(n_pairs).collect()
}

/// Spearman correlation of latent distances with graph-truth distances.
pub fn spearman_vs_graph(global: &Embeddings, pairs: &[(usize, usize, f64)]) -> f64 {
    let latent: Vec<f64> = pairs.iter().map(|&(s, g, _)| global.distance(s, g) as f64).collect();
    let truth: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    stats::spearman(&latent, &truth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `(i, j, ground-truth distance, local score)`.
    pub local_scatter: Vec<(usize, usize, f32, f32)>,
    pub spearman: f64,
    pub spearman_pairs: usize,
    pub local_heldout_accuracy: Option<f64>,
}

/// Local-score scatter and global-metric rank correlation.
#[allow(clippy::too_many_arguments)]
pub fn run_embedding_diagnostics(
    global: &Embeddings,
    local: &dyn PairScorer,
    dataset: &TrajectoryDataset,
    g: &TransitionGraph,
    local_heldout_accuracy: Option<f64>,
    n_pairs: usize,
    seed_base: u64,
    exec: Execution,
) -> Diagnostics {
    let n = dataset.len();
    let mut rng = seed::rng(seed_base, stream::DIAGNOSTICS, u64::MAX);
    let scatter: Vec<(usize, usize)> = (0..n_pairs)
        .map(|k| {
            let i = rng.random_range(0..n);
            // half the pairs are rollout neighbors so short range is covered
            let j = if k % 2 == 0 && i + 1 < n && dataset.rollout_of(i) == dataset.rollout_of(i + 1) {
                i + 1
            } else {
                rng.random_range(0..n)
            };
            (i, j)
        })
        .collect();
    let local_scatter = scatter
        .iter()
        .map(|&(i, j)| (i, j, dataset.ground_truth_distance(i, j), local.score_block(i..i + 1, j..j + 1)[0]))
        .collect();
    let pairs = sample_reachable_pairs(g, n_pairs, seed_base, exec);
    Diagnostics {
        local_scatter,
        spearman: spearman_vs_graph(global, &pairs),
        spearman_pairs: pairs.len(),
        local_heldout_accuracy,
    }
}
