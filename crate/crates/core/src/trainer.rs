//! Distills graph shortest-path distances into a global embedding metric.
//!
//! Two regimes: amortized search, where exact Dijkstra distances are the
//! regression targets, and fitted value iteration, which bootstraps from a
//! target network along greedy lookahead rollouts.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::graph::TransitionGraph;
use crate::io::ArtifactMeta;
use crate::maze::TrajectoryDataset;
use crate::planner::{self, Target};
use crate::seed::{self, stream};
use crate::stats;
use crate::tensor::{self, lp_norm, Activation, Adam, AdamConfig, Checkpoint, Mlp, MlpSpec, Tape, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_KIND: &str = "global_metric";
const EMBED_CHUNK: usize = 512;
/// Goals searched exhaustively for the connectivity check and probe.
const DIAGNOSTIC_GOALS: usize = 20;
const DIAGNOSTIC_SOURCES: usize = 50;
/// Start draws per wanted sample before a goal gives up on unreachable starts.
const GUIDED_ATTEMPTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Amortized,
    FittedVi,
}

/// How amortized training finds the plan behind each target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetSearch {
    /// Exact distances from a reverse shortest-path tree per goal.
    #[default]
    Dijkstra,
    /// A* from each sampled start, guided by the current `D`; cheaper on
    /// large graphs but targets are only as good as the heuristic allows.
    AstarGuided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Amortized mode only.
    pub target_search: TargetSearch,
    pub iterations: usize,
    /// Goals (amortized) or rollouts (fitted VI) per iteration.
    pub batch_rollouts: usize,
    /// Samples per goal (amortized) or rollout length cap (fitted VI).
    pub steps_per_rollout: usize,
    pub opt_epochs: usize,
    pub minibatch: usize,
    pub lr: f32,
    /// Divides graph distances before regression; `None` uses the median
    /// goal distance measured on the graph.
    pub target_scale: Option<f32>,
    pub lookahead: usize,
    /// Plan length limit `h` in vertices.
    pub step_limit: usize,
    /// Optimizer updates between target-network syncs.
    pub target_sync_interval: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub p: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Amortized,
            target_search: TargetSearch::Dijkstra,
            iterations: 100,
            batch_rollouts: 20,
            steps_per_rollout: 20,
            opt_epochs: 6,
            minibatch: 32,
            lr: 1e-4,
            target_scale: None,
            lookahead: 1,
            step_limit: 20,
            target_sync_interval: 50,
            latent_dim: 2,
            hidden: vec![256, 128],
            p: 2.0,
            seed: 0,
        }
    }
}

/// Embedding network `φ` with distance `D(a, b) = ‖φ(a) − φ(b)‖_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMetric {
    net: Mlp,
    p: f32,
    target_scale: f32,
    resolution: usize,
}

/// Cached embeddings for every dataset observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub dim: usize,
    pub p: f32,
    pub data: Vec<f32>,
}

impl Embeddings {
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn distance(&self, a: usize, b: usize) -> f32 {
        latent_distance(self.row(a), self.row(b), self.p)
    }
}

pub fn latent_distance(a: &[f32], b: &[f32], p: f32) -> f32 {
    let diff: Vec<f32> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    lp_norm(&diff, p)
}

impl GlobalMetric {
    pub fn new(cfg: &TrainConfig, resolution: usize) -> Result<Self> {
        if !(cfg.p >= 1.0) {
            return Err(Error::invalid(format!("p must be >= 1, got {}", cfg.p)));
        }
        if cfg.latent_dim == 0 || cfg.hidden.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let spec = MlpSpec {
            input: resolution * resolution,
            hidden: cfg.hidden.clone(),
            output: cfg.latent_dim,
            output_activation: Activation::Identity,
        };
        let mut rng = seed::rng(cfg.seed, stream::INIT, 1);
        Ok(GlobalMetric {
            net: Mlp::new(spec, &mut rng),
            p: cfg.p,
            target_scale: cfg.target_scale.unwrap_or(1.0),
            resolution,
        })
    }

    pub fn p(&self) -> f32 {
        self.p
    }

    pub fn latent_dim(&self) -> usize {
        self.net.spec().output
    }

    /// Graph-distance units per latent unit.
    pub fn target_scale(&self) -> f32 {
        self.target_scale
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn embed_pixels(&self, pixels: &[f32]) -> Result<Vec<f32>> {
        let f = self.resolution * self.resolution;
        if !pixels.len().is_multiple_of(f) {
            return Err(Error::invalid(format!(
                "pixel buffer of {} values is not a whole number of {0}x{0} frames",
                self.resolution
            )));
        }
        let x = Tensor::matrix(pixels.len() / f, f, pixels.to_vec())?;
        Ok(self.net.infer(&x)?.into_data())
    }

    pub fn embed_all(&self, dataset: &TrajectoryDataset, exec: Execution) -> Result<Embeddings> {
        if dataset.resolution != self.resolution {
            return Err(Error::invalid(format!(
                "metric expects {0}x{0} observations, dataset is {1}x{1}",
                self.resolution, dataset.resolution
            )));
        }
        let f = dataset.frame_len();
        let chunks = dataset.len().div_ceil(EMBED_CHUNK);
        let parts = exec.map(chunks, |c| {
            let lo = c * EMBED_CHUNK;
            let hi = (lo + EMBED_CHUNK).min(dataset.len());
            self.embed_pixels(&dataset.pixels()[lo * f..hi * f])
        });
        let data = parts.into_iter().collect::<Result<Vec<_>>>()?.concat();
        Ok(Embeddings {
            dim: self.latent_dim(),
            p: self.p,
            data,
        })
    }

    pub fn checkpoint(&self, meta: ArtifactMeta) -> Checkpoint {
        let mut extra = std::collections::BTreeMap::new();
        extra.insert("target_scale".into(), self.target_scale.into());
        extra.insert("resolution".into(), self.resolution.into());
        Checkpoint {
            meta,
            kind: CHECKPOINT_KIND.into(),
            architecture: self.net.spec().clone(),
            p: self.p,
            latent_dim: self.latent_dim(),
            parameter_count: self.net.parameter_count(),
            extra,
        }
    }

    pub fn save(&self, dir: &Path, meta: ArtifactMeta) -> Result<()> {
        tensor::save_checkpoint(dir, &self.checkpoint(meta), &self.net)
    }

    pub fn load(dir: &Path) -> Result<(Self, ArtifactMeta)> {
        let (ck, net) = tensor::load_checkpoint(dir)?;
        let path = dir.join(tensor::checkpoint::MODEL_FILE);
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::artifact(&path, format!("expected a {CHECKPOINT_KIND} checkpoint, found {}", ck.kind)));
        }
        let num = |k: &str| {
            ck.extra
                .get(k)
                .and_then(|v| v.as_f64())
                .ok_or_else(|| Error::artifact(&path, format!("missing field {k}")))
        };
        let metric = GlobalMetric {
            net,
            p: ck.p,
            target_scale: num("target_scale")? as f32,
            resolution: num("resolution")? as usize,
        };
        Ok((metric, ck.meta))
    }
}

/// Every vertex that can reach `goal`, with its exact distance, sorted by vertex id.
pub fn make_value_targets_amortized(reversed: &TransitionGraph, goal: usize) -> Vec<(usize, f64)> {
    let (_, stats) = planner::dijkstra(reversed, goal, Target::All);
    let mut settled = stats.settled;
    settled.sort_unstable_by_key(|&(v, _)| v);
    settled
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch: usize,
    pub loss: f32,
    pub spearman_probe: f64,
    pub reachable_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub target_scale: f32,
    pub reachable_fraction: f64,
    pub log: Vec<TrainLog>,
    pub final_spearman: f64,
}

/// Fixed `(source, goal, distance)` pairs with graph-truth distances.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub pairs: Vec<(usize, usize, f64)>,
}

impl Probe {
    /// Spearman correlation between latent and graph distances.
    pub fn spearman(&self, emb: &Embeddings) -> f64 {
        let latent: Vec<f64> = self.pairs.iter().map(|&(s, g, _)| emb.distance(s, g) as f64).collect();
        let truth: Vec<f64> = self.pairs.iter().map(|p| p.2).collect();
        stats::spearman(&latent, &truth)
    }
}

struct Diagnostics {
    reachable_fraction: f64,
    median_distance: f64,
    probe: Probe,
}

/// Searches from random goals to measure connectivity, the median goal
/// distance, and a set of probe pairs.
fn diagnose(reversed: &TransitionGraph, seed_base: u64, exec: Execution) -> Diagnostics {
    let n = reversed.n_vertices();
    let per_goal = exec.map(DIAGNOSTIC_GOALS, |i| {
        let mut rng = seed::rng(seed_base, stream::DIAGNOSTICS, i as u64);
        let goal = rng.random_range(0..n);
        let (_, st) = planner::dijkstra(reversed, goal, Target::All);
        let mut dist = std::collections::HashMap::with_capacity(st.settled.len());
        dist.extend(st.settled.iter().copied());
        let mut reached = 0;
        let mut pairs = Vec::new();
        for _ in 0..DIAGNOSTIC_SOURCES {
            let s = rng.random_range(0..n);
            if let Some(&d) = dist.get(&s) {
                reached += 1;
                if s != goal {
                    pairs.push((s, goal, d));
                }
            }
        }
        let distances: Vec<f64> = st.settled.iter().map(|p| p.1).filter(|&d| d > 0.0).collect();
        (reached, pairs, distances)
    });
    let reached: usize = per_goal.iter().map(|p| p.0).sum();
    let all_d: Vec<f64> = per_goal.iter().flat_map(|p| p.2.iter().copied()).collect();
    Diagnostics {
        reachable_fraction: reached as f64 / (DIAGNOSTIC_GOALS * DIAGNOSTIC_SOURCES) as f64,
        median_distance: stats::median(&all_d),
        probe: Probe {
            pairs: per_goal.into_iter().flat_map(|p| p.1).collect(),
        },
    }
}

/// One regression sample: `D(x_v, x_g)` should approach `target` (scaled units).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Sample {
    v: usize,
    goal: usize,
    target: f32,
}

/// Runs `opt_epochs` passes of shuffled minibatches and returns the mean loss.
/// `after_update` is called after every optimizer step.
fn fit(
    metric: &mut GlobalMetric,
    adam: &mut Adam,
    dataset: &TrajectoryDataset,
    samples: &[Sample],
    cfg: &TrainConfig,
    iteration: usize,
    mut after_update: impl FnMut(&GlobalMetric),
) -> Result<f32> {
    let f = dataset.frame_len();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut total = 0.0f64;
    let mut steps = 0usize;
    for epoch in 0..cfg.opt_epochs {
        let mut rng = seed::rng(cfg.seed, stream::MINIBATCH, ((iteration as u64) << 16) | epoch as u64);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for chunk in order.chunks(cfg.minibatch) {
            let vs: Vec<usize> = chunk.iter().map(|&i| samples[i].v).collect();
            let gs: Vec<usize> = chunk.iter().map(|&i| samples[i].goal).collect();
            let target: Vec<f32> = chunk.iter().map(|&i| samples[i].target).collect();
            let mut tape = Tape::new();
            let vars = metric.net.register(&mut tape);
            let xv = tape.constant(Tensor::matrix(vs.len(), f, dataset.gather(&vs))?);
            let xg = tape.constant(Tensor::matrix(gs.len(), f, dataset.gather(&gs))?);
            let zv = metric.net.forward(&mut tape, &vars, xv)?;
            let zg = metric.net.forward(&mut tape, &vars, xg)?;
            let diff = tape.sub(zv, zg)?;
            let d = tape.lp_norm_rows(diff, metric.p)?;
            let loss = tape.smooth_l1(d, &target, 1.0)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch: iteration,
                    loss: value,
                    context: format!("global metric, lr {}", cfg.lr),
                });
            }
            let mut grads = tape.backward(loss)?;
            let g = metric.net.gradients(&vars, &mut grads);
            adam.step(&mut metric.net.parameters_mut(), &g)?;
            after_update(metric);
            total += value as f64;
            steps += 1;
        }
    }
    Ok((total / steps.max(1) as f64) as f32)
}

fn check_config(cfg: &TrainConfig) -> Result<()> {
    if cfg.iterations == 0 || cfg.batch_rollouts == 0 || cfg.steps_per_rollout == 0 {
        return Err(Error::invalid("iterations, batch_rollouts and steps_per_rollout must be >= 1"));
    }
    if cfg.opt_epochs == 0 || cfg.minibatch == 0 {
        return Err(Error::invalid("opt_epochs and minibatch must be >= 1"));
    }
    if !(cfg.lr > 0.0) {
        return Err(Error::invalid("learning rate must be > 0"));
    }
    if let Some(s) = cfg.target_scale {
        if !(s > 0.0) {
            return Err(Error::invalid("target_scale must be > 0"));
        }
    }
    if cfg.mode == TrainMode::FittedVi
        && (cfg.lookahead == 0 || cfg.step_limit == 0 || cfg.target_sync_interval == 0) {
            return Err(Error::invalid("lookahead, step_limit and target_sync_interval must be >= 1"));
        }
    Ok(())
}

/// Trains a global metric on `g` in the configured mode.
///
/// Aborts with [`Error::Disconnected`] when fewer than half of the sampled
/// diagnostic pairs are connected.
pub fn train_plan2vec(
    g: &TransitionGraph,
    dataset: &TrajectoryDataset,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<(GlobalMetric, TrainReport)> {
    check_config(cfg)?;
    if g.n_vertices() != dataset.len() {
        return Err(Error::invalid(format!(
            "graph has {} vertices, dataset has {} observations",
            g.n_vertices(),
            dataset.len()
        )));
    }
    let reversed = g.reversed();
    let diag = diagnose(&reversed, cfg.seed, exec);
    if diag.reachable_fraction < 0.5 {
        let sampled = DIAGNOSTIC_GOALS * DIAGNOSTIC_SOURCES;
        return Err(Error::Disconnected {
            reachable: (diag.reachable_fraction * sampled as f64).round() as usize,
            sampled,
        });
    }
    let scale = cfg.target_scale.unwrap_or(diag.median_distance.max(1.0) as f32);
    let mut metric = GlobalMetric::new(cfg, dataset.resolution)?;
    metric.target_scale = scale;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), metric.net.parameters());
    let mut log = Vec::with_capacity(cfg.iterations);
    let n = g.n_vertices();

    let mut target_net = metric.clone();
    let mut updates = 0usize;

    for it in 0..cfg.iterations {
        let (loss, cycle_rate) = match cfg.mode {
            TrainMode::Amortized if cfg.target_search == TargetSearch::AstarGuided => {
                let live = metric.embed_all(dataset, exec)?;
                let per_goal = exec.map(cfg.batch_rollouts, |j| {
                    let mut rng = seed::rng(cfg.seed, stream::GOALS, ((it as u64) << 16) | j as u64);
                    let goal = rng.random_range(0..n);
                    let h = |v: usize| live.distance(v, goal) as f64 * scale as f64;
                    let mut picked = Vec::with_capacity(cfg.steps_per_rollout);
                    for _ in 0..cfg.steps_per_rollout * GUIDED_ATTEMPTS {
                        if picked.len() == cfg.steps_per_rollout {
                            break;
                        }
                        let v = rng.random_range(0..n);
                        if let (Some(plan), _) = planner::astar(g, v, goal, &h) {
                            picked.push(Sample {
                                v,
                                goal,
                                target: (plan.cost / scale as f64) as f32,
                            });
                        }
                    }
                    picked.sort_by_key(|s| s.v);
                    (goal, picked)
                });
                let mut per_goal = per_goal;
                per_goal.sort_by_key(|p| p.0);
                let samples: Vec<Sample> = per_goal.into_iter().flat_map(|p| p.1).collect();
                (fit(&mut metric, &mut adam, dataset, &samples, cfg, it, |_| {})?, None)
            }
            TrainMode::Amortized => {
                let per_goal = exec.map(cfg.batch_rollouts, |j| {
                    let mut rng = seed::rng(cfg.seed, stream::GOALS, ((it as u64) << 16) | j as u64);
                    let goal = rng.random_range(0..n);
                    let settled = make_value_targets_amortized(&reversed, goal);
                    let mut picked: Vec<Sample> = (0..cfg.steps_per_rollout)
                        .map(|_| {
                            let (v, d) = settled[rng.random_range(0..settled.len())];
                            Sample {
                                v,
                                goal,
                                target: (d / scale as f64) as f32,
                            }
                        })
                        .collect();
                    picked.sort_by_key(|s| s.v);
                    (goal, picked)
                });
                let mut per_goal = per_goal;
                per_goal.sort_by_key(|p| p.0);
                let samples: Vec<Sample> = per_goal.into_iter().flat_map(|p| p.1).collect();
                (fit(&mut metric, &mut adam, dataset, &samples, cfg, it, |_| {})?, None)
            }
            TrainMode::FittedVi => {
                let live = metric.embed_all(dataset, exec)?;
                let frozen = target_net.embed_all(dataset, exec)?;
                let rollouts = exec.map(cfg.batch_rollouts, |j| {
                    let mut rng = seed::rng(cfg.seed, stream::GOALS, ((it as u64) << 16) | j as u64);
                    let start = rng.random_range(0..n);
                    let goal = rng.random_range(0..n);
                    fvi_rollout(g, &live, &frozen, start, goal, cfg.lookahead, cfg.step_limit, scale)
                });
                let cycles = rollouts.iter().filter(|r| r.cycled).count();
                let samples: Vec<Sample> = rollouts.into_iter().flat_map(|r| r.samples).collect();
                let interval = cfg.target_sync_interval;
                let mut synced: Option<GlobalMetric> = None;
                let loss = fit(&mut metric, &mut adam, dataset, &samples, cfg, it, |m| {
                    updates += 1;
                    if updates.is_multiple_of(interval) {
                        synced = Some(m.clone());
                    }
                })?;
                if let Some(m) = synced {
                    target_net = m;
                }
                (loss, Some(cycles as f64 / cfg.batch_rollouts as f64))
            }
        };
        let emb = metric.embed_all(dataset, exec)?;
        log.push(TrainLog {
            epoch: it,
            loss,
            spearman_probe: diag.probe.spearman(&emb),
            reachable_fraction: diag.reachable_fraction,
            cycle_rate,
        });
    }
    let report = TrainReport {
        mode: cfg.mode,
        target_scale: scale,
        reachable_fraction: diag.reachable_fraction,
        final_spearman: log.last().map(|l| l.spearman_probe).unwrap_or(f64::NAN),
        log,
    };
    Ok((metric, report))
}

struct FviRollout {
    samples: Vec<Sample>,
    cycled: bool,
}

/// Greedy lookahead rollout toward `goal`; every plan vertex becomes a
/// sample whose target is the remaining traversed length plus the target
/// network's estimate from the final vertex (zero if the goal was reached).
#[allow(clippy::too_many_arguments)]
fn fvi_rollout(
    g: &TransitionGraph,
    live: &Embeddings,
    frozen: &Embeddings,
    start: usize,
    goal: usize,
    k: usize,
    h: usize,
    scale: f32,
) -> FviRollout {
    let mut plan = vec![start];
    let mut lengths = vec![0.0f64];
    let mut v = start;
    while v != goal && plan.len() < h {
        let ball = planner::bfs_neighborhood(g, v, k);
        if ball.is_empty() {
            break;
        }
        let next = if ball.binary_search(&goal).is_ok() {
            goal
        } else {
            *ball
                .iter()
                .min_by(|&&a, &&b| live.distance(a, goal).total_cmp(&live.distance(b, goal)).then(a.cmp(&b)))
                .expect("nonempty ball")
        };
        let (sub, _) = planner::bfs_path(g, v, next);
        let sub = sub.expect("ball members are reachable");
        for w in sub.windows(2) {
            let e = g.edge(w[0], w[1]).expect("subplan follows edges");
            plan.push(w[1]);
            lengths.push(lengths.last().expect("nonempty") + e.weight as f64);
        }
        v = next;
    }
    let bootstrap = if v == goal { 0.0 } else { frozen.distance(v, goal) as f64 };
    let total = *lengths.last().expect("nonempty");
    let mut seen = std::collections::HashSet::new();
    let cycled = !plan.iter().all(|x| seen.insert(*x));
    let samples = plan
        .iter()
        .zip(&lengths)
        .filter(|(&u, _)| u != goal)
        .map(|(&u, &l)| Sample {
            v: u,
            goal,
            target: ((total - l) / scale as f64 + bootstrap) as f32,
        })
        .collect();
    FviRollout { samples, cycled }
}

/// `(id, latent coordinates, ground-truth position)`.
pub type EmbeddingRow = (usize, Vec<f32>, [f32; 2]);

/// One row per observation.
pub fn export_embedding(metric: &GlobalMetric, dataset: &TrajectoryDataset, exec: Execution) -> Result<Vec<EmbeddingRow>> {
    let emb = metric.embed_all(dataset, exec)?;
    Ok((0..dataset.len())
        .map(|i| (i, emb.row(i).to_vec(), dataset.position(i)))
        .collect())
}
