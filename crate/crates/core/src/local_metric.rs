//! Learned one-step reachability distance between observations.
//!
//! Training pairs come from trajectory context alone: identical frames
//! (label 0), consecutive frames (label 1), and random frames (label 2).

use std::ops::Range;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::graph::PairScorer;
use crate::io::ArtifactMeta;
use crate::maze::{Observation, RolloutSpan, TrajectoryDataset};
use crate::seed::{self, stream, Rng};
use crate::tensor::{
    self, lp_norm, Activation, Adam, AdamConfig, Checkpoint, Mlp, MlpSpec, Tape, Tensor,
};
use crate::{Error, Result};

pub const CHECKPOINT_KIND: &str = "local_metric";
pub const DEFAULT_THRESHOLD: f32 = 1.5;
const EMBED_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Shared embedding with an ℓ2 head.
    #[default]
    Siamese,
    /// Both frames concatenated into one MLP with a softplus output.
    StackedPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Objective {
    #[default]
    Regression,
    Nce { negatives: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalMetricConfig {
    pub architecture: Architecture,
    pub objective: Objective,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub epochs: usize,
    pub lr: f32,
    /// identical : neighbor : far
    pub ratio: (usize, usize, usize),
    pub batch: usize,
    /// Far pairs only penalize predictions below their label.
    pub hinge_far: bool,
    pub holdout_fraction: f64,
    pub threshold: f32,
    pub seed: u64,
}

impl Default for LocalMetricConfig {
    fn default() -> Self {
        LocalMetricConfig {
            architecture: Architecture::Siamese,
            objective: Objective::Regression,
            hidden: vec![256, 128],
            embedding_dim: 32,
            epochs: 40,
            lr: 1e-4,
            ratio: (1, 1, 2),
            batch: 32,
            hinge_far: false,
            holdout_fraction: 0.1,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
        }
    }
}

/// Pairs of dataset indices with nominal distance labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairBatch {
    pub anchor: Vec<usize>,
    pub other: Vec<usize>,
    pub label: Vec<u8>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label.is_empty()
    }

    fn push(&mut self, a: usize, b: usize, label: u8) {
        self.anchor.push(a);
        self.other.push(b);
        self.label.push(label);
    }
}

/// Per-class counts for a batch, remainder going to the last nonzero class.
fn class_counts(ratio: (usize, usize, usize), batch: usize) -> Result<[usize; 3]> {
    let r = [ratio.0, ratio.1, ratio.2];
    let total: usize = r.iter().sum();
    if total == 0 {
        return Err(Error::invalid("pair ratio must have a nonzero entry"));
    }
    if batch < total {
        return Err(Error::invalid(format!(
            "batch {batch} is smaller than the ratio sum {total}"
        )));
    }
    let mut counts = r.map(|x| batch * x / total);
    let last = (0..3).rev().find(|&i| r[i] > 0).expect("nonzero ratio");
    counts[last] += batch - counts.iter().sum::<usize>();
    Ok(counts)
}

/// Samples a labeled batch from the given rollouts.
fn sample_from(dataset: &TrajectoryDataset, spans: &[RolloutSpan], counts: [usize; 3], rng: &mut Rng) -> PairBatch {
    let total: usize = spans.iter().map(|s| s.len).sum();
    let uniform = |rng: &mut Rng| {
        let mut k = rng.random_range(0..total);
        for s in spans {
            if k < s.len {
                return s.start + k;
            }
            k -= s.len;
        }
        unreachable!("index within total")
    };
    let transitions: usize = spans.iter().map(|s| s.len - 1).sum();
    let mut batch = PairBatch::default();
    for _ in 0..counts[0] {
        let a = uniform(rng);
        batch.push(a, a, 0);
    }
    for _ in 0..counts[1] {
        let mut k = rng.random_range(0..transitions);
        let mut a = 0;
        for s in spans {
            if k < s.len - 1 {
                a = s.start + k;
                break;
            }
            k -= s.len - 1;
        }
        if rng.random::<bool>() {
            batch.push(a, a + 1, 1);
        } else {
            batch.push(a + 1, a, 1);
        }
    }
    for _ in 0..counts[2] {
        let a = uniform(rng);
        let b = uniform(rng);
        batch.push(a, b, 2);
    }
    debug_assert!(dataset.len() >= total);
    batch
}

/// Samples `batch` pairs in the identical : neighbor : far `ratio`.
/// Far pairs are uniform over the whole dataset and may collide with
/// true neighbors.
pub fn sample_pairs(
    dataset: &TrajectoryDataset,
    ratio: (usize, usize, usize),
    batch: usize,
    seed: u64,
) -> Result<PairBatch> {
    if dataset.rollouts().len() < 2 {
        return Err(Error::invalid("pair sampling needs at least 2 rollouts"));
    }
    let counts = class_counts(ratio, batch)?;
    let mut rng = seed::rng(seed, stream::PAIRS, 0);
    Ok(sample_from(dataset, dataset.rollouts(), counts, &mut rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalMetric {
    architecture: Architecture,
    net: Mlp,
    threshold: f32,
    resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f32,
    pub heldout_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMetricReport {
    pub epochs: Vec<EpochLog>,
    pub heldout_accuracy: f64,
    /// Mean score over held-out identical, neighbor, and far pairs.
    pub class_means: [f64; 3],
    pub heldout_rollouts: Vec<usize>,
}

/// Held-out evaluation pairs: every consecutive pair in the held-out
/// rollouts plus an equal number of random far pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeldOut {
    pub rollouts: Vec<usize>,
    pub neighbors: Vec<(usize, usize)>,
    pub far: Vec<(usize, usize)>,
    pub identical: Vec<usize>,
}

/// Splits rollouts into training and held-out sets.
pub fn split_rollouts(dataset: &TrajectoryDataset, fraction: f64, seed: u64) -> Result<(Vec<RolloutSpan>, HeldOut)> {
    let n = dataset.rollouts().len();
    if n < 2 {
        return Err(Error::invalid("training needs at least 2 rollouts"));
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("holdout fraction must be in [0, 1), got {fraction}")));
    }
    let n_hold = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(seed, stream::SPLIT, 0);
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut held: Vec<usize> = order[..n_hold].to_vec();
    held.sort_unstable();
    let train: Vec<RolloutSpan> = (0..n)
        .filter(|r| held.binary_search(r).is_err())
        .map(|r| dataset.rollouts()[r])
        .collect();
    let spans: Vec<RolloutSpan> = held.iter().map(|&r| dataset.rollouts()[r]).collect();
    let neighbors: Vec<(usize, usize)> = spans
        .iter()
        .flat_map(|s| (s.start..s.end() - 1).map(|i| (i, i + 1)))
        .collect();
    let identical: Vec<usize> = spans.iter().flat_map(|s| s.start..s.end()).collect();
    let far_batch = sample_from(dataset, &spans, [0, 0, neighbors.len()], &mut rng);
    let far = far_batch.anchor.into_iter().zip(far_batch.other).collect();
    Ok((
        train,
        HeldOut {
            rollouts: held,
            neighbors,
            far,
            identical,
        },
    ))
}

impl LocalMetric {
    pub fn new(cfg: &LocalMetricConfig, resolution: usize) -> Result<Self> {
        let frame = resolution * resolution;
        let spec = match cfg.architecture {
            Architecture::Siamese => MlpSpec {
                input: frame,
                hidden: cfg.hidden.clone(),
                output: cfg.embedding_dim,
                output_activation: Activation::Identity,
            },
            Architecture::StackedPair => MlpSpec {
                input: 2 * frame,
                hidden: cfg.hidden.clone(),
                output: 1,
                output_activation: Activation::Softplus,
            },
        };
        if spec.output == 0 || spec.hidden.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut rng = seed::rng(cfg.seed, stream::INIT, 0);
        Ok(LocalMetric {
            architecture: cfg.architecture,
            net: Mlp::new(spec, &mut rng),
            threshold: cfg.threshold,
            resolution,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn threshold(&self) -> f32 {
        self.threshold
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    fn frame_len(&self) -> usize {
        self.resolution * self.resolution
    }

    /// Siamese embeddings for `rows` frames stacked in `pixels`.
    fn embed_rows(&self, pixels: &[f32]) -> Vec<f32> {
        let rows = pixels.len() / self.frame_len();
        let x = Tensor::matrix(rows, self.frame_len(), pixels.to_vec()).expect("sized");
        self.net.infer(&x).expect("input width checked").into_data()
    }

    /// Scores for index pairs of a dataset.
    pub fn score_pairs(&self, dataset: &TrajectoryDataset, pairs: &[(usize, usize)]) -> Vec<f32> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(EMBED_CHUNK) {
            let a: Vec<usize> = chunk.iter().map(|p| p.0).collect();
            let b: Vec<usize> = chunk.iter().map(|p| p.1).collect();
            out.extend(self.score_gathered(&dataset.gather(&a), &dataset.gather(&b)));
        }
        out
    }

    fn score_gathered(&self, a: &[f32], b: &[f32]) -> Vec<f32> {
        match self.architecture {
            Architecture::Siamese => {
                let z = self.net.spec().output;
                let (ea, eb) = (self.embed_rows(a), self.embed_rows(b));
                ea.chunks_exact(z).zip(eb.chunks_exact(z)).map(|(x, y)| embed_distance(x, y)).collect()
            }
            Architecture::StackedPair => {
                let f = self.frame_len();
                let rows = a.len() / f;
                let mut x = Vec::with_capacity(2 * a.len());
                for r in 0..rows {
                    x.extend_from_slice(&a[r * f..(r + 1) * f]);
                    x.extend_from_slice(&b[r * f..(r + 1) * f]);
                }
                let x = Tensor::matrix(rows, 2 * f, x).expect("sized");
                self.net.infer(&x).expect("input width checked").into_data()
            }
        }
    }

    /// Precomputes whatever can be cached for all-pairs scoring.
    pub fn scorer<'a>(&'a self, dataset: &'a TrajectoryDataset, exec: Execution) -> Result<MetricScorer<'a>> {
        if dataset.resolution != self.resolution {
            return Err(Error::invalid(format!(
                "metric expects {0}x{0} observations, dataset is {1}x{1}",
                self.resolution, dataset.resolution
            )));
        }
        let embeddings = match self.architecture {
            Architecture::Siamese => {
                let chunks = dataset.len().div_ceil(EMBED_CHUNK);
                let f = self.frame_len();
                let parts = exec.map(chunks, |c| {
                    let rows = c * EMBED_CHUNK..((c + 1) * EMBED_CHUNK).min(dataset.len());
                    self.embed_rows(&dataset.pixels()[rows.start * f..rows.end * f])
                });
                Some(parts.concat())
            }
            Architecture::StackedPair => None,
        };
        Ok(MetricScorer {
            metric: self,
            dataset,
            embeddings,
        })
    }

    pub fn checkpoint(&self, meta: ArtifactMeta) -> Checkpoint {
        let mut extra = std::collections::BTreeMap::new();
        extra.insert("variant".into(), serde_json::to_value(self.architecture).expect("enum"));
        extra.insert("threshold".into(), self.threshold.into());
        extra.insert("resolution".into(), self.resolution.into());
        Checkpoint {
            meta,
            kind: CHECKPOINT_KIND.into(),
            architecture: self.net.spec().clone(),
            p: 2.0,
            latent_dim: match self.architecture {
                Architecture::Siamese => self.net.spec().output,
                Architecture::StackedPair => 0,
            },
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
        let field = |k: &str| {
            ck.extra
                .get(k)
                .cloned()
                .ok_or_else(|| Error::artifact(&path, format!("missing field {k}")))
        };
        let architecture: Architecture =
            serde_json::from_value(field("variant")?).map_err(|e| Error::artifact(&path, e.to_string()))?;
        let threshold = field("threshold")?.as_f64().ok_or_else(|| Error::artifact(&path, "bad threshold"))? as f32;
        let resolution = field("resolution")?.as_u64().ok_or_else(|| Error::artifact(&path, "bad resolution"))? as usize;
        Ok((
            LocalMetric {
                architecture,
                net,
                threshold,
                resolution,
            },
            ck.meta,
        ))
    }
}

fn embed_distance(a: &[f32], b: &[f32]) -> f32 {
    let diff: Vec<f32> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    lp_norm(&diff, 2.0)
}

/// Score between two observations.
pub fn local_distance(metric: &LocalMetric, a: &Observation, b: &Observation) -> Result<f32> {
    for o in [a, b] {
        if o.resolution != metric.resolution {
            return Err(Error::invalid(format!(
                "observation {} is {2}x{2}, metric expects {1}x{1}",
                o.id, metric.resolution, o.resolution
            )));
        }
    }
    Ok(metric.score_gathered(&a.pixels, &b.pixels)[0])
}

/// All-pairs scorer over a dataset, backed by an embedding cache for the
/// Siamese variant.
pub struct MetricScorer<'a> {
    metric: &'a LocalMetric,
    dataset: &'a TrajectoryDataset,
    embeddings: Option<Vec<f32>>,
}

impl MetricScorer<'_> {
    pub fn embedding(&self, i: usize) -> Option<&[f32]> {
        let z = self.metric.net.spec().output;
        self.embeddings.as_ref().map(|e| &e[i * z..(i + 1) * z])
    }
}

impl PairScorer for MetricScorer<'_> {
    fn len(&self) -> usize {
        self.dataset.len()
    }

    fn score_block(&self, rows: Range<usize>, cols: Range<usize>) -> Vec<f32> {
        match &self.embeddings {
            Some(_) => {
                let mut out = Vec::with_capacity(rows.len() * cols.len());
                for i in rows {
                    let a = self.embedding(i).expect("cached");
                    for j in cols.clone() {
                        out.push(embed_distance(a, self.embedding(j).expect("cached")));
                    }
                }
                out
            }
            None => {
                let pairs: Vec<(usize, usize)> =
                    rows.flat_map(|i| cols.clone().map(move |j| (i, j))).collect();
                self.metric.score_pairs(self.dataset, &pairs)
            }
        }
    }
}

/// Fraction of held-out pairs classified correctly at `threshold`:
/// neighbors must score `<= threshold`, far pairs above it.
pub fn heldout_accuracy(metric: &LocalMetric, dataset: &TrajectoryDataset, held: &HeldOut) -> f64 {
    let near = metric.score_pairs(dataset, &held.neighbors);
    let far = metric.score_pairs(dataset, &held.far);
    let t = metric.threshold;
    let correct = near.iter().filter(|&&d| d <= t).count() + far.iter().filter(|&&d| d > t).count();
    correct as f64 / (near.len() + far.len()).max(1) as f64
}

fn class_means(metric: &LocalMetric, dataset: &TrajectoryDataset, held: &HeldOut) -> [f64; 3] {
    let identical: Vec<(usize, usize)> = held.identical.iter().map(|&i| (i, i)).collect();
    let mean = |pairs: &[(usize, usize)]| {
        let s = metric.score_pairs(dataset, pairs);
        s.iter().map(|&v| v as f64).sum::<f64>() / s.len().max(1) as f64
    };
    [mean(&identical), mean(&held.neighbors), mean(&held.far)]
}

/// Trains a local metric and reports per-epoch loss and held-out accuracy.
///
/// One epoch draws as many pairs as there are training observations.
pub fn train_local_metric(dataset: &TrajectoryDataset, cfg: &LocalMetricConfig) -> Result<(LocalMetric, LocalMetricReport)> {
    if cfg.epochs == 0 {
        return Err(Error::invalid("epochs must be >= 1"));
    }
    if !(cfg.lr > 0.0) {
        return Err(Error::invalid("learning rate must be > 0"));
    }
    if let Objective::Nce { negatives } = cfg.objective {
        if negatives == 0 {
            return Err(Error::invalid("NCE needs at least one negative"));
        }
    }
    let counts = class_counts(cfg.ratio, cfg.batch)?;
    let (train, held) = split_rollouts(dataset, cfg.holdout_fraction, cfg.seed)?;
    let mut metric = LocalMetric::new(cfg, dataset.resolution)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), metric.net.parameters());
    let train_obs: usize = train.iter().map(|s| s.len).sum();
    let steps = train_obs.div_ceil(cfg.batch).max(1);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = seed::rng(cfg.seed, stream::MINIBATCH, epoch as u64);
        let mut total = 0.0f64;
        for _ in 0..steps {
            let loss = match cfg.objective {
                Objective::Regression => {
                    let batch = sample_from(dataset, &train, counts, &mut rng);
                    regression_step(&mut metric, &mut adam, dataset, &batch, cfg.hinge_far)?
                }
                Objective::Nce { negatives } => {
                    nce_step(&mut metric, &mut adam, dataset, &train, cfg.batch, negatives, &mut rng)?
                }
            };
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss,
                    context: format!("local metric, lr {}", cfg.lr),
                });
            }
            total += loss as f64;
        }
        log.push(EpochLog {
            epoch,
            loss: (total / steps as f64) as f32,
            heldout_accuracy: heldout_accuracy(&metric, dataset, &held),
        });
    }
    let report = LocalMetricReport {
        heldout_accuracy: log.last().expect("epochs >= 1").heldout_accuracy,
        class_means: class_means(&metric, dataset, &held),
        epochs: log,
        heldout_rollouts: held.rollouts,
    };
    Ok((metric, report))
}

/// NCE training with similarity `S = -d`: one neighbor positive against
/// `negatives` random frames per anchor.
pub fn train_local_metric_nce(
    dataset: &TrajectoryDataset,
    cfg: &LocalMetricConfig,
    negatives: usize,
) -> Result<(LocalMetric, LocalMetricReport)> {
    let cfg = LocalMetricConfig {
        objective: Objective::Nce { negatives },
        ..cfg.clone()
    };
    train_local_metric(dataset, &cfg)
}

/// Records scores for `pairs` of gathered rows on the tape: `[B, 1]`.
fn record_scores(metric: &LocalMetric, tape: &mut Tape, vars: &tensor::MlpVars, dataset: &TrajectoryDataset, a: &[usize], b: &[usize]) -> Result<tensor::Var> {
    let f = metric.frame_len();
    match metric.architecture {
        Architecture::Siamese => {
            let xa = tape.constant(Tensor::matrix(a.len(), f, dataset.gather(a))?);
            let xb = tape.constant(Tensor::matrix(b.len(), f, dataset.gather(b))?);
            let za = metric.net.forward(tape, vars, xa)?;
            let zb = metric.net.forward(tape, vars, xb)?;
            let diff = tape.sub(za, zb)?;
            Ok(tape.lp_norm_rows(diff, 2.0)?)
        }
        Architecture::StackedPair => {
            let (pa, pb) = (dataset.gather(a), dataset.gather(b));
            let mut x = Vec::with_capacity(2 * pa.len());
            for r in 0..a.len() {
                x.extend_from_slice(&pa[r * f..(r + 1) * f]);
                x.extend_from_slice(&pb[r * f..(r + 1) * f]);
            }
            let x = tape.constant(Tensor::matrix(a.len(), 2 * f, x)?);
            Ok(metric.net.forward(tape, vars, x)?)
        }
    }
}

fn apply(metric: &mut LocalMetric, adam: &mut Adam, tape: &Tape, vars: &tensor::MlpVars, loss: tensor::Var) -> Result<f32> {
    let mut grads = tape.backward(loss)?;
    let g = metric.net.gradients(vars, &mut grads);
    adam.step(&mut metric.net.parameters_mut(), &g)?;
    Ok(tape.value(loss).item())
}

fn regression_step(metric: &mut LocalMetric, adam: &mut Adam, dataset: &TrajectoryDataset, batch: &PairBatch, hinge_far: bool) -> Result<f32> {
    let mut tape = Tape::new();
    let vars = metric.net.register(&mut tape);
    let d = record_scores(metric, &mut tape, &vars, dataset, &batch.anchor, &batch.other)?;
    let target: Vec<f32> = batch.label.iter().map(|&l| l as f32).collect();
    let hinge: Vec<bool> = batch.label.iter().map(|&l| hinge_far && l == 2).collect();
    let loss = tape.smooth_l1_masked(d, &target, 1.0, &hinge)?;
    apply(metric, adam, &tape, &vars, loss)
}

fn nce_step(
    metric: &mut LocalMetric,
    adam: &mut Adam,
    dataset: &TrajectoryDataset,
    spans: &[RolloutSpan],
    batch: usize,
    negatives: usize,
    rng: &mut Rng,
) -> Result<f32> {
    let pos = sample_from(dataset, spans, [0, batch, 0], rng);
    let mut tape = Tape::new();
    let vars = metric.net.register(&mut tape);
    let mut columns = Vec::with_capacity(1 + negatives);
    let d = record_scores(metric, &mut tape, &vars, dataset, &pos.anchor, &pos.other)?;
    columns.push(tape.neg(d));
    for _ in 0..negatives {
        let neg = sample_from(dataset, spans, [0, 0, batch], rng);
        let d = record_scores(metric, &mut tape, &vars, dataset, &pos.anchor, &neg.other)?;
        columns.push(tape.neg(d));
    }
    let logits = tape.concat_cols(&columns)?;
    let loss = tape.nce_loss(logits)?;
    apply(metric, adam, &tape, &vars, loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::{generate_rollouts, LayoutKind, MazeLayout, RolloutConfig};

    fn small(n_rollouts: usize) -> TrajectoryDataset {
        let cfg = RolloutConfig {
            n_rollouts,
            resolution: 8,
            n_policies: 2,
            seed: 5,
            ..Default::default()
        };
        generate_rollouts(&MazeLayout::new(LayoutKind::Open), &cfg, Execution::Sequential).unwrap()
    }

    #[test]
    fn ratio_counts() {
        assert_eq!(class_counts((1, 1, 2), 32).unwrap(), [8, 8, 16]);
        assert_eq!(class_counts((1, 0, 0), 5).unwrap(), [5, 0, 0]);
        assert_eq!(class_counts((1, 1, 1), 10).unwrap(), [3, 3, 4]);
        assert!(class_counts((1, 1, 2), 3).is_err());
    }

    #[test]
    fn sampled_labels_respect_rollouts() {
        let ds = small(6);
        let b = sample_pairs(&ds, (1, 1, 2), 32, 9).unwrap();
        assert_eq!(b.label.iter().filter(|&&l| l == 0).count(), 8);
        assert_eq!(b.label.iter().filter(|&&l| l == 1).count(), 8);
        for i in 0..b.len() {
            match b.label[i] {
                0 => assert_eq!(b.anchor[i], b.other[i]),
                1 => {
                    assert_eq!(b.anchor[i].abs_diff(b.other[i]), 1);
                    assert_eq!(ds.rollout_of(b.anchor[i]), ds.rollout_of(b.other[i]));
                }
                _ => {}
            }
        }
        assert!(sample_pairs(&small(1), (1, 1, 2), 32, 9).is_err());
    }

    #[test]
    fn untrained_siamese_is_symmetric_with_zero_self_distance() {
        let ds = small(2);
        let m = LocalMetric::new(&LocalMetricConfig::default(), 8).unwrap();
        let (a, b) = (ds.observation(0), ds.observation(7));
        assert_eq!(local_distance(&m, &a, &a).unwrap(), 0.0);
        assert_eq!(
            local_distance(&m, &a, &b).unwrap().to_bits(),
            local_distance(&m, &b, &a).unwrap().to_bits()
        );
        let other = LocalMetric::new(&LocalMetricConfig::default(), 16).unwrap();
        assert!(local_distance(&other, &a, &b).is_err());
    }

    #[test]
    fn scorer_matches_pair_scores() {
        let ds = small(3);
        for arch in [Architecture::Siamese, Architecture::StackedPair] {
            let cfg = LocalMetricConfig {
                architecture: arch,
                hidden: vec![16],
                ..Default::default()
            };
            let m = LocalMetric::new(&cfg, 8).unwrap();
            let s = m.scorer(&ds, Execution::Parallel).unwrap();
            let block = s.score_block(0..4, 2..9);
            let pairs: Vec<_> = (0..4).flat_map(|i| (2..9).map(move |j| (i, j))).collect();
            let direct = m.score_pairs(&ds, &pairs);
            for (x, y) in block.iter().zip(&direct) {
                assert!((x - y).abs() <= 1e-5 * y.abs().max(1.0));
            }
            if arch == Architecture::StackedPair {
                assert!(block.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_loss_finite() {
        let ds = small(10);
        let cfg = LocalMetricConfig {
            hidden: vec![16],
            embedding_dim: 4,
            epochs: 2,
            lr: 1e-3,
            ..Default::default()
        };
        let (m1, r1) = train_local_metric(&ds, &cfg).unwrap();
        let (m2, r2) = train_local_metric(&ds, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
        assert!(r1.epochs.iter().all(|e| e.loss.is_finite()));
        let (_, nce) = train_local_metric_nce(&ds, &cfg, 2).unwrap();
        assert!(nce.epochs.iter().all(|e| e.loss.is_finite()));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = LocalMetric::new(
            &LocalMetricConfig {
                hidden: vec![8],
                ..Default::default()
            },
            8,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path(), ArtifactMeta::new("h")).unwrap();
        let (back, meta) = LocalMetric::load(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta.config_hash, "h");
    }
}
