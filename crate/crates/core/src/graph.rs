//! Weighted directed graph over dataset observations.
//!
//! Dataset transitions `t → t+1` become weight-1 edges. Pairs the local metric
//! scores at or below the threshold `d₀` become inferred edges in both
//! directions, weighted by the score. A dataset edge always wins over an
//! inferred one for the same ordered pair.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::io::{self, ArtifactMeta};
use crate::maze::TrajectoryDataset;
use crate::planner;
use crate::{Error, Result};

pub const GRAPH_FILE: &str = "graph.json";
pub const EDGES_FILE: &str = "edges.bin";
pub const DEFAULT_THRESHOLD: f32 = 1.5;
/// Rows per pairwise block.
pub const BLOCK: usize = 1024;
const EDGE_RECORD_BYTES: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeOrigin {
    Dataset = 0,
    Inferred = 1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub target: u32,
    pub weight: f32,
    pub origin: EdgeOrigin,
}

/// Scores pairs of vertices; lower means closer.
pub trait PairScorer: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major `rows.len() × cols.len()` block of distances.
    fn score_block(&self, rows: Range<usize>, cols: Range<usize>) -> Vec<f32>;
}

/// Wraps a closure `(i, j) -> distance` as a [`PairScorer`].
pub struct FnScorer<F> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(usize, usize) -> f32 + Sync> PairScorer for FnScorer<F> {
    fn len(&self) -> usize {
        self.n
    }

    fn score_block(&self, rows: Range<usize>, cols: Range<usize>) -> Vec<f32> {
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for i in rows {
            for j in cols.clone() {
                out.push((self.f)(i, j));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionGraph {
    adjacency: Vec<Vec<Edge>>,
    threshold: f32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct EdgeCounts {
    pub dataset: usize,
    pub inferred: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GraphHeader {
    #[serde(flatten)]
    meta: ArtifactMeta,
    n_vertices: usize,
    d0: f32,
    counts: EdgeCounts,
    edge_record: String,
}

/// Builds the graph from rollout transitions and thresholded pair scores.
///
/// Scores are evaluated on upper-triangle blocks of [`BLOCK`] rows, in
/// parallel over row blocks. For each unordered pair `i < j` with
/// `0 < d(i, j) <= d₀`, edges `i → j` and `j → i` are added with weight
/// `d(i, j)` unless a dataset edge already occupies that direction.
pub fn build_graph(
    dataset: &TrajectoryDataset,
    scorer: &dyn PairScorer,
    threshold: f32,
    exec: Execution,
) -> Result<TransitionGraph> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot build a graph over an empty dataset"));
    }
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!("threshold d0 must be > 0, got {threshold}")));
    }
    let n = dataset.len();
    if scorer.len() != n {
        return Err(Error::invalid(format!(
            "scorer covers {} vertices, dataset has {n}",
            scorer.len()
        )));
    }
    let mut adjacency: Vec<Vec<Edge>> = vec![Vec::new(); n];
    for span in dataset.rollouts() {
        let last = span.end().saturating_sub(1);
        for (i, out) in adjacency.iter_mut().enumerate().take(last).skip(span.start) {
            out.push(Edge {
                target: (i + 1) as u32,
                weight: 1.0,
                origin: EdgeOrigin::Dataset,
            });
        }
    }

    let n_blocks = n.div_ceil(BLOCK);
    let found: Vec<Vec<(u32, u32, f32)>> = exec.map(n_blocks, |b| {
        let rows = b * BLOCK..((b + 1) * BLOCK).min(n);
        let cols = rows.start..n;
        let scores = scorer.score_block(rows.clone(), cols.clone());
        let width = cols.len();
        let mut pairs = Vec::new();
        for (ri, i) in rows.enumerate() {
            for (ci, j) in cols.clone().enumerate() {
                if j <= i {
                    continue;
                }
                let d = scores[ri * width + ci];
                if d > 0.0 && d <= threshold {
                    pairs.push((i as u32, j as u32, d));
                }
            }
        }
        pairs
    });

    for (i, j, d) in found.into_iter().flatten() {
        for (src, dst) in [(i, j), (j, i)] {
            let list = &mut adjacency[src as usize];
            if list.iter().any(|e| e.target == dst) {
                continue;
            }
            list.push(Edge {
                target: dst,
                weight: d,
                origin: EdgeOrigin::Inferred,
            });
        }
    }
    for list in &mut adjacency {
        list.sort_by_key(|e| e.target);
    }
    Ok(TransitionGraph { adjacency, threshold })
}

impl TransitionGraph {
    /// Builds a graph from explicit edges `(source, target, weight, origin)`.
    /// Self-loops and duplicate ordered pairs are rejected.
    pub fn from_edges(n: usize, threshold: f32, edges: impl IntoIterator<Item = (usize, usize, f32, EdgeOrigin)>) -> Result<Self> {
        let mut adjacency: Vec<Vec<Edge>> = vec![Vec::new(); n];
        for (s, t, w, origin) in edges {
            if s >= n || t >= n {
                return Err(Error::invalid(format!("edge {s} -> {t} out of range for {n} vertices")));
            }
            if s == t {
                return Err(Error::invalid(format!("self-loop at {s}")));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!("edge {s} -> {t} has non-positive weight {w}")));
            }
            if adjacency[s].iter().any(|e| e.target as usize == t) {
                return Err(Error::invalid(format!("duplicate edge {s} -> {t}")));
            }
            adjacency[s].push(Edge {
                target: t as u32,
                weight: w,
                origin,
            });
        }
        for list in &mut adjacency {
            list.sort_by_key(|e| e.target);
        }
        Ok(TransitionGraph { adjacency, threshold })
    }

    pub fn n_vertices(&self) -> usize {
        self.adjacency.len()
    }

    pub fn threshold(&self) -> f32 {
        self.threshold
    }

    pub fn edges(&self, v: usize) -> &[Edge] {
        &self.adjacency[v]
    }

    pub fn edge(&self, u: usize, v: usize) -> Option<&Edge> {
        self.adjacency[u].iter().find(|e| e.target as usize == v)
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn counts(&self) -> EdgeCounts {
        let mut c = EdgeCounts::default();
        for e in self.adjacency.iter().flatten() {
            match e.origin {
                EdgeOrigin::Dataset => c.dataset += 1,
                EdgeOrigin::Inferred => c.inferred += 1,
            }
        }
        c
    }

    /// Graph with every edge reversed, for searching distances *to* a vertex.
    pub fn reversed(&self) -> TransitionGraph {
        let mut adjacency: Vec<Vec<Edge>> = vec![Vec::new(); self.n_vertices()];
        for (u, list) in self.adjacency.iter().enumerate() {
            for e in list {
                adjacency[e.target as usize].push(Edge {
                    target: u as u32,
                    weight: e.weight,
                    origin: e.origin,
                });
            }
        }
        for list in &mut adjacency {
            list.sort_by_key(|e| e.target);
        }
        TransitionGraph {
            adjacency,
            threshold: self.threshold,
        }
    }

    /// Every directed edge as `(source, target, weight, origin)`.
    pub fn edge_list(&self) -> impl Iterator<Item = (usize, usize, f32, EdgeOrigin)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().map(move |e| (u, e.target as usize, e.weight, e.origin)))
    }

    pub fn save(&self, dir: &Path, meta: &ArtifactMeta) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.edge_count() * EDGE_RECORD_BYTES);
        for (u, v, w, origin) in self.edge_list() {
            bytes.extend_from_slice(&(u as u32).to_le_bytes());
            bytes.extend_from_slice(&(v as u32).to_le_bytes());
            bytes.extend_from_slice(&w.to_le_bytes());
            bytes.push(origin as u8);
        }
        io::write_atomic(&dir.join(EDGES_FILE), &bytes)?;
        io::write_json(
            &dir.join(GRAPH_FILE),
            &GraphHeader {
                meta: meta.clone(),
                n_vertices: self.n_vertices(),
                d0: self.threshold,
                counts: self.counts(),
                edge_record: "u32 source, u32 target, f32 weight, u8 origin (0 dataset, 1 inferred); little-endian".into(),
            },
        )
    }

    pub fn load(dir: &Path) -> Result<(Self, ArtifactMeta)> {
        let header_path = dir.join(GRAPH_FILE);
        let header: GraphHeader = io::read_json(&header_path)?;
        header.meta.check(&header_path)?;
        let edges_path = dir.join(EDGES_FILE);
        let bytes = io::read_required(&edges_path)?;
        if bytes.len() % EDGE_RECORD_BYTES != 0 {
            return Err(Error::artifact(&edges_path, "truncated edge record"));
        }
        let mut edges = Vec::with_capacity(bytes.len() / EDGE_RECORD_BYTES);
        for rec in bytes.chunks_exact(EDGE_RECORD_BYTES) {
            let u = u32::from_le_bytes(rec[0..4].try_into().expect("4 bytes")) as usize;
            let v = u32::from_le_bytes(rec[4..8].try_into().expect("4 bytes")) as usize;
            let w = f32::from_le_bytes(rec[8..12].try_into().expect("4 bytes"));
            let origin = match rec[12] {
                0 => EdgeOrigin::Dataset,
                1 => EdgeOrigin::Inferred,
                o => return Err(Error::artifact(&edges_path, format!("unknown edge origin {o}"))),
            };
            edges.push((u, v, w, origin));
        }
        let graph = TransitionGraph::from_edges(header.n_vertices, header.d0, edges)
            .map_err(|e| Error::artifact(&edges_path, e.to_string()))?;
        if graph.counts() != header.counts {
            return Err(Error::artifact(&header_path, "edge counts do not match edges.bin"));
        }
        Ok((graph, header.meta))
    }
}

/// Exact shortest-path cost from `s` to `t`, or `None` when unreachable.
pub fn shortest_path_distance(g: &TransitionGraph, s: usize, t: usize) -> Option<f64> {
    planner::dijkstra(g, s, planner::Target::Vertex(t)).0.map(|p| p.cost)
}
