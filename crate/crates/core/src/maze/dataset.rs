use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentState, LayoutKind, MazeLayout, Observation, DEFAULT_STEP_SIZE};
use crate::exec::Execution;
use crate::io::{self, ArtifactMeta};
use crate::seed::{self, stream};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const OBSERVATIONS_FILE: &str = "observations.f32";
pub const ROLLOUTS_FILE: &str = "rollouts.json";
pub const POSITIONS_FILE: &str = "positions.f32";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutSpan {
    pub start: usize,
    pub len: usize,
}

impl RolloutSpan {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.start..self.end()).contains(&i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub n_rollouts: usize,
    /// Steps per rollout; each rollout holds `horizon + 1` observations.
    pub horizon: usize,
    pub n_policies: usize,
    pub step_size: f32,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            n_rollouts: 1000,
            horizon: 10,
            n_policies: 20,
            step_size: DEFAULT_STEP_SIZE,
            resolution: 64,
            seed: 0,
        }
    }
}

/// Ordered rollouts of rendered observations.
///
/// Ground-truth positions ride along for evaluation and plotting; no
/// learning code reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub layout: LayoutKind,
    pub resolution: usize,
    pub config: RolloutConfig,
    pixels: Vec<f32>,
    rollouts: Vec<RolloutSpan>,
    positions: Vec<[f32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    #[serde(flatten)]
    meta: ArtifactMeta,
    layout: LayoutKind,
    resolution: usize,
    n_rollouts: usize,
    horizon: usize,
    n_policies: usize,
    step_size: f32,
    seed: u64,
    n_observations: usize,
    /// Positions are ground truth for evaluation only.
    positions_evaluation_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RolloutsFile {
    #[serde(flatten)]
    meta: ArtifactMeta,
    spans: Vec<RolloutSpan>,
}

/// Generates `n_rollouts` uniform-random-direction rollouts.
///
/// Each rollout draws from its own seed stream keyed by (policy, index), so
/// the dataset is identical for any worker count.
pub fn generate_rollouts(layout: &MazeLayout, cfg: &RolloutConfig, exec: Execution) -> Result<TrajectoryDataset> {
    if cfg.n_rollouts == 0 {
        return Err(Error::invalid("n_rollouts must be >= 1"));
    }
    if cfg.horizon < 2 {
        return Err(Error::invalid("horizon must be >= 2"));
    }
    if cfg.n_policies == 0 {
        return Err(Error::invalid("n_policies must be >= 1"));
    }
    if !(cfg.step_size > 0.0) {
        return Err(Error::invalid("step_size must be > 0"));
    }
    let renderer = layout.renderer(cfg.resolution)?;
    let per_policy = cfg.n_rollouts.div_ceil(cfg.n_policies);
    let frame = cfg.resolution * cfg.resolution;
    let len = cfg.horizon + 1;

    let rollouts = exec.map(cfg.n_rollouts, |r| {
        let (policy, local) = (r / per_policy, r % per_policy);
        let mut rng = seed::rng(cfg.seed, stream::ROLLOUT, ((policy as u64) << 32) | local as u64);
        let mut s = layout.sample_free(&mut rng);
        let mut positions = Vec::with_capacity(len);
        let mut pixels = vec![0.0; len * frame];
        for t in 0..len {
            if t > 0 {
                let dir = MazeLayout::random_direction(&mut rng);
                s = layout.step(s, dir, cfg.step_size);
            }
            positions.push(s.position);
            renderer.render_into(s, &mut pixels[t * frame..(t + 1) * frame]);
        }
        (positions, pixels)
    });

    let mut ds = TrajectoryDataset {
        layout: layout.kind,
        resolution: cfg.resolution,
        config: cfg.clone(),
        pixels: Vec::with_capacity(cfg.n_rollouts * len * frame),
        rollouts: Vec::with_capacity(cfg.n_rollouts),
        positions: Vec::with_capacity(cfg.n_rollouts * len),
    };
    for (positions, pixels) in rollouts {
        ds.rollouts.push(RolloutSpan {
            start: ds.positions.len(),
            len,
        });
        ds.positions.extend(positions);
        ds.pixels.extend(pixels);
    }
    Ok(ds)
}

impl TrajectoryDataset {
    /// Assembles a dataset from raw parts, checking the span and size invariants.
    pub fn from_parts(
        layout: LayoutKind,
        config: RolloutConfig,
        pixels: Vec<f32>,
        rollouts: Vec<RolloutSpan>,
        positions: Vec<[f32; 2]>,
    ) -> Result<Self> {
        let ds = TrajectoryDataset {
            layout,
            resolution: config.resolution,
            config,
            pixels,
            rollouts,
            positions,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let frame = self.frame_len();
        if frame == 0 || self.pixels.len() != self.positions.len() * frame {
            return Err(Error::invalid(format!(
                "{} pixels for {} observations at {}x{}",
                self.pixels.len(),
                self.positions.len(),
                self.resolution,
                self.resolution
            )));
        }
        let mut next = 0;
        for span in &self.rollouts {
            if span.start != next || span.len == 0 {
                return Err(Error::invalid(format!("rollout span {span:?} does not continue at {next}")));
            }
            next = span.end();
        }
        if next != self.positions.len() {
            return Err(Error::invalid(format!(
                "rollout spans cover {next} of {} observations",
                self.positions.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.frame_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn observation(&self, i: usize) -> Observation {
        Observation {
            id: i,
            resolution: self.resolution,
            pixels: self.frame(i).to_vec(),
        }
    }

    pub fn rollouts(&self) -> &[RolloutSpan] {
        &self.rollouts
    }

    /// Ground-truth position. Evaluation only.
    pub fn position(&self, i: usize) -> [f32; 2] {
        self.positions[i]
    }

    pub fn positions(&self) -> &[[f32; 2]] {
        &self.positions
    }

    pub fn ground_truth_distance(&self, i: usize, j: usize) -> f32 {
        let (a, b) = (self.positions[i], self.positions[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    /// Rollout index containing observation `i`.
    pub fn rollout_of(&self, i: usize) -> usize {
        self.rollouts.partition_point(|s| s.end() <= i)
    }

    /// Copies the frames of `indices` into a `[indices.len(), frame_len]` buffer.
    pub fn gather(&self, indices: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(indices.len() * self.frame_len());
        for &i in indices {
            out.extend_from_slice(self.frame(i));
        }
        out
    }

    pub fn agent_state(&self, i: usize) -> AgentState {
        AgentState {
            position: self.positions[i],
        }
    }

    pub fn save(&self, dir: &Path, meta: &ArtifactMeta) -> Result<()> {
        io::write_atomic(&dir.join(OBSERVATIONS_FILE), &io::f32_to_le_bytes(&self.pixels))?;
        let flat: Vec<f32> = self.positions.iter().flat_map(|p| [p[0], p[1]]).collect();
        io::write_atomic(&dir.join(POSITIONS_FILE), &io::f32_to_le_bytes(&flat))?;
        io::write_json(
            &dir.join(ROLLOUTS_FILE),
            &RolloutsFile {
                meta: meta.clone(),
                spans: self.rollouts.clone(),
            },
        )?;
        // Manifest last: its presence marks a complete dataset.
        io::write_json(
            &dir.join(MANIFEST_FILE),
            &Manifest {
                meta: meta.clone(),
                layout: self.layout,
                resolution: self.resolution,
                n_rollouts: self.config.n_rollouts,
                horizon: self.config.horizon,
                n_policies: self.config.n_policies,
                step_size: self.config.step_size,
                seed: self.config.seed,
                n_observations: self.len(),
                positions_evaluation_only: true,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<(Self, ArtifactMeta)> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest: Manifest = io::read_json(&manifest_path)?;
        manifest.meta.check(&manifest_path)?;
        let rollouts_path = dir.join(ROLLOUTS_FILE);
        let rollouts: RolloutsFile = io::read_json(&rollouts_path)?;
        rollouts.meta.check(&rollouts_path)?;
        let obs_path = dir.join(OBSERVATIONS_FILE);
        let pixels = io::f32_from_le_bytes(&obs_path, &io::read_required(&obs_path)?)?;
        let pos_path = dir.join(POSITIONS_FILE);
        let flat = io::f32_from_le_bytes(&pos_path, &io::read_required(&pos_path)?)?;
        if flat.len() != 2 * manifest.n_observations {
            return Err(Error::artifact(
                &pos_path,
                format!("expected {} positions, found {}", manifest.n_observations, flat.len() / 2),
            ));
        }
        let positions = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let config = RolloutConfig {
            n_rollouts: manifest.n_rollouts,
            horizon: manifest.horizon,
            n_policies: manifest.n_policies,
            step_size: manifest.step_size,
            resolution: manifest.resolution,
            seed: manifest.seed,
        };
        let ds = TrajectoryDataset::from_parts(manifest.layout, config, pixels, rollouts.spans, positions)
            .map_err(|e| Error::artifact(dir, e.to_string()))?;
        Ok((ds, manifest.meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: LayoutKind, n: usize, horizon: usize, seed: u64) -> TrajectoryDataset {
        let cfg = RolloutConfig {
            n_rollouts: n,
            horizon,
            n_policies: 3,
            resolution: 16,
            seed,
            ..Default::default()
        };
        generate_rollouts(&MazeLayout::new(kind), &cfg, Execution::Parallel).unwrap()
    }

    #[test]
    fn full_size_dataset_count() {
        let cfg = RolloutConfig {
            resolution: 8,
            ..Default::default()
        };
        let ds = generate_rollouts(&MazeLayout::new(LayoutKind::Open), &cfg, Execution::Parallel).unwrap();
        assert_eq!(ds.len(), 11_000);
        assert_eq!(ds.rollouts().len(), 1000);
    }

    #[test]
    fn single_rollout_counts() {
        let cfg = RolloutConfig {
            n_rollouts: 1,
            horizon: 2,
            n_policies: 1,
            resolution: 16,
            ..Default::default()
        };
        let ds = generate_rollouts(&MazeLayout::new(LayoutKind::Open), &cfg, Execution::Sequential).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.rollouts(), &[RolloutSpan { start: 0, len: 3 }]);
    }

    #[test]
    fn rejects_degenerate_configs() {
        let layout = MazeLayout::new(LayoutKind::Open);
        let mut cfg = RolloutConfig {
            resolution: 16,
            ..Default::default()
        };
        cfg.horizon = 1;
        assert!(generate_rollouts(&layout, &cfg, Execution::Sequential).is_err());
        cfg.horizon = 10;
        cfg.n_rollouts = 0;
        assert!(generate_rollouts(&layout, &cfg, Execution::Sequential).is_err());
    }

    #[test]
    fn consecutive_positions_within_step_and_valid() {
        for kind in LayoutKind::ALL {
            let ds = small(kind, 60, 10, 4);
            let layout = MazeLayout::new(kind);
            for i in 0..ds.len() {
                assert!(layout.is_valid(ds.agent_state(i)));
            }
            for span in ds.rollouts() {
                for i in span.start..span.end() - 1 {
                    assert!(ds.ground_truth_distance(i, i + 1) <= ds.config.step_size + 1e-6);
                }
            }
        }
    }

    #[test]
    fn deterministic_across_execution_modes() {
        let layout = MazeLayout::new(LayoutKind::CMaze);
        let cfg = RolloutConfig {
            n_rollouts: 17,
            resolution: 16,
            seed: 9,
            ..Default::default()
        };
        let a = generate_rollouts(&layout, &cfg, Execution::Sequential).unwrap();
        let b = generate_rollouts(&layout, &cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn save_load_roundtrip_is_byte_identical() {
        let ds = small(LayoutKind::Table, 5, 4, 1);
        let dir = tempfile::tempdir().unwrap();
        let meta = ArtifactMeta::new("h");
        ds.save(dir.path(), &meta).unwrap();
        let (back, meta2) = TrajectoryDataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(meta2, meta);
        let bytes = std::fs::read(dir.path().join(OBSERVATIONS_FILE)).unwrap();
        assert_eq!(bytes.len(), ds.len() * 16 * 16 * 4);
    }

    #[test]
    fn rollout_lookup() {
        let ds = small(LayoutKind::Open, 4, 3, 2);
        assert_eq!(ds.rollout_of(0), 0);
        assert_eq!(ds.rollout_of(3), 0);
        assert_eq!(ds.rollout_of(4), 1);
        assert_eq!(ds.rollout_of(15), 3);
    }
}
