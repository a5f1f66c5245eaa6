//! Simulated top-down 2D navigation rooms.
//!
//! The arena is the square `[-1, 1]²`. Obstacles are axis-aligned
//! rectangles. A point agent moves by fixed-length steps and stops just short
//! of the first wall it would hit.

mod dataset;

pub use dataset::{
    generate_rollouts, RolloutConfig, RolloutSpan, TrajectoryDataset, MANIFEST_FILE, OBSERVATIONS_FILE, POSITIONS_FILE,
    ROLLOUTS_FILE,
};

use std::collections::VecDeque;
use std::f32::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Gap left between the agent and a wall it runs into.
pub const CONTACT_EPSILON: f32 = 1e-3;
/// Agent disk radius in pixels at 64×64; scales with resolution.
pub const AGENT_RADIUS_PX_AT_64: f32 = 3.0;
pub const AGENT_INTENSITY: f32 = 0.5;
pub const MIN_RESOLUTION: usize = 8;
pub const DEFAULT_STEP_SIZE: f32 = 0.1;
/// Half-thickness of the C-Maze dividing wall.
pub const CMAZE_WALL_HALF_WIDTH: f32 = 0.1;
/// Half side of the Table obstacle.
pub const TABLE_HALF_SIDE: f32 = 0.4;

const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutKind {
    Open,
    Table,
    CMaze,
}

impl LayoutKind {
    pub const ALL: [LayoutKind; 3] = [LayoutKind::Open, LayoutKind::Table, LayoutKind::CMaze];

    pub fn name(self) -> &'static str {
        match self {
            LayoutKind::Open => "open",
            LayoutKind::Table => "table",
            LayoutKind::CMaze => "c-maze",
        }
    }
}

impl fmt::Display for LayoutKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayoutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "open" => Ok(LayoutKind::Open),
            "table" => Ok(LayoutKind::Table),
            "c-maze" | "cmaze" | "wall" => Ok(LayoutKind::CMaze),
            other => Err(Error::invalid(format!("unknown layout {other:?} (expected open, table, c-maze)"))),
        }
    }
}

/// Closed axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f32; 2],
    pub max: [f32; 2],
}

impl Rect {
    pub fn contains(&self, p: [f32; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    /// Entry parameter of the ray `origin + t·dir` into the rectangle, if it
    /// enters at some `t >= 0`.
    fn ray_entry(&self, origin: [f32; 2], dir: [f32; 2]) -> Option<f32> {
        let mut t_enter = f32::NEG_INFINITY;
        let mut t_exit = f32::INFINITY;
        for axis in 0..2 {
            if dir[axis] == 0.0 {
                if origin[axis] < self.min[axis] || origin[axis] > self.max[axis] {
                    return None;
                }
                continue;
            }
            let t1 = (self.min[axis] - origin[axis]) / dir[axis];
            let t2 = (self.max[axis] - origin[axis]) / dir[axis];
            t_enter = t_enter.max(t1.min(t2));
            t_exit = t_exit.min(t1.max(t2));
        }
        (t_enter <= t_exit && t_enter >= 0.0).then_some(t_enter)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeLayout {
    pub kind: LayoutKind,
    pub obstacles: Vec<Rect>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: [f32; 2],
}

impl AgentState {
    pub fn new(x: f32, y: f32) -> Self {
        AgentState { position: [x, y] }
    }
}

/// Rasterized grayscale frame, row-major with row 0 at the top (`y = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub id: usize,
    pub resolution: usize,
    pub pixels: Vec<f32>,
}

impl MazeLayout {
    pub fn new(kind: LayoutKind) -> Self {
        let obstacles = match kind {
            LayoutKind::Open => vec![],
            LayoutKind::Table => vec![Rect {
                min: [-TABLE_HALF_SIDE, -TABLE_HALF_SIDE],
                max: [TABLE_HALF_SIDE, TABLE_HALF_SIDE],
            }],
            LayoutKind::CMaze => vec![Rect {
                min: [-CMAZE_WALL_HALF_WIDTH, -1.0],
                max: [CMAZE_WALL_HALF_WIDTH, 0.5],
            }],
        };
        MazeLayout { kind, obstacles }
    }

    pub fn is_valid(&self, s: AgentState) -> bool {
        let [x, y] = s.position;
        x.is_finite()
            && y.is_finite()
            && (-1.0..=1.0).contains(&x)
            && (-1.0..=1.0).contains(&y)
            && !self.obstacles.iter().any(|o| o.contains(s.position))
    }

    /// Moves `step_size` along `direction` (radians), stopping
    /// [`CONTACT_EPSILON`] short of the first obstacle or arena boundary.
    pub fn step(&self, s: AgentState, direction: f32, step_size: f32) -> AgentState {
        let dir = [direction.cos(), direction.sin()];
        let o = s.position;
        let mut contact = f32::INFINITY;
        for axis in 0..2 {
            if dir[axis] > 0.0 {
                contact = contact.min((1.0 - o[axis]) / dir[axis]);
            } else if dir[axis] < 0.0 {
                contact = contact.min((-1.0 - o[axis]) / dir[axis]);
            }
        }
        for rect in &self.obstacles {
            if let Some(t) = rect.ray_entry(o, dir) {
                contact = contact.min(t);
            }
        }
        let travel = if contact > step_size {
            step_size
        } else {
            (contact - CONTACT_EPSILON).max(0.0)
        };
        let next = AgentState::new(o[0] + dir[0] * travel, o[1] + dir[1] * travel);
        if self.is_valid(next) {
            next
        } else {
            s
        }
    }

    pub fn sample_free(&self, rng: &mut impl Rng) -> AgentState {
        loop {
            let s = AgentState::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if self.is_valid(s) {
                return s;
            }
        }
    }

    pub fn random_direction(rng: &mut impl Rng) -> f32 {
        rng.random_range(0.0..TAU)
    }

    /// Free-space occupancy of a `cells × cells` grid, sampled at cell centers.
    pub fn free_cells(&self, cells: usize) -> Vec<bool> {
        (0..cells * cells)
            .map(|i| {
                let (row, col) = (i / cells, i % cells);
                let x = -1.0 + (col as f32 + 0.5) * 2.0 / cells as f32;
                let y = 1.0 - (row as f32 + 0.5) * 2.0 / cells as f32;
                self.is_valid(AgentState::new(x, y))
            })
            .collect()
    }

    /// Number of 4-connected components of the discretized free space.
    pub fn free_space_components(&self, cells: usize) -> usize {
        let free = self.free_cells(cells);
        let mut label = vec![false; free.len()];
        let mut components = 0;
        for start in 0..free.len() {
            if !free[start] || label[start] {
                continue;
            }
            components += 1;
            label[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(i) = queue.pop_front() {
                let (r, c) = (i / cells, i % cells);
                let mut neighbors = Vec::with_capacity(4);
                if r > 0 {
                    neighbors.push(i - cells);
                }
                if r + 1 < cells {
                    neighbors.push(i + cells);
                }
                if c > 0 {
                    neighbors.push(i - 1);
                }
                if c + 1 < cells {
                    neighbors.push(i + 1);
                }
                for j in neighbors {
                    if free[j] && !label[j] {
                        label[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        components
    }

    pub fn renderer(&self, resolution: usize) -> Result<Renderer> {
        Renderer::new(self, resolution)
    }

    pub fn render(&self, s: AgentState, resolution: usize) -> Result<Observation> {
        Ok(self.renderer(resolution)?.render(s, 0))
    }
}

/// Rasterizer with the static background cached.
///
/// The camera frames the arena plus a dark border one agent radius wide, so
/// the agent disk is drawn whole even when touching the arena boundary.
#[derive(Debug, Clone)]
pub struct Renderer {
    resolution: usize,
    background: Vec<f32>,
    radius: f32,
    half_extent: f32,
}

impl Renderer {
    pub fn new(layout: &MazeLayout, resolution: usize) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return Err(Error::invalid(format!(
                "resolution {resolution} is below the minimum of {MIN_RESOLUTION}"
            )));
        }
        let radius = AGENT_RADIUS_PX_AT_64 * 2.0 / 64.0;
        let half_extent = 1.0 + radius;
        let center = |i: usize| (2 * i as i64 + 1 - resolution as i64) as f32 / resolution as f32 * half_extent;
        let background = (0..resolution * resolution)
            .map(|i| {
                let (row, col) = (i / resolution, i % resolution);
                if layout.is_valid(AgentState::new(center(col), -center(row))) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Renderer {
            resolution,
            background,
            radius,
            half_extent,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Subsample coordinate along one axis. Integer numerators make mirrored
    /// samples exact negations of each other.
    fn coord(&self, sub: usize) -> f32 {
        let n = (self.resolution * SUPERSAMPLE) as i64;
        (2 * sub as i64 + 1 - n) as f32 / n as f32 * self.half_extent
    }

    pub fn render(&self, s: AgentState, id: usize) -> Observation {
        let mut pixels = self.background.clone();
        self.draw_agent(s, &mut pixels);
        Observation {
            id,
            resolution: self.resolution,
            pixels,
        }
    }

    /// Writes the frame for `s` into `out` (length `resolution²`).
    pub fn render_into(&self, s: AgentState, out: &mut [f32]) {
        out.copy_from_slice(&self.background);
        self.draw_agent(s, out);
    }

    fn draw_agent(&self, s: AgentState, pixels: &mut [f32]) {
        let res = self.resolution;
        let pixel = 2.0 * self.half_extent / res as f32;
        let [sx, sy] = s.position;
        let r2 = self.radius * self.radius;
        let to_index = |v: f32| ((v + self.half_extent) / pixel).floor() as i64;
        let col_lo = to_index(sx - self.radius).clamp(0, res as i64 - 1) as usize;
        let col_hi = to_index(sx + self.radius).clamp(0, res as i64 - 1) as usize;
        let row_lo = to_index(-(sy + self.radius)).clamp(0, res as i64 - 1) as usize;
        let row_hi = to_index(-(sy - self.radius)).clamp(0, res as i64 - 1) as usize;
        let total = (SUPERSAMPLE * SUPERSAMPLE) as f32;
        for row in row_lo..=row_hi {
            for col in col_lo..=col_hi {
                let mut hits = 0;
                for a in 0..SUPERSAMPLE {
                    let y = -self.coord(row * SUPERSAMPLE + a);
                    for b in 0..SUPERSAMPLE {
                        let x = self.coord(col * SUPERSAMPLE + b);
                        let (dx, dy) = (x - sx, y - sy);
                        if dx * dx + dy * dy <= r2 {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    let cov = hits as f32 / total;
                    let px = &mut pixels[row * res + col];
                    *px = *px * (1.0 - cov) + AGENT_INTENSITY * cov;
                }
            }
        }
    }
}
