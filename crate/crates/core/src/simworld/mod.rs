//! Deterministic synthetic 2D world.
//!
//! A [`Scene`] is an occupancy grid over a latent per-cell appearance field,
//! plus a set of object instances. Rendering ray-casts the grid to produce
//! [`ObservationFrame`]s whose embeddings behave like visual features:
//! nearby viewpoints look similar, distant rooms look different. The module
//! also provides tour generation, dynamic obstacle injection, and a
//! geodesic shortest-path oracle for SPL.

mod gen;
mod geodesic;
mod io;
mod obstacles;
mod render;
mod tour;

pub use gen::{generate_scene, SceneParams};
pub use geodesic::geodesic_distance;
pub use io::{load_scene, save_scene};
pub use obstacles::inject_obstacles;
pub use render::{render_observation, RenderParams};
pub use tour::{generate_tour, TourParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Embedding, TokenGrid};
use crate::geometry::{Pose, Vec2};

/// Fixed object vocabulary. Categories are referenced by index everywhere;
/// the names exist for logs and serialized output.
pub const CATEGORIES: [&str; 12] = [
    "chair", "table", "sofa", "bed", "plant", "lamp", "cabinet", "sink", "toilet", "tv", "shelf",
    "fridge",
];

/// A static object placed on a free cell of the scene.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: u32,
    /// Index into [`CATEGORIES`].
    pub category: usize,
    pub position: Vec2,
    pub instance_embedding: Embedding,
}

impl ObjectInstance {
    pub fn category_name(&self) -> &'static str {
        CATEGORIES[self.category]
    }
}

/// One object sighting inside an observation: what it looks like and where
/// it sits relative to the agent.
#[derive(Clone, Debug)]
pub struct Detection {
    /// Index into [`CATEGORIES`].
    pub category: usize,
    pub embedding: Embedding,
    /// Bearing relative to the agent heading, radians in [-pi, pi).
    pub bearing: f64,
    /// Straight-line distance from the agent, meters.
    pub range: f64,
}

/// Square occupancy crop centered on the agent, used by the local
/// controller for collision checking.
#[derive(Clone, Debug)]
pub struct OccupancyPatch {
    /// Cells per side (odd; the agent sits in the center cell).
    pub side: usize,
    /// Meters per cell.
    pub resolution: f64,
    /// World coordinates of the low corner of cell (0, 0).
    pub origin: Vec2,
    /// Row-major, `true` = blocked. Row 0 has the smallest y.
    pub blocked: Vec<bool>,
}

impl OccupancyPatch {
    pub fn is_blocked(&self, row: usize, col: usize) -> bool {
        self.blocked[row * self.side + col]
    }

    /// Whether the world point falls on a blocked cell; points outside the
    /// patch count as blocked (unknown space is not traversable).
    pub fn is_blocked_at(&self, point: Vec2) -> bool {
        let col = ((point.x - self.origin.x) / self.resolution).floor();
        let row = ((point.y - self.origin.y) / self.resolution).floor();
        if col < 0.0 || row < 0.0 || col >= self.side as f64 || row >= self.side as f64 {
            return true;
        }
        self.is_blocked(row as usize, col as usize)
    }
}

/// One rendered observation: what the agent sees from a pose.
#[derive(Clone, Debug)]
pub struct ObservationFrame {
    pub pose: Pose,
    pub frame_embedding: Embedding,
    pub geometry_grid: TokenGrid,
    pub detections: Vec<Detection>,
    pub local_occupancy: OccupancyPatch,
}

/// A posed walkthrough of the scene, the raw material for graph building.
#[derive(Clone, Debug)]
pub struct TourDemonstration {
    pub frames: Vec<ObservationFrame>,
    /// Fraction of free cells actually covered (within sensing range and
    /// line of sight of some tour pose). Equals or exceeds the requested
    /// target unless the step cap was hit.
    pub coverage: f64,
}

/// The synthetic environment: occupancy, appearance field, objects.
///
/// Immutable after generation; [`inject_obstacles`] returns a new scene.
#[derive(Clone, Debug)]
pub struct Scene {
    params: SceneParams,
    /// Cells per row.
    width: usize,
    /// Number of rows.
    height: usize,
    /// Row-major, `true` = blocked.
    occupancy: Vec<bool>,
    /// Row-major per-cell unit vectors, `embed_dim` components each.
    /// Stored f32 to halve memory; similarity math runs in f64.
    appearance: Vec<f32>,
    objects: Vec<ObjectInstance>,
}

impl Scene {
    pub(crate) fn new(
        params: SceneParams,
        width: usize,
        height: usize,
        occupancy: Vec<bool>,
        appearance: Vec<f32>,
        objects: Vec<ObjectInstance>,
    ) -> Scene {
        debug_assert_eq!(occupancy.len(), width * height);
        debug_assert_eq!(appearance.len(), width * height * params.embed_dim);
        Scene {
            params,
            width,
            height,
            occupancy,
            appearance,
            objects,
        }
    }

    pub fn params(&self) -> &SceneParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.params.seed
    }

    pub fn resolution(&self) -> f64 {
        self.params.resolution
    }

    pub fn embed_dim(&self) -> usize {
        self.params.embed_dim
    }

    /// Grid dimensions as (cells per row, rows).
    pub fn grid_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Extent in meters as (width, height).
    pub fn extent(&self) -> (f64, f64) {
        (
            self.width as f64 * self.params.resolution,
            self.height as f64 * self.params.resolution,
        )
    }

    pub fn objects(&self) -> &[ObjectInstance] {
        &self.objects
    }

    pub(crate) fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    pub(crate) fn appearance(&self) -> &[f32] {
        &self.appearance
    }

    pub fn cell_index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    /// Map a world point to its (row, col) cell, or None outside the grid.
    pub fn cell_of(&self, point: Vec2) -> Option<(usize, usize)> {
        let res = self.params.resolution;
        if point.x < 0.0 || point.y < 0.0 {
            return None;
        }
        let col = (point.x / res).floor() as usize;
        let row = (point.y / res).floor() as usize;
        if col >= self.width || row >= self.height {
            return None;
        }
        Some((row, col))
    }

    /// Center of a cell in world coordinates.
    pub fn cell_center(&self, row: usize, col: usize) -> Vec2 {
        let res = self.params.resolution;
        Vec2::new((col as f64 + 0.5) * res, (row as f64 + 0.5) * res)
    }

    pub fn is_blocked_cell(&self, row: usize, col: usize) -> bool {
        self.occupancy[self.cell_index(row, col)]
    }

    /// Whether a world point is on free space. Points outside the grid are
    /// blocked.
    pub fn is_free(&self, point: Vec2) -> bool {
        match self.cell_of(point) {
            Some((row, col)) => !self.is_blocked_cell(row, col),
            None => false,
        }
    }

    /// Appearance vector of a cell (valid for any cell; blocked cells hold
    /// the latent field too, they are just never observed).
    pub fn appearance_at(&self, row: usize, col: usize) -> &[f32] {
        let dim = self.params.embed_dim;
        let start = self.cell_index(row, col) * dim;
        &self.appearance[start..start + dim]
    }

    /// All free cells as (row, col), row-major order.
    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for row in 0..self.height {
            for col in 0..self.width {
                if !self.is_blocked_cell(row, col) {
                    cells.push((row, col));
                }
            }
        }
        cells
    }

    /// Require that a point is on free space, with a typed error otherwise.
    pub fn require_free(&self, point: Vec2) -> Result<(usize, usize)> {
        match self.cell_of(point) {
            Some((row, col)) if !self.is_blocked_cell(row, col) => Ok((row, col)),
            _ => Err(Error::BlockedPose(point.x, point.y)),
        }
    }

    pub(crate) fn replace_occupancy(&self, occupancy: Vec<bool>) -> Scene {
        Scene {
            params: self.params.clone(),
            width: self.width,
            height: self.height,
            occupancy,
            appearance: self.appearance.clone(),
            objects: self.objects.clone(),
        }
    }
}

/// Count connected components of free space (4-connected flood fill).
pub(crate) fn free_components(width: usize, height: usize, occupancy: &[bool]) -> usize {
    let mut seen = vec![false; occupancy.len()];
    let mut components = 0;
    let mut stack = Vec::new();
    for start in 0..occupancy.len() {
        if occupancy[start] || seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (row, col) = (idx / width, idx % width);
            let mut push = |r: usize, c: usize| {
                let n = r * width + c;
                if !occupancy[n] && !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            };
            if row > 0 {
                push(row - 1, col);
            }
            if row + 1 < height {
                push(row + 1, col);
            }
            if col > 0 {
                push(row, col - 1);
            }
            if col + 1 < width {
                push(row, col + 1);
            }
        }
    }
    components
}
