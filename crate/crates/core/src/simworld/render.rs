//! Observation rendering: ray casting over the occupancy grid, frame
//! embeddings from the appearance field, object detections, the coarse
//! geometry grid, and the local occupancy patch.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::{Embedding, TokenGrid};
use crate::geometry::{wrap_angle, Pose, Vec2};
use crate::simworld::{Detection, ObservationFrame, OccupancyPatch, Scene};

/// Sensor model. Defaults mimic an omnidirectional rig (panoramic FOV,
/// 5 m range): the frame embedding summarizes the full surroundings of a
/// pose, which keeps it a place signature rather than a view signature —
/// two cameras facing each other share most of their view, but only
/// co-located ones share their surroundings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    /// Field of view, radians.
    pub fov: f64,
    /// Sensing range, meters.
    pub range: f64,
    /// Rays cast across the FOV.
    pub rays: usize,
    /// Geometry grid shape: range rings x azimuth bins x channels.
    pub geometry_rows: usize,
    pub geometry_cols: usize,
    pub geometry_channels: usize,
    /// Side of the local occupancy patch, meters.
    pub patch_side: f64,
    /// E-folding distance (meters) of the per-cell weight in the frame
    /// embedding. Near cells dominate the summary so the embedding keys on
    /// where the agent stands more than on what it looks at from afar —
    /// place recognition needs the former.
    pub appearance_falloff: f64,
}

impl Default for RenderParams {
    fn default() -> RenderParams {
        RenderParams {
            fov: std::f64::consts::TAU,
            range: 5.0,
            rays: 181,
            geometry_rows: 8,
            geometry_cols: 8,
            geometry_channels: 16,
            patch_side: 4.0,
            appearance_falloff: 1.0,
        }
    }
}

/// Render what the agent sees from `pose`.
///
/// The frame embedding is the normalized distance-weighted mean appearance
/// of all cells visible by ray casting (FOV-limited) — cell weight decays
/// as exp(-distance / appearance_falloff) — optionally perturbed by
/// Gaussian noise of scale `noise_sigma` before renormalizing. Detections
/// cover
/// objects inside FOV, range, and line of sight, with their instance
/// embeddings perturbed the same way. The geometry grid is a noise-free
/// range-ring x azimuth summary of the same ray sweep: channel 0 is bin
/// visibility, channel 1 mean sample depth (normalized by range), and the
/// rest the leading appearance components. Deterministic given the RNG
/// stream; with `noise_sigma` 0 the stream is never sampled.
pub fn render_observation(
    scene: &Scene,
    pose: &Pose,
    params: &RenderParams,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ObservationFrame> {
    let (agent_row, agent_col) = scene.require_free(pose.xy())?;
    let (width, _height) = scene.grid_size();
    let dim = scene.embed_dim();
    let step = scene.resolution() / 2.0;
    let position = pose.xy();

    let rows = params.geometry_rows;
    let cols = params.geometry_cols;
    let channels = params.geometry_channels;
    let app_channels = (channels.saturating_sub(2)).min(dim);

    // Ray sweep: unique visible cells feed the frame embedding with a
    // weight set by the distance at which they first become visible; every
    // sample feeds its (ring, azimuth) geometry bin.
    let mut seen = vec![false; scene.occupancy().len()];
    let mut appearance_sum = vec![0.0f64; dim];
    let mut weight_sum = 0.0f64;
    let mut bin_count = vec![0.0f64; rows * cols];
    let mut bin_depth = vec![0.0f64; rows * cols];
    let mut bin_app = vec![0.0f64; rows * cols * app_channels];
    let falloff = params.appearance_falloff;

    let absorb_cell = |idx: usize,
                           distance: f64,
                           appearance_sum: &mut [f64],
                           weight_sum: &mut f64,
                           seen: &mut [bool]| {
        if !seen[idx] {
            seen[idx] = true;
            let weight = (-distance / falloff).exp();
            *weight_sum += weight;
            let start = idx * dim;
            let cell = &scene.appearance()[start..start + dim];
            for (acc, &v) in appearance_sum.iter_mut().zip(cell) {
                *acc += weight * v as f64;
            }
        }
    };

    // The agent always sees the cell it stands on.
    absorb_cell(
        agent_row * width + agent_col,
        0.0,
        &mut appearance_sum,
        &mut weight_sum,
        &mut seen,
    );

    for ray in 0..params.rays {
        let frac = if params.rays > 1 {
            ray as f64 / (params.rays - 1) as f64
        } else {
            0.5
        };
        let bearing = -params.fov / 2.0 + frac * params.fov;
        let angle = pose.yaw + bearing;
        let dir = Vec2::from_angle(angle);
        let az_bin = (((bearing + params.fov / 2.0) / params.fov) * cols as f64)
            .floor()
            .clamp(0.0, cols as f64 - 1.0) as usize;

        let mut t = step;
        while t <= params.range {
            let point = position.add(dir.scale(t));
            let Some((row, col)) = scene.cell_of(point) else {
                break;
            };
            let idx = row * width + col;
            if scene.is_blocked_cell(row, col) {
                // Walls are visible surfaces: absorb the blocking cell's
                // appearance, then stop the ray. Both sides of a doorway
                // share the wall they stand next to, which keeps the
                // embedding continuous when crossing it.
                absorb_cell(idx, t, &mut appearance_sum, &mut weight_sum, &mut seen);
                break;
            }
            absorb_cell(idx, t, &mut appearance_sum, &mut weight_sum, &mut seen);

            let ring = ((t / params.range) * rows as f64)
                .floor()
                .clamp(0.0, rows as f64 - 1.0) as usize;
            let bin = ring * cols + az_bin;
            bin_count[bin] += 1.0;
            bin_depth[bin] += t;
            let start = idx * dim;
            for ch in 0..app_channels {
                bin_app[bin * app_channels + ch] += scene.appearance()[start + ch] as f64;
            }
            t += step;
        }
    }

    let mut mean: Vec<f64> = appearance_sum.iter().map(|v| v / weight_sum).collect();
    if noise_sigma > 0.0 {
        for v in &mut mean {
            *v += noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let frame_embedding = Embedding::normalize(&mean)?;

    // Detections, in scene object order so RNG consumption is stable.
    let mut detections = Vec::new();
    for object in scene.objects() {
        let offset = object.position.sub(position);
        let range = offset.norm();
        if range > params.range {
            continue;
        }
        let bearing = wrap_angle(offset.angle() - pose.yaw);
        if bearing.abs() > params.fov / 2.0 {
            continue;
        }
        if !line_of_sight(scene, position, object.position) {
            continue;
        }
        let embedding = if noise_sigma > 0.0 {
            let raw: Vec<f64> = object
                .instance_embedding
                .values()
                .iter()
                .map(|&v| v + noise_sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Embedding::normalize(&raw)?
        } else {
            object.instance_embedding.clone()
        };
        detections.push(Detection {
            category: object.category,
            embedding,
            bearing,
            range,
        });
    }

    let mut geometry = TokenGrid::zeros(rows, cols, channels);
    for r in 0..rows {
        for c in 0..cols {
            let bin = r * cols + c;
            if bin_count[bin] == 0.0 {
                continue;
            }
            let n = bin_count[bin];
            geometry.set(r, c, 0, 1.0);
            geometry.set(r, c, 1, bin_depth[bin] / n / params.range);
            for ch in 0..app_channels {
                geometry.set(r, c, 2 + ch, bin_app[bin * app_channels + ch] / n);
            }
        }
    }

    let local_occupancy = crop_patch(scene, agent_row, agent_col, params.patch_side);

    Ok(ObservationFrame {
        pose: pose.clone(),
        frame_embedding,
        geometry_grid: geometry,
        detections,
        local_occupancy,
    })
}

/// Whether `b` is visible from `a`: no blocked cell strictly between them.
/// Marches at half-cell steps; the endpoints' own cells never occlude.
pub(crate) fn line_of_sight(scene: &Scene, a: Vec2, b: Vec2) -> bool {
    let offset = b.sub(a);
    let distance = offset.norm();
    let step = scene.resolution() / 2.0;
    if distance <= step {
        return true;
    }
    let dir = offset.scale(1.0 / distance);
    let target = scene.cell_of(b);
    let mut t = step;
    while t < distance {
        let point = a.add(dir.scale(t));
        match scene.cell_of(point) {
            Some(cell) => {
                if Some(cell) == target {
                    return true;
                }
                if scene.is_blocked_cell(cell.0, cell.1) {
                    return false;
                }
            }
            None => return false,
        }
        t += step;
    }
    true
}

/// Crop the square occupancy patch centered on the agent cell. Cells
/// outside the scene count as blocked.
fn crop_patch(scene: &Scene, agent_row: usize, agent_col: usize, patch_side: f64) -> OccupancyPatch {
    let res = scene.resolution();
    let half = (patch_side / 2.0 / res).round() as i64;
    let side = (2 * half + 1) as usize;
    let (width, height) = scene.grid_size();
    let mut blocked = vec![true; side * side];
    for dr in -half..=half {
        for dc in -half..=half {
            let row = agent_row as i64 + dr;
            let col = agent_col as i64 + dc;
            if row < 0 || col < 0 || row >= height as i64 || col >= width as i64 {
                continue;
            }
            let patch_idx = ((dr + half) * side as i64 + (dc + half)) as usize;
            blocked[patch_idx] = scene.is_blocked_cell(row as usize, col as usize);
        }
    }
    OccupancyPatch {
        side,
        resolution: res,
        origin: Vec2::new(
            (agent_col as i64 - half) as f64 * res,
            (agent_row as i64 - half) as f64 * res,
        ),
        blocked,
    }
}
