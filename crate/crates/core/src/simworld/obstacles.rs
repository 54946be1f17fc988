//! Dynamic obstacle injection for robustness experiments: rectangles
//! dropped onto free space after the memory graph was built, so the graph
//! is stale where they land.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::rng::substream;
use crate::simworld::{free_components, Scene};

/// Obstacle side lengths, meters.
const SIDE_RANGE_M: (f64, f64) = (0.4, 1.0);
/// Obstacles may not block cells within this distance of a protected
/// (goal) position, so robustness runs measure avoidance rather than goal
/// occlusion.
const PROTECT_RADIUS_M: f64 = 1.0;

/// Place `count` rectangular obstacles on free cells, leaving appearance
/// field and objects untouched.
///
/// A placement is rejected when it overlaps blocked cells or an object's
/// cell, lands within 1 m of a protected position, or would split free
/// space into multiple components. Each obstacle gets 64 attempts before
/// the whole call fails.
pub fn inject_obstacles(
    scene: &Scene,
    count: usize,
    protected: &[Vec2],
    seed: u64,
) -> Result<Scene> {
    if count == 0 {
        return Ok(scene.clone());
    }
    let (width, height) = scene.grid_size();
    let res = scene.resolution();
    let mut occupancy = scene.occupancy().to_vec();
    let mut rng = substream(seed, "obstacles");

    let object_cells: Vec<(usize, usize)> = scene
        .objects()
        .iter()
        .filter_map(|o| scene.cell_of(o.position))
        .collect();

    for _ in 0..count {
        let mut placed = false;
        'attempts: for _ in 0..64 {
            let w_cells = (rng.gen_range(SIDE_RANGE_M.0..=SIDE_RANGE_M.1) / res).round() as usize;
            let h_cells = (rng.gen_range(SIDE_RANGE_M.0..=SIDE_RANGE_M.1) / res).round() as usize;
            if width < w_cells + 2 || height < h_cells + 2 {
                continue;
            }
            let c0 = rng.gen_range(1..width - w_cells);
            let r0 = rng.gen_range(1..height - h_cells);

            for r in r0..r0 + h_cells {
                for c in c0..c0 + w_cells {
                    if occupancy[r * width + c] {
                        continue 'attempts;
                    }
                    let center = scene.cell_center(r, c);
                    if protected.iter().any(|p| p.distance(center) < PROTECT_RADIUS_M) {
                        continue 'attempts;
                    }
                    if object_cells.contains(&(r, c)) {
                        continue 'attempts;
                    }
                }
            }

            // Tentatively place, then verify free space stays connected.
            for r in r0..r0 + h_cells {
                for c in c0..c0 + w_cells {
                    occupancy[r * width + c] = true;
                }
            }
            if free_components(width, height, &occupancy) != 1 {
                for r in r0..r0 + h_cells {
                    for c in c0..c0 + w_cells {
                        occupancy[r * width + c] = false;
                    }
                }
                continue;
            }
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::ObstaclePlacement(
                "no valid placement in 64 attempts".into(),
            ));
        }
    }

    Ok(scene.replace_occupancy(occupancy))
}
