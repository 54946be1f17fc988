//! Tour demonstrations: a collision-free walkthrough that covers the scene
//! and pauses for in-place rotations at each waypoint, giving keyframe
//! selection rotation variance to exploit.
//!
//! All tour yaws snap to world-frame compass directions (multiples of 90
//! degrees). Every region then records the same four headings, so two
//! nodes' keyframes differ by where they stand, not by which way they
//! happened to look — place recognition stays a question of position.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec2};
use crate::rng::substream;
use crate::simworld::render::{line_of_sight, render_observation, RenderParams};
use crate::simworld::{Scene, TourDemonstration};

/// Tour generation knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TourParams {
    /// Fraction of free cells the tour must cover, in (0, 1].
    pub coverage_target: f64,
    /// Hard cap on tour length, poses.
    pub max_frames: usize,
    /// In-place rotations performed at each waypoint, evenly spaced over
    /// a full turn in the world frame (absolute headings, not relative to
    /// the arrival direction).
    pub rotations_per_waypoint: usize,
    /// Every this many path steps, pause for a 4-way look-around (0
    /// disables). Keeps every stretch of the tour multi-view, so regions
    /// carved out between waypoints still get rotation-diverse frames and
    /// record the objects around them.
    pub burst_interval: usize,
    /// Observation noise applied while rendering tour frames.
    pub noise_sigma: f64,
    pub render: RenderParams,
}

impl Default for TourParams {
    fn default() -> TourParams {
        TourParams {
            coverage_target: 0.9,
            max_frames: 8000,
            rotations_per_waypoint: 4,
            burst_interval: 0,
            noise_sigma: 0.0,
            render: RenderParams::default(),
        }
    }
}

/// Generate a covering tour and render its frames.
///
/// Waypoints are chosen greedily: walk to the nearest cell not yet covered
/// (within sensing range and line of sight of a previous waypoint), rotate
/// in place, repeat until the coverage target is met or the frame cap is
/// hit. The reported coverage is recomputed over the full pose sequence,
/// so it can only exceed the planner's own bookkeeping.
pub fn generate_tour(scene: &Scene, params: &TourParams, seed: u64) -> Result<TourDemonstration> {
    if !(params.coverage_target > 0.0 && params.coverage_target <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "coverage_target {} outside (0, 1]",
            params.coverage_target
        )));
    }

    let (width, height) = scene.grid_size();
    let free = scene.free_cells();
    let free_count = free.len();

    // Start at the free cell nearest the scene center.
    let center = Vec2::new(
        width as f64 * scene.resolution() / 2.0,
        height as f64 * scene.resolution() / 2.0,
    );
    let start = *free
        .iter()
        .min_by(|a, b| {
            let da = scene.cell_center(a.0, a.1).distance(center);
            let db = scene.cell_center(b.0, b.1).distance(center);
            da.partial_cmp(&db).unwrap().then_with(|| a.cmp(b))
        })
        .ok_or_else(|| Error::SceneGeneration("scene has no free cells".into()))?;

    let mut covered = vec![false; width * height];
    let mut covered_count = 0usize;
    let mut poses: Vec<Pose> = vec![Pose::planar(
        scene.cell_center(start.0, start.1).x,
        scene.cell_center(start.0, start.1).y,
        0.0,
    )?];
    let mut waypoint = start;

    loop {
        // Absorb everything visible from this waypoint.
        let origin = scene.cell_center(waypoint.0, waypoint.1);
        for &(row, col) in &free {
            if covered[row * width + col] {
                continue;
            }
            let cell = scene.cell_center(row, col);
            if origin.distance(cell) <= params.render.range && line_of_sight(scene, origin, cell)
            {
                covered[row * width + col] = true;
                covered_count += 1;
            }
        }

        // Rotate in place for multi-view frames (absolute headings).
        for k in 0..params.rotations_per_waypoint {
            let yaw =
                k as f64 * std::f64::consts::TAU / params.rotations_per_waypoint as f64;
            poses.push(Pose::planar(origin.x, origin.y, yaw)?);
        }

        if covered_count as f64 / free_count as f64 >= params.coverage_target
            || poses.len() >= params.max_frames
        {
            break;
        }

        // Walk to the nearest uncovered cell (BFS over free cells).
        let Some(path) = path_to_nearest(scene, waypoint, &covered) else {
            break; // nothing reachable left; report best effort
        };
        for (step, pair) in path.windows(2).enumerate() {
            let from = scene.cell_center(pair[0].0, pair[0].1);
            let to = scene.cell_center(pair[1].0, pair[1].1);
            let yaw = snap_to_compass(to.sub(from).angle());
            poses.push(Pose::planar(to.x, to.y, yaw)?);
            if params.burst_interval > 0 && (step + 1) % params.burst_interval == 0 {
                for quarter in 1..4 {
                    let burst_yaw = yaw + quarter as f64 * std::f64::consts::FRAC_PI_2;
                    poses.push(Pose::planar(to.x, to.y, burst_yaw)?);
                }
            }
            if poses.len() >= params.max_frames {
                break;
            }
        }
        waypoint = *path.last().unwrap();
        if poses.len() >= params.max_frames {
            break;
        }
    }
    // The rotation block can overshoot the cap by a few poses; enforce it.
    poses.truncate(params.max_frames);

    // Reported coverage uses the full pose sequence, not just waypoints.
    let coverage = pose_coverage(scene, &poses, params.render.range) as f64 / free_count as f64;

    let frames = poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let mut rng = substream(seed, &format!("tour-frame-{i}"));
            render_observation(scene, pose, &params.render, params.noise_sigma, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TourDemonstration { frames, coverage })
}

/// Snap a heading to the nearest multiple of 90 degrees (diagonal steps
/// round half away from zero). Keeping every tour yaw on the compass means
/// every region records the same four headings.
fn snap_to_compass(yaw: f64) -> f64 {
    (yaw / std::f64::consts::FRAC_PI_2).round() * std::f64::consts::FRAC_PI_2
}

/// Count free cells within sensing range and line of sight of any pose.
fn pose_coverage(scene: &Scene, poses: &[Pose], range: f64) -> usize {
    scene
        .free_cells()
        .par_iter()
        .filter(|&&(row, col)| {
            let cell = scene.cell_center(row, col);
            poses.iter().any(|pose| {
                pose.xy().distance(cell) <= range && line_of_sight(scene, pose.xy(), cell)
            })
        })
        .count()
}

/// BFS over the 8-connected free grid (no corner cutting) to the nearest
/// uncovered cell; returns the whole cell path including both endpoints.
fn path_to_nearest(
    scene: &Scene,
    start: (usize, usize),
    covered: &[bool],
) -> Option<Vec<(usize, usize)>> {
    let (width, height) = scene.grid_size();
    let mut parents: Vec<Option<usize>> = vec![None; width * height];
    let mut seen = vec![false; width * height];
    let mut queue = std::collections::VecDeque::new();
    let start_idx = start.0 * width + start.1;
    seen[start_idx] = true;
    queue.push_back(start_idx);

    let mut found = None;
    'bfs: while let Some(idx) = queue.pop_front() {
        let (row, col) = (idx / width, idx % width);
        if !covered[idx] && idx != start_idx {
            found = Some(idx);
            break 'bfs;
        }
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let nr = row as i64 + dr;
                let nc = col as i64 + dc;
                if nr < 0 || nc < 0 || nr >= height as i64 || nc >= width as i64 {
                    continue;
                }
                let (nr, nc) = (nr as usize, nc as usize);
                if scene.is_blocked_cell(nr, nc) {
                    continue;
                }
                if dr != 0
                    && dc != 0
                    && (scene.is_blocked_cell(row, nc) || scene.is_blocked_cell(nr, col))
                {
                    continue;
                }
                let nidx = nr * width + nc;
                if !seen[nidx] {
                    seen[nidx] = true;
                    parents[nidx] = Some(idx);
                    queue.push_back(nidx);
                }
            }
        }
    }

    let mut idx = found?;
    let mut path = vec![(idx / width, idx % width)];
    while idx != start_idx {
        idx = parents[idx]?;
        path.push((idx / width, idx % width));
    }
    path.reverse();
    Some(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::{generate_scene, SceneParams};

    fn default_tour(seed: u64) -> (Scene, TourDemonstration) {
        let scene = generate_scene(&SceneParams {
            seed,
            ..SceneParams::default()
        })
        .unwrap();
        let tour = generate_tour(&scene, &TourParams::default(), seed).unwrap();
        (scene, tour)
    }

    #[test]
    fn reaches_coverage_target() {
        let (scene, tour) = default_tour(31);
        assert!(
            tour.coverage >= 0.9,
            "coverage {} below target",
            tour.coverage
        );

        // Independent visibility-accumulation oracle over the returned
        // poses must agree with the reported coverage.
        let (width, _) = scene.grid_size();
        let free = scene.free_cells();
        let mut covered = vec![false; scene.occupancy().len()];
        for frame in &tour.frames {
            for &(row, col) in &free {
                if covered[row * width + col] {
                    continue;
                }
                let cell = scene.cell_center(row, col);
                if frame.pose.xy().distance(cell) <= 5.0
                    && line_of_sight(&scene, frame.pose.xy(), cell)
                {
                    covered[row * width + col] = true;
                }
            }
        }
        let oracle = covered.iter().filter(|&&c| c).count() as f64 / free.len() as f64;
        assert!((oracle - tour.coverage).abs() < 1e-12);
    }

    #[test]
    fn steps_bounded_and_collision_free() {
        let (scene, tour) = default_tour(32);
        assert!(tour.frames.len() > 50);
        for pair in tour.frames.windows(2) {
            let step = pair[0].pose.xy().distance(pair[1].pose.xy());
            assert!(step <= 0.25 + 1e-9, "step {step} exceeds limit");
        }
        for frame in &tour.frames {
            assert!(scene.is_free(frame.pose.xy()));
        }
    }

    #[test]
    fn tour_is_deterministic() {
        let scene = generate_scene(&SceneParams {
            seed: 33,
            ..SceneParams::default()
        })
        .unwrap();
        let a = generate_tour(&scene, &TourParams::default(), 5).unwrap();
        let b = generate_tour(&scene, &TourParams::default(), 5).unwrap();
        assert_eq!(a.frames.len(), b.frames.len());
        assert_eq!(a.coverage, b.coverage);
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.pose.position, fb.pose.position);
            assert_eq!(fa.frame_embedding, fb.frame_embedding);
        }
    }

    #[test]
    fn all_yaws_are_compass_headings() {
        let (_, tour) = default_tour(36);
        for frame in &tour.frames {
            let quarter = frame.pose.yaw / std::f64::consts::FRAC_PI_2;
            assert!(
                (quarter - quarter.round()).abs() < 1e-9,
                "yaw {} is off the compass",
                frame.pose.yaw
            );
        }
    }

    #[test]
    fn frame_cap_reports_best_effort() {
        let scene = generate_scene(&SceneParams {
            seed: 34,
            ..SceneParams::default()
        })
        .unwrap();
        let params = TourParams {
            max_frames: 60,
            ..TourParams::default()
        };
        let tour = generate_tour(&scene, &params, 3).unwrap();
        assert!(tour.frames.len() <= 60);
        assert!(tour.coverage > 0.0);
    }

    #[test]
    fn rejects_bad_target() {
        let scene = generate_scene(&SceneParams {
            seed: 35,
            ..SceneParams::default()
        })
        .unwrap();
        let params = TourParams {
            coverage_target: 0.0,
            ..TourParams::default()
        };
        assert!(generate_tour(&scene, &params, 1).is_err());
    }
}
