//! Geodesic shortest-path distances on the free-cell grid, used as the SPL
//! denominator and for episode feasibility checks.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::Result;
use crate::geometry::Vec2;
use crate::simworld::Scene;

/// Exact step counts along a grid path: straight moves and diagonal moves.
/// Keeping the counts (rather than an accumulated float) makes path costs
/// order-independent and comparisons exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct StepCount {
    straight: u32,
    diagonal: u32,
}

impl StepCount {
    const ZERO: StepCount = StepCount {
        straight: 0,
        diagonal: 0,
    };

    fn value(self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * std::f64::consts::SQRT_2
    }
}

#[derive(PartialEq)]
struct QueueEntry {
    cost: f64,
    cell: usize,
    steps: StepCount,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap by cost, ties broken by lower cell index; costs are
        // finite sums of {1, sqrt(2)} so partial_cmp never fails.
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap()
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest obstacle-avoiding distance between two free points, meters.
///
/// Paths run on the 8-connected free-cell grid; straight moves cost the
/// grid resolution, diagonal moves sqrt(2) x resolution, and diagonal
/// moves may not cut corners (both orthogonal neighbors must be free).
/// Returns infinity when the points sit in different components.
pub fn geodesic_distance(scene: &Scene, a: Vec2, b: Vec2) -> Result<f64> {
    let start = scene.require_free(a)?;
    let goal = scene.require_free(b)?;
    Ok(match cell_distance(scene, start, goal) {
        Some(steps) => steps.value() * scene.resolution(),
        None => f64::INFINITY,
    })
}

/// Dijkstra from `start`, stopping early once `goal` is settled.
fn cell_distance(scene: &Scene, start: (usize, usize), goal: (usize, usize)) -> Option<StepCount> {
    let (width, height) = scene.grid_size();
    let n = width * height;
    let mut best: Vec<Option<StepCount>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();

    let start_idx = start.0 * width + start.1;
    let goal_idx = goal.0 * width + goal.1;
    best[start_idx] = Some(StepCount::ZERO);
    heap.push(QueueEntry {
        cost: 0.0,
        cell: start_idx,
        steps: StepCount::ZERO,
    });

    while let Some(QueueEntry { cell, steps, .. }) = heap.pop() {
        if settled[cell] {
            continue;
        }
        settled[cell] = true;
        if cell == goal_idx {
            return Some(steps);
        }
        let (row, col) = (cell / width, cell % width);
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
                let diagonal = dr != 0 && dc != 0;
                // No corner cutting: a diagonal move needs both orthogonal
                // neighbors free.
                if diagonal
                    && (scene.is_blocked_cell(row, nc) || scene.is_blocked_cell(nr, col))
                {
                    continue;
                }
                let next = StepCount {
                    straight: steps.straight + !diagonal as u32,
                    diagonal: steps.diagonal + diagonal as u32,
                };
                let neighbor = nr * width + nc;
                if best[neighbor].map_or(true, |b| next.value() < b.value()) {
                    best[neighbor] = Some(next);
                    heap.push(QueueEntry {
                        cost: next.value(),
                        cell: neighbor,
                        steps: next,
                    });
                }
            }
        }
    }
    best[goal_idx]
}
