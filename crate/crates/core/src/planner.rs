//! Node-level path planning: A* over the memory graph, with a soft
//! blocked-edge set for replanning around obstructions discovered at
//! execution time.
//!
//! Edge costs and the heuristic are both Euclidean distances between node
//! centers, so the heuristic is admissible (triangle inequality) and path
//! costs are physical lengths, which keeps them meaningful for efficiency
//! metrics.

use std::collections::{BTreeMap, BinaryHeap};
use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::Embedding;
use crate::smg::{MemoryGraph, NodeId};

/// Terminal pseudo-waypoint appended after the last graph node: the
/// image-goal stage. It carries no graph position — the local policy
/// drives toward the goal observation itself once the cursor passes the
/// final node.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GoalWaypoint {
    /// Embedding of the goal observation the terminal stage matches
    /// against. The planner cannot know it; the episode loop attaches it
    /// right after planning.
    pub goal_embedding: Option<Embedding>,
    /// True goal position, for the evaluator's scoring only — never read
    /// by planning or control.
    pub eval_position: Option<[f64; 2]>,
}

/// A planned route: graph nodes from the localized start to the localized
/// goal node, then the terminal image-goal stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodePath {
    /// Waypoint nodes, start through localized goal, consecutive pairs
    /// joined by graph edges.
    pub node_ids: Vec<NodeId>,
    /// The appended terminal stage.
    pub goal_waypoint: GoalWaypoint,
    /// Index of the current target: `node_ids[cursor]` while it is in
    /// range, the terminal image-goal stage once `cursor == node_ids.len()`.
    pub cursor: usize,
}

impl NodePath {
    /// The node currently steered toward, or `None` in the terminal
    /// image-goal stage.
    pub fn target(&self) -> Option<NodeId> {
        self.node_ids.get(self.cursor).copied()
    }

    /// True once every graph waypoint is consumed and the local policy
    /// should match against the goal observation directly.
    pub fn at_goal_stage(&self) -> bool {
        self.cursor >= self.node_ids.len()
    }

    /// Move the cursor past the current target. Saturates at the terminal
    /// stage.
    pub fn advance(&mut self) {
        if self.cursor < self.node_ids.len() {
            self.cursor += 1;
        }
    }

    /// Total length of the graph portion, meters: sum of center-to-center
    /// segment lengths.
    pub fn graph_length(&self, graph: &MemoryGraph) -> Result<f64> {
        let mut total = 0.0;
        for pair in self.node_ids.windows(2) {
            let a = graph.node(pair[0])?;
            let b = graph.node(pair[1])?;
            total += a.center_xy().distance(b.center_xy());
        }
        Ok(total)
    }
}

/// Outcome of planning: either a route, or proof that no route exists
/// under the current blocked set — the caller's cue to clear blocked
/// edges and fall back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PlanOutcome {
    Path(NodePath),
    Unreachable,
}

impl PlanOutcome {
    pub fn into_path(self) -> Option<NodePath> {
        match self {
            PlanOutcome::Path(path) => Some(path),
            PlanOutcome::Unreachable => None,
        }
    }
}

/// Soft blocked-edge set. Entries carry an expiry step so transient
/// obstructions do not permanently amputate the graph, and the whole set
/// clears when a replanned segment is traversed successfully.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockedEdges {
    /// Edge (low id, high id) -> step at which the entry expires.
    entries: BTreeMap<(NodeId, NodeId), u64>,
}

impl BlockedEdges {
    pub fn new() -> BlockedEdges {
        BlockedEdges::default()
    }

    /// Block `a`–`b` until `now_step + ttl_steps`. Re-marking an edge
    /// extends its expiry.
    pub fn mark(&mut self, a: NodeId, b: NodeId, now_step: u64, ttl_steps: u64) {
        let expiry = now_step.saturating_add(ttl_steps);
        let entry = self.entries.entry(ordered(a, b)).or_insert(expiry);
        *entry = (*entry).max(expiry);
    }

    /// Drop entries whose expiry step has arrived.
    pub fn expire(&mut self, now_step: u64) {
        self.entries.retain(|_, &mut expiry| expiry > now_step);
    }

    /// Forget everything — called after a successful traversal of a
    /// replanned segment.
    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn contains(&self, a: NodeId, b: NodeId) -> bool {
        self.entries.contains_key(&ordered(a, b))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

fn ordered(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// A* from `start` to `goal` over the graph's edges, excluding blocked
/// ones. Frontier ties break toward the lower node id, so plans are
/// deterministic. Returns [`PlanOutcome::Unreachable`] when the blocked
/// set (or the graph itself) disconnects the goal.
pub fn plan_path(
    graph: &MemoryGraph,
    start: NodeId,
    goal: NodeId,
    blocked: &BlockedEdges,
) -> Result<PlanOutcome> {
    let goal_center = graph.node(goal)?.center_xy();
    graph.node(start)?; // existence check

    // g-cost per reached node, parent links for reconstruction.
    let mut best: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut parent: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    // Min-heap on (f = g + h, node id): equal f pops the lower id first.
    let mut frontier: BinaryHeap<Reverse<(OrderedCost, NodeId)>> = BinaryHeap::new();

    best.insert(start, 0.0);
    let h0 = graph.node(start)?.center_xy().distance(goal_center);
    frontier.push(Reverse((OrderedCost(h0), start)));

    while let Some(Reverse((OrderedCost(f), node))) = frontier.pop() {
        let g = best[&node];
        let h = graph.node(node)?.center_xy().distance(goal_center);
        if f > g + h + 1e-12 {
            continue; // stale frontier entry
        }
        if node == goal {
            let mut ids = vec![goal];
            let mut cur = goal;
            while let Some(&p) = parent.get(&cur) {
                ids.push(p);
                cur = p;
            }
            ids.reverse();
            return Ok(PlanOutcome::Path(NodePath {
                node_ids: ids,
                goal_waypoint: GoalWaypoint::default(),
                cursor: 0,
            }));
        }
        let center = graph.node(node)?.center_xy();
        for neighbor in graph.neighbors(node) {
            if blocked.contains(node, neighbor) {
                continue;
            }
            let step = center.distance(graph.node(neighbor)?.center_xy());
            let candidate = g + step;
            if best.get(&neighbor).is_none_or(|&known| candidate < known) {
                best.insert(neighbor, candidate);
                parent.insert(neighbor, node);
                let h = graph.node(neighbor)?.center_xy().distance(goal_center);
                frontier.push(Reverse((OrderedCost(candidate + h), neighbor)));
            }
        }
    }
    Ok(PlanOutcome::Unreachable)
}

/// Total-order wrapper so finite path costs can key the frontier heap.
#[derive(Clone, Copy, Debug, PartialEq)]
struct OrderedCost(f64);

impl Eq for OrderedCost {}

impl PartialOrd for OrderedCost {
    fn partial_cmp(&self, other: &OrderedCost) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedCost {
    fn cmp(&self, other: &OrderedCost) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
