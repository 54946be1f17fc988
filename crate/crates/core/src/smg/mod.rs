//! The sparse spatial memory graph: nodes anchored at farthest-point
//! samples of the tour, each carrying keyframes and aggregated object
//! instances, with edges from temporal adjacency.

mod build;
mod fps;
mod io;
mod keyframes;
mod objects;

pub use build::{build_graph, derive_edges};
pub use fps::farthest_point_sample;
pub use io::{load_graph, save_graph};
pub use keyframes::select_keyframes;
pub use objects::{aggregate_objects, ObjectEntry};

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{cosine_similarity, Embedding};
use crate::geometry::Pose;

/// Identifier of a node in the memory graph. Ids are dense: 0..node_count
/// in construction order.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// One stored view: the frame embedding plus where it was taken.
#[derive(Clone, Debug)]
pub struct Keyframe {
    pub embedding: Embedding,
    pub pose: Pose,
    /// Index of the source frame in the tour.
    pub frame_index: usize,
}

/// A graph node: position, selected keyframes, and the per-category object
/// instances aggregated from its region of the tour.
#[derive(Clone, Debug)]
pub struct SpatialNode {
    pub id: NodeId,
    /// Anchor position, meters (3-vector; z is zero in the planar world).
    pub center: [f64; 3],
    pub keyframes: Vec<Keyframe>,
    /// Category index -> merged instances.
    pub objects: BTreeMap<usize, Vec<ObjectEntry>>,
}

impl SpatialNode {
    pub fn center_xy(&self) -> crate::geometry::Vec2 {
        crate::geometry::Vec2::new(self.center[0], self.center[1])
    }
}

/// Construction parameters, kept with the graph so navigation reads the
/// radii it was built with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    /// FPS node spacing d, meters.
    pub node_spacing: f64,
    /// Region radius r, meters: arrival tolerance at a node during
    /// navigation.
    pub region_radius: f64,
    /// Keyframes kept per node (N_f).
    pub keyframe_count: usize,
    /// Stage-1 keyframe pool size (N_f').
    pub keyframe_pool: usize,
    /// Object merge similarity threshold tau.
    pub merge_threshold: f64,
    /// Class-token / patch-mean blend weight for object features. The
    /// synthetic provider emits a single fused embedding per detection, so
    /// this is recorded for provenance rather than applied here.
    pub object_weight: f64,
    /// Embedding dimensionality C.
    pub embed_dim: usize,
}

impl Default for GraphParams {
    fn default() -> GraphParams {
        GraphParams {
            node_spacing: 1.0,
            region_radius: 0.5,
            keyframe_count: 4,
            keyframe_pool: 8,
            merge_threshold: 0.85,
            object_weight: 0.5,
            embed_dim: 64,
        }
    }
}

/// The sparse spatial memory graph.
#[derive(Clone, Debug)]
pub struct MemoryGraph {
    pub params: GraphParams,
    /// Sorted by id; ids are dense so `nodes[i].id == NodeId(i)`.
    pub nodes: Vec<SpatialNode>,
    /// Undirected edges as (low id, high id) pairs.
    pub edges: BTreeSet<(NodeId, NodeId)>,
}

impl MemoryGraph {
    pub fn node(&self, id: NodeId) -> Result<&SpatialNode> {
        self.nodes
            .get(id.0 as usize)
            .filter(|n| n.id == id)
            .ok_or(Error::UnknownNode(id.0))
    }

    pub fn contains_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.edges.contains(&order_pair(a, b))
    }

    /// Neighbor ids of `id`, ascending.
    pub fn neighbors(&self, id: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == id {
                    Some(b)
                } else if b == id {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort();
        out
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![NodeId(0)];
        seen[0] = true;
        let mut count = 1;
        while let Some(id) = stack.pop() {
            for n in self.neighbors(id) {
                let idx = n.0 as usize;
                if !seen[idx] {
                    seen[idx] = true;
                    count += 1;
                    stack.push(n);
                }
            }
        }
        count == self.nodes.len()
    }

    /// Check every structural invariant; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.0 as usize != i {
                return Err(Error::InvariantViolated(format!(
                    "node ids not dense: position {i} holds {}",
                    node.id
                )));
            }
            if node.keyframes.is_empty() || node.keyframes.len() > self.params.keyframe_count {
                return Err(Error::InvariantViolated(format!(
                    "{} has {} keyframes (want 1..={})",
                    node.id,
                    node.keyframes.len(),
                    self.params.keyframe_count
                )));
            }
            for (category, entries) in &node.objects {
                for (a, b) in entries
                    .iter()
                    .enumerate()
                    .flat_map(|(x, ea)| entries.iter().skip(x + 1).map(move |eb| (ea, eb)))
                {
                    // Merged representatives of one category must stay
                    // distinct at the merge threshold.
                    if cosine_similarity(&a.embedding, &b.embedding)
                        > self.params.merge_threshold
                    {
                        return Err(Error::InvariantViolated(format!(
                            "{} category {category} holds two instances above tau",
                            node.id
                        )));
                    }
                }
            }
        }
        for &(a, b) in &self.edges {
            if a == b {
                return Err(Error::InvariantViolated(format!("self-edge at {a}")));
            }
            if a > b {
                return Err(Error::InvariantViolated(format!(
                    "edge ({a}, {b}) not stored low-high"
                )));
            }
            self.node(a)?;
            self.node(b)?;
        }
        // FPS guarantees pairwise spacing >= d (every point was added while
        // its distance to the selected set was still >= d).
        for (i, a) in self.nodes.iter().enumerate() {
            for b in &self.nodes[i + 1..] {
                let d = a
                    .center
                    .iter()
                    .zip(&b.center)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                if d < self.params.node_spacing - 1e-9 {
                    return Err(Error::InvariantViolated(format!(
                        "{} and {} only {d} m apart (d = {})",
                        a.id, b.id, self.params.node_spacing
                    )));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn order_pair(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
