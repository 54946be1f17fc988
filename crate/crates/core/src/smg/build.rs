//! Graph assembly: node sampling, frame assignment, per-node keyframe and
//! object selection, and edge derivation.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::simworld::TourDemonstration;
use crate::smg::{
    aggregate_objects, farthest_point_sample, order_pair, select_keyframes, GraphParams,
    Keyframe, MemoryGraph, NodeId, SpatialNode,
};

/// Edges from temporal adjacency: one undirected edge for every
/// consecutive frame pair whose node assignments differ.
pub fn derive_edges(assignment: &[NodeId]) -> BTreeSet<(NodeId, NodeId)> {
    assignment
        .windows(2)
        .filter(|pair| pair[0] != pair[1])
        .map(|pair| order_pair(pair[0], pair[1]))
        .collect()
}

/// Build the memory graph from a tour.
///
/// Node centers come from farthest-point sampling of the tour poses at
/// spacing d. Every frame is assigned to its nearest center — also when it
/// lies beyond the region radius r, so sparse graphs never orphan frames.
/// Each node then selects keyframes and aggregates object detections from
/// its assigned frames, and edges record temporal adjacency.
pub fn build_graph(tour: &TourDemonstration, params: &GraphParams) -> Result<MemoryGraph> {
    if tour.frames.is_empty() {
        return Err(Error::InvalidParameter("tour has no frames".into()));
    }
    let poses: Vec<_> = tour.frames.iter().map(|f| f.pose.clone()).collect();
    let centers = farthest_point_sample(&poses, params.node_spacing);

    // Nearest-center assignment, ties to the lower node id.
    let assignment: Vec<NodeId> = poses
        .iter()
        .map(|pose| {
            let best = centers
                .iter()
                .enumerate()
                .min_by(|(i, &a), (j, &b)| {
                    let da = pose.distance(&poses[a]);
                    let db = pose.distance(&poses[b]);
                    da.partial_cmp(&db).unwrap().then(i.cmp(j))
                })
                .unwrap()
                .0;
            NodeId(best as u32)
        })
        .collect();

    let mut nodes = Vec::with_capacity(centers.len());
    for (node_idx, &center_frame) in centers.iter().enumerate() {
        let id = NodeId(node_idx as u32);
        let region: Vec<usize> = (0..tour.frames.len())
            .filter(|&f| assignment[f] == id)
            .collect();
        if region.is_empty() {
            return Err(Error::EmptyRegion(id.0));
        }

        let embeddings: Vec<_> = region
            .iter()
            .map(|&f| tour.frames[f].frame_embedding.clone())
            .collect();
        let yaws: Vec<f64> = region.iter().map(|&f| tour.frames[f].pose.yaw).collect();
        let picked = select_keyframes(&embeddings, &yaws, params.keyframe_pool, params.keyframe_count)?;
        let keyframes = picked
            .iter()
            .map(|&i| {
                let frame_index = region[i];
                Keyframe {
                    embedding: tour.frames[frame_index].frame_embedding.clone(),
                    pose: tour.frames[frame_index].pose.clone(),
                    frame_index,
                }
            })
            .collect();

        let detections: Vec<(usize, _)> = region
            .iter()
            .flat_map(|&f| {
                tour.frames[f]
                    .detections
                    .iter()
                    .map(|d| (d.category, d.embedding.clone()))
            })
            .collect();
        let objects = aggregate_objects(&detections, params.merge_threshold)?;

        nodes.push(SpatialNode {
            id,
            center: poses[center_frame].position,
            keyframes,
            objects,
        });
    }

    Ok(MemoryGraph {
        params: params.clone(),
        nodes,
        edges: derive_edges(&assignment),
    })
}
