//! Two-stage image-to-instance hybrid retrieval: localize a query frame on
//! the graph and score how confident the match is.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{cosine_similarity, Embedding};
use crate::simworld::ObservationFrame;
use crate::smg::{MemoryGraph, NodeId, SpatialNode};

/// Which score components drive ranking; the reduced modes exist for
/// retrieval ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalMode {
    /// Rank by keyframe (global) similarity alone.
    KeyframeOnly,
    /// Rank by object (instance) similarity alone.
    ObjectOnly,
    /// Two-stage: keyframe shortlist, then combined score.
    #[default]
    Hybrid,
}

/// Outcome of localizing one query against the graph.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub node_id: NodeId,
    /// Winner's ranking score, in [0, 1].
    pub combined_score: f64,
    pub keyframe_score: f64,
    pub object_score: f64,
    /// Ranked shortlist as (node, combined score), best first.
    pub candidates: Vec<(NodeId, f64)>,
}

/// Maximum cosine similarity between the query and the node's keyframes,
/// floored at 0 so both score components share the [0, 1] scale.
pub fn keyframe_score(query: &Embedding, node: &SpatialNode) -> f64 {
    node.keyframes
        .iter()
        .map(|kf| cosine_similarity(query, &kf.embedding))
        .fold(0.0, f64::max)
        .clamp(0.0, 1.0)
}

/// Mean, over query detections, of the best same-category instance
/// similarity on the node; a detection whose category the node lacks
/// scores 0, and a query with no detections scores 0.
pub fn object_score(query_detections: &[(usize, Embedding)], node: &SpatialNode) -> f64 {
    if query_detections.is_empty() {
        return 0.0;
    }
    let total: f64 = query_detections
        .iter()
        .map(|(category, embedding)| {
            node.objects
                .get(category)
                .map(|entries| {
                    entries
                        .iter()
                        .map(|e| cosine_similarity(embedding, &e.embedding))
                        .fold(0.0, f64::max)
                        .clamp(0.0, 1.0)
                })
                .unwrap_or(0.0)
        })
        .sum();
    total / query_detections.len() as f64
}

/// Localize an observation frame on the graph.
///
/// Hybrid mode runs the two-stage pipeline: shortlist the top `n_cand`
/// nodes by keyframe score, then rank the shortlist by the combined score
/// (keyframe + object) / 2. The reduced modes rank every node by their
/// single component and report the top `n_cand`. Ties always break toward
/// higher keyframe score, then lower node id.
pub fn localize(
    frame: &ObservationFrame,
    graph: &MemoryGraph,
    n_cand: usize,
    mode: RetrievalMode,
) -> Result<RetrievalResult> {
    let detections: Vec<(usize, Embedding)> = frame
        .detections
        .iter()
        .map(|d| (d.category, d.embedding.clone()))
        .collect();
    localize_query(&frame.frame_embedding, &detections, graph, n_cand, mode)
}

/// Localize a raw query (frame embedding + detections); the building block
/// behind [`localize`], useful when the query is not a rendered frame.
pub fn localize_query(
    query: &Embedding,
    query_detections: &[(usize, Embedding)],
    graph: &MemoryGraph,
    n_cand: usize,
    mode: RetrievalMode,
) -> Result<RetrievalResult> {
    if graph.nodes.is_empty() {
        return Err(Error::EmptyGraph);
    }
    if n_cand == 0 {
        return Err(Error::InvalidParameter("n_cand must be at least 1".into()));
    }

    // Per-node component scores. Object scores are only needed for the
    // shortlist in hybrid mode, but computing the keyframe score for all
    // nodes is unavoidable in every mode.
    let kf_scores: Vec<f64> = graph
        .nodes
        .iter()
        .map(|node| keyframe_score(query, node))
        .collect();

    let shortlist: Vec<usize> = match mode {
        RetrievalMode::Hybrid | RetrievalMode::KeyframeOnly => {
            let mut order: Vec<usize> = (0..graph.nodes.len()).collect();
            order.sort_by(|&a, &b| {
                kf_scores[b]
                    .partial_cmp(&kf_scores[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            order.truncate(n_cand);
            order
        }
        RetrievalMode::ObjectOnly => (0..graph.nodes.len()).collect(),
    };

    let mut ranked: Vec<(usize, f64, f64)> = shortlist
        .into_iter()
        .map(|idx| {
            let obj = object_score(query_detections, &graph.nodes[idx]);
            let combined = match mode {
                RetrievalMode::Hybrid => (kf_scores[idx] + obj) / 2.0,
                RetrievalMode::KeyframeOnly => kf_scores[idx],
                RetrievalMode::ObjectOnly => obj,
            };
            (idx, combined, obj)
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then(kf_scores[b.0].partial_cmp(&kf_scores[a.0]).unwrap())
            .then(a.0.cmp(&b.0))
    });
    ranked.truncate(n_cand);

    let (winner, combined, obj) = ranked[0];
    Ok(RetrievalResult {
        node_id: graph.nodes[winner].id,
        combined_score: combined,
        keyframe_score: kf_scores[winner],
        object_score: obj,
        candidates: ranked
            .iter()
            .map(|&(idx, combined, _)| (graph.nodes[idx].id, combined))
            .collect(),
    })
}

/// Visual confidence that the agent is where the plan says it is: the
/// keyframe score of the current observation against the target node.
pub fn confidence(frame: &ObservationFrame, target: &SpatialNode) -> f64 {
    keyframe_score(&frame.frame_embedding, target)
}
