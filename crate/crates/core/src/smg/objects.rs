//! Object aggregation: merge repeated sightings of the same physical
//! instance into one embedding with a support count.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{cosine_similarity, Embedding};

/// One aggregated object instance stored on a node.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObjectEntry {
    /// Normalized mean of the merged detections.
    pub embedding: Embedding,
    /// How many detections merged into this instance.
    pub support: u32,
}

/// Single-linkage merge of detections within each category.
///
/// Two detections of the same category belong to the same instance when
/// their cosine similarity exceeds `tau`, transitively. Each instance's
/// embedding is the normalized mean of its members; detections are
/// processed in input order, so the result is deterministic and instance
/// order follows first appearance.
pub fn aggregate_objects(
    detections: &[(usize, Embedding)],
    tau: f64,
) -> Result<BTreeMap<usize, Vec<ObjectEntry>>> {
    if !(0.0 < tau && tau < 1.0) {
        return Err(Error::InvalidParameter(format!("tau {tau} outside (0, 1)")));
    }

    // Group detection indices per category, preserving order.
    let mut by_category: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (category, _)) in detections.iter().enumerate() {
        by_category.entry(*category).or_default().push(i);
    }

    let mut table = BTreeMap::new();
    for (category, members) in by_category {
        // Incremental single-linkage: each new detection joins every
        // cluster it links to, merging them.
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for &det in &members {
            let linked: Vec<usize> = clusters
                .iter()
                .enumerate()
                .filter(|(_, cluster)| {
                    cluster.iter().any(|&m| {
                        cosine_similarity(&detections[m].1, &detections[det].1) > tau
                    })
                })
                .map(|(c, _)| c)
                .collect();
            match linked.split_first() {
                None => clusters.push(vec![det]),
                Some((&first, rest)) => {
                    // Merge higher-indexed clusters into the first, then
                    // add the detection; removal from the back keeps
                    // indices valid.
                    for &c in rest.iter().rev() {
                        let absorbed = clusters.remove(c);
                        clusters[first].extend(absorbed);
                    }
                    clusters[first].push(det);
                }
            }
        }

        let entries = clusters
            .into_iter()
            .map(|cluster| {
                let dim = detections[cluster[0]].1.dim();
                let mut mean = vec![0.0f64; dim];
                for &m in &cluster {
                    for (acc, &v) in mean.iter_mut().zip(detections[m].1.values()) {
                        *acc += v;
                    }
                }
                let embedding = Embedding::normalize(&mean)?;
                Ok(ObjectEntry {
                    embedding,
                    support: cluster.len() as u32,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        table.insert(category, entries);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn embed(values: &[f64]) -> Embedding {
        Embedding::normalize(values).unwrap()
    }

    #[test]
    fn near_duplicates_merge() {
        let detections = vec![
            (3, embed(&[1.0, 0.01, 0.0])),
            (3, embed(&[1.0, -0.01, 0.0])),
        ];
        let table = aggregate_objects(&detections, 0.85).unwrap();
        let entries = &table[&3];
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].support, 2);
    }

    #[test]
    fn dissimilar_detections_stay_separate() {
        let detections = vec![(1, embed(&[1.0, 0.1])), (1, embed(&[0.1, 1.0]))];
        let table = aggregate_objects(&detections, 0.85).unwrap();
        assert_eq!(table[&1].len(), 2);
        assert!(table[&1].iter().all(|e| e.support == 1));
    }

    #[test]
    fn categories_never_mix() {
        let e = embed(&[1.0, 0.0]);
        let detections = vec![(0, e.clone()), (1, e)];
        let table = aggregate_objects(&detections, 0.85).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table[&0].len(), 1);
        assert_eq!(table[&1].len(), 1);
    }

    #[test]
    fn empty_input_empty_table() {
        assert!(aggregate_objects(&[], 0.85).unwrap().is_empty());
    }

    #[test]
    fn invalid_tau_rejected() {
        assert!(aggregate_objects(&[], 0.0).is_err());
        assert!(aggregate_objects(&[], 1.0).is_err());
    }

    /// Exhaustive oracle: single-linkage clusters at threshold tau are the
    /// connected components of the similarity graph.
    fn oracle_clusters(
        detections: &[(usize, Embedding)],
        tau: f64,
    ) -> BTreeMap<usize, Vec<Vec<usize>>> {
        let n = detections.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for i in 0..n {
            for j in i + 1..n {
                if detections[i].0 == detections[j].0
                    && cosine_similarity(&detections[i].1, &detections[j].1) > tau
                {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let root = find(&mut parent, i);
            by_root.entry(root).or_default().push(i);
        }
        let mut out: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
        for (root, members) in by_root {
            out.entry(detections[root].0).or_default().push(members);
        }
        out
    }

    #[test]
    fn matches_connected_components_oracle() {
        let mut rng = substream(31, "agg-oracle");
        for case in 0..20 {
            // Six detections over two categories, embeddings drawn around
            // two poles so merges actually occur.
            let poles = [embed(&[1.0, 0.0, 0.0]), embed(&[0.0, 1.0, 0.0])];
            let detections: Vec<(usize, Embedding)> = (0..6)
                .map(|_| {
                    let pole = &poles[rng.gen_range(0..2)];
                    let jitter: Vec<f64> = pole
                        .values()
                        .iter()
                        .map(|&v| v + 0.3 * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    (rng.gen_range(0..2), embed(&jitter))
                })
                .collect();

            let table = aggregate_objects(&detections, 0.85).unwrap();
            let oracle = oracle_clusters(&detections, 0.85);

            for (category, clusters) in &oracle {
                let entries = &table[category];
                assert_eq!(entries.len(), clusters.len(), "case {case}");
                // Compare support multisets and merged embeddings.
                let mut got: Vec<u32> = entries.iter().map(|e| e.support).collect();
                let mut want: Vec<u32> = clusters.iter().map(|c| c.len() as u32).collect();
                got.sort_unstable();
                want.sort_unstable();
                assert_eq!(got, want, "case {case}");
                for cluster in clusters {
                    let mut mean = vec![0.0; detections[0].1.dim()];
                    for &m in cluster {
                        for (acc, &v) in mean.iter_mut().zip(detections[m].1.values()) {
                            *acc += v;
                        }
                    }
                    let expect = embed(&mean);
                    assert!(
                        entries.iter().any(|e| {
                            e.embedding
                                .values()
                                .iter()
                                .zip(expect.values())
                                .all(|(a, b)| (a - b).abs() < 1e-9)
                        }),
                        "case {case}: cluster embedding missing"
                    );
                }
            }
            let empty = Vec::new();
            for category in table.keys() {
                let clusters = oracle.get(category).unwrap_or(&empty);
                assert_eq!(table[category].len(), clusters.len());
            }
        }
    }
}
