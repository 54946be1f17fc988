//! Two-stage keyframe selection: diversity in appearance, then diversity
//! in viewing direction.

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::features::{cosine_similarity, Embedding};
use crate::geometry::circular_variance;

/// Select up to `keep` keyframes from a node's region.
///
/// Stage 1 greedily builds a pool of `pool_size` frames with low mutual
/// similarity: the seed is the frame with the lowest mean similarity to
/// all others, and each subsequent pick minimizes the maximum similarity
/// to the pool. Stage 2 exhaustively picks the `keep`-subset of the pool
/// with the largest circular variance of yaw. Both stages break ties
/// toward lower frame indices; both clamp to the frames available.
/// Returns indices into the input slice, ascending.
pub fn select_keyframes(
    embeddings: &[Embedding],
    yaws: &[f64],
    pool_size: usize,
    keep: usize,
) -> Result<Vec<usize>> {
    if embeddings.is_empty() {
        return Err(Error::InvalidParameter(
            "keyframe selection over an empty region".into(),
        ));
    }
    assert_eq!(embeddings.len(), yaws.len(), "embeddings/yaws length mismatch");
    let n = embeddings.len();
    let pool_size = pool_size.min(n).max(1);
    let keep = keep.min(pool_size).max(1);

    let pool = if pool_size == n {
        (0..n).collect::<Vec<_>>()
    } else {
        let mut pool = Vec::with_capacity(pool_size);
        // Seed: lowest mean similarity to all others, ties to lower index.
        let seed = (0..n)
            .min_by(|&a, &b| {
                let mean = |i: usize| {
                    (0..n)
                        .filter(|&j| j != i)
                        .map(|j| cosine_similarity(&embeddings[i], &embeddings[j]))
                        .sum::<f64>()
                };
                mean(a).partial_cmp(&mean(b)).unwrap().then(a.cmp(&b))
            })
            .unwrap();
        pool.push(seed);
        while pool.len() < pool_size {
            let next = (0..n)
                .filter(|i| !pool.contains(i))
                .min_by(|&a, &b| {
                    let worst = |i: usize| {
                        pool.iter()
                            .map(|&p| cosine_similarity(&embeddings[i], &embeddings[p]))
                            .fold(f64::NEG_INFINITY, f64::max)
                    };
                    worst(a).partial_cmp(&worst(b)).unwrap().then(a.cmp(&b))
                })
                .unwrap();
            pool.push(next);
        }
        pool.sort_unstable();
        pool
    };

    // Stage 2: exhaustive over the (small) pool; combinations of a sorted
    // list arrive in lexicographic order, so keeping strict improvements
    // lands on the lexicographically smallest maximizer.
    let mut best: Option<(f64, Vec<usize>)> = None;
    for subset in pool.iter().copied().combinations(keep) {
        let variance = circular_variance(&subset.iter().map(|&i| yaws[i]).collect::<Vec<_>>());
        if best.as_ref().map_or(true, |(bv, _)| variance > *bv) {
            best = Some((variance, subset));
        }
    }
    Ok(best.unwrap().1)
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
    fn single_frame_clamps() {
        let selected = select_keyframes(&[embed(&[1.0, 0.0])], &[0.3], 8, 4).unwrap();
        assert_eq!(selected, vec![0]);
    }

    #[test]
    fn empty_region_is_error() {
        assert!(select_keyframes(&[], &[], 8, 4).is_err());
    }

    #[test]
    fn identical_embeddings_pick_opposed_yaws() {
        // Four identical embeddings, yaws at the compass points, keep 2:
        // circular variance is maximized by a 180-degree pair, and the
        // lexicographic tie-break lands on {0deg, 180deg} = indices {0, 2}.
        let e = embed(&[1.0, 1.0, 0.0]);
        let embeddings = vec![e.clone(), e.clone(), e.clone(), e];
        let yaws = [0.0, 90f64, 180.0, 270.0].map(f64::to_radians);
        let selected = select_keyframes(&embeddings, &yaws, 4, 2).unwrap();
        assert_eq!(selected, vec![0, 2]);
        let gap = crate::geometry::angle_diff(yaws[selected[0]], yaws[selected[1]]).abs();
        assert!((gap - std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn three_clusters_yield_one_frame_each() {
        // Three tight clusters of near-duplicates; a pool of 3 must take
        // one frame from each, matching the brute-force min-max-similarity
        // subset.
        let mut rng = substream(23, "kf-clusters");
        let anchors = [
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ];
        let mut embeddings = Vec::new();
        let mut cluster_of = Vec::new();
        for (c, anchor) in anchors.iter().enumerate() {
            for _ in 0..3 {
                let jittered: Vec<f64> = anchor
                    .iter()
                    .map(|&v| v + 0.02 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                embeddings.push(embed(&jittered));
                cluster_of.push(c);
            }
        }
        let yaws = vec![0.0; embeddings.len()];
        let selected = select_keyframes(&embeddings, &yaws, 3, 3).unwrap();
        let mut clusters: Vec<usize> = selected.iter().map(|&i| cluster_of[i]).collect();
        clusters.sort_unstable();
        assert_eq!(clusters, vec![0, 1, 2]);

        // Brute-force oracle: the 3-subset minimizing max pairwise
        // similarity also spans all clusters, and the greedy pool achieves
        // the same max-similarity value.
        let max_sim = |set: &[usize]| {
            set.iter()
                .tuple_combinations()
                .map(|(&a, &b)| cosine_similarity(&embeddings[a], &embeddings[b]))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let oracle = (0..embeddings.len())
            .combinations(3)
            .min_by(|a, b| max_sim(a).partial_cmp(&max_sim(b)).unwrap())
            .unwrap();
        let mut oracle_clusters: Vec<usize> = oracle.iter().map(|&i| cluster_of[i]).collect();
        oracle_clusters.sort_unstable();
        assert_eq!(oracle_clusters, vec![0, 1, 2]);
        assert!((max_sim(&selected) - max_sim(&oracle)).abs() < 0.05);
    }

    #[test]
    fn selection_deterministic_and_sorted() {
        let mut rng = substream(29, "kf-det");
        let embeddings: Vec<Embedding> = (0..10)
            .map(|_| {
                let v: Vec<f64> = (0..6).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                embed(&v)
            })
            .collect();
        let yaws: Vec<f64> = (0..10).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let a = select_keyframes(&embeddings, &yaws, 8, 4).unwrap();
        let b = select_keyframes(&embeddings, &yaws, 8, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a.len(), 4);
    }
}
