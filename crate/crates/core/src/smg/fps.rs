//! Farthest-point sampling of tour poses, the node-placement step.

use crate::geometry::Pose;

/// Greedy farthest-point sampling over pose positions.
///
/// Seeds with the first pose, then repeatedly adds the pose farthest from
/// the selected set (ties to the lower index) until that farthest distance
/// drops below `min_spacing`. Every returned pair of positions is then at
/// least `min_spacing` apart, which makes the spacing parameter the
/// literal sparsity knob.
pub fn farthest_point_sample(poses: &[Pose], min_spacing: f64) -> Vec<usize> {
    if poses.is_empty() {
        return Vec::new();
    }
    let mut selected = vec![0usize];
    // Distance from each pose to the nearest selected pose.
    let mut min_dist: Vec<f64> = poses.iter().map(|p| p.distance(&poses[0])).collect();

    loop {
        let (best, &best_dist) = match min_dist
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| a.partial_cmp(b).unwrap().then(j.cmp(i)))
        {
            Some(found) => found,
            None => break,
        };
        if best_dist < min_spacing {
            break;
        }
        selected.push(best);
        for (dist, pose) in min_dist.iter_mut().zip(poses) {
            let d = pose.distance(&poses[best]);
            if d < *dist {
                *dist = d;
            }
        }
    }
    selected
}
