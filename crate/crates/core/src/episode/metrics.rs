//! Success evaluation: SR and SPL over a set of episode results.

use serde::{Deserialize, Serialize};

use crate::episode::EpisodeResult;
use crate::error::{Error, Result};

/// Aggregate navigation quality of a result set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Fraction of episodes that stopped within the success radius.
    pub success_rate: f64,
    /// Success weighted by path length: mean of S * l / max(p, l).
    pub spl: f64,
    pub episodes: usize,
}

/// SR is the mean success flag; SPL averages, per episode, the success
/// flag scaled by geodesic-optimal over executed path length. A success
/// with zero geodesic optimum contributes a full ratio of 1.
pub fn compute_metrics(results: &[EpisodeResult]) -> Result<Metrics> {
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    let mut successes = 0usize;
    let mut ratio_sum = 0.0f64;
    for result in results {
        if !result.path_length.is_finite() || !result.geodesic_optimum.is_finite() {
            return Err(Error::InvalidEpisode(format!(
                "episode {} carries non-finite path lengths",
                result.spec_id
            )));
        }
        if !result.success {
            continue;
        }
        successes += 1;
        ratio_sum += if result.geodesic_optimum == 0.0 {
            1.0
        } else {
            result.geodesic_optimum / result.path_length.max(result.geodesic_optimum)
        };
    }
    let n = results.len() as f64;
    Ok(Metrics {
        success_rate: successes as f64 / n,
        spl: ratio_sum / n,
        episodes: results.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::EpisodeOutcome;

    fn result(success: bool, p: f64, l: f64) -> EpisodeResult {
        EpisodeResult {
            spec_id: 0,
            success,
            steps: 10,
            path_length: p,
            geodesic_optimum: l,
            outcome: if success {
                EpisodeOutcome::Stopped
            } else {
                EpisodeOutcome::StepLimit
            },
            trajectory: Vec::new(),
            events: Vec::new(),
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(compute_metrics(&[]).is_err());
    }

    #[test]
    fn single_failure_scores_zero() {
        let m = compute_metrics(&[result(false, 5.0, 4.0)]).unwrap();
        assert_eq!(m.success_rate, 0.0);
        assert_eq!(m.spl, 0.0);
    }

    #[test]
    fn perfect_path_scores_one() {
        let m = compute_metrics(&[result(true, 4.0, 4.0)]).unwrap();
        assert_eq!(m.success_rate, 1.0);
        assert_eq!(m.spl, 1.0);
    }

    #[test]
    fn double_length_path_scores_half() {
        let m = compute_metrics(&[result(true, 8.0, 4.0)]).unwrap();
        assert_eq!(m.spl, 0.5);
    }

    #[test]
    fn degenerate_zero_geodesic_success_counts_full() {
        let m = compute_metrics(&[result(true, 0.3, 0.0)]).unwrap();
        assert_eq!(m.spl, 1.0);
    }

    #[test]
    fn hand_computed_fixture_table() {
        // Ten episodes with hand-derived SR and SPL.
        let results = vec![
            result(true, 4.0, 4.0),   // ratio 1
            result(true, 8.0, 4.0),   // 0.5
            result(true, 5.0, 2.5),   // 0.5
            result(false, 3.0, 3.0),  // 0
            result(true, 0.0, 0.0),   // degenerate success: 1
            result(false, 0.0, 0.0),  // degenerate failure: 0
            result(true, 10.0, 2.0),  // 0.2
            result(true, 2.0, 4.0),   // p < l: max clamps, ratio 1
            result(false, 12.0, 6.0), // 0
            result(true, 6.0, 3.0),   // 0.5
        ];
        let m = compute_metrics(&results).unwrap();
        assert_eq!(m.success_rate, 0.7);
        let expected = (1.0 + 0.5 + 0.5 + 1.0 + 0.2 + 1.0 + 0.5) / 10.0;
        assert!((m.spl - expected).abs() < 1e-12, "spl {}", m.spl);
    }

    #[test]
    fn spl_never_exceeds_sr() {
        // Random-ish fixture sweep: each episode ratio is at most its
        // success flag, so the aggregate obeys SPL <= SR.
        let mut results = Vec::new();
        let mut state = 0x2545F4914F6CDD1Du64;
        for i in 0..200 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let success = state >> 63 == 1;
            let p = 1.0 + (state >> 32 & 0xff) as f64 / 16.0;
            let l = 0.5 + (state >> 16 & 0xff) as f64 / 32.0;
            let mut r = result(success, p, l);
            r.spec_id = i;
            results.push(r);
        }
        let m = compute_metrics(&results).unwrap();
        assert!(m.spl <= m.success_rate + 1e-12);
    }

    #[test]
    fn non_finite_lengths_are_rejected() {
        assert!(compute_metrics(&[result(true, f64::NAN, 1.0)]).is_err());
        assert!(compute_metrics(&[result(false, 1.0, f64::INFINITY)]).is_err());
    }
}
