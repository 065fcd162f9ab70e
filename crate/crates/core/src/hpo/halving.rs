use rayon::prelude::*;

use crate::error::{Error, Result};

/// Budget fractions of the three rungs.
pub const DEFAULT_RUNGS: [f64; 3] = [0.1, 0.33, 1.0];

/// Per-candidate outcome of one successive-halving bracket.
#[derive(Clone, Debug, PartialEq)]
pub struct HalvingOutcome {
    /// Scores at each rung the candidate reached.
    pub rung_scores: Vec<f64>,
    /// Whether it was kept after the last rung it ran.
    pub survived: bool,
}

/// Evaluate every candidate at rung 0, keep the best `⌈keep·n⌉` (at least
/// one), evaluate those at rung 1, and so on. Pruned candidates never run
/// at later rungs. Ties keep the lower index. Failed evaluations score −∞.
pub fn successive_halving<T, F>(candidates: &[T], rungs: &[f64], keep_fraction: f64, eval: F) -> Result<Vec<HalvingOutcome>>
where
    T: Sync,
    F: Fn(usize, &T, f64) -> f64 + Sync,
{
    if candidates.is_empty() {
        return Err(Error::Usage("successive halving needs at least one trial".into()));
    }
    if rungs.is_empty() || rungs.windows(2).any(|w| w[1] <= w[0]) || rungs[0] <= 0.0 {
        return Err(Error::config("rung budgets must be positive and increasing"));
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::config("keep fraction must lie in (0, 1]"));
    }
    let mut outcomes: Vec<HalvingOutcome> = candidates
        .iter()
        .map(|_| HalvingOutcome {
            rung_scores: Vec::new(),
            survived: false,
        })
        .collect();
    let mut alive: Vec<usize> = (0..candidates.len()).collect();
    for &budget in rungs {
        let scores: Vec<f64> = alive
            .par_iter()
            .map(|&i| {
                let s = eval(i, &candidates[i], budget);
                if s.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    s
                }
            })
            .collect();
        for (&i, &s) in alive.iter().zip(&scores) {
            outcomes[i].rung_scores.push(s);
        }
        let keep = ((keep_fraction * alive.len() as f64).ceil() as usize).max(1);
        let mut ranked: Vec<(usize, f64)> = alive.iter().copied().zip(scores).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        alive = ranked[..keep].iter().map(|r| r.0).collect();
        alive.sort_unstable();
    }
    for i in alive {
        outcomes[i].survived = true;
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn eight_four_two_one() {
        let scores: Vec<f64> = vec![0.3, 0.9, 0.1, 0.5, 0.7, 0.2, 0.8, 0.4];
        let calls = AtomicUsize::new(0);
        let out = successive_halving(&scores, &DEFAULT_RUNGS, 0.5, |_, s, _| {
            calls.fetch_add(1, Ordering::SeqCst);
            *s
        })
        .unwrap();
        let reached: Vec<usize> = out.iter().map(|o| o.rung_scores.len()).collect();
        assert_eq!(reached.iter().filter(|&&r| r >= 1).count(), 8);
        assert_eq!(reached.iter().filter(|&&r| r >= 2).count(), 4);
        assert_eq!(reached.iter().filter(|&&r| r >= 3).count(), 2);
        assert_eq!(out.iter().filter(|o| o.survived).count(), 1);
        assert!(out[1].survived);
        assert_eq!(calls.load(Ordering::SeqCst), 14);
    }

    #[test]
    fn pruned_never_run_again() {
        let scores = [1.0, 2.0, 3.0, 4.0];
        let out = successive_halving(&scores, &DEFAULT_RUNGS, 0.5, |_, s, budget| {
            assert!(budget == 0.1 || *s >= 3.0, "pruned trial {s} ran at {budget}");
            *s
        })
        .unwrap();
        assert_eq!(out[0].rung_scores.len(), 1);
        assert_eq!(out[3].rung_scores.len(), 3);
    }

    #[test]
    fn monotone_leader_survives() {
        // Interim scores grow with budget but preserve order.
        let values: Vec<f64> = (0..8).map(|i| ((i * 5) % 8) as f64).collect();
        let out = successive_halving(&values, &DEFAULT_RUNGS, 0.5, |_, v, b| v * b).unwrap();
        let best = values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!(out[best].survived);
        assert_eq!(out[best].rung_scores.len(), 3);
    }

    #[test]
    fn failures_and_errors() {
        let out = successive_halving(&[0, 1], &DEFAULT_RUNGS, 0.5, |i, _, _| if i == 1 { f64::NAN } else { 0.2 }).unwrap();
        assert_eq!(out[1].rung_scores, vec![f64::NEG_INFINITY]);
        assert!(out[0].survived);
        let none: [u8; 0] = [];
        assert!(successive_halving(&none, &DEFAULT_RUNGS, 0.5, |_, _, _| 0.0).is_err());
        assert!(successive_halving(&[1], &[0.5, 0.2], 0.5, |_, _, _| 0.0).is_err());
        let single = successive_halving(&[1], &DEFAULT_RUNGS, 0.5, |_, _, _| 0.4).unwrap();
        assert_eq!(single[0].rung_scores.len(), 3);
    }
}
