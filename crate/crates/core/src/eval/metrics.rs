//! Top-k ranking and the Recall@k / NDCG@k metrics.

use std::cmp::Ordering;

/// Top-`k` item indices by descending score, skipping `mask` (sorted).
/// Equal scores rank by ascending item index. Fewer than `k` unmasked items
/// yields all of them.
pub fn recommend_topk(scores: &[f64], k: usize, mask: &[u32]) -> Vec<u32> {
    debug_assert!(mask.windows(2).all(|w| w[0] <= w[1]), "mask must be sorted");
    let mut candidates: Vec<u32> = (0..scores.len() as u32)
        .filter(|i| mask.binary_search(i).is_err())
        .collect();
    let by_rank = |a: &u32, b: &u32| -> Ordering {
        scores[*b as usize]
            .total_cmp(&scores[*a as usize])
            .then_with(|| a.cmp(b))
    };
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k, by_rank);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(by_rank);
    candidates
}

/// `|relevant ∩ top-k| / |relevant|`; `None` for an empty relevant set.
pub fn recall_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|i| relevant.binary_search(i).is_ok())
        .count();
    Some(hits as f64 / relevant.len() as f64)
}

/// Binary-relevance NDCG@k; `None` for an empty relevant set.
pub fn ndcg_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .map(|(pos, _)| discount(pos))
        .sum();
    let ideal: f64 = (0..relevant.len().min(k)).map(discount).sum();
    Some(dcg / ideal)
}

/// `1 / log2(rank + 1)` for zero-based `pos` (rank = pos + 1).
#[inline]
fn discount(pos: usize) -> f64 {
    1.0 / ((pos + 2) as f64).log2()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topk_respects_mask_and_ties() {
        assert_eq!(recommend_topk(&[0.9, 0.9, 0.1], 2, &[]), vec![0, 1]);
        assert_eq!(recommend_topk(&[0.1, 0.5, 0.9, 0.7], 2, &[2]), vec![3, 1]);
        let scores: Vec<f64> = (0..10).map(f64::from).collect();
        let mask: Vec<u32> = (0..7).collect();
        assert_eq!(recommend_topk(&scores, 10, &mask), vec![9, 8, 7]);
    }

    #[test]
    fn recall_examples() {
        // relevant {a,b,c} = {0,1,2}; top list hits 0 and 1.
        let ranked = [0, 5, 1, 6, 7, 8, 9, 10, 11, 12];
        assert_eq!(recall_at_k(&ranked, &[0, 1, 2], 10), Some(2.0 / 3.0));
        assert_eq!(recall_at_k(&[2, 1, 0], &[0, 1, 2], 3), Some(1.0));
        assert_eq!(recall_at_k(&[2, 1, 0], &[], 3), None);
    }

    #[test]
    fn ndcg_examples() {
        // hits at ranks 1 and 3 of k = 3, two relevant items.
        let v = ndcg_at_k(&[10, 20, 30], &[10, 30], 3).unwrap();
        let idcg = 1.0 + 1.0 / 3f64.log2();
        assert!((v - 1.5 / idcg).abs() < 1e-12);
        assert!((v - 0.919_720_79).abs() < 1e-6);
        assert_eq!(ndcg_at_k(&[1, 2], &[1, 2], 2), Some(1.0));
        assert_eq!(ndcg_at_k(&[3, 4], &[1, 2], 2), Some(0.0));
        assert_eq!(ndcg_at_k(&[3, 4], &[], 2), None);
    }
}
