use proptest::prelude::*;
use sdrm_core::eval::{ndcg_at_k, recall_at_k, recommend_topk};

/// Rank every unmasked item by a full stable sort, then count.
fn reference(scores: &[f64], mask: &[u32], relevant: &[u32], k: usize) -> (f64, f64) {
    let mut items: Vec<usize> = (0..scores.len()).filter(|&i| !mask.contains(&(i as u32))).collect();
    items.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    items.truncate(k);
    let gains: Vec<f64> = items.iter().map(|&i| f64::from(u8::from(relevant.contains(&(i as u32))))).collect();
    let dcg: f64 = gains.iter().enumerate().map(|(r, g)| g / (r as f64 + 2.0).log2()).sum();
    let idcg: f64 = (0..relevant.len().min(k)).map(|r| 1.0 / (r as f64 + 2.0).log2()).sum();
    (gains.iter().sum::<f64>() / relevant.len() as f64, dcg / idcg)
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u32>, Vec<u32>, usize)> {
    (2usize..50).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..6, n).prop_map(|v| v.into_iter().map(|x| x as f64 * 0.5).collect()),
            prop::collection::vec(0u8..5, n),
            prop::sample::select(vec![1usize, 3, 5, 10]),
        )
            .prop_filter_map("needs a relevant item", |(scores, role, k)| {
                let mask: Vec<u32> = (0..role.len() as u32).filter(|&i| role[i as usize] == 0).collect();
                let relevant: Vec<u32> = (0..role.len() as u32).filter(|&i| role[i as usize] == 1).collect();
                (!relevant.is_empty()).then_some((scores, mask, relevant, k))
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_reference((scores, mask, relevant, k) in instance()) {
        let ranked = recommend_topk(&scores, k, &mask);
        let (recall, ndcg) = reference(&scores, &mask, &relevant, k);
        prop_assert!((recall_at_k(&ranked, &relevant, k).unwrap() - recall).abs() <= 1e-12);
        prop_assert!((ndcg_at_k(&ranked, &relevant, k).unwrap() - ndcg).abs() <= 1e-12);
    }

    #[test]
    fn metrics_are_bounded((scores, mask, relevant, k) in instance()) {
        let ranked = recommend_topk(&scores, k, &mask);
        prop_assert!(ranked.len() <= k);
        prop_assert!(ranked.iter().all(|i| !mask.contains(i)));
        let r = recall_at_k(&ranked, &relevant, k).unwrap();
        let n = ndcg_at_k(&ranked, &relevant, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
    }
}
