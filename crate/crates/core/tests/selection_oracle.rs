//! Salient-frame selection and relevance strategies against brute-force references.

use lgdn::sfp::{relevance, select_salient, RelevanceStrategy};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every size-k subset, keep the one with the largest score sum, ties broken by the
/// lexicographically smallest index list.
fn brute_force(row: &[f64], k: usize) -> Vec<usize> {
    let n = row.len();
    let k = k.min(n);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let idx: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        // Sum over scores sorted descending, so equal multisets compare equal exactly.
        let mut s: Vec<f64> = idx.iter().map(|&i| row[i]).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let total = s.iter().sum::<f64>();
        let better = match &best {
            None => true,
            Some((bt, bi)) => total > *bt || (total == *bt && idx < *bi),
        };
        if better {
            best = Some((total, idx));
        }
    }
    best.map(|b| b.1).unwrap_or_default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn top_k_matches_brute_force(row in prop::collection::vec(prop_oneof![(-3i32..3).prop_map(f64::from), -2.0f64..2.0], 1..12), k in 0usize..14) {
        let got = select_salient(&row, k);
        prop_assert_eq!(got.indices.len(), k.min(row.len()));
        prop_assert!(got.indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(&got.source_scores, &row);
        prop_assert_eq!(got.indices, brute_force(&row, k));
    }
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[test]
fn collaborative_is_momentum_plus_cross() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..10_000 {
        let d = rng.random_range(1..=64);
        let (e, eh, l, lh) = (unit(&mut rng, d), unit(&mut rng, d), unit(&mut rng, d), unit(&mut rng, d));
        let s = |st: RelevanceStrategy| st.score(&e, &eh, &l, &lh);
        let diff = s(RelevanceStrategy::Collaborative) - (s(RelevanceStrategy::Momentum) + s(RelevanceStrategy::CrossMom));
        assert!(diff.abs() <= 1e-12, "d={d} diff={diff:e}");
    }
}

#[test]
fn identical_twins_collapse_to_twice_the_plain_dot() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let d = rng.random_range(1..=64);
        let (e, l) = (unit(&mut rng, d), unit(&mut rng, d));
        let s = |st: RelevanceStrategy| st.score(&e, &e, &l, &l);
        let simdot = s(RelevanceStrategy::SimDot);
        assert!((s(RelevanceStrategy::Momentum) - 2.0 * simdot).abs() <= 1e-12);
        assert!((s(RelevanceStrategy::CrossMom) - 2.0 * simdot).abs() <= 1e-12);
        assert!((s(RelevanceStrategy::Momentum) - s(RelevanceStrategy::CrossMom)).abs() <= 1e-12);
    }
}

#[test]
fn relevance_row_scores_each_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames: Vec<Vec<f64>> = (0..5).map(|_| unit(&mut rng, 6)).collect();
    let hats: Vec<Vec<f64>> = (0..5).map(|_| unit(&mut rng, 6)).collect();
    let (l, lh) = (unit(&mut rng, 6), unit(&mut rng, 6));
    for st in RelevanceStrategy::ALL {
        let row = relevance(st, &frames, &hats, &l, &lh).unwrap();
        for j in 0..5 {
            assert_eq!(row[j], st.score(&frames[j], &hats[j], &l, &lh));
        }
    }
    assert!(relevance(RelevanceStrategy::SimDot, &frames, &hats[..4], &l, &lh).is_err());
    assert!(relevance(RelevanceStrategy::SimDot, &frames, &hats, &l[..5], &lh).is_err());
}
