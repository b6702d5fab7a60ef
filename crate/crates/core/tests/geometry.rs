mod common;

use common::{dist2, oracle_fps, oracle_knn, oracle_sweep};
use pag_core::geometry::{
    atrous_select, bounded_knn, dropout_indices, farthest_point_sample, idw_from_distances, idw_weights, knn,
    Queries, RadiusBounds, RowView, Space,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..3 * n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

#[test]
fn equidistant_tie_goes_to_lower_index() {
    let src = vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0];
    let q = vec![0.0, 0.0, 0.0];
    let g = knn(
        RowView::new(&src, 3).unwrap(),
        Queries::External(RowView::new(&q, 3).unwrap()),
        1,
        Space::Metric,
    )
    .unwrap();
    assert_eq!(g.row(0), &[0]);
}

#[test]
fn knn_rejects_oversized_k_and_empty_source() {
    let src = vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let view = RowView::new(&src, 3).unwrap();
    assert!(knn(view, Queries::Centroids(&[0, 1]), 2, Space::Metric).is_err());
    let empty: Vec<f64> = vec![];
    let q = vec![0.0; 3];
    assert!(knn(
        RowView::new(&empty, 3).unwrap(),
        Queries::External(RowView::new(&q, 3).unwrap()),
        1,
        Space::Metric
    )
    .is_err());
}

#[test]
fn random_64_point_cloud_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let rows = random_rows(&mut rng, 64);
    let all: Vec<usize> = (0..64).collect();
    let g = knn(RowView::new(&rows, 3).unwrap(), Queries::Centroids(&all), 10, Space::Metric).unwrap();
    for q in 0..64 {
        assert_eq!(g.row(q), oracle_knn(&rows, 3, q, 10).as_slice());
    }
}

#[test]
fn exhaustive_oracle_suite() {
    let (bad, total) = oracle_sweep(200, 7);
    assert_eq!(bad, 0, "{bad} of {total} rows differ from the oracles");
}

#[test]
fn atrous_examples() {
    // One centroid at the origin with neighbours at distance 1..=10 on a line.
    let rows: Vec<f64> = (0..=10).flat_map(|i| [i as f64, 0.0, 0.0]).collect();
    let view = RowView::new(&rows, 3).unwrap();
    let g = knn(view, Queries::Centroids(&[0]), 10, Space::Metric).unwrap();
    assert_eq!(atrous_select(&g, 5, 2).unwrap().row(0), &[2, 4, 6, 8, 10]);
    assert_eq!(atrous_select(&g, 5, 1).unwrap().row(0), &[1, 2, 3, 4, 5]);
    let short = knn(view, Queries::Centroids(&[0]), 6, Space::Metric).unwrap();
    assert_eq!(atrous_select(&short, 5, 2).unwrap().row(0), &[2, 4, 6, 6, 6]);
}

#[test]
fn bounded_examples() {
    let src = vec![0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 1.5, 0.0, 0.0, 2.5, 0.0, 0.0];
    let view = RowView::new(&src, 3).unwrap();
    let b = bounded_knn(view, Queries::Centroids(&[0]), 2, RadiusBounds::new(1.0, 2.0).unwrap(), Space::Metric)
        .unwrap();
    assert_eq!(b.graph.row(0), &[2, 2]);
    assert!(!b.fallback[0]);
    let none = bounded_knn(view, Queries::Centroids(&[0]), 2, RadiusBounds::new(3.0, 4.0).unwrap(), Space::Metric)
        .unwrap();
    assert_eq!(none.graph.row(0), &[1, 1]);
    assert!(none.fallback[0]);
    let all = [0, 1, 2, 3];
    let open = bounded_knn(view, Queries::Centroids(&all), 3, RadiusBounds::unbounded(), Space::Metric).unwrap();
    let plain = knn(view, Queries::Centroids(&all), 3, Space::Metric).unwrap();
    assert_eq!(open.graph, plain);
}

#[test]
fn fps_line_examples_match_greedy_oracle() {
    let rows: Vec<f64> = (0..=10).flat_map(|i| [i as f64, 0.0, 0.0]).collect();
    let view = RowView::new(&rows, 3).unwrap();
    assert_eq!(farthest_point_sample(view, 3, 0).unwrap(), vec![0, 10, 5]);
    assert_eq!(oracle_fps(&rows, 3, 3, 0), vec![0, 10, 5]);
}

#[test]
fn fps_every_pick_maximizes_min_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for _ in 0..200 {
        let n = rng.random_range(2..=48);
        let rows = random_rows(&mut rng, n);
        let m = rng.random_range(1..=n);
        let sel = farthest_point_sample(RowView::new(&rows, 3).unwrap(), m, 0).unwrap();
        let row = |i: usize| &rows[3 * i..3 * i + 3];
        for i in 1..sel.len() {
            let min_to = |p: usize| sel[..i].iter().map(|&s| dist2(row(p), row(s))).fold(f64::INFINITY, f64::min);
            let best = (0..n).filter(|p| !sel[..i].contains(p)).map(min_to).fold(0.0, f64::max);
            assert_eq!(min_to(sel[i]), best);
        }
    }
}

#[test]
fn idw_examples() {
    assert_eq!(idw_from_distances(&[1.0f64, 1.0]), vec![0.5, 0.5]);
    assert_eq!(idw_from_distances(&[1.0f64, 0.0, 2.0]), vec![0.0, 1.0, 0.0]);
    let w = idw_from_distances(&[1.0f64, 2.0]);
    assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
}

proptest! {
    #[test]
    fn idw_is_a_convex_combination(seed in 0u64..10_000, k in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_rows(&mut rng, 1);
        let nb = random_rows(&mut rng, k);
        let w = idw_weights(&q, RowView::new(&nb, 3).unwrap());
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn knn_sets_follow_a_permutation(seed in 0u64..10_000, n in 3usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = random_rows(&mut rng, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        // Row j of the permuted cloud is row perm[j] of the original.
        let permuted: Vec<f64> = perm.iter().flat_map(|&i| rows[3 * i..3 * i + 3].to_vec()).collect();
        let k = rng.random_range(1..n);
        let all: Vec<usize> = (0..n).collect();
        let a = knn(RowView::new(&rows, 3).unwrap(), Queries::Centroids(&all), k, Space::Metric).unwrap();
        let b = knn(RowView::new(&permuted, 3).unwrap(), Queries::Centroids(&all), k, Space::Metric).unwrap();
        for j in 0..n {
            let mut mapped: Vec<usize> = b.row(j).iter().map(|&x| perm[x]).collect();
            let mut orig = a.row(perm[j]).to_vec();
            mapped.sort_unstable();
            orig.sort_unstable();
            prop_assert_eq!(mapped, orig);
        }
    }

    #[test]
    fn rate_one_is_truncation(seed in 0u64..10_000, n in 3usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = random_rows(&mut rng, n);
        let all: Vec<usize> = (0..n).collect();
        let kmax = rng.random_range(1..n);
        let k = rng.random_range(1..=kmax);
        let g = knn(RowView::new(&rows, 3).unwrap(), Queries::Centroids(&all), kmax, Space::Metric).unwrap();
        let a = atrous_select(&g, k, 1).unwrap();
        for q in 0..n {
            prop_assert_eq!(a.row(q), &g.row(q)[..k]);
        }
    }

    #[test]
    fn dropout_keeps_unique_sorted_ids(seed in 0u64..10_000, n in 1usize..500, ratio in 0.01f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids = dropout_indices(n, ratio, &mut rng).unwrap();
        prop_assert_eq!(ids.len(), ((n as f64 * ratio).round() as usize).clamp(1, n));
        prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(ids.iter().all(|&i| i < n));
    }
}
