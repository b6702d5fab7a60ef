//! Brute-force reference implementations shared by the geometry and
//! acceptance tests. Deliberately naive: full sorts, recomputed distances.
#![allow(dead_code)]

use pag_core::geometry::{
    atrous_select, bounded_knn, farthest_point_sample, knn, Queries, RadiusBounds, RowView, Space,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Every other row sorted by (distance, index).
pub fn sorted_candidates(rows: &[f64], dim: usize, q: usize) -> Vec<(f64, usize)> {
    let n = rows.len() / dim;
    let mut all: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != q)
        .map(|j| (dist2(&rows[q * dim..(q + 1) * dim], &rows[j * dim..(j + 1) * dim]).sqrt(), j))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all
}

pub fn oracle_knn(rows: &[f64], dim: usize, q: usize, k: usize) -> Vec<usize> {
    sorted_candidates(rows, dim, q).into_iter().take(k).map(|c| c.1).collect()
}

pub fn oracle_atrous(rows: &[f64], dim: usize, q: usize, k: usize, rate: usize, kmax: usize) -> Vec<usize> {
    let sorted = oracle_knn(rows, dim, q, kmax);
    (1..=k).map(|j| sorted[(j * rate).min(sorted.len()) - 1]).collect()
}

pub fn oracle_bounded(rows: &[f64], dim: usize, q: usize, k: usize, r_min: f64, r_max: f64) -> (Vec<usize>, bool) {
    let all = sorted_candidates(rows, dim, q);
    let mut inside: Vec<usize> = all
        .iter()
        .filter(|c| c.0 >= r_min && c.0 <= r_max)
        .map(|c| c.1)
        .take(k)
        .collect();
    if inside.is_empty() {
        return (vec![all[0].1; k], true);
    }
    while inside.len() < k {
        inside.push(*inside.last().unwrap());
    }
    (inside, false)
}

/// Farthest point sampling recomputing every min-distance from scratch.
pub fn oracle_fps(rows: &[f64], dim: usize, m: usize, seed: usize) -> Vec<usize> {
    let n = rows.len() / dim;
    let row = |i: usize| &rows[i * dim..(i + 1) * dim];
    let mut sel = vec![seed];
    while sel.len() < m {
        let mut best: Option<(f64, usize)> = None;
        for i in (0..n).filter(|i| !sel.contains(i)) {
            let d = sel.iter().map(|&s| dist2(row(i), row(s))).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, i));
            }
        }
        sel.push(best.unwrap().1);
    }
    sel
}

/// Random cloud: uniform reals for even `case`, small integer grid points
/// (many exact distance ties and duplicates) for odd `case`.
pub fn oracle_cloud(rng: &mut ChaCha8Rng, n: usize, case: usize) -> Vec<f64> {
    if case % 2 == 0 {
        (0..3 * n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    } else {
        (0..3 * n).map(|_| rng.random_range(0..3) as f64).collect()
    }
}

/// Compares kNN, bounded kNN, FPS and atrous selection against the oracles
/// on `clouds` random clouds of 2..=64 points. Returns the mismatch count and
/// the number of comparisons.
pub fn oracle_sweep(clouds: usize, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut bad, mut total) = (0, 0);
    for case in 0..clouds {
        let n = rng.random_range(2..=64);
        let rows = oracle_cloud(&mut rng, n, case);
        let view = RowView::new(&rows, 3).unwrap();
        let all: Vec<usize> = (0..n).collect();
        let kmax = rng.random_range(1..n);
        let g = knn(view, Queries::Centroids(&all), kmax, Space::Metric).unwrap();
        for q in 0..n {
            total += 1;
            bad += usize::from(g.row(q) != oracle_knn(&rows, 3, q, kmax).as_slice());
        }
        let rate = rng.random_range(1..=4);
        let k = rng.random_range(1..=kmax);
        let a = atrous_select(&g, k, rate).unwrap();
        for q in 0..n {
            total += 1;
            bad += usize::from(a.row(q) != oracle_atrous(&rows, 3, q, k, rate, kmax).as_slice());
        }
        let r_min = rng.random::<f64>() * 0.8;
        let r_max = r_min + 0.05 + rng.random::<f64>();
        let bg = bounded_knn(view, Queries::Centroids(&all), k, RadiusBounds::new(r_min, r_max).unwrap(), Space::Metric)
            .unwrap();
        for q in 0..n {
            let (ids, fell) = oracle_bounded(&rows, 3, q, k, r_min, r_max);
            total += 1;
            bad += usize::from(bg.graph.row(q) != ids.as_slice() || bg.fallback[q] != fell);
        }
        let m = rng.random_range(1..=n);
        let s = rng.random_range(0..n);
        total += 1;
        bad += usize::from(farthest_point_sample(view, m, s).unwrap() != oracle_fps(&rows, 3, m, s));
    }
    (bad, total)
}
