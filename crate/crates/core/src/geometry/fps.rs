use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{squared_distance, RowView};
use crate::autodiff::Real;
use crate::error::{Error, Result};

/// How the first farthest-point-sampling pick is made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FpsSeed {
    /// A fixed row index.
    Index(usize),
    /// The row with the largest norm, see [`max_norm_seed`]. Independent of
    /// row order.
    MaxNorm,
}

impl FpsSeed {
    pub fn resolve<T: Real>(self, rows: RowView<T>) -> usize {
        match self {
            FpsSeed::Index(i) => i,
            FpsSeed::MaxNorm => max_norm_seed(rows),
        }
    }
}

/// Row with the largest squared norm; exact norm ties are settled by the
/// lexicographically largest coordinates, then the lowest index. Only
/// comparisons of per-row values are involved, so permuting rows moves the
/// pick along with its row.
pub fn max_norm_seed<T: Real>(rows: RowView<T>) -> usize {
    let key = |i: usize| {
        let r = rows.row(i);
        (squared_distance(r, &vec![T::zero(); r.len()]), r)
    };
    let mut best = 0;
    for i in 1..rows.len() {
        let (nb, rb) = key(best);
        let (ni, ri) = key(i);
        let ord = ni
            .partial_cmp(&nb)
            .unwrap_or(Ordering::Equal)
            .then_with(|| ri.partial_cmp(rb).unwrap_or(Ordering::Equal));
        if ord == Ordering::Greater {
            best = i;
        }
    }
    best
}

/// Greedy farthest point sampling: starting from `seed_index`, repeatedly
/// add the row whose distance to the selected set is largest (lowest index
/// on ties). Returns `m` distinct indices in selection order.
pub fn farthest_point_sample<T: Real>(rows: RowView<T>, m: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = rows.len();
    if m > n {
        return Err(Error::SampleTooLarge {
            requested: m,
            available: n,
        });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    if seed_index >= n {
        return Err(Error::IndexOutOfRange {
            op: "fps seed",
            index: seed_index,
            len: n,
        });
    }
    let mut selected = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = seed_index;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == m {
            break;
        }
        let c = rows.row(current);
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n {
            let d = squared_distance(rows.row(i), c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !taken[i] && best.is_none_or(|(bd, _)| min_d[i] > bd) {
                best = Some((min_d[i], i));
            }
        }
        current = best.expect("m <= n leaves an untaken row").1;
    }
    Ok(selected)
}
