use super::{squared_distance, RowView};
use crate::autodiff::Real;

/// Distances below this snap the interpolation onto a single neighbour.
pub const SNAP_DISTANCE: f64 = 1e-9;

/// Inverse-distance weights `(1/d_j) / Σ_i (1/d_i)`.
///
/// If some distance is below [`SNAP_DISTANCE`], the closest such neighbour
/// (first on ties) gets weight 1 and all others 0.
pub fn idw_from_distances<T: Real>(d: &[T]) -> Vec<T> {
    let snap = T::cast(SNAP_DISTANCE);
    let mut closest: Option<usize> = None;
    for (j, &dj) in d.iter().enumerate() {
        if dj < snap && closest.is_none_or(|c| dj < d[c]) {
            closest = Some(j);
        }
    }
    if let Some(c) = closest {
        let mut w = vec![T::zero(); d.len()];
        w[c] = T::one();
        return w;
    }
    let inv: Vec<T> = d.iter().map(|&x| T::one() / x).collect();
    let total: T = inv.iter().copied().sum();
    inv.into_iter().map(|x| x / total).collect()
}

/// Inverse-distance weights of `neighbors` as seen from `query`.
pub fn idw_weights<T: Real>(query: &[T], neighbors: RowView<T>) -> Vec<T> {
    let d: Vec<T> = (0..neighbors.len())
        .map(|j| T::cast(squared_distance(query, neighbors.row(j)).sqrt()))
        .collect();
    idw_from_distances(&d)
}
