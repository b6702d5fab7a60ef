use std::cmp::Ordering;

use super::{squared_distance, RowView, Space};
use crate::autodiff::Real;
use crate::error::{Error, Result};

/// Per-centroid neighbour lists sorted by ascending distance.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph<T> {
    centroid_ids: Vec<usize>,
    neighbor_ids: Vec<usize>,
    distances: Vec<T>,
    kmax: usize,
    space: Space,
}

impl<T: Real> NeighborGraph<T> {
    /// Builds a graph from flat `[M, kmax]` arrays.
    pub fn from_parts(
        centroid_ids: Vec<usize>,
        neighbor_ids: Vec<usize>,
        distances: Vec<T>,
        kmax: usize,
        space: Space,
    ) -> Result<Self> {
        if neighbor_ids.len() != centroid_ids.len() * kmax || distances.len() != neighbor_ids.len() {
            return Err(Error::Shape {
                op: "neighbor graph",
                left: vec![centroid_ids.len(), kmax],
                right: vec![neighbor_ids.len(), distances.len()],
            });
        }
        Ok(Self {
            centroid_ids,
            neighbor_ids,
            distances,
            kmax,
            space,
        })
    }

    /// Number of centroid rows.
    pub fn len(&self) -> usize {
        self.centroid_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroid_ids.is_empty()
    }

    pub fn kmax(&self) -> usize {
        self.kmax
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn centroid_ids(&self) -> &[usize] {
        &self.centroid_ids
    }

    /// Flat `[M, kmax]` neighbour indices.
    pub fn neighbor_ids(&self) -> &[usize] {
        &self.neighbor_ids
    }

    pub fn distances(&self) -> &[T] {
        &self.distances
    }

    pub fn row(&self, m: usize) -> &[usize] {
        &self.neighbor_ids[m * self.kmax..(m + 1) * self.kmax]
    }

    pub fn distance_row(&self, m: usize) -> &[T] {
        &self.distances[m * self.kmax..(m + 1) * self.kmax]
    }
}

/// Query points of a neighbour search.
#[derive(Debug, Clone, Copy)]
pub enum Queries<'a, T> {
    /// Rows of the source itself; each centroid is excluded from its own row.
    Centroids(&'a [usize]),
    /// Separate query rows; nothing is excluded.
    External(RowView<'a, T>),
}

impl<T: Real> Queries<'_, T> {
    fn len(&self) -> usize {
        match self {
            Queries::Centroids(ids) => ids.len(),
            Queries::External(rows) => rows.len(),
        }
    }
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

struct QueryIter<'a, T> {
    source: RowView<'a, T>,
    queries: Queries<'a, T>,
}

impl<'a, T: Real> QueryIter<'a, T> {
    fn new(source: RowView<'a, T>, queries: Queries<'a, T>) -> Result<Self> {
        if source.is_empty() {
            return Err(Error::EmptySource);
        }
        match queries {
            Queries::Centroids(ids) => {
                if let Some(&bad) = ids.iter().find(|&&i| i >= source.len()) {
                    return Err(Error::IndexOutOfRange {
                        op: "knn centroid",
                        index: bad,
                        len: source.len(),
                    });
                }
            }
            Queries::External(rows) => {
                if rows.dim() != source.dim() {
                    return Err(Error::Shape {
                        op: "knn",
                        left: vec![rows.len(), rows.dim()],
                        right: vec![source.len(), source.dim()],
                    });
                }
            }
        }
        Ok(Self { source, queries })
    }

    fn available(&self) -> usize {
        match self.queries {
            Queries::Centroids(_) => self.source.len() - 1,
            Queries::External(_) => self.source.len(),
        }
    }

    fn centroid_ids(&self) -> Vec<usize> {
        match self.queries {
            Queries::Centroids(ids) => ids.to_vec(),
            Queries::External(rows) => (0..rows.len()).collect(),
        }
    }

    /// All candidates of query `q` as `(squared distance, source index)`.
    fn candidates(&self, q: usize) -> Vec<(f64, usize)> {
        let (row, skip) = match self.queries {
            Queries::Centroids(ids) => (self.source.row(ids[q]), Some(ids[q])),
            Queries::External(rows) => (rows.row(q), None),
        };
        (0..self.source.len())
            .filter(|&j| Some(j) != skip)
            .map(|j| (squared_distance(row, self.source.row(j)), j))
            .collect()
    }
}

/// Exact brute-force k-nearest neighbours (Euclidean).
pub fn knn<T: Real>(source: RowView<T>, queries: Queries<T>, kmax: usize, space: Space) -> Result<NeighborGraph<T>> {
    let it = QueryIter::new(source, queries)?;
    let available = it.available();
    if kmax == 0 || kmax > available {
        return Err(Error::TooManyNeighbors {
            requested: kmax,
            available,
        });
    }
    let m = queries.len();
    let mut neighbor_ids = Vec::with_capacity(m * kmax);
    let mut distances = Vec::with_capacity(m * kmax);
    for q in 0..m {
        let mut cands = it.candidates(q);
        if kmax < cands.len() {
            cands.select_nth_unstable_by(kmax - 1, by_distance_then_index);
            cands.truncate(kmax);
        }
        cands.sort_unstable_by(by_distance_then_index);
        for (d2, j) in cands {
            neighbor_ids.push(j);
            distances.push(T::cast(d2.sqrt()));
        }
    }
    NeighborGraph::from_parts(it.centroid_ids(), neighbor_ids, distances, kmax, space)
}

/// Picks sorted-neighbour positions `rate, 2·rate, …, k·rate` (1-based).
/// Positions past the end of a row clamp to its last (farthest) neighbour.
pub fn atrous_select<T: Real>(graph: &NeighborGraph<T>, k: usize, rate: usize) -> Result<NeighborGraph<T>> {
    if graph.kmax() == 0 {
        return Err(Error::TooManyNeighbors {
            requested: k,
            available: 0,
        });
    }
    if k == 0 || rate == 0 {
        return Err(Error::InvalidArgument(format!("atrous selection needs k, rate >= 1 (k={k}, rate={rate})")));
    }
    let cols: Vec<usize> = (1..=k).map(|j| (j * rate).min(graph.kmax()) - 1).collect();
    let mut ids = Vec::with_capacity(graph.len() * k);
    let mut dists = Vec::with_capacity(graph.len() * k);
    for m in 0..graph.len() {
        let (row, drow) = (graph.row(m), graph.distance_row(m));
        for &c in &cols {
            ids.push(row[c]);
            dists.push(drow[c]);
        }
    }
    NeighborGraph::from_parts(graph.centroid_ids().to_vec(), ids, dists, k, graph.space())
}

/// Closed distance interval a neighbour must fall in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusBounds {
    r_min: f64,
    r_max: f64,
}

impl RadiusBounds {
    pub fn new(r_min: f64, r_max: f64) -> Result<Self> {
        if !(r_min >= 0.0 && r_min < r_max) {
            return Err(Error::InvalidArgument(format!("radius bounds need 0 <= r_min < r_max, got [{r_min}, {r_max}]")));
        }
        Ok(Self { r_min, r_max })
    }

    /// `[0, ∞)`.
    pub fn unbounded() -> Self {
        Self {
            r_min: 0.0,
            r_max: f64::INFINITY,
        }
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn contains(&self, d: f64) -> bool {
        d >= self.r_min && d <= self.r_max
    }
}

/// Radius-bounded neighbour graph plus the rows that fell back to the
/// unrestricted nearest neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedGraph<T> {
    pub graph: NeighborGraph<T>,
    pub fallback: Vec<bool>,
}

/// kNN restricted to distances inside `bounds`.
///
/// Rows with fewer than `k` qualifying neighbours repeat the farthest one
/// that qualified. Rows with none use the unrestricted nearest neighbour
/// `k` times and are flagged in [`BoundedGraph::fallback`].
pub fn bounded_knn<T: Real>(
    source: RowView<T>,
    queries: Queries<T>,
    k: usize,
    bounds: RadiusBounds,
    space: Space,
) -> Result<BoundedGraph<T>> {
    let it = QueryIter::new(source, queries)?;
    if it.available() == 0 {
        return Err(Error::TooManyNeighbors {
            requested: k,
            available: 0,
        });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("bounded kNN needs k >= 1".into()));
    }
    let m = queries.len();
    let mut ids = Vec::with_capacity(m * k);
    let mut dists = Vec::with_capacity(m * k);
    let mut fallback = Vec::with_capacity(m);
    for q in 0..m {
        let mut cands = it.candidates(q);
        cands.sort_unstable_by(by_distance_then_index);
        let mut picked: Vec<(f64, usize)> = cands
            .iter()
            .map(|&(d2, j)| (d2.sqrt(), j))
            .filter(|&(d, _)| bounds.contains(d))
            .take(k)
            .collect();
        let fell_back = picked.is_empty();
        if fell_back {
            let (d2, j) = cands[0];
            picked.push((d2.sqrt(), j));
        }
        let last = *picked.last().expect("non-empty");
        picked.resize(k, last);
        for (d, j) in picked {
            ids.push(j);
            dists.push(T::cast(d));
        }
        fallback.push(fell_back);
    }
    Ok(BoundedGraph {
        graph: NeighborGraph::from_parts(it.centroid_ids(), ids, dists, k, space)?,
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(pts: &[[f64; 3]]) -> Vec<f64> {
        pts.iter().flatten().copied().collect()
    }

    #[test]
    fn three_point_line() {
        let data = rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let src = RowView::new(&data, 3).unwrap();
        let g = knn(src, Queries::Centroids(&[0]), 2, Space::Metric).unwrap();
        assert_eq!(g.row(0), &[1, 2]);
        assert_eq!(g.distance_row(0), &[1.0, 3.0]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let src_data = rows(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        let q = [0.0, 0.0, 0.0];
        let g = knn(
            RowView::new(&src_data, 3).unwrap(),
            Queries::External(RowView::new(&q, 3).unwrap()),
            1,
            Space::Metric,
        )
        .unwrap();
        assert_eq!(g.row(0), &[0]);
    }

    #[test]
    fn kmax_too_large_and_empty_source() {
        let data = rows(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let src = RowView::new(&data, 3).unwrap();
        assert!(matches!(
            knn(src, Queries::Centroids(&[0]), 2, Space::Metric),
            Err(Error::TooManyNeighbors { requested: 2, available: 1 })
        ));
        let empty: [f64; 0] = [];
        assert!(matches!(
            knn(RowView::new(&empty, 3).unwrap(), Queries::Centroids(&[]), 1, Space::Metric),
            Err(Error::EmptySource)
        ));
    }

    fn ten_neighbor_graph(n: usize) -> NeighborGraph<f64> {
        let data: Vec<f64> = (0..=n).flat_map(|i| [i as f64, 0.0, 0.0]).collect();
        knn(RowView::new(&data, 3).unwrap(), Queries::Centroids(&[0]), n, Space::Metric).unwrap()
    }

    #[test]
    fn atrous_rate_two() {
        let g = ten_neighbor_graph(10);
        let s = atrous_select(&g, 5, 2).unwrap();
        assert_eq!(s.row(0), &[2, 4, 6, 8, 10]);
        let s1 = atrous_select(&g, 4, 1).unwrap();
        assert_eq!(s1.row(0), &g.row(0)[..4]);
    }

    #[test]
    fn atrous_clamps_to_farthest() {
        let g = ten_neighbor_graph(6);
        let s = atrous_select(&g, 5, 2).unwrap();
        assert_eq!(s.row(0), &[2, 4, 6, 6, 6]);
    }

    #[test]
    fn bounded_pad_and_fallback() {
        let data = rows(&[[0.0; 3], [0.5, 0.0, 0.0], [1.5, 0.0, 0.0], [2.5, 0.0, 0.0]]);
        let src = RowView::new(&data, 3).unwrap();
        let b = bounded_knn(src, Queries::Centroids(&[0]), 2, RadiusBounds::new(1.0, 2.0).unwrap(), Space::Metric).unwrap();
        assert_eq!(b.graph.row(0), &[2, 2]);
        assert!(!b.fallback[0]);

        let none = bounded_knn(src, Queries::Centroids(&[0]), 3, RadiusBounds::new(5.0, 6.0).unwrap(), Space::Metric).unwrap();
        assert_eq!(none.graph.row(0), &[1, 1, 1]);
        assert!(none.fallback[0]);

        let full = bounded_knn(src, Queries::Centroids(&[0, 2]), 3, RadiusBounds::unbounded(), Space::Metric).unwrap();
        let plain = knn(src, Queries::Centroids(&[0, 2]), 3, Space::Metric).unwrap();
        assert_eq!(full.graph, plain);
    }

    #[test]
    fn radius_validation() {
        assert!(RadiusBounds::new(2.0, 1.0).is_err());
        assert!(RadiusBounds::new(-1.0, 1.0).is_err());
    }
}
