//! Deterministic point-cloud primitives.
//!
//! Every routine here is a pure function of its inputs. Neighbour rows are
//! sorted by ascending distance with ties going to the lower source index,
//! and a centroid never appears in its own neighbour row.

mod cloud;
mod fps;
mod interp;
mod knn;

pub use cloud::{dropout_indices, random_dropout, PointCloud};
pub use fps::{farthest_point_sample, max_norm_seed, FpsSeed};
pub use interp::{idw_from_distances, idw_weights, SNAP_DISTANCE};
pub use knn::{atrous_select, bounded_knn, knn, BoundedGraph, NeighborGraph, Queries, RadiusBounds};

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};

/// Which rows a neighbour graph was searched over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    /// Point positions.
    Metric,
    /// Learned per-point features.
    Feature,
}

/// Borrowed row-major matrix.
#[derive(Debug, Clone, Copy)]
pub struct RowView<'a, T> {
    data: &'a [T],
    dim: usize,
}

impl<'a, T: Real> RowView<'a, T> {
    pub fn new(data: &'a [T], dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Shape {
                op: "rows",
                left: vec![data.len()],
                right: vec![dim],
            });
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &'a [T] {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// `Σ (a_i − b_i)²`, accumulated left to right in f64 whatever `T` is.
/// For f32 inputs each term is exact, so distinct distances rarely collide
/// and neighbour order does not hinge on f32 rounding.
#[inline]
pub fn squared_distance<T: Real>(a: &[T], b: &[T]) -> f64 {
    let mut s = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let d = x.as_f64() - y.as_f64();
        s += d * d;
    }
    s
}
