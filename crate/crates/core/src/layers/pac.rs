use super::rows_cols;
use crate::autodiff::{Bound, Linear, ParamLayout, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{atrous_select, knn, NeighborGraph, Queries, RowView, Space};

/// Point atrous convolution: an edge kernel `h(x_p ⊕ (x_p − x_q))` over the
/// `rate`-strided nearest neighbours, max-pooled over the `k` edges.
#[derive(Debug, Clone, PartialEq)]
pub struct PacLayer {
    /// Maps `2·C_in → C_out`.
    pub linear: Linear,
    pub k: usize,
    pub rate: usize,
    pub space: Space,
}

impl PacLayer {
    pub fn new(layout: &mut ParamLayout, name: &str, c_in: usize, c_out: usize, k: usize, rate: usize, space: Space) -> Self {
        Self {
            linear: layout.linear(name, 2 * c_in, c_out),
            k,
            rate,
            space,
        }
    }

    pub fn c_in(&self) -> usize {
        self.linear.c_in / 2
    }
}

/// Atrous-selected neighbour graph the layer would use for these inputs.
pub fn pac_neighbors<T: Real>(features: &[T], channels: usize, positions: &[T], layer: &PacLayer) -> Result<NeighborGraph<T>> {
    if layer.k == 0 || layer.rate == 0 {
        return Err(Error::InvalidArgument(format!(
            "PAC needs k, rate >= 1 (k={}, rate={})",
            layer.k, layer.rate
        )));
    }
    let rows = match layer.space {
        Space::Feature => RowView::new(features, channels)?,
        Space::Metric => RowView::new(positions, 3)?,
    };
    let n = rows.len();
    if n < 2 {
        return Err(Error::TooManyNeighbors {
            requested: layer.k,
            available: n.saturating_sub(1),
        });
    }
    let all: Vec<usize> = (0..n).collect();
    let graph = knn(rows, Queries::Centroids(&all), (layer.k * layer.rate).min(n - 1), layer.space)?;
    atrous_select(&graph, layer.k, layer.rate)
}

/// Pre-activation edge features `[N, k, C_out]`.
///
/// The kernel is linear, so `W·(x_p ⊕ (x_p − x_q)) + b` is evaluated as
/// `(x_p·W_top + x_p·W_bot + b) − x_q·W_bot` with both halves computed once
/// per point and gathered per edge.
pub fn pac_edges<T: Real>(tape: &mut Tape<T>, x: Var, positions: &[T], layer: &PacLayer, bound: &Bound) -> Result<Var> {
    let (n, c) = rows_cols(tape, x, "pac")?;
    if layer.linear.c_in != 2 * c {
        return Err(Error::Shape {
            op: "pac",
            left: vec![n, c],
            right: vec![layer.linear.c_in, layer.linear.c_out],
        });
    }
    if layer.space == Space::Metric && positions.len() != 3 * n {
        return Err(Error::Shape {
            op: "pac positions",
            left: vec![n, c],
            right: vec![positions.len()],
        });
    }
    let graph = pac_neighbors(tape.value(x), c, positions, layer)?;
    let k = layer.k;
    let w = bound[layer.linear.weight];
    let w_top = tape.slice_rows(w, 0..c)?;
    let w_bot = tape.slice_rows(w, c..2 * c)?;
    let diff_part = tape.linear(x, w_bot, None)?;
    let self_part = tape.linear(x, w_top, Some(bound[layer.linear.bias]))?;
    let base = tape.add(self_part, diff_part)?;
    let centres: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let from_centre = tape.gather_rows(base, &centres)?;
    let from_neighbor = tape.gather_rows(diff_part, graph.neighbor_ids())?;
    let edges = tape.sub(from_centre, from_neighbor)?;
    tape.reshape(edges, vec![n, k, layer.linear.c_out])
}

/// `[N, C_in] → [N, C_out]`: edge kernel, ReLU, max over the `k` edges.
pub fn pac_forward<T: Real>(tape: &mut Tape<T>, x: Var, positions: &[T], layer: &PacLayer, bound: &Bound) -> Result<Var> {
    let edges = pac_edges(tape, x, positions, layer, bound)?;
    let act = tape.relu(edges)?;
    tape.reduce_max(act)
}
