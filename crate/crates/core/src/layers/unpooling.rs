use super::rows_cols;
use crate::autodiff::{Real, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{idw_from_distances, knn, Queries, RowView, Space};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EuLayer {
    pub k_interp: usize,
}

/// Inverse-distance interpolation from `sources` coarse points onto
/// `targets` fine points: `k` source indices and weights per target.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpPlan<T> {
    pub idx: Vec<usize>,
    pub weights: Vec<T>,
    pub k: usize,
    pub targets: usize,
    pub sources: usize,
}

/// Searches the `min(k, M)` nearest of the `M` previous-hierarchy points for
/// every target and converts their distances into IDW weights.
pub fn interp_plan<T: Real>(prev_pos: &[T], target_pos: &[T], k: usize) -> Result<InterpPlan<T>> {
    let src = RowView::new(prev_pos, 3)?;
    let tgt = RowView::new(target_pos, 3)?;
    if src.is_empty() {
        return Err(Error::EmptySource);
    }
    if k == 0 {
        return Err(Error::InvalidArgument("interpolation needs k >= 1".into()));
    }
    let k = k.min(src.len());
    let graph = knn(src, Queries::External(tgt), k, Space::Metric)?;
    let mut weights = Vec::with_capacity(tgt.len() * k);
    for t in 0..tgt.len() {
        weights.extend(idw_from_distances(graph.distance_row(t)));
    }
    Ok(InterpPlan {
        idx: graph.neighbor_ids().to_vec(),
        weights,
        k,
        targets: tgt.len(),
        sources: src.len(),
    })
}

/// Chained skip upsampling: interpolation only, `[M, C] → [N, C]`.
pub fn csu_apply<T: Real>(tape: &mut Tape<T>, prev: Var, plan: &InterpPlan<T>) -> Result<Var> {
    let (m, c) = rows_cols(tape, prev, "csu")?;
    if m != plan.sources {
        return Err(Error::Shape {
            op: "csu",
            left: vec![m, c],
            right: vec![plan.sources],
        });
    }
    tape.weighted_gather(prev, &plan.idx, &plan.weights, plan.targets)
}

/// Edge-preserved unpooling: encoder skip feature ⊕ interpolated feature.
pub fn eu_apply<T: Real>(tape: &mut Tape<T>, prev: Var, skip: Var, plan: &InterpPlan<T>) -> Result<Var> {
    let (n, c) = rows_cols(tape, skip, "eu")?;
    if n != plan.targets {
        return Err(Error::Shape {
            op: "eu skip",
            left: vec![n, c],
            right: vec![plan.targets],
        });
    }
    let up = csu_apply(tape, prev, plan)?;
    tape.concat_cols(&[skip, up])
}

pub fn eu_forward<T: Real>(
    tape: &mut Tape<T>,
    prev: Var,
    prev_pos: &[T],
    target_pos: &[T],
    skip: Var,
    layer: &EuLayer,
) -> Result<Var> {
    let plan = interp_plan(prev_pos, target_pos, layer.k_interp)?;
    eu_apply(tape, prev, skip, &plan)
}

pub fn csu_forward<T: Real>(tape: &mut Tape<T>, prev: Var, prev_pos: &[T], target_pos: &[T], k: usize) -> Result<Var> {
    let plan = interp_plan(prev_pos, target_pos, k)?;
    csu_apply(tape, prev, &plan)
}
