use serde::{Deserialize, Serialize};

use super::rows_cols;
use crate::autodiff::{Real, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{
    bounded_knn, farthest_point_sample, knn, FpsSeed, NeighborGraph, Queries, RadiusBounds, RowView, Space,
};

/// What an edge-preserved pooling step propagates for each kept centroid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EpMode {
    /// Centroid feature ⊕ max over its neighbours.
    #[default]
    Both,
    /// Centroid feature only.
    Centroid,
    /// Max over neighbours only.
    Neighbors,
}

impl EpMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(EpMode::Both),
            "centroid" => Ok(EpMode::Centroid),
            "neighbors" | "neighbours" => Ok(EpMode::Neighbors),
            other => Err(Error::Config(format!("unknown ep mode {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EpMode::Both => "both",
            EpMode::Centroid => "centroid",
            EpMode::Neighbors => "neighbors",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpLayer {
    pub mode: EpMode,
    pub k: usize,
    /// `N / subsample_rate` centroids are kept.
    pub subsample_rate: usize,
}

impl EpLayer {
    pub fn out_width(&self, c: usize) -> usize {
        match self.mode {
            EpMode::Both => 2 * c,
            EpMode::Centroid | EpMode::Neighbors => c,
        }
    }

    pub fn kept(&self, n: usize) -> usize {
        n / self.subsample_rate.max(1)
    }
}

/// Centroids chosen by farthest point sampling plus their metric-space
/// neighbours among all source points.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsamplePlan<T> {
    pub graph: NeighborGraph<T>,
    /// Rows that fell back to the nearest neighbour under radius bounds.
    pub fallback: Option<Vec<bool>>,
}

impl<T: Real> SubsamplePlan<T> {
    pub fn centroid_ids(&self) -> &[usize] {
        self.graph.centroid_ids()
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }
}

/// Picks `n_keep` centroids by FPS over `fps_rows` (positions for static
/// sampling, features for dynamic) and searches `min(k, N−1)` neighbours of
/// each in `positions`.
pub fn subsample_plan<T: Real>(
    positions: &[T],
    fps_rows: RowView<T>,
    n_keep: usize,
    k: usize,
    seed: FpsSeed,
    bounds: Option<RadiusBounds>,
) -> Result<SubsamplePlan<T>> {
    let pos = RowView::new(positions, 3)?;
    let n = pos.len();
    if fps_rows.len() != n {
        return Err(Error::Shape {
            op: "subsample plan",
            left: vec![n, 3],
            right: vec![fps_rows.len(), fps_rows.dim()],
        });
    }
    if n_keep < 1 {
        return Err(Error::InvalidArgument(format!("subsampling {n} points keeps none")));
    }
    if n < 2 {
        return Err(Error::TooManyNeighbors {
            requested: k,
            available: 0,
        });
    }
    let centroids = farthest_point_sample(fps_rows, n_keep, seed.resolve(fps_rows))?;
    let k = k.min(n - 1);
    match bounds {
        None => Ok(SubsamplePlan {
            graph: knn(pos, Queries::Centroids(&centroids), k, Space::Metric)?,
            fallback: None,
        }),
        Some(b) => {
            let bg = bounded_knn(pos, Queries::Centroids(&centroids), k, b, Space::Metric)?;
            Ok(SubsamplePlan {
                graph: bg.graph,
                fallback: Some(bg.fallback),
            })
        }
    }
}

/// Edge-preserved pooling on a prepared plan: `[N, C] → [M, C']`.
pub fn ep_apply<T: Real>(tape: &mut Tape<T>, x: Var, plan: &SubsamplePlan<T>, mode: EpMode) -> Result<Var> {
    let (_, c) = rows_cols(tape, x, "ep")?;
    let m = plan.len();
    match mode {
        EpMode::Centroid => tape.gather_rows(x, plan.centroid_ids()),
        EpMode::Neighbors => {
            let g = tape.gather_rows(x, plan.graph.neighbor_ids())?;
            let g = tape.reshape(g, vec![m, plan.graph.kmax(), c])?;
            tape.reduce_max(g)
        }
        EpMode::Both => {
            let cen = tape.gather_rows(x, plan.centroid_ids())?;
            let nb = ep_apply(tape, x, plan, EpMode::Neighbors)?;
            tape.concat_cols(&[cen, nb])
        }
    }
}

/// Edge-preserved pooling with static FPS on `positions`.
pub fn ep_forward<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    positions: &[T],
    layer: &EpLayer,
    seed: FpsSeed,
) -> Result<(Var, SubsamplePlan<T>)> {
    let pos = RowView::new(positions, 3)?;
    let m = layer.kept(pos.len());
    if m < 1 {
        return Err(Error::InvalidArgument(format!(
            "subsample rate {} keeps no centroid of {} points",
            layer.subsample_rate,
            pos.len()
        )));
    }
    let plan = subsample_plan(positions, pos, m, layer.k, seed, None)?;
    let out = ep_apply(tape, x, &plan, layer.mode)?;
    Ok((out, plan))
}

/// Chained skip subsampling on a plan shared with the matching pooling step.
pub fn css_apply<T: Real>(tape: &mut Tape<T>, x: Var, plan: &SubsamplePlan<T>) -> Result<Var> {
    ep_apply(tape, x, plan, EpMode::Neighbors)
}

/// Chained skip subsampling for an explicit centroid set: max over each
/// centroid's `k` metric-space neighbours, no centroid feature.
pub fn css_forward<T: Real>(tape: &mut Tape<T>, x: Var, positions: &[T], centroid_ids: &[usize], k: usize) -> Result<Var> {
    let pos = RowView::new(positions, 3)?;
    let (n, _) = rows_cols(tape, x, "css")?;
    if pos.len() != n {
        return Err(Error::Shape {
            op: "css",
            left: vec![n],
            right: vec![pos.len()],
        });
    }
    if centroid_ids.is_empty() {
        return Err(Error::CentroidSet("empty centroid set".into()));
    }
    let mut seen = vec![false; n];
    for &c in centroid_ids {
        if c >= n {
            return Err(Error::CentroidSet(format!("centroid {c} outside {n} points")));
        }
        if std::mem::replace(&mut seen[c], true) {
            return Err(Error::CentroidSet(format!("centroid {c} listed twice")));
        }
    }
    if n < 2 {
        return Err(Error::TooManyNeighbors {
            requested: k,
            available: 0,
        });
    }
    let plan = SubsamplePlan {
        graph: knn(pos, Queries::Centroids(centroid_ids), k.min(n - 1), Space::Metric)?,
        fallback: None,
    };
    css_apply(tape, x, &plan)
}

/// Column-wise max over all points: `[N, C] → [1, C]`.
pub fn global_max_pool<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let (n, c) = rows_cols(tape, x, "global_max_pool")?;
    let r = tape.reshape(x, vec![1, n, c])?;
    tape.reduce_max(r)
}
