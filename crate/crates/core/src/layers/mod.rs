//! Point atrous convolution, edge-preserved pooling/unpooling, the chained
//! skip branches and global pooling, all recorded on an autodiff tape.
//!
//! Feature-space neighbour graphs are rebuilt from the current features on
//! every call. Metric-space graphs only depend on positions and are packaged
//! as plans ([`SubsamplePlan`], [`InterpPlan`]) so a model can build them once
//! per cloud and share them between the main stream and the skip branches.

mod pac;
mod pooling;
mod unpooling;

pub use pac::{pac_edges, pac_forward, pac_neighbors, PacLayer};
pub use pooling::{
    css_apply, css_forward, ep_apply, ep_forward, global_max_pool, subsample_plan, EpLayer, EpMode, SubsamplePlan,
};
pub use unpooling::{csu_apply, csu_forward, eu_apply, eu_forward, interp_plan, EuLayer, InterpPlan};

use crate::autodiff::{Bound, Linear, ParamLayout, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::Space;

/// A per-point feature layer: point atrous convolution, or a plain shared
/// mlp when convolutions are ablated.
#[derive(Debug, Clone, PartialEq)]
pub enum PointLayer {
    Pac(PacLayer),
    Mlp(Linear),
}

impl PointLayer {
    pub fn pac(layout: &mut ParamLayout, name: &str, c_in: usize, c_out: usize, k: usize, rate: usize, space: Space) -> Self {
        PointLayer::Pac(PacLayer::new(layout, name, c_in, c_out, k, rate, space))
    }

    pub fn mlp(layout: &mut ParamLayout, name: &str, c_in: usize, c_out: usize) -> Self {
        PointLayer::Mlp(layout.linear(name, c_in, c_out))
    }

    pub fn c_out(&self) -> usize {
        match self {
            PointLayer::Pac(p) => p.linear.c_out,
            PointLayer::Mlp(l) => l.c_out,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var, positions: &[T]) -> Result<Var> {
        match self {
            PointLayer::Pac(p) => pac_forward(tape, x, positions, p, bound),
            PointLayer::Mlp(l) => {
                let y = l.apply(tape, bound, x)?;
                tape.relu(y)
            }
        }
    }
}

fn rows_cols<T: Real>(tape: &Tape<T>, x: Var, op: &'static str) -> Result<(usize, usize)> {
    match tape.shape(x) {
        [n, c] => Ok((*n, *c)),
        other => Err(Error::Shape {
            op,
            left: other.to_vec(),
            right: vec![0, 0],
        }),
    }
}
