//! Minimal dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every [`Tensor`] created during a forward pass and records
//! the primitive that produced it. [`Tape::backward`] walks the records in
//! reverse, exactly once, and accumulates gradients into every tensor that
//! requires one. Only the primitives the point networks need are provided.

mod checkpoint;
mod gradcheck;
mod params;
mod tape;

pub use checkpoint::{Checkpoint, MetaValue, NamedTensor, CHECKPOINT_MAGIC};
pub use gradcheck::{analytic_gradients, check_gradients, compare_gradients, GradCheckConfig, GradReport, ParamError};
pub use params::{Bound, Init, Linear, ParamId, ParamLayout, ParamSpec, ParamStore};
pub use tape::{CustomBackward, Tape, Tensor, Var};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating point element type of a tape. `f32` for training, `f64` for
/// gradient audits.
pub trait Real:
    num_traits::Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn cast(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn cast(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn cast(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
