//! Wall-clock timing of the geometric kernels and a PAC forward pass.

use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{ParamLayout, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sample, knn, Queries, RowView, Space};
use crate::layers::{pac_forward, PacLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchOp {
    Knn,
    Fps,
    Pac,
}

impl FromStr for BenchOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(BenchOp::Knn),
            "fps" => Ok(BenchOp::Fps),
            "pac" => Ok(BenchOp::Pac),
            other => Err(Error::InvalidArgument(format!("unknown bench op {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    pub op: BenchOp,
    pub n: usize,
    pub repeats: usize,
    pub median_ms: f64,
    pub min_ms: f64,
}

/// Times `repeats` runs of `op` on a random cloud of `n` points: all-points
/// kNN with k = 10, FPS down to n/4, or a 64→64 channel PAC layer.
pub fn bench_op(op: BenchOp, n: usize, repeats: usize, seed: u64) -> Result<BenchResult> {
    if n < 11 || repeats == 0 {
        return Err(Error::InvalidArgument("bench needs n >= 11 and repeats >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<f32> = (0..3 * n).map(|_| rng.random::<f32>()).collect();
    let features: Vec<f32> = (0..64 * n).map(|_| rng.random::<f32>()).collect();
    let mut layout = ParamLayout::new();
    let layer = PacLayer::new(&mut layout, "pac", 64, 64, 10, 2, Space::Feature);
    let params = ParamStore::<f32>::init(&layout, seed);
    let all: Vec<usize> = (0..n).collect();
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        match op {
            BenchOp::Knn => {
                knn(RowView::new(&positions, 3)?, Queries::Centroids(&all), 10, Space::Metric)?;
            }
            BenchOp::Fps => {
                farthest_point_sample(RowView::new(&positions, 3)?, n / 4, 0)?;
            }
            BenchOp::Pac => {
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape)?;
                let x = tape.constant(vec![n, 64], features.clone())?;
                pac_forward(&mut tape, x, &positions, &layer, &bound)?;
            }
        }
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    Ok(BenchResult {
        op,
        n,
        repeats,
        median_ms: times[times.len() / 2],
        min_ms: times[0],
    })
}
