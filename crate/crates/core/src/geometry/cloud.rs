use rand::Rng;

use crate::error::{Error, Result};

/// `N` points with optional unit normals and per-point class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<f32>,
    normals: Option<Vec<f32>>,
    labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(positions: Vec<f32>, normals: Option<Vec<f32>>, labels: Option<Vec<usize>>) -> Result<Self> {
        if positions.is_empty() || positions.len() % 3 != 0 {
            return Err(Error::InvalidArgument(format!(
                "positions must hold N >= 1 xyz triples, got {} values",
                positions.len()
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "point cloud" });
        }
        let n = positions.len() / 3;
        if let Some(nm) = &normals {
            if nm.len() != positions.len() {
                return Err(Error::Shape {
                    op: "normals",
                    left: vec![n, 3],
                    right: vec![nm.len()],
                });
            }
            for (i, v) in nm.chunks_exact(3).enumerate() {
                let len = (v[0] as f64).hypot(v[1] as f64).hypot(v[2] as f64);
                if !len.is_finite() || (len - 1.0).abs() > 1e-4 {
                    return Err(Error::InvalidArgument(format!("normal {i} has length {len}")));
                }
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Shape {
                    op: "labels",
                    left: vec![n],
                    right: vec![l.len()],
                });
            }
        }
        Ok(Self {
            positions,
            normals,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[f32] {
        &self.positions
    }

    pub fn normals(&self) -> Option<&[f32]> {
        self.normals.as_deref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn position(&self, i: usize) -> [f32; 3] {
        [self.positions[3 * i], self.positions[3 * i + 1], self.positions[3 * i + 2]]
    }

    /// Points `ids[0], ids[1], …` in that order, with normals and labels
    /// carried along. Also serves as a permutation.
    pub fn subset(&self, ids: &[usize]) -> Result<Self> {
        let n = self.len();
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange {
                op: "subset",
                index: bad,
                len: n,
            });
        }
        let pick3 = |v: &[f32]| ids.iter().flat_map(|&i| v[3 * i..3 * i + 3].iter().copied()).collect();
        Self::new(
            pick3(&self.positions),
            self.normals.as_deref().map(pick3),
            self.labels.as_ref().map(|l| ids.iter().map(|&i| l[i]).collect()),
        )
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Shape {
                op: "labels",
                left: vec![self.len()],
                right: vec![labels.len()],
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }
}

/// Sorted indices of a uniform subsample without replacement keeping
/// `max(1, round(n·keep_ratio))` points.
pub fn dropout_indices<R: Rng + ?Sized>(n: usize, keep_ratio: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("keep ratio {keep_ratio} outside (0, 1]")));
    }
    if n == 0 {
        return Err(Error::EmptySource);
    }
    let keep = ((n as f64 * keep_ratio).round() as usize).clamp(1, n);
    if keep == n {
        return Ok((0..n).collect());
    }
    let mut ids = rand::seq::index::sample(rng, n, keep).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Random point dropout; surviving points keep their original order.
pub fn random_dropout<R: Rng + ?Sized>(cloud: &PointCloud, keep_ratio: f64, rng: &mut R) -> Result<PointCloud> {
    let ids = dropout_indices(cloud.len(), keep_ratio, rng)?;
    cloud.subset(&ids)
}
