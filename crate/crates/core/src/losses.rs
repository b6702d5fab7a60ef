//! Training objectives: master cross-entropy, kernel MMD against a Gaussian
//! prior, the deeply supervised coarse loss and their weighted sum.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomBackward, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdConfig {
    /// Gaussian kernel bandwidth σ_k.
    pub sigma: f64,
    pub prior_mean: f64,
    pub prior_std: f64,
    /// Prior samples per evaluation; `None` matches the number of embedded rows.
    pub prior_samples: Option<usize>,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            prior_mean: 0.0,
            prior_std: 1.0,
            prior_samples: None,
        }
    }
}

impl MmdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.prior_std > 0.0) || self.prior_samples == Some(0) {
            return Err(Error::Config(format!("invalid mmd config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_mmd: f64,
    pub w_ds: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_mmd: 0.1, w_ds: 0.4 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self { w_mmd: 0.0, w_ds: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_mmd >= 0.0 && self.w_ds >= 0.0) {
            return Err(Error::Config(format!("loss weights must be >= 0, got {self:?}")));
        }
        Ok(())
    }
}

fn rbf(a: &[f64], b: &[f64], inv_two_sigma2: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 * inv_two_sigma2).exp()
}

fn mean_kernel(x: &[f64], y: &[f64], d: usize, inv: f64) -> f64 {
    let (nx, ny) = (x.len() / d, y.len() / d);
    let mut s = 0.0;
    for a in x.chunks_exact(d) {
        for b in y.chunks_exact(d) {
            s += rbf(a, b, inv);
        }
    }
    s / (nx * ny) as f64
}

/// Biased (V-statistic) squared MMD between two sample sets of `d`-dimensional
/// rows under a Gaussian kernel. Rounding can push the exact-zero case a few
/// ulps negative; the result is clamped at 0.
pub fn mmd_value(x: &[f64], y: &[f64], d: usize, sigma: f64) -> Result<f64> {
    if d == 0 || x.is_empty() || y.is_empty() || x.len() % d != 0 || y.len() % d != 0 {
        return Err(Error::Shape {
            op: "mmd",
            left: vec![x.len(), d],
            right: vec![y.len(), d],
        });
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let v = mean_kernel(x, x, d, inv) + mean_kernel(y, y, d, inv) - 2.0 * mean_kernel(x, y, d, inv);
    Ok(v.max(0.0))
}

struct MmdBackward {
    d: usize,
    sigma: f64,
}

impl<T: Real> CustomBackward<T> for MmdBackward {
    fn backward(&self, inputs: &[&Tensor<T>], grad_out: &[T]) -> Vec<Option<Vec<T>>> {
        let x: Vec<f64> = inputs[0].data().iter().map(|v| v.as_f64()).collect();
        let y: Vec<f64> = inputs[1].data().iter().map(|v| v.as_f64()).collect();
        let d = self.d;
        let (nx, ny) = ((x.len() / d) as f64, (y.len() / d) as f64);
        let s2 = self.sigma * self.sigma;
        let inv = 1.0 / (2.0 * s2);
        let g = grad_out[0].as_f64();
        let mut grad = vec![0.0; x.len()];
        for (i, xi) in x.chunks_exact(d).enumerate() {
            let gi = &mut grad[i * d..(i + 1) * d];
            // Both arguments of the self term depend on x, hence the factor 2.
            for xj in x.chunks_exact(d) {
                let k = rbf(xi, xj, inv) * 2.0 / (nx * nx);
                for c in 0..d {
                    gi[c] -= k * (xi[c] - xj[c]) / s2;
                }
            }
            for yj in y.chunks_exact(d) {
                let k = rbf(xi, yj, inv) * 2.0 / (nx * ny);
                for c in 0..d {
                    gi[c] += k * (xi[c] - yj[c]) / s2;
                }
            }
        }
        vec![Some(grad.into_iter().map(|v| T::cast(v * g)).collect()), None]
    }
}

/// MMD of the rows of `embedded: [B, D]` against explicit prior samples
/// `prior: [P, D]` (a constant). Differentiable w.r.t. `embedded`.
pub fn mmd_against<T: Real>(tape: &mut Tape<T>, embedded: Var, prior: Var, sigma: f64) -> Result<Var> {
    let (es, ps) = (tape.shape(embedded).to_vec(), tape.shape(prior).to_vec());
    let (d, pd) = match (es.as_slice(), ps.as_slice()) {
        ([_, d], [_, pd]) => (*d, *pd),
        _ => (0, 1),
    };
    if d != pd || d == 0 {
        return Err(Error::Shape {
            op: "mmd",
            left: es,
            right: ps,
        });
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("mmd bandwidth must be > 0, got {sigma}")));
    }
    let x: Vec<f64> = tape.value(embedded).iter().map(|v| v.as_f64()).collect();
    let y: Vec<f64> = tape.value(prior).iter().map(|v| v.as_f64()).collect();
    let v = mmd_value(&x, &y, d, sigma)?;
    tape.custom(
        "mmd",
        &[embedded, prior],
        vec![1],
        vec![T::cast(v)],
        Box::new(MmdBackward { d, sigma }),
    )
}

/// Draws `[P, D]` samples from the configured Gaussian prior.
pub fn sample_prior<R: Rng + ?Sized>(cfg: &MmdConfig, rows: usize, d: usize, rng: &mut R) -> Result<Vec<f64>> {
    let normal = Normal::new(cfg.prior_mean, cfg.prior_std).map_err(|e| Error::Config(e.to_string()))?;
    Ok((0..rows * d).map(|_| normal.sample(rng)).collect())
}

/// MMD between `embedded: [B, D]` and freshly drawn prior samples.
pub fn mmd_loss<T: Real, R: Rng + ?Sized>(tape: &mut Tape<T>, embedded: Var, cfg: &MmdConfig, rng: &mut R) -> Result<Var> {
    cfg.validate()?;
    let (b, d) = match tape.shape(embedded) {
        [b, d] => (*b, *d),
        other => {
            return Err(Error::Shape {
                op: "mmd",
                left: other.to_vec(),
                right: vec![0, 0],
            })
        }
    };
    if b == 0 {
        return Err(Error::EmptyReduction { op: "mmd" });
    }
    let p = cfg.prior_samples.unwrap_or(b);
    let samples = sample_prior(cfg, p, d, rng)?;
    let prior = tape.constant(vec![p, d], samples.into_iter().map(T::cast).collect())?;
    mmd_against(tape, embedded, prior, cfg.sigma)
}

/// Cross-entropy of coarse per-point logits `[M, C]` against the full-cloud
/// labels gathered at `centroid_ids`.
pub fn deeply_supervised_loss<T: Real>(
    tape: &mut Tape<T>,
    coarse_logits: Var,
    centroid_ids: &[usize],
    full_labels: &[usize],
) -> Result<Var> {
    let labels = centroid_ids
        .iter()
        .map(|&i| {
            full_labels.get(i).copied().ok_or(Error::IndexOutOfRange {
                op: "deeply supervised labels",
                index: i,
                len: full_labels.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    tape.softmax_cross_entropy(coarse_logits, &labels)
}

/// `master + w_mmd·mmd + w_ds·ds`, skipping absent terms.
pub fn joint_loss<T: Real>(
    tape: &mut Tape<T>,
    master: Var,
    mmd: Option<Var>,
    ds: Option<Var>,
    w: &LossWeights,
) -> Result<Var> {
    w.validate()?;
    let mut total = master;
    for (term, weight) in [(mmd, w.w_mmd), (ds, w.w_ds)] {
        if let Some(t) = term {
            if !tape.scalar_value(t).is_finite() {
                return Err(Error::NonFinite { op: "joint_loss" });
            }
            let s = tape.scale(t, T::cast(weight))?;
            total = tape.add(total, s)?;
        }
    }
    Ok(total)
}
