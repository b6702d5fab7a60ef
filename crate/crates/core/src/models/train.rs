use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{NetworkConfig, Task};
use super::network::{ForwardOptions, Network};
use crate::autodiff::{Bound, Checkpoint, MetaValue, NamedTensor, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::losses::{deeply_supervised_loss, joint_loss, mmd_loss, LossWeights, MmdConfig};

/// A training cloud. For classification `label` is the class; segmentation
/// reads per-point labels from the cloud and uses `label` as the object
/// category.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub cloud: PointCloud,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    Momentum { lr: f64, momentum: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn momentum(lr: f64) -> Self {
        Optimizer::Momentum { lr, momentum: 0.9 }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::Adam { lr, .. } | Optimizer::Momentum { lr, .. } => lr,
        }
    }

    pub fn with_lr(self, new: f64) -> Self {
        match self {
            Optimizer::Adam { beta1, beta2, eps, .. } => Optimizer::Adam {
                lr: new,
                beta1,
                beta2,
                eps,
            },
            Optimizer::Momentum { momentum, .. } => Optimizer::Momentum { lr: new, momentum },
        }
    }
}

/// Loss components of one step, averaged over the batch where applicable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossRecord {
    pub master: f64,
    pub mmd: f64,
    pub ds: f64,
    pub all: f64,
}

/// Parameters, optimiser moments, step counter, seed and loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    network: Network,
    params: ParamStore<f32>,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: u64,
    seed: u64,
    weights: LossWeights,
    optimizer: Optimizer,
}

struct LossVars {
    master: Var,
    mmd: Option<Var>,
    ds: Option<Var>,
    all: Var,
}

impl TrainState {
    pub fn new(cfg: &NetworkConfig, seed: u64, optimizer: Optimizer) -> Result<Self> {
        let network = Network::build(cfg)?;
        let params = network.init_params(seed);
        let zeros: Vec<Vec<f32>> = params.values().iter().map(|p| vec![0.0; p.len()]).collect();
        Ok(Self {
            network,
            params,
            m: zeros.clone(),
            v: zeros,
            step: 0,
            seed,
            weights: cfg.loss_weights,
            optimizer,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    pub fn set_weights(&mut self, w: LossWeights) -> Result<()> {
        w.validate()?;
        self.weights = w;
        Ok(())
    }

    pub fn optimizer(&self) -> Optimizer {
        self.optimizer
    }

    pub fn set_learning_rate(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
        }
        self.optimizer = self.optimizer.with_lr(lr);
        Ok(())
    }

    /// Randomness for step `step` depends only on the seed and the step, so a
    /// reloaded checkpoint continues exactly where it stopped.
    fn step_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.step);
        rng
    }

    fn losses(&self, tape: &mut Tape<f32>, bound: &Bound, batch: &[Example]) -> Result<LossVars> {
        let net = &self.network;
        let cfg = net.config();
        let opts = ForwardOptions::default();
        let aux = cfg.use_aux_losses;
        let mut master_terms = Vec::with_capacity(batch.len());
        let mut ds_terms = Vec::new();
        let mut embeddings = Vec::new();
        for ex in batch {
            match cfg.task {
                Task::Classification => {
                    let out = net.classify_forward(tape, bound, &ex.cloud, &opts)?;
                    master_terms.push(tape.softmax_cross_entropy(out.logits, &[ex.label])?);
                }
                Task::Segmentation => {
                    let labels = ex
                        .cloud
                        .labels()
                        .ok_or_else(|| Error::InvalidArgument("segmentation example without point labels".into()))?;
                    let out = net.segment_forward(tape, bound, &ex.cloud, &opts)?;
                    master_terms.push(tape.softmax_cross_entropy(out.logits, labels)?);
                    if let Some((logits, ids)) = &out.ds {
                        ds_terms.push(deeply_supervised_loss(tape, *logits, ids, labels)?);
                    }
                    embeddings.push(out.embedding);
                }
            }
        }
        let master = batch_mean(tape, &master_terms)?;
        let ds = if ds_terms.is_empty() {
            None
        } else {
            Some(batch_mean(tape, &ds_terms)?)
        };
        let mmd = if aux && !embeddings.is_empty() {
            let z = tape.concat_rows(&embeddings)?;
            let mmd_cfg = MmdConfig {
                sigma: cfg.mmd_sigma,
                ..MmdConfig::default()
            };
            Some(mmd_loss(tape, z, &mmd_cfg, &mut self.step_rng())?)
        } else {
            None
        };
        let all = joint_loss(tape, master, mmd, ds, &self.weights)?;
        Ok(LossVars { master, mmd, ds, all })
    }

    fn record(tape: &Tape<f32>, l: &LossVars) -> LossRecord {
        let val = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar_value(v) as f64);
        LossRecord {
            master: tape.scalar_value(l.master) as f64,
            mmd: val(l.mmd),
            ds: val(l.ds),
            all: tape.scalar_value(l.all) as f64,
        }
    }

    /// Loss components on `batch` without updating anything.
    pub fn evaluate_losses(&self, batch: &[Example]) -> Result<LossRecord> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape)?;
        let l = self.losses(&mut tape, &bound, batch)?;
        Ok(Self::record(&tape, &l))
    }

    /// One optimiser step on the joint loss of `batch`.
    pub fn train_step(&mut self, batch: &[Example]) -> Result<LossRecord> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty training batch".into()));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape)?;
        let l = self.losses(&mut tape, &bound, batch)?;
        let record = Self::record(&tape, &l);
        if !record.all.is_finite() {
            return Err(Error::NonFinite { op: "training loss" });
        }
        tape.backward(l.all)?;
        let grads = self.params.gradients(&tape, &bound);
        self.apply(&grads);
        self.step += 1;
        Ok(record)
    }

    fn apply(&mut self, grads: &[Vec<f32>]) {
        let t = (self.step + 1) as i32;
        for (p, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[p], &mut self.v[p]);
            let w = self.params.value_mut(p);
            match self.optimizer {
                Optimizer::Adam { lr, beta1, beta2, eps } => {
                    let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
                    for i in 0..w.len() {
                        let gi = g[i] as f64;
                        let mi = beta1 * m[i] as f64 + (1.0 - beta1) * gi;
                        let vi = beta2 * v[i] as f64 + (1.0 - beta2) * gi * gi;
                        m[i] = mi as f32;
                        v[i] = vi as f32;
                        let upd = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                        w[i] = (w[i] as f64 - upd) as f32;
                    }
                }
                Optimizer::Momentum { lr, momentum } => {
                    for i in 0..w.len() {
                        let mi = momentum * m[i] as f64 + g[i] as f64;
                        m[i] = mi as f32;
                        w[i] = (w[i] as f64 - lr * mi) as f32;
                    }
                }
            }
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let names = self.params.names();
        let mut tensors = Vec::with_capacity(3 * names.len());
        for (prefix, values) in [("", self.params.values()), ("opt.m.", &self.m[..]), ("opt.v.", &self.v[..])] {
            for (i, name) in names.iter().enumerate() {
                tensors.push(NamedTensor {
                    name: format!("{prefix}{name}"),
                    shape: self.params.shape(i).to_vec(),
                    data: values[i].clone(),
                });
            }
        }
        let json = |e: serde_json::Error| Error::Checkpoint(e.to_string());
        let meta = vec![
            ("format".to_string(), MetaValue::U64(1)),
            ("step".to_string(), MetaValue::U64(self.step)),
            ("seed".to_string(), MetaValue::U64(self.seed)),
            ("w_mmd".to_string(), MetaValue::F64(self.weights.w_mmd)),
            ("w_ds".to_string(), MetaValue::F64(self.weights.w_ds)),
            (
                "optimizer".to_string(),
                MetaValue::Str(serde_json::to_string(&self.optimizer).map_err(json)?),
            ),
            (
                "config".to_string(),
                MetaValue::Str(serde_json::to_string(self.network.config()).map_err(json)?),
            ),
        ];
        Ok(Checkpoint { tensors, meta })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let json = |e: serde_json::Error| Error::Checkpoint(e.to_string());
        let cfg: NetworkConfig = serde_json::from_str(ck.meta_str("config")?).map_err(json)?;
        let optimizer: Optimizer = serde_json::from_str(ck.meta_str("optimizer")?).map_err(json)?;
        let mut state = Self::new(&cfg, ck.meta_u64("seed")?, optimizer)?;
        state.step = ck.meta_u64("step")?;
        state.weights = LossWeights {
            w_mmd: ck.meta_f64("w_mmd")?,
            w_ds: ck.meta_f64("w_ds")?,
        };
        let names = state.params.names().to_vec();
        for (i, name) in names.iter().enumerate() {
            let shape = state.params.shape(i).to_vec();
            let fetch = |full: String| -> Result<Vec<f32>> {
                let t = ck
                    .tensor(&full)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {full}")))?;
                if t.shape != shape {
                    return Err(Error::Checkpoint(format!(
                        "tensor {full} has shape {:?}, network expects {shape:?}",
                        t.shape
                    )));
                }
                Ok(t.data.clone())
            };
            state.params.value_mut(i).copy_from_slice(&fetch(name.clone())?);
            state.m[i] = fetch(format!("opt.m.{name}"))?;
            state.v[i] = fetch(format!("opt.v.{name}"))?;
        }
        Ok(state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn batch_mean(tape: &mut Tape<f32>, terms: &[Var]) -> Result<Var> {
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    tape.scale(total, 1.0 / terms.len() as f32)
}
