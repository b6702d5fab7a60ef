//! Experiment configuration files and the train/evaluate runners.
//!
//! A config file holds `key = value` lines; `#` starts a comment. Unknown or
//! repeated keys are errors. See the crate README for the key list.

use std::collections::BTreeMap;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::dataset::{LoadOptions, Manifest};
use super::metrics::{compute_metrics, Instance, MetricTask, MetricsReport};
use super::synth::{classification_set, segmentation_set, ShapeKind};
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::geometry::{RadiusBounds, Space};
use crate::layers::EpMode;
use crate::models::{parse_hierarchies, Example, ForwardOptions, Network, NetworkConfig, Optimizer, Task, TrainState};

const KEYS: &[&str] = &[
    "task",
    "preset",
    "encoder",
    "decoder",
    "rates",
    "k",
    "k_interp",
    "subsample_rate",
    "projection",
    "fc_sizes",
    "seg_head",
    "num_classes",
    "input_normals",
    "use_pac",
    "ep_mode",
    "use_css",
    "use_csu",
    "use_global_feature",
    "use_aux_losses",
    "dynamic_fps",
    "feature_norm",
    "pac_space",
    "w_mmd",
    "w_ds",
    "mmd_sigma",
    "seed",
    "lr",
    "optimizer",
    "momentum",
    "epochs",
    "batch_size",
    "lr_schedule",
    "lr_min_ratio",
    "data",
    "train_manifest",
    "test_manifest",
    "block_size",
    "max_points",
    "shapes",
    "train_per_class",
    "test_per_class",
    "train_count",
    "test_count",
    "points",
    "noise",
    "keep_ratios",
    "r_min",
    "r_max",
];

/// Replaces (or appends) `key = value` lines in config text, dropping any
/// earlier line for the same key.
pub fn apply_overrides(text: &str, overrides: &[(&str, String)]) -> String {
    let key_of = |line: &str| {
        let content = line.split('#').next().unwrap_or("");
        content.split_once('=').map(|(k, _)| k.trim().to_string())
    };
    let mut out: String = text
        .lines()
        .filter(|l| key_of(l).is_none_or(|k| !overrides.iter().any(|(o, _)| *o == k)))
        .map(|l| format!("{l}\n"))
        .collect();
    for (k, v) in overrides {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Synthetic {
        shapes: Vec<ShapeKind>,
        train_per_class: usize,
        test_per_class: usize,
        train_count: usize,
        test_count: usize,
        points: usize,
        noise: f64,
    },
    Manifest {
        train: PathBuf,
        test: PathBuf,
        load: LoadOptions,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub data: DataSpec,
    pub keep_ratios: Vec<f64>,
    pub bounds: RadiusBounds,
    values: BTreeMap<String, (usize, String)>,
}

fn parse_value<T: std::str::FromStr>(key: &str, line: usize, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad value {v:?} for {key}"),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, line: usize, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, line, s))
        .collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: "expected key = value".into(),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown key {k:?}"),
                });
            }
            if values.insert(k.to_string(), (line, v.to_string())).is_some() {
                return Err(Error::Parse {
                    line,
                    msg: format!("duplicate key {k:?}"),
                });
            }
        }
        let mut cfg = Self {
            task: Task::Classification,
            seed: 0,
            optimizer: Optimizer::default(),
            epochs: 10,
            batch_size: 8,
            schedule: LrSchedule::Constant,
            data: DataSpec::Synthetic {
                shapes: ShapeKind::CLASSES.to_vec(),
                train_per_class: 100,
                test_per_class: 25,
                train_count: 64,
                test_count: 16,
                points: 256,
                noise: 0.01,
            },
            keep_ratios: vec![1.0, 0.75, 0.5, 0.25],
            bounds: RadiusBounds::new(0.0, 0.5)?,
            values,
        };
        cfg.task = match cfg.get("task") {
            None | Some((_, "classification")) => Task::Classification,
            Some((_, "segmentation")) => Task::Segmentation,
            Some((line, v)) => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown task {v:?}"),
                })
            }
        };
        cfg.seed = cfg.num("seed")?.unwrap_or(0);
        cfg.epochs = cfg.num("epochs")?.unwrap_or(10);
        cfg.batch_size = cfg.num("batch_size")?.unwrap_or(8);
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let lr = cfg.num("lr")?.unwrap_or(1e-3);
        cfg.optimizer = match cfg.get("optimizer") {
            None | Some((_, "adam")) => Optimizer::adam(lr),
            Some((_, "momentum")) => Optimizer::Momentum {
                lr,
                momentum: cfg.num("momentum")?.unwrap_or(0.9),
            },
            Some((line, v)) => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown optimizer {v:?}"),
                })
            }
        };
        cfg.schedule = match cfg.get("lr_schedule") {
            None | Some((_, "constant")) => LrSchedule::Constant,
            Some((_, "cosine")) => LrSchedule::Cosine {
                min_ratio: cfg.num("lr_min_ratio")?.unwrap_or(0.05),
            },
            Some((line, v)) => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown lr_schedule {v:?}"),
                })
            }
        };
        if let Some(r) = cfg.list("keep_ratios")? {
            cfg.keep_ratios = r;
        }
        cfg.bounds = RadiusBounds::new(cfg.num("r_min")?.unwrap_or(0.0), cfg.num("r_max")?.unwrap_or(0.5))?;
        cfg.data = match cfg.get("data") {
            None | Some((_, "synthetic")) => DataSpec::Synthetic {
                shapes: match cfg.get("shapes") {
                    None => ShapeKind::CLASSES.to_vec(),
                    Some((line, v)) => parse_list("shapes", line, v)?,
                },
                train_per_class: cfg.num("train_per_class")?.unwrap_or(100),
                test_per_class: cfg.num("test_per_class")?.unwrap_or(25),
                train_count: cfg.num("train_count")?.unwrap_or(64),
                test_count: cfg.num("test_count")?.unwrap_or(16),
                points: cfg.num("points")?.unwrap_or(256),
                noise: cfg.num("noise")?.unwrap_or(0.01),
            },
            Some((_, "manifest")) => {
                let path = |key: &str| -> Result<PathBuf> {
                    let (_, v) = cfg
                        .get(key)
                        .ok_or_else(|| Error::Config(format!("data = manifest needs {key}")))?;
                    Ok(base_dir.join(v))
                };
                DataSpec::Manifest {
                    train: path("train_manifest")?,
                    test: path("test_manifest")?,
                    load: LoadOptions {
                        block_size: cfg.num("block_size")?,
                        max_points: cfg.num("max_points")?,
                    },
                }
            }
            Some((line, v)) => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown data source {v:?}"),
                })
            }
        };
        cfg.network_config(cfg.num("num_classes")?.unwrap_or(2))?.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path)?, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            seed: self.seed,
            optimizer: self.optimizer,
            epochs: self.epochs,
            batch_size: self.batch_size,
            schedule: self.schedule,
        }
    }

    fn get(&self, key: &str) -> Option<(usize, &str)> {
        self.values.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key).map(|(l, v)| parse_value(key, l, v)).transpose()
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.get(key).map(|(l, v)| parse_list(key, l, v)).transpose()
    }

    fn flag(&self, key: &str) -> Result<Option<bool>> {
        self.num(key)
    }

    /// Network configuration: the preset for the task, then every override
    /// from the file. An explicit `num_classes` key wins over the argument.
    pub fn network_config(&self, num_classes: usize) -> Result<NetworkConfig> {
        let num_classes = self.num("num_classes")?.unwrap_or(num_classes);
        let mut n = match (self.get("preset").map(|p| p.1), self.task) {
            (None | Some("desk"), Task::Classification) => NetworkConfig::desk_classifier(num_classes),
            (None | Some("desk"), Task::Segmentation) => NetworkConfig::desk_segmenter(num_classes),
            (Some("canonical"), Task::Classification) => NetworkConfig::canonical_classifier(num_classes),
            (Some("canonical"), Task::Segmentation) => NetworkConfig::canonical_segmenter(num_classes),
            (Some(p), _) => return Err(Error::Config(format!("unknown preset {p:?}"))),
        };
        if let Some((_, v)) = self.get("encoder") {
            n.encoder = parse_hierarchies(v)?.1;
        }
        if let Some((_, v)) = self.get("decoder") {
            if self.task == Task::Classification {
                return Err(Error::Config("decoder given for a classification task".into()));
            }
            n.decoder = Some(parse_hierarchies(v)?.1);
        }
        if let Some(rates) = self.list::<usize>("rates")? {
            for h in &mut n.encoder {
                for (l, r) in h.iter_mut().zip(rates.iter().cycle()) {
                    l.rate = *r;
                }
            }
            for h in n.decoder.iter_mut().flatten() {
                for (l, r) in h.iter_mut().zip(rates.iter().rev().cycle()) {
                    l.rate = *r;
                }
            }
        }
        macro_rules! set {
            ($field:ident, num) => {
                if let Some(v) = self.num(stringify!($field))? {
                    n.$field = v;
                }
            };
            ($field:ident, flag) => {
                if let Some(v) = self.flag(stringify!($field))? {
                    n.$field = v;
                }
            };
            ($field:ident, list) => {
                if let Some(v) = self.list(stringify!($field))? {
                    n.$field = v;
                }
            };
        }
        set!(k, num);
        set!(subsample_rate, num);
        set!(projection, num);
        set!(mmd_sigma, num);
        set!(fc_sizes, list);
        set!(seg_head, list);
        set!(input_normals, flag);
        set!(use_pac, flag);
        set!(use_css, flag);
        set!(use_csu, flag);
        set!(use_global_feature, flag);
        set!(use_aux_losses, flag);
        set!(dynamic_fps, flag);
        set!(feature_norm, flag);
        if let Some(v) = self.num("k_interp")? {
            n.k_interp = Some(v);
        }
        if let Some((_, v)) = self.get("ep_mode") {
            n.ep_mode = EpMode::parse(v)?;
        }
        if let Some((line, v)) = self.get("pac_space") {
            n.pac_space = match v {
                "feature" => Space::Feature,
                "metric" => Space::Metric,
                _ => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown pac_space {v:?}"),
                    })
                }
            };
        }
        if let Some(v) = self.num("w_mmd")? {
            n.loss_weights.w_mmd = v;
        }
        if let Some(v) = self.num("w_ds")? {
            n.loss_weights.w_ds = v;
        }
        n.validate()?;
        Ok(n)
    }
}

/// Train and test examples plus what the metrics need to know about them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub num_classes: usize,
    /// Part labels per object category (segmentation).
    pub category_parts: Option<Vec<Vec<usize>>>,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSpec::Synthetic {
            shapes,
            train_per_class,
            test_per_class,
            train_count,
            test_count,
            points,
            noise,
        } => match cfg.task {
            Task::Classification => Ok(Dataset {
                train: classification_set(shapes, *train_per_class, *points, *noise, cfg.seed)?,
                test: classification_set(shapes, *test_per_class, *points, *noise, cfg.seed ^ 0xFFFF_FFFF)?,
                num_classes: shapes.len(),
                category_parts: None,
            }),
            Task::Segmentation => Ok(Dataset {
                train: segmentation_set(*train_count, *points, *noise, cfg.seed)?,
                test: segmentation_set(*test_count, *points, *noise, cfg.seed ^ 0xFFFF_FFFF)?,
                num_classes: 2,
                category_parts: Some(vec![vec![0, 1]]),
            }),
        },
        DataSpec::Manifest { train, test, load } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let train = Manifest::read(train)?.load(load, &mut rng)?;
            let test = Manifest::read(test)?.load(load, &mut rng)?;
            match cfg.task {
                Task::Classification => {
                    let num_classes = train.iter().chain(&test).map(|e| e.label + 1).max().unwrap_or(1);
                    Ok(Dataset {
                        train,
                        test,
                        num_classes,
                        category_parts: None,
                    })
                }
                Task::Segmentation => {
                    let all: Vec<Example> = train.iter().chain(&test).cloned().collect();
                    let (num_classes, parts) = category_parts(&all)?;
                    Ok(Dataset {
                        train,
                        test,
                        num_classes,
                        category_parts: Some(parts),
                    })
                }
            }
        }
    }
}

/// Part labels seen per object category, and the number of part labels
/// overall, for labelled segmentation examples.
pub fn category_parts(examples: &[Example]) -> Result<(usize, Vec<Vec<usize>>)> {
    let mut parts: Vec<Vec<usize>> = Vec::new();
    let mut num_classes = 0;
    for e in examples {
        let labels = e
            .cloud
            .labels()
            .ok_or_else(|| Error::InvalidArgument("segmentation cloud without labels".into()))?;
        if parts.len() <= e.label {
            parts.resize(e.label + 1, Vec::new());
        }
        for &l in labels {
            num_classes = num_classes.max(l + 1);
            if !parts[e.label].contains(&l) {
                parts[e.label].push(l);
            }
        }
    }
    parts.iter_mut().for_each(|p| p.sort_unstable());
    Ok((num_classes, parts))
}

/// Predicts every example on parallel workers and aggregates in input order.
pub fn evaluate(
    network: &Network,
    params: &ParamStore<f32>,
    examples: &[Example],
    category_parts: Option<&[Vec<usize>]>,
    opts: &ForwardOptions,
) -> Result<MetricsReport> {
    let preds = examples
        .par_iter()
        .map(|e| network.predict(params, &e.cloud, opts))
        .collect::<Result<Vec<_>>>()?;
    let cfg = network.config();
    match cfg.task {
        Task::Classification => {
            let gt: Vec<[usize; 1]> = examples.iter().map(|e| [e.label]).collect();
            let inst: Vec<Instance> = preds
                .iter()
                .zip(&gt)
                .map(|(p, g)| Instance {
                    pred: p,
                    gt: g,
                    category: g[0],
                })
                .collect();
            compute_metrics(&inst, MetricTask::Classification, cfg.num_classes, None)
        }
        Task::Segmentation => {
            let inst = preds
                .iter()
                .zip(examples)
                .map(|(p, e)| {
                    Ok(Instance {
                        pred: p,
                        gt: e
                            .cloud
                            .labels()
                            .ok_or_else(|| Error::InvalidArgument("segmentation cloud without labels".into()))?,
                        category: e.label,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            compute_metrics(&inst, MetricTask::PartSeg, cfg.num_classes, category_parts)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub master: f64,
    pub mmd: f64,
    pub ds: f64,
    pub all: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the base rate down to `min_ratio` times it over the
    /// planned epochs.
    Cosine { min_ratio: f64 },
}

impl LrSchedule {
    pub fn factor(&self, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine { min_ratio } => {
                let t = epoch as f64 / epochs.max(1) as f64;
                min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub seed: u64,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
}

/// Mini-batch training over shuffled epochs. The shuffle for each epoch is
/// derived from `(seed, epoch)`. `on_epoch` may stop training early.
pub fn train_model(
    cfg: &NetworkConfig,
    opts: &TrainOptions,
    train: &[Example],
    mut on_epoch: impl FnMut(&TrainState, &EpochLog) -> ControlFlow<()>,
) -> Result<(TrainState, Vec<EpochLog>)> {
    if train.is_empty() || opts.batch_size == 0 {
        return Err(Error::InvalidArgument("training needs examples and batch_size >= 1".into()));
    }
    let mut state = TrainState::new(cfg, opts.seed, opts.optimizer)?;
    let mut log = Vec::with_capacity(opts.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let base_lr = opts.optimizer.lr();
    for epoch in 0..opts.epochs {
        state.set_learning_rate(base_lr * opts.schedule.factor(epoch, opts.epochs))?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut batches = 0;
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| train[i].clone()).collect();
            let r = state.train_step(&batch)?;
            for (s, v) in sums.iter_mut().zip([r.master, r.mmd, r.ds, r.all]) {
                *s += v;
            }
            batches += 1;
        }
        let b = batches as f64;
        let entry = EpochLog {
            epoch: epoch + 1,
            master: sums[0] / b,
            mmd: sums[1] / b,
            ds: sums[2] / b,
            all: sums[3] / b,
        };
        log.push(entry);
        if on_epoch(&state, &entry).is_break() {
            break;
        }
    }
    Ok((state, log))
}

pub fn train_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,master,mmd,ds,all\n");
    for e in log {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            e.epoch, e.master, e.mmd, e.ds, e.all
        ));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub task: Task,
    pub seed: u64,
    pub epochs_run: usize,
    pub num_params: usize,
    pub train: MetricsReport,
    pub test: MetricsReport,
}

/// Trains on the configured data and writes `model.ckpt`, `train_log.csv`,
/// `metrics.csv` (test set) and `report.json` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    let data = load_dataset(cfg)?;
    let net_cfg = cfg.network_config(data.num_classes)?;
    let (state, log) = train_model(&net_cfg, &cfg.train_options(), &data.train, |_, _| ControlFlow::Continue(()))?;
    let opts = ForwardOptions::default();
    let parts = data.category_parts.as_deref();
    let report = RunReport {
        task: cfg.task,
        seed: cfg.seed,
        epochs_run: log.len(),
        num_params: state.network().num_params(),
        train: evaluate(state.network(), state.params(), &data.train, parts, &opts)?,
        test: evaluate(state.network(), state.params(), &data.test, parts, &opts)?,
    };
    fs::create_dir_all(out_dir)?;
    state.save(out_dir.join("model.ckpt"))?;
    fs::write(out_dir.join("train_log.csv"), train_log_csv(&log))?;
    fs::write(out_dir.join("metrics.csv"), report.test.to_csv())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fs::write(out_dir.join("report.json"), json + "\n")?;
    Ok(report)
}
