//! Self-checks runnable from the command line: the finite-difference gradient
//! suite and the permutation-invariance probe.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{check_gradients, Bound, GradCheckConfig, Init, ParamLayout, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{FpsSeed, PointCloud, RowView, Space};
use crate::layers::{
    csu_forward, css_apply, ep_apply, eu_forward, global_max_pool, pac_forward, subsample_plan, EpMode, EuLayer,
    PacLayer,
};
use crate::losses::{deeply_supervised_loss, joint_loss, mmd_against, LossWeights};
use crate::models::{parse_hierarchies, ForwardOptions, Network, NetworkConfig, Task};

pub const MODULES: [&str; 4] = ["autodiff", "layers", "losses", "models"];

/// Relative-error threshold for single ops and layers.
pub const LAYER_TOL: f64 = 1e-5;
/// Relative-error threshold for the end-to-end network check.
pub const NETWORK_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct AuditEntry {
    pub module: String,
    pub check: String,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub seed: u64,
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }
}

fn rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f64> {
    (0..n * d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

fn glorot() -> Init {
    Init::Glorot { fan_in: 1, fan_out: 1 }
}

struct Runner {
    module: &'static str,
    seed: u64,
    entries: Vec<AuditEntry>,
}

impl Runner {
    fn check<F>(&mut self, name: &str, layout: &ParamLayout, tol: f64, f: F) -> Result<()>
    where
        F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
    {
        let params = ParamStore::init(layout, self.seed);
        let cfg = GradCheckConfig {
            tol,
            ..GradCheckConfig::default()
        };
        let report = check_gradients(f, &params, &cfg)?;
        self.entries.push(AuditEntry {
            module: self.module.into(),
            check: name.into(),
            max_rel_error: report.max_error(),
            tol,
            passed: report.passed(),
        });
        Ok(())
    }
}

fn audit_autodiff(r: &mut Runner, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut layout = ParamLayout::new();
    let x = layout.add("x", vec![6, 4], glorot());
    let w = layout.add("w", vec![4, 3], glorot());
    let b = layout.add("b", vec![3], glorot());
    let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
    r.check("linear_relu_cross_entropy", &layout, LAYER_TOL, |t, p| {
        let h = t.linear(p[x], p[w], Some(p[b]))?;
        let h = t.relu(h)?;
        t.softmax_cross_entropy(h, &labels)
    })?;
    let idx: Vec<usize> = (0..12).map(|_| rng.random_range(0..6)).collect();
    let weights: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
    r.check("gather_and_reduce", &layout, LAYER_TOL, |t, p| {
        let g = t.gather_rows(p[x], &idx)?;
        let g = t.reshape(g, vec![4, 3, 4])?;
        let m = t.reduce_max(g)?;
        let wg = t.weighted_gather(p[x], &idx, &weights, 4)?;
        let s = t.mul(m, wg)?;
        t.sum(s)
    })?;
    let scale = layout.add("scale", vec![4], Init::Ones);
    r.check("normalize_affine_concat", &layout, LAYER_TOL, |t, p| {
        let n = t.normalize_cols(p[x], 1e-5)?;
        let a = t.affine_cols(n, p[scale], p[scale])?;
        let c = t.concat_cols(&[a, p[x]])?;
        let c = t.mul(c, c)?;
        t.mean(c)
    })?;
    Ok(())
}

fn audit_layers(r: &mut Runner, rng: &mut ChaCha8Rng) -> Result<()> {
    for (rate, space) in [(1, Space::Feature), (2, Space::Feature), (2, Space::Metric)] {
        let mut layout = ParamLayout::new();
        let layer = PacLayer::new(&mut layout, "pac", 4, 5, 3, rate, space);
        let x = layout.add("x", vec![8, 4], glorot());
        let positions = rows(rng, 8, 3);
        r.check(&format!("pac_rate{rate}_{space:?}").to_lowercase(), &layout, LAYER_TOL, |t, p| {
            let y = pac_forward(t, p[x], &positions, &layer, p)?;
            t.sum(y)
        })?;
    }
    let positions = rows(rng, 16, 3);
    let plan = subsample_plan(&positions, RowView::new(&positions, 3)?, 4, 3, FpsSeed::MaxNorm, None)?;
    let mut layout = ParamLayout::new();
    let x = layout.add("x", vec![16, 6], glorot());
    let mix = layout.add("mix", vec![12, 1], glorot());
    for mode in [EpMode::Both, EpMode::Centroid, EpMode::Neighbors] {
        r.check(&format!("ep_{}", mode.as_str()), &layout, LAYER_TOL, |t, p| {
            let y = ep_apply(t, p[x], &plan, mode)?;
            let w = t.slice_rows(p[mix], 0..t.shape(y)[1])?;
            let y = t.linear(y, w, None)?;
            let y = t.mul(y, y)?;
            t.sum(y)
        })?;
    }
    r.check("css", &layout, LAYER_TOL, |t, p| {
        let y = css_apply(t, p[x], &plan)?;
        let y = t.mul(y, y)?;
        t.sum(y)
    })?;
    r.check("global_pool", &layout, LAYER_TOL, |t, p| {
        let g = global_max_pool(t, p[x])?;
        let w = t.slice_rows(p[mix], 0..6)?;
        t.linear(g, w, None)
    })?;
    let prev_pos = rows(rng, 5, 3);
    let target = rows(rng, 16, 3);
    let mut layout = ParamLayout::new();
    let prev = layout.add("prev", vec![5, 4], glorot());
    let skip = layout.add("skip", vec![16, 3], glorot());
    let head = layout.add("head", vec![7, 1], glorot());
    r.check("eu", &layout, LAYER_TOL, |t, p| {
        let y = eu_forward(t, p[prev], &prev_pos, &target, p[skip], &EuLayer { k_interp: 3 })?;
        let y = t.linear(y, p[head], None)?;
        let y = t.mul(y, y)?;
        t.sum(y)
    })?;
    r.check("csu", &layout, LAYER_TOL, |t, p| {
        let y = csu_forward(t, p[prev], &prev_pos, &target, 2)?;
        let y = t.mul(y, y)?;
        t.sum(y)
    })?;
    Ok(())
}

fn audit_losses(r: &mut Runner, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut layout = ParamLayout::new();
    let z = layout.add("z", vec![8, 6], glorot());
    let logits = layout.add("logits", vec![4, 3], glorot());
    let prior = rows(rng, 6, 6);
    let labels: Vec<usize> = (0..10).map(|_| rng.random_range(0..3)).collect();
    let ids = [1usize, 4, 6, 9];
    for sigma in [0.7, 1.0, 2.0] {
        r.check(&format!("mmd_sigma{sigma}"), &layout, LAYER_TOL, |t, p| {
            let y = t.constant(vec![6, 6], prior.clone())?;
            mmd_against(t, p[z], y, sigma)
        })?;
    }
    r.check("deeply_supervised", &layout, LAYER_TOL, |t, p| {
        deeply_supervised_loss(t, p[logits], &ids, &labels)
    })?;
    r.check("joint", &layout, LAYER_TOL, |t, p| {
        let y = t.constant(vec![6, 6], prior.clone())?;
        let mmd = mmd_against(t, p[z], y, 1.0)?;
        let ds = deeply_supervised_loss(t, p[logits], &ids, &labels)?;
        let master = t.softmax_cross_entropy(p[logits], &labels[..4])?;
        joint_loss(t, master, Some(mmd), Some(ds), &LossWeights::default())
    })?;
    Ok(())
}

/// Smallest segmenter that still exercises every path: two hierarchies,
/// atrous rates, CSS/CSU, the auxiliary head and the MMD embedding.
pub fn micro_segmenter() -> Result<NetworkConfig> {
    Ok(NetworkConfig {
        encoder: parse_hierarchies("E([8, 1], [8, 2]; [8, 1], [8, 2])")?.1,
        decoder: Some(parse_hierarchies("D([8, 2], [8, 1]; [8, 2], [8, 1])")?.1),
        k: 3,
        subsample_rate: 2,
        projection: 8,
        fc_sizes: vec![8, 8],
        seg_head: vec![8],
        num_classes: 3,
        ..NetworkConfig::desk_segmenter(3)
    })
}

fn audit_models(r: &mut Runner, rng: &mut ChaCha8Rng) -> Result<()> {
    let net = Network::build(&micro_segmenter()?)?;
    let labels: Vec<usize> = (0..16).map(|_| rng.random_range(0..3)).collect();
    let cloud = PointCloud::new(
        (0..48).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect(),
        None,
        Some(labels.clone()),
    )?;
    let prior = rows(rng, 2, 8);
    r.check("micro_segmenter_end_to_end", net.layout(), NETWORK_TOL, |t, p| {
        let out = net.segment_forward(t, p, &cloud, &ForwardOptions::default())?;
        let master = t.softmax_cross_entropy(out.logits, &labels)?;
        let (ds_logits, ids) = out
            .ds
            .clone()
            .ok_or_else(|| Error::Config("micro segmenter lost its auxiliary head".into()))?;
        let ds = deeply_supervised_loss(t, ds_logits, &ids, &labels)?;
        let y = t.constant(vec![2, 8], prior.clone())?;
        let mmd = mmd_against(t, out.embedding, y, 1.0)?;
        joint_loss(t, master, Some(mmd), Some(ds), &LossWeights::default())
    })
}

/// Runs the gradient suite for one module, or all of them when `module` is
/// `None`.
pub fn run_gradcheck(module: Option<&str>, seed: u64) -> Result<AuditReport> {
    if let Some(m) = module {
        if !MODULES.contains(&m) {
            return Err(Error::InvalidArgument(format!(
                "unknown module {m:?}, expected one of {}",
                MODULES.join(", ")
            )));
        }
    }
    let mut entries = Vec::new();
    for (i, name) in MODULES.iter().enumerate() {
        if module.is_some_and(|m| m != *name) {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut r = Runner {
            module: name,
            seed,
            entries: Vec::new(),
        };
        match *name {
            "autodiff" => audit_autodiff(&mut r, &mut rng)?,
            "layers" => audit_layers(&mut r, &mut rng)?,
            "losses" => audit_losses(&mut r, &mut rng)?,
            _ => audit_models(&mut r, &mut rng)?,
        }
        entries.extend(r.entries);
    }
    Ok(AuditReport { seed, entries })
}

#[derive(Debug, Clone, Serialize)]
pub struct InvarianceReport {
    pub task: Task,
    pub clouds: usize,
    pub perms_per_cloud: usize,
    pub max_deviation: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Largest absolute logit deviation between each cloud and `perms` random
/// reorderings of it. Per-point logits are mapped back through the inverse
/// permutation before comparing.
pub fn invariance_check(
    network: &Network,
    params: &ParamStore<f32>,
    clouds: &[PointCloud],
    perms: usize,
    seed: u64,
    tol: f64,
) -> Result<InvarianceReport> {
    let opts = ForwardOptions::default();
    let task = network.config().task;
    let classes = network.config().num_classes;
    let per_cloud = clouds
        .par_iter()
        .enumerate()
        .map(|(ci, cloud)| -> Result<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(ci as u64);
            let logits = |c: &PointCloud| match task {
                Task::Classification => network.class_logits(params, c, &opts),
                Task::Segmentation => network.point_logits(params, c, &opts),
            };
            let base = logits(cloud)?;
            let n = cloud.len();
            let mut worst = 0.0f64;
            for _ in 0..perms {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng);
                let out = logits(&cloud.subset(&perm)?)?;
                let dev = match task {
                    Task::Classification => max_abs_diff(&base, &out),
                    Task::Segmentation => perm
                        .iter()
                        .enumerate()
                        .map(|(j, &i)| {
                            max_abs_diff(&base[i * classes..(i + 1) * classes], &out[j * classes..(j + 1) * classes])
                        })
                        .fold(0.0, f64::max),
                };
                worst = worst.max(dev);
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    let max_deviation = per_cloud.into_iter().fold(0.0, f64::max);
    Ok(InvarianceReport {
        task,
        clouds: clouds.len(),
        perms_per_cloud: perms,
        max_deviation,
        tol,
        passed: max_deviation < tol,
    })
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .fold(0.0, f64::max)
}

/// Uniform random clouds in [−1, 1]³ whose pairwise distances are distinct
/// (re-drawn until every gap between sorted distances exceeds `1e-7`).
pub fn distinct_distance_clouds(count: usize, n: usize, seed: u64) -> Result<Vec<PointCloud>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let pos: Vec<f32> = (0..3 * n).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
        let mut d: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in 0..i {
                d.push(
                    (0..3)
                        .map(|a| (pos[3 * i + a] as f64 - pos[3 * j + a] as f64).powi(2))
                        .sum::<f64>()
                        .sqrt(),
                );
            }
        }
        d.sort_by(f64::total_cmp);
        if d.windows(2).all(|w| w[1] - w[0] > 1e-7) {
            out.push(PointCloud::new(pos, None, None)?);
        }
    }
    Ok(out)
}
