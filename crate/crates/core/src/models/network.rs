use super::config::{NetworkConfig, Task};
use crate::autodiff::{Bound, Init, Linear, ParamId, ParamLayout, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RadiusBounds, RowView};
use crate::layers::{
    css_apply, csu_apply, ep_apply, eu_apply, global_max_pool, interp_plan, subsample_plan, EpLayer, PointLayer,
};

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
struct Stage {
    layer: PointLayer,
    /// Per-channel scale and shift when feature normalisation is on.
    norm: Option<(ParamId, ParamId)>,
}

impl Stage {
    fn forward<T: Real>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var, positions: &[T]) -> Result<Var> {
        let y = self.layer.forward(tape, bound, x, positions)?;
        match self.norm {
            None => Ok(y),
            Some((gamma, beta)) => {
                let n = tape.normalize_cols(y, T::cast(NORM_EPS))?;
                tape.affine_cols(n, bound[gamma], bound[beta])
            }
        }
    }
}

/// Options that change a forward pass without changing parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ForwardOptions {
    /// Restrict pooling neighbourhoods to a distance band.
    pub bounds: Option<RadiusBounds>,
}

/// Point counts seen during one forward pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForwardTrace {
    /// Points at each encoder hierarchy.
    pub encoder_points: Vec<usize>,
    /// Points left after the last pooling step, where the projection runs.
    pub pooled_points: usize,
    /// Output points of each decoder stage.
    pub decoder_points: Vec<usize>,
    /// Rows of the deeply supervised logits.
    pub ds_points: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SegOutput {
    /// `[N, C]`, rows in input order.
    pub logits: Var,
    /// Coarse logits and the input indices of their rows.
    pub ds: Option<(Var, Vec<usize>)>,
    /// `[1, D]` global embedding.
    pub embedding: Var,
    pub trace: ForwardTrace,
}

#[derive(Debug, Clone)]
pub struct ClsOutput {
    /// `[1, C]`.
    pub logits: Var,
    pub trace: ForwardTrace,
}

struct Level<T> {
    positions: Vec<T>,
    ids: Vec<usize>,
    features: Var,
}

struct Encoded<T> {
    levels: Vec<Level<T>>,
    pooled_positions: Vec<T>,
    /// Projection output, joined with the chained skip branch when enabled.
    top: Var,
    trace: ForwardTrace,
}

/// A classification or segmentation network: parameter layout plus the
/// wiring needed to run it on a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    cfg: NetworkConfig,
    layout: ParamLayout,
    encoder: Vec<Vec<Stage>>,
    css: Vec<Linear>,
    projection: Linear,
    fc: Vec<Linear>,
    decoder: Vec<Vec<Stage>>,
    csu: Vec<Linear>,
    ds_head: Option<Linear>,
    seg_head: Vec<Linear>,
}

fn build_stage(layout: &mut ParamLayout, cfg: &NetworkConfig, name: &str, c_in: usize, c_out: usize, rate: usize) -> Stage {
    let layer = if cfg.use_pac {
        PointLayer::pac(layout, name, c_in, c_out, cfg.k, rate, cfg.pac_space)
    } else {
        PointLayer::mlp(layout, name, c_in, c_out)
    };
    let norm = cfg.feature_norm.then(|| {
        (
            layout.add(format!("{name}.norm.scale"), vec![c_out], Init::Ones),
            layout.add(format!("{name}.norm.shift"), vec![c_out], Init::Zeros),
        )
    });
    Stage { layer, norm }
}

fn mlp_chain(layout: &mut ParamLayout, name: &str, c_in: usize, widths: &[usize]) -> Vec<Linear> {
    let mut c = c_in;
    widths
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let l = layout.linear(&format!("{name}.{i}"), c, w);
            c = w;
            l
        })
        .collect()
}

/// Applies `layers` in order with ReLU after all but the last.
fn run_chain<T: Real>(tape: &mut Tape<T>, bound: &Bound, layers: &[Linear], mut x: Var) -> Result<Var> {
    for (i, l) in layers.iter().enumerate() {
        x = l.apply(tape, bound, x)?;
        if i + 1 < layers.len() {
            x = tape.relu(x)?;
        }
    }
    Ok(x)
}

fn relu_linear<T: Real>(tape: &mut Tape<T>, bound: &Bound, l: &Linear, x: Var) -> Result<Var> {
    let y = l.apply(tape, bound, x)?;
    tape.relu(y)
}

fn gather_positions<T: Real>(pos: &[T], ids: &[usize]) -> Vec<T> {
    ids.iter().flat_map(|&i| pos[3 * i..3 * i + 3].iter().copied()).collect()
}

impl Network {
    pub fn build(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let mut layout = ParamLayout::new();
        let mut c = cfg.input_channels();
        let mut encoder = Vec::new();
        let mut css = Vec::new();
        let mut css_width = 0;
        for (h, specs) in cfg.encoder.iter().enumerate() {
            let mut stages = Vec::new();
            for (i, s) in specs.iter().enumerate() {
                stages.push(build_stage(&mut layout, cfg, &format!("enc{h}.{i}"), c, s.channels, s.rate));
                c = s.channels;
            }
            encoder.push(stages);
            if cfg.use_css {
                css.push(layout.linear(&format!("css{h}"), css_width + c, c));
                css_width = c;
            }
            c = Self::ep_layer_for(cfg).out_width(c);
        }
        let projection = layout.linear("proj", c, cfg.projection);
        let top = cfg.projection + css_width;
        let mut fc_widths = cfg.fc_sizes.clone();
        if cfg.task == Task::Classification {
            fc_widths.push(cfg.num_classes);
        }
        let fc = mlp_chain(&mut layout, "fc", top, &fc_widths);

        let (mut decoder, mut csu, mut ds_head, mut seg_head) = (Vec::new(), Vec::new(), None, Vec::new());
        if let Some(dec) = &cfg.decoder {
            let embed = *cfg.fc_sizes.last().expect("validated");
            let mut d = top + if cfg.use_global_feature { embed } else { 0 };
            let mut v = d;
            let skip_widths: Vec<usize> = cfg.encoder.iter().map(|h| h.last().expect("validated").channels).collect();
            for (j, specs) in dec.iter().enumerate() {
                let level = cfg.encoder.len() - 1 - j;
                let mut c = skip_widths[level] + d;
                let mut stages = Vec::new();
                for (i, s) in specs.iter().enumerate() {
                    stages.push(build_stage(&mut layout, cfg, &format!("dec{j}.{i}"), c, s.channels, s.rate));
                    c = s.channels;
                }
                decoder.push(stages);
                d = c;
                if cfg.use_csu {
                    csu.push(layout.linear(&format!("csu{j}"), v + d, d));
                    v = d;
                }
                if j == 0 && cfg.use_aux_losses {
                    ds_head = Some(layout.linear("ds_head", d, cfg.num_classes));
                }
            }
            let mut widths = cfg.seg_head.clone();
            widths.push(cfg.num_classes);
            let head_in = d + if cfg.use_csu { v } else { 0 };
            seg_head = mlp_chain(&mut layout, "seg_head", head_in, &widths);
        }
        Ok(Self {
            cfg: cfg.clone(),
            layout,
            encoder,
            css,
            projection,
            fc,
            decoder,
            csu,
            ds_head,
            seg_head,
        })
    }

    pub fn build_classifier(cfg: &NetworkConfig) -> Result<Self> {
        if cfg.task != Task::Classification {
            return Err(Error::Config("expected a classification config".into()));
        }
        Self::build(cfg)
    }

    pub fn build_segmenter(cfg: &NetworkConfig) -> Result<Self> {
        if cfg.task != Task::Segmentation {
            return Err(Error::Config("expected a segmentation config".into()));
        }
        Self::build(cfg)
    }

    fn ep_layer_for(cfg: &NetworkConfig) -> EpLayer {
        EpLayer {
            mode: cfg.ep_mode,
            k: cfg.k,
            subsample_rate: cfg.subsample_rate,
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.num_scalars()
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> ParamStore<T> {
        ParamStore::init(&self.layout, seed)
    }

    /// Per-point input features: positions, then normals when configured.
    pub fn input_features<T: Real>(&self, cloud: &PointCloud) -> Result<Vec<T>> {
        let cast = |v: &f32| T::cast(*v as f64);
        if !self.cfg.input_normals {
            return Ok(cloud.positions().iter().map(cast).collect());
        }
        let normals = cloud
            .normals()
            .ok_or_else(|| Error::InvalidArgument("network expects normals but the cloud has none".into()))?;
        Ok(cloud
            .positions()
            .chunks_exact(3)
            .zip(normals.chunks_exact(3))
            .flat_map(|(p, n)| p.iter().chain(n).map(cast))
            .collect())
    }

    fn check_size(&self, cloud: &PointCloud) -> Result<()> {
        let min = self.cfg.min_points();
        if cloud.len() < min {
            return Err(Error::InvalidArgument(format!(
                "cloud has {} points, the network needs at least {min}",
                cloud.len()
            )));
        }
        Ok(())
    }

    fn encode<T: Real>(&self, tape: &mut Tape<T>, bound: &Bound, cloud: &PointCloud, opts: &ForwardOptions) -> Result<Encoded<T>> {
        self.check_size(cloud)?;
        let cfg = &self.cfg;
        let n = cloud.len();
        let mut x = tape.constant(vec![n, cfg.input_channels()], self.input_features(cloud)?)?;
        let mut pos: Vec<T> = cloud.positions().iter().map(|&v| T::cast(v as f64)).collect();
        let mut ids: Vec<usize> = (0..n).collect();
        let mut skip: Option<Var> = None;
        let mut levels = Vec::with_capacity(self.encoder.len());
        let mut trace = ForwardTrace::default();
        let ep = Self::ep_layer_for(cfg);
        for (h, stages) in self.encoder.iter().enumerate() {
            trace.encoder_points.push(ids.len());
            for st in stages {
                x = st.forward(tape, bound, x, &pos)?;
            }
            let feat = x;
            let keep = ep.kept(ids.len());
            let plan = if cfg.dynamic_fps {
                let c = tape.shape(feat)[1];
                let rows = RowView::new(tape.value(feat), c)?;
                subsample_plan(&pos, rows, keep, cfg.k, cfg.fps_seed, opts.bounds)?
            } else {
                subsample_plan(&pos, RowView::new(&pos, 3)?, keep, cfg.k, cfg.fps_seed, opts.bounds)?
            };
            if cfg.use_css {
                let t = match skip {
                    None => feat,
                    Some(s) => tape.concat_cols(&[s, feat])?,
                };
                let u = relu_linear(tape, bound, &self.css[h], t)?;
                skip = Some(css_apply(tape, u, &plan)?);
            }
            x = ep_apply(tape, feat, &plan, cfg.ep_mode)?;
            let next_pos = gather_positions(&pos, plan.centroid_ids());
            let next_ids = plan.centroid_ids().iter().map(|&c| ids[c]).collect();
            levels.push(Level {
                positions: std::mem::replace(&mut pos, next_pos),
                ids: std::mem::replace(&mut ids, next_ids),
                features: feat,
            });
        }
        trace.pooled_points = ids.len();
        let proj = relu_linear(tape, bound, &self.projection, x)?;
        let top = match skip {
            Some(s) => tape.concat_cols(&[proj, s])?,
            None => proj,
        };
        Ok(Encoded {
            levels,
            pooled_positions: pos,
            top,
            trace,
        })
    }

    /// Class logits `[1, C]` for one cloud.
    pub fn classify_forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        cloud: &PointCloud,
        opts: &ForwardOptions,
    ) -> Result<ClsOutput> {
        if self.cfg.task != Task::Classification {
            return Err(Error::Config("classify_forward needs a classification network".into()));
        }
        let enc = self.encode(tape, bound, cloud, opts)?;
        let g = global_max_pool(tape, enc.top)?;
        let logits = run_chain(tape, bound, &self.fc, g)?;
        Ok(ClsOutput {
            logits,
            trace: enc.trace,
        })
    }

    /// Per-point logits `[N, C]`, coarse logits and the global embedding.
    pub fn segment_forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        cloud: &PointCloud,
        opts: &ForwardOptions,
    ) -> Result<SegOutput> {
        if self.cfg.task != Task::Segmentation {
            return Err(Error::Config("segment_forward needs a segmentation network".into()));
        }
        let cfg = &self.cfg;
        let Encoded {
            levels,
            pooled_positions,
            top,
            mut trace,
        } = self.encode(tape, bound, cloud, opts)?;
        let g = global_max_pool(tape, top)?;
        let embedding = run_chain(tape, bound, &self.fc, g)?;
        let mut d = top;
        if cfg.use_global_feature {
            let rep = tape.repeat_rows(embedding, trace.pooled_points)?;
            d = tape.concat_cols(&[d, rep])?;
        }
        let mut v = d;
        let mut prev_pos = pooled_positions;
        let mut ds = None;
        for (j, stages) in self.decoder.iter().enumerate() {
            let level = &levels[levels.len() - 1 - j];
            let plan = interp_plan(&prev_pos, &level.positions, cfg.k_interp())?;
            d = eu_apply(tape, d, level.features, &plan)?;
            for st in stages {
                d = st.forward(tape, bound, d, &level.positions)?;
            }
            if cfg.use_csu {
                let w = csu_apply(tape, v, &plan)?;
                let t = tape.concat_cols(&[w, d])?;
                v = relu_linear(tape, bound, &self.csu[j], t)?;
            }
            if j == 0 {
                if let Some(head) = &self.ds_head {
                    let logits = head.apply(tape, bound, d)?;
                    trace.ds_points = Some(level.ids.len());
                    ds = Some((logits, level.ids.clone()));
                }
            }
            trace.decoder_points.push(level.ids.len());
            prev_pos.clone_from(&level.positions);
        }
        let last = if cfg.use_csu { tape.concat_cols(&[d, v])? } else { d };
        let logits = run_chain(tape, bound, &self.seg_head, last)?;
        Ok(SegOutput {
            logits,
            ds,
            embedding,
            trace,
        })
    }
}

impl Network {
    /// Class logits `[C]` for one cloud, evaluated in 32-bit.
    pub fn class_logits(&self, params: &ParamStore<f32>, cloud: &PointCloud, opts: &ForwardOptions) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape)?;
        let out = self.classify_forward(&mut tape, &bound, cloud, opts)?;
        Ok(tape.value(out.logits).to_vec())
    }

    /// Per-point logits `[N·C]`, row-major in input order.
    pub fn point_logits(&self, params: &ParamStore<f32>, cloud: &PointCloud, opts: &ForwardOptions) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape)?;
        let out = self.segment_forward(&mut tape, &bound, cloud, opts)?;
        Ok(tape.value(out.logits).to_vec())
    }

    /// Predicted class per cloud (classification) or per point (segmentation).
    pub fn predict(&self, params: &ParamStore<f32>, cloud: &PointCloud, opts: &ForwardOptions) -> Result<Vec<usize>> {
        let c = self.cfg.num_classes;
        let logits = match self.cfg.task {
            Task::Classification => self.class_logits(params, cloud, opts)?,
            Task::Segmentation => self.point_logits(params, cloud, opts)?,
        };
        Ok(logits.chunks_exact(c).map(argmax).collect())
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
