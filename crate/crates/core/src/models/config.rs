use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FpsSeed, Space};
use crate::layers::EpMode;
use crate::losses::LossWeights;

/// One point layer: output channels and atrous rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub channels: usize,
    pub rate: usize,
}

impl LayerSpec {
    pub const fn new(channels: usize, rate: usize) -> Self {
        Self { channels, rate }
    }
}

/// Hierarchies of point layers; points are subsampled between hierarchies.
pub type Hierarchies = Vec<Vec<LayerSpec>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Segmentation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub task: Task,
    pub encoder: Hierarchies,
    /// Segmentation only; mirrors the encoder hierarchy count.
    pub decoder: Option<Hierarchies>,
    /// Neighbours per point (#K) for convolutions and pooling.
    pub k: usize,
    /// Interpolation neighbours for unpooling; defaults to `k`.
    pub k_interp: Option<usize>,
    /// Points kept between hierarchies are `N / subsample_rate`.
    pub subsample_rate: usize,
    /// Width of the shared mlp applied before global pooling.
    pub projection: usize,
    /// Fully connected widths after global pooling. Classification appends a
    /// final layer to `num_classes`; segmentation uses the last width as the
    /// global embedding.
    pub fc_sizes: Vec<usize>,
    /// Hidden widths of the per-point segmentation classifier.
    pub seg_head: Vec<usize>,
    pub num_classes: usize,
    pub input_normals: bool,
    pub use_pac: bool,
    pub ep_mode: EpMode,
    pub use_css: bool,
    pub use_csu: bool,
    pub use_global_feature: bool,
    pub use_aux_losses: bool,
    /// Subsample by farthest point sampling over features instead of positions.
    pub dynamic_fps: bool,
    /// Standardise each point layer's output over the cloud, followed by a
    /// learned per-channel affine.
    pub feature_norm: bool,
    pub pac_space: Space,
    pub fps_seed: FpsSeed,
    pub loss_weights: LossWeights,
    pub mmd_sigma: f64,
}

pub const CANONICAL_ENCODER: &str = "Encoder([64, 1], [64, 2]; [128, 1], [128, 2]; [256, 1], [256, 2])";
pub const CANONICAL_DECODER: &str = "Decoder([256, 2], [256, 1]; [128, 2], [128, 1]; [64, 2], [64, 1])";

impl NetworkConfig {
    fn base(task: Task, encoder: Hierarchies, decoder: Option<Hierarchies>, num_classes: usize) -> Self {
        Self {
            task,
            encoder,
            decoder,
            k: 10,
            k_interp: None,
            subsample_rate: 4,
            projection: 1024,
            fc_sizes: match task {
                Task::Classification => vec![512, 256],
                Task::Segmentation => vec![512, 1024],
            },
            seg_head: vec![128],
            num_classes,
            input_normals: false,
            use_pac: true,
            ep_mode: EpMode::Both,
            use_css: true,
            use_csu: true,
            use_global_feature: true,
            use_aux_losses: true,
            dynamic_fps: false,
            feature_norm: false,
            pac_space: Space::Feature,
            fps_seed: FpsSeed::MaxNorm,
            loss_weights: LossWeights::default(),
            mmd_sigma: 1.0,
        }
    }

    /// Full-size classification network.
    pub fn canonical_classifier(num_classes: usize) -> Self {
        let enc = parse_hierarchies(CANONICAL_ENCODER).expect("canonical encoder").1;
        Self::base(Task::Classification, enc, None, num_classes)
    }

    /// Full-size segmentation network.
    pub fn canonical_segmenter(num_classes: usize) -> Self {
        let enc = parse_hierarchies(CANONICAL_ENCODER).expect("canonical encoder").1;
        let dec = parse_hierarchies(CANONICAL_DECODER).expect("canonical decoder").1;
        Self::base(Task::Segmentation, enc, Some(dec), num_classes)
    }

    /// Narrow three-hierarchy classifier that trains in minutes on one core.
    pub fn desk_classifier(num_classes: usize) -> Self {
        let enc = parse_hierarchies("Encoder([16, 1], [16, 2]; [32, 1], [32, 2]; [64, 1], [64, 2])")
            .expect("desk encoder")
            .1;
        Self {
            projection: 128,
            fc_sizes: vec![64, 32],
            ..Self::base(Task::Classification, enc, None, num_classes)
        }
    }

    /// Narrow segmenter matching [`NetworkConfig::desk_classifier`].
    pub fn desk_segmenter(num_classes: usize) -> Self {
        let enc = parse_hierarchies("Encoder([16, 1], [16, 2]; [32, 1], [32, 2]; [64, 1], [64, 2])")
            .expect("desk encoder")
            .1;
        let dec = parse_hierarchies("Decoder([64, 2], [64, 1]; [32, 2], [32, 1]; [16, 2], [16, 1])")
            .expect("desk decoder")
            .1;
        Self {
            projection: 128,
            fc_sizes: vec![64, 32],
            seg_head: vec![32],
            ..Self::base(Task::Segmentation, enc, Some(dec), num_classes)
        }
    }

    pub fn k_interp(&self) -> usize {
        self.k_interp.unwrap_or(self.k)
    }

    pub fn input_channels(&self) -> usize {
        if self.input_normals {
            6
        } else {
            3
        }
    }

    pub fn encoder_string(&self) -> String {
        format_hierarchies("Encoder", &self.encoder)
    }

    pub fn decoder_string(&self) -> Option<String> {
        self.decoder.as_ref().map(|d| format_hierarchies("Decoder", d))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.encoder.is_empty() || self.encoder.iter().any(Vec::is_empty) {
            return bad("encoder needs at least one non-empty hierarchy".into());
        }
        let all = self.encoder.iter().chain(self.decoder.iter().flatten()).flatten();
        for l in all {
            if l.channels == 0 || l.rate == 0 {
                return bad(format!("layer {l:?} needs channels, rate >= 1"));
            }
        }
        if self.k == 0 || self.k_interp() == 0 || self.subsample_rate < 1 {
            return bad("k, k_interp and subsample_rate must be >= 1".into());
        }
        if self.projection == 0 || self.num_classes == 0 || self.fc_sizes.contains(&0) || self.seg_head.contains(&0) {
            return bad("widths and class count must be >= 1".into());
        }
        if !(self.mmd_sigma > 0.0) {
            return bad(format!("mmd_sigma must be > 0, got {}", self.mmd_sigma));
        }
        self.loss_weights.validate()?;
        match (self.task, &self.decoder) {
            (Task::Classification, Some(_)) => bad("classification network takes no decoder".into()),
            (Task::Segmentation, None) => bad("segmentation network needs a decoder".into()),
            (Task::Segmentation, Some(d)) if d.len() != self.encoder.len() || d.iter().any(Vec::is_empty) => bad(
                format!("decoder has {} hierarchies, encoder {}", d.len(), self.encoder.len()),
            ),
            (Task::Segmentation, _) if self.fc_sizes.is_empty() => {
                bad("segmentation needs fc_sizes for the global embedding".into())
            }
            _ => Ok(()),
        }
    }

    /// Smallest cloud the network accepts: every hierarchy keeps at least two
    /// points and the input has more than `k` points.
    pub fn min_points(&self) -> usize {
        (self.k + 1..).find(|&n| self.level_sizes(n).is_some()).expect("unbounded search")
    }

    /// Point counts of every encoder hierarchy plus the pooled level, or
    /// `None` when some hierarchy would hold fewer than two points.
    pub fn level_sizes(&self, n: usize) -> Option<Vec<usize>> {
        let mut sizes = vec![n];
        for _ in &self.encoder {
            let cur = *sizes.last().expect("non-empty");
            if cur < 2 || cur / self.subsample_rate < 1 {
                return None;
            }
            sizes.push(cur / self.subsample_rate);
        }
        Some(sizes)
    }
}

/// Parses `Name([c, r], [c, r]; [c, r], ...)`: `;` separates hierarchies and
/// `,` separates layers within a hierarchy.
pub fn parse_hierarchies(s: &str) -> Result<(String, Hierarchies)> {
    let s = s.trim();
    let open = s
        .find('(')
        .ok_or_else(|| Error::Config(format!("missing '(' in {s:?}")))?;
    let body = s[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| Error::Config(format!("missing closing ')' in {s:?}")))?;
    let name = s[..open].trim().to_string();
    let mut out = Vec::new();
    for group in body.split(';') {
        let mut layers = Vec::new();
        let mut rest = group.trim();
        while !rest.is_empty() {
            let inner = rest
                .strip_prefix('[')
                .and_then(|r| r.split_once(']'))
                .ok_or_else(|| Error::Config(format!("expected [channels, rate] at {rest:?}")))?;
            let (pair, tail) = inner;
            let nums = pair
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad integer {t:?} in {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let [channels, rate] = nums[..] else {
                return Err(Error::Config(format!("expected two numbers in [{pair}]")));
            };
            layers.push(LayerSpec { channels, rate });
            rest = tail.trim_start();
            rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
        }
        if layers.is_empty() {
            return Err(Error::Config(format!("empty hierarchy in {s:?}")));
        }
        out.push(layers);
    }
    Ok((name, out))
}

pub fn format_hierarchies(name: &str, h: &[Vec<LayerSpec>]) -> String {
    let groups: Vec<String> = h
        .iter()
        .map(|g| {
            g.iter()
                .map(|l| format!("[{}, {}]", l.channels, l.rate))
                .collect::<Vec<_>>()
                .join(", ")
        })
        .collect();
    format!("{name}({})", groups.join("; "))
}
