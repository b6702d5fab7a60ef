//! Accuracy under random point dropout, with and without radius-bounded
//! pooling neighbourhoods.

use std::fmt::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::experiment::evaluate;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::geometry::{random_dropout, RadiusBounds};
use crate::models::{Example, ForwardOptions, Network};

#[derive(Debug, Clone, PartialEq)]
pub struct RadiusOption {
    pub name: String,
    pub bounds: Option<RadiusBounds>,
}

impl RadiusOption {
    pub fn unbounded() -> Self {
        Self {
            name: "unbounded".into(),
            bounds: None,
        }
    }

    pub fn bounded(bounds: RadiusBounds) -> Self {
        Self {
            name: "bounded".into(),
            bounds: Some(bounds),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub keep_ratio: f64,
    pub option: String,
    /// OA for classification, instance IoU for part segmentation.
    pub score: f64,
}

/// Scores every `(keep_ratio, option)` cell. Each cloud is thinned once per
/// ratio, from an RNG derived from `(seed, ratio index)`, and the same thinned
/// clouds are used for every option.
pub fn run_robustness_sweep(
    network: &Network,
    params: &ParamStore<f32>,
    examples: &[Example],
    keep_ratios: &[f64],
    options: &[RadiusOption],
    category_parts: Option<&[Vec<usize>]>,
    seed: u64,
) -> Result<Vec<RobustnessRow>> {
    let mut rows = Vec::with_capacity(keep_ratios.len() * options.len());
    for (ri, &ratio) in keep_ratios.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ri as u64);
        let thinned = examples
            .iter()
            .map(|e| {
                Ok(Example {
                    cloud: random_dropout(&e.cloud, ratio, &mut rng)?,
                    label: e.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for opt in options {
            let fwd = ForwardOptions { bounds: opt.bounds };
            let report = evaluate(network, params, &thinned, category_parts, &fwd)?;
            rows.push(RobustnessRow {
                keep_ratio: ratio,
                option: opt.name.clone(),
                score: report.primary(),
            });
        }
    }
    Ok(rows)
}

/// Wide CSV: one row per keep ratio, one column per radius option.
pub fn robustness_csv(rows: &[RobustnessRow]) -> Result<String> {
    let mut options: Vec<&str> = Vec::new();
    let mut ratios: Vec<f64> = Vec::new();
    for r in rows {
        if !options.contains(&r.option.as_str()) {
            options.push(&r.option);
        }
        if !ratios.contains(&r.keep_ratio) {
            ratios.push(r.keep_ratio);
        }
    }
    let mut out = format!("keep_ratio,{}\n", options.join(","));
    for &ratio in &ratios {
        let _ = write!(out, "{ratio}");
        for opt in &options {
            let cell = rows
                .iter()
                .find(|r| r.keep_ratio == ratio && r.option == *opt)
                .ok_or_else(|| Error::InvalidArgument(format!("missing cell {ratio} × {opt}")))?;
            let _ = write!(out, ",{:.6}", cell.score);
        }
        out.push('\n');
    }
    Ok(out)
}

/// True when, for every option, the score never rises by more than `band` as
/// the keep ratio drops.
pub fn monotone_trend(rows: &[RobustnessRow], band: f64) -> bool {
    let mut options: Vec<&str> = rows.iter().map(|r| r.option.as_str()).collect();
    options.dedup();
    options.iter().all(|opt| {
        let mut cells: Vec<&RobustnessRow> = rows.iter().filter(|r| r.option == *opt).collect();
        cells.sort_by(|a, b| b.keep_ratio.total_cmp(&a.keep_ratio));
        cells.windows(2).all(|w| w[1].score <= w[0].score + band)
    })
}
