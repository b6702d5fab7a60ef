//! Overall accuracy, IoU variants and confusion counts.
//!
//! A part that appears neither in the prediction nor in the ground truth of an
//! instance scores IoU 1 for that instance. Dataset-level per-class IoU uses
//! the same rule for classes that never occur.

use std::fmt::Write;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricTask {
    Classification,
    PartSeg,
    SemSeg,
}

/// Predictions and ground truth for one cloud. Classification instances hold
/// a single label each.
#[derive(Debug, Clone, Copy)]
pub struct Instance<'a> {
    pub pred: &'a [usize],
    pub gt: &'a [usize],
    pub category: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub task: MetricTask,
    pub overall_accuracy: f64,
    pub per_class_iou: Vec<f64>,
    pub mean_iou: f64,
    /// Mean over instances of the per-instance mean part IoU.
    pub instance_iou: Option<f64>,
    /// Mean over categories of their mean instance IoU.
    pub mean_category_iou: Option<f64>,
    /// `confusion[gt][pred]`.
    pub confusion: Vec<Vec<u64>>,
}

fn iou(inter: u64, union: u64) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn class_iou(confusion: &[Vec<u64>]) -> Vec<f64> {
    let c = confusion.len();
    (0..c)
        .map(|k| {
            let tp = confusion[k][k];
            let gt: u64 = confusion[k].iter().sum();
            let pred: u64 = confusion.iter().map(|r| r[k]).sum();
            iou(tp, gt + pred - tp)
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Mean over `parts` of the IoU between the prediction and ground truth of
/// one instance.
pub fn instance_part_iou(pred: &[usize], gt: &[usize], parts: &[usize]) -> f64 {
    let ious: Vec<f64> = parts
        .iter()
        .map(|&p| {
            let (mut inter, mut union) = (0, 0);
            for (&a, &b) in pred.iter().zip(gt) {
                let (x, y) = (a == p, b == p);
                inter += u64::from(x && y);
                union += u64::from(x || y);
            }
            iou(inter, union)
        })
        .collect();
    mean(&ious)
}

/// Metrics over `instances` with labels in `0..num_classes`.
///
/// `category_parts[c]` lists the part labels of object category `c` for part
/// segmentation; without it every label counts as a part of every category.
pub fn compute_metrics(
    instances: &[Instance],
    task: MetricTask,
    num_classes: usize,
    category_parts: Option<&[Vec<usize>]>,
) -> Result<MetricsReport> {
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    let (mut correct, mut total) = (0u64, 0u64);
    for (i, inst) in instances.iter().enumerate() {
        if inst.pred.len() != inst.gt.len() {
            return Err(Error::Shape {
                op: "metrics",
                left: vec![i, inst.pred.len()],
                right: vec![i, inst.gt.len()],
            });
        }
        for (&p, &g) in inst.pred.iter().zip(inst.gt) {
            if p >= num_classes || g >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: p.max(g),
                    classes: num_classes,
                });
            }
            confusion[g][p] += 1;
            correct += u64::from(p == g);
            total += 1;
        }
    }
    let per_class_iou = class_iou(&confusion);
    let (instance_iou, mean_category_iou) = if task == MetricTask::PartSeg {
        let all: Vec<usize> = (0..num_classes).collect();
        let mut by_cat: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut scores = Vec::with_capacity(instances.len());
        for inst in instances {
            let parts = match category_parts {
                Some(map) => map.get(inst.category).ok_or(Error::IndexOutOfRange {
                    op: "category map",
                    index: inst.category,
                    len: map.len(),
                })?,
                None => &all,
            };
            let s = instance_part_iou(inst.pred, inst.gt, parts);
            scores.push(s);
            match by_cat.iter_mut().find(|(c, _)| *c == inst.category) {
                Some((_, v)) => v.push(s),
                None => by_cat.push((inst.category, vec![s])),
            }
        }
        by_cat.sort_by_key(|(c, _)| *c);
        let cat_means: Vec<f64> = by_cat.iter().map(|(_, v)| mean(v)).collect();
        (Some(mean(&scores)), Some(mean(&cat_means)))
    } else {
        (None, None)
    };
    Ok(MetricsReport {
        task,
        overall_accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        mean_iou: mean(&per_class_iou),
        per_class_iou,
        instance_iou,
        mean_category_iou,
        confusion,
    })
}

impl MetricsReport {
    /// The headline number: pIoU for part segmentation, OA otherwise.
    pub fn primary(&self) -> f64 {
        self.instance_iou.unwrap_or(self.overall_accuracy)
    }

    /// `metric,value` rows: summary metrics, then one IoU row per class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let mut row = |k: &str, v: f64| {
            let _ = writeln!(out, "{k},{v:.6}");
        };
        row("overall_accuracy", self.overall_accuracy);
        row("mean_iou", self.mean_iou);
        if let Some(v) = self.instance_iou {
            row("instance_iou", v);
        }
        if let Some(v) = self.mean_category_iou {
            row("mean_category_iou", v);
        }
        for (k, v) in self.per_class_iou.iter().enumerate() {
            row(&format!("iou_class_{k}"), *v);
        }
        out
    }
}
