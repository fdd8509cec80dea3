//! Detection post-processing and average-precision evaluation.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::annotations::{Dataset, Group};
use crate::calibration::{CalibratedScores, LogitRecord, Mode};
use crate::error::{invalid_arg, Result};
use crate::geometry::NormBox;

pub const DEFAULT_NMS_IOU: f64 = 0.3;
pub const DEFAULT_MATCH_IOU: f64 = 0.5;
pub const DEFAULT_MAX_PER_IMAGE: usize = 300;
const RECALL_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub class_id: u64,
    pub bbox: NormBox,
    pub score: f64,
}

/// Descending score, then ascending class id. Used with a stable sort so
/// that remaining ties keep input order.
fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then(a.class_id.cmp(&b.class_id))
}

/// Expand calibrated records into one detection per foreground class whose
/// score is at least `score_threshold`. Boxes are clipped to the unit square.
pub fn detections_from_scores(
    records: &[LogitRecord],
    scores: &[CalibratedScores],
    class_ids: &[u64],
    mode: Mode,
    score_threshold: f64,
) -> Result<Vec<Detection>> {
    if records.len() != scores.len() {
        return Err(invalid_arg!("{} records but {} score vectors", records.len(), scores.len()));
    }
    let mut out = Vec::new();
    for (rec, s) in records.iter().zip(scores) {
        let fg = s.foreground(mode);
        if fg.len() != class_ids.len() {
            return Err(invalid_arg!("score vector has {} classes, expected {}", fg.len(), class_ids.len()));
        }
        let bbox = rec.bbox.clipped();
        for (&class_id, &score) in class_ids.iter().zip(fg) {
            if score >= score_threshold {
                out.push(Detection { image_id: rec.image_id, class_id, bbox, score });
            }
        }
    }
    Ok(out)
}

/// Greedy non-maximum suppression within each image. With `classwise` a
/// detection only suppresses detections of its own class.
pub fn nms(dets: &[Detection], iou_threshold: f64, classwise: bool) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| rank_order(&dets[a], &dets[b]));

    let mut kept_by_bucket: BTreeMap<(u64, Option<u64>), Vec<usize>> = BTreeMap::new();
    let mut keep = vec![false; dets.len()];
    for idx in order {
        let d = &dets[idx];
        let bucket = (d.image_id, classwise.then_some(d.class_id));
        let kept = kept_by_bucket.entry(bucket).or_default();
        if kept.iter().all(|&k| dets[k].bbox.iou(&d.bbox) <= iou_threshold) {
            kept.push(idx);
            keep[idx] = true;
        }
    }
    // output in rank order
    let mut out: Vec<Detection> = dets.iter().zip(&keep).filter(|(_, &k)| k).map(|(d, _)| *d).collect();
    out.sort_by(rank_order);
    out
}

/// Keep the `max_per_image` highest-ranked detections of every image.
pub fn cap_per_image(dets: &[Detection], max_per_image: usize) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(rank_order);
    let mut per_image: BTreeMap<u64, usize> = BTreeMap::new();
    sorted
        .into_iter()
        .filter(|d| {
            let n = per_image.entry(d.image_id).or_default();
            *n += 1;
            *n <= max_per_image
        })
        .collect()
}

/// 101-point interpolated average precision of one class. Returns `None`
/// when the class has no ground truth.
pub fn average_precision(dets: &[Detection], gts: &Dataset, class_id: u64, iou_match: f64) -> Option<f64> {
    let mut gt_by_image: BTreeMap<u64, Vec<(NormBox, bool)>> = BTreeMap::new();
    let mut num_gt = 0usize;
    for inst in gts.instances().iter().filter(|i| i.class_id == class_id) {
        gt_by_image.entry(inst.image_id).or_default().push((inst.bbox, false));
        num_gt += 1;
    }
    if num_gt == 0 {
        return None;
    }
    let mut ranked: Vec<&Detection> = dets.iter().filter(|d| d.class_id == class_id).collect();
    ranked.sort_by(|a, b| rank_order(a, b));

    let mut tp_flags = Vec::with_capacity(ranked.len());
    for d in ranked {
        let mut best: Option<(usize, f64)> = None;
        if let Some(gts) = gt_by_image.get(&d.image_id) {
            for (k, (gt_box, matched)) in gts.iter().enumerate() {
                if *matched {
                    continue;
                }
                let iou = gt_box.iou(&d.bbox);
                if iou >= iou_match && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((k, iou));
                }
            }
        }
        match best {
            Some((k, _)) => {
                gt_by_image.get_mut(&d.image_id).unwrap()[k].1 = true;
                tp_flags.push(true);
            }
            None => tp_flags.push(false),
        }
    }
    Some(interpolated_ap(&tp_flags, num_gt))
}

/// AP from ranked true/false-positive flags.
pub fn interpolated_ap(tp_flags: &[bool], num_gt: usize) -> f64 {
    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (k, &hit) in tp_flags.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    // precision envelope, non-increasing in rank
    for k in (0..precision.len().saturating_sub(1)).rev() {
        if precision[k + 1] > precision[k] {
            precision[k] = precision[k + 1];
        }
    }
    let mut sum = 0.0;
    for r in 0..RECALL_POINTS {
        let threshold = r as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&x| x < threshold - 1e-12);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / RECALL_POINTS as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    /// IoU above which NMS suppresses; `None` skips NMS.
    pub nms_iou: Option<f64>,
    pub classwise_nms: bool,
    pub iou_match: f64,
    pub max_per_image: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            nms_iou: Some(DEFAULT_NMS_IOU),
            classwise_nms: true,
            iou_match: DEFAULT_MATCH_IOU,
            max_per_image: DEFAULT_MAX_PER_IMAGE,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.nms_iou {
            if !(0.0..=1.0).contains(&t) {
                return Err(invalid_arg!("NMS IoU threshold must lie in [0, 1], got {t}"));
            }
        }
        if !(self.iou_match > 0.0 && self.iou_match <= 1.0) {
            return Err(invalid_arg!("match IoU must lie in (0, 1], got {}", self.iou_match));
        }
        if self.max_per_image == 0 {
            return Err(invalid_arg!("per-image detection cap must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DetectionCounts {
    pub input: usize,
    pub after_nms: usize,
    pub suppressed: usize,
    pub capped: usize,
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    /// Mean AP over classes with ground truth; `None` if there are none.
    pub ap_overall: Option<f64>,
    pub ap_rare: Option<f64>,
    pub ap_common: Option<f64>,
    pub ap_frequent: Option<f64>,
    pub per_class: BTreeMap<u64, f64>,
    pub counts: DetectionCounts,
}

impl EvalReport {
    pub fn group_ap(&self, group: Group) -> Option<f64> {
        match group {
            Group::Rare => self.ap_rare,
            Group::Common => self.ap_common,
            Group::Frequent => self.ap_frequent,
        }
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// NMS, per-image cap, then per-class AP and its macro means. `groups`
/// assigns training-set frequency groups; classes missing from it only
/// count towards the overall mean.
pub fn evaluate(
    dets: &[Detection],
    gts: &Dataset,
    groups: &BTreeMap<u64, Group>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let after_nms = match config.nms_iou {
        Some(t) => nms(dets, t, config.classwise_nms),
        None => dets.to_vec(),
    };
    let kept = cap_per_image(&after_nms, config.max_per_image);
    let counts = DetectionCounts {
        input: dets.len(),
        after_nms: after_nms.len(),
        suppressed: dets.len() - after_nms.len(),
        capped: after_nms.len() - kept.len(),
        evaluated: kept.len(),
    };

    let mut by_class: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for d in &kept {
        by_class.entry(d.class_id).or_default().push(*d);
    }
    let mut gt_classes: Vec<u64> = gts.instances().iter().map(|i| i.class_id).collect();
    gt_classes.sort_unstable();
    gt_classes.dedup();

    let empty = Vec::new();
    let mut per_class = BTreeMap::new();
    let mut grouped: BTreeMap<Group, Vec<f64>> = BTreeMap::new();
    for class_id in gt_classes {
        let class_dets = by_class.get(&class_id).unwrap_or(&empty);
        if let Some(ap) = average_precision(class_dets, gts, class_id, config.iou_match) {
            per_class.insert(class_id, ap);
            if let Some(g) = groups.get(&class_id) {
                grouped.entry(*g).or_default().push(ap);
            }
        }
    }
    let all: Vec<f64> = per_class.values().copied().collect();
    let group_mean = |g: Group| grouped.get(&g).and_then(|v| mean(v));
    Ok(EvalReport {
        ap_overall: mean(&all),
        ap_rare: group_mean(Group::Rare),
        ap_common: group_mean(Group::Common),
        ap_frequent: group_mean(Group::Frequent),
        per_class,
        counts,
    })
}
