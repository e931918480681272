//! COCO-style average precision with 101-point interpolation.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::detect::{iou, BBox, Detection, GroundTruthBox};

pub const RECALL_POINTS: usize = 101;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Per-class AP at one IoU threshold. Detections are matched greedily in
/// descending score order (stable for ties), each to the best-overlapping
/// unmatched ground truth of the same image with IoU at least `iou_thr`.
pub fn average_precision(dets: &[(u64, Detection)], gts: &[(u64, BBox)], iou_thr: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut by_image: HashMap<u64, Vec<(BBox, bool)>> = HashMap::new();
    for (img, b) in gts {
        by_image.entry(*img).or_default().push((*b, false));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.score.total_cmp(&dets[a].1.score));

    let mut precision = Vec::with_capacity(dets.len());
    let mut recall = Vec::with_capacity(dets.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for i in order {
        let (img, det) = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        if let Some(cands) = by_image.get(img) {
            for (j, (b, used)) in cands.iter().enumerate() {
                if *used {
                    continue;
                }
                let v = iou(&det.bbox, b);
                if v >= iou_thr && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
        }
        match best {
            Some((j, _)) => {
                by_image.get_mut(img).unwrap()[j].1 = true;
                tp += 1;
            }
            None => fp += 1,
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / gts.len() as f64);
    }
    // precision envelope, right to left
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut sum = 0.0;
    for r in 0..RECALL_POINTS {
        let level = r as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < level);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / RECALL_POINTS as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: usize,
    /// Mean over the ten IoU thresholds.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    /// Class-mean AP at each threshold of [`iou_thresholds`].
    pub per_threshold: Vec<f64>,
    pub per_class: Vec<ClassAp>,
    pub images: usize,
    pub ground_truths: usize,
    pub detections: usize,
}

/// AP, AP50 and AP75 averaged over classes that occur in the ground truth
/// or the detections.
pub fn coco_map(dets: &[(u64, Detection)], gts: &[(u64, GroundTruthBox)]) -> EvalResult {
    let classes: BTreeSet<usize> =
        gts.iter().map(|g| g.1.class_id).chain(dets.iter().map(|d| d.1.class_id)).collect();
    let images: BTreeSet<u64> = gts.iter().map(|g| g.0).chain(dets.iter().map(|d| d.0)).collect();
    let thresholds = iou_thresholds();
    let mut per_class = Vec::new();
    let mut per_threshold = vec![0.0; thresholds.len()];
    for &c in &classes {
        let cd: Vec<(u64, Detection)> = dets.iter().filter(|d| d.1.class_id == c).copied().collect();
        let cg: Vec<(u64, BBox)> = gts.iter().filter(|g| g.1.class_id == c).map(|g| (g.0, g.1.bbox)).collect();
        let aps: Vec<f64> = thresholds.iter().map(|&t| average_precision(&cd, &cg, t)).collect();
        for (acc, v) in per_threshold.iter_mut().zip(&aps) {
            *acc += v;
        }
        per_class.push(ClassAp {
            class_id: c,
            ap: aps.iter().sum::<f64>() / aps.len() as f64,
            ap50: aps[0],
            ap75: aps[5],
        });
    }
    let n = classes.len().max(1) as f64;
    per_threshold.iter_mut().for_each(|v| *v /= n);
    let ap = per_threshold.iter().sum::<f64>() / per_threshold.len() as f64;
    EvalResult {
        ap,
        ap50: per_threshold[0],
        ap75: per_threshold[5],
        per_threshold,
        per_class,
        images: images.len(),
        ground_truths: gts.len(),
        detections: dets.len(),
    }
}
