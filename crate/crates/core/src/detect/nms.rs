use std::cmp::Ordering;

use super::boxes::{iou, Detection};

pub const DEFAULT_NMS_IOU: f64 = 0.5;
pub const DEFAULT_MAX_OUT: usize = 100;

/// Score descending, then lower `x1`, then lower `y1`.
pub fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x1.total_cmp(&b.bbox.x1))
        .then(a.bbox.y1.total_cmp(&b.bbox.y1))
}

/// Greedy per-class suppression of boxes overlapping a kept box by more
/// than `iou_threshold`; at most `max_out` survivors, best first. Full ties
/// keep input order.
pub fn nms(dets: &[Detection], iou_threshold: f64, max_out: usize) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(rank);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        if kept.len() == max_out {
            break;
        }
        if kept.iter().all(|k| k.class_id != d.class_id || iou(&k.bbox, &d.bbox) <= iou_threshold) {
            kept.push(d);
        }
    }
    kept
}
