//! Ground-truth to anchor assignment and regression target encoding.

use std::cmp::Ordering;

use super::anchors::Anchor;
use super::boxes::{iou, BBox, GroundTruthBox};

/// Unassigned anchors overlapping any ground truth above this are ignored.
pub const IGNORE_IOU: f64 = 0.5;
/// Cell-relative centers are kept this far inside `(0, 1)` before the logit.
pub const CENTER_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorState {
    Positive(usize),
    Negative,
    Ignored,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetAssignment {
    pub states: Vec<AnchorState>,
    /// `(tx, ty, tw, th)` for positive anchors.
    pub targets: Vec<Option<[f64; 4]>>,
    /// Positive anchor index per ground truth.
    pub positive_of_gt: Vec<usize>,
}

impl TargetAssignment {
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.states.iter().enumerate().filter_map(|(i, s)| match s {
            AnchorState::Positive(g) => Some((i, *g)),
            _ => None,
        })
    }

    pub fn count(&self, pred: impl Fn(&AnchorState) -> bool) -> usize {
        self.states.iter().filter(|s| pred(s)).count()
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Raw head outputs that decode exactly to `gt` at `anchor`.
pub fn encode(anchor: &Anchor, gt: &BBox) -> [f64; 4] {
    let s = anchor.stride as f64;
    let (cx, cy) = gt.center();
    let fx = (cx / s - anchor.col as f64).clamp(CENTER_EPS, 1.0 - CENTER_EPS);
    let fy = (cy / s - anchor.row as f64).clamp(CENTER_EPS, 1.0 - CENTER_EPS);
    [logit(fx), logit(fy), (gt.width() / anchor.side).ln(), (gt.height() / anchor.side).ln()]
}

fn center_dist2(a: &Anchor, b: &BBox) -> f64 {
    let (cx, cy) = b.center();
    (a.cx - cx).powi(2) + (a.cy - cy).powi(2)
}

/// Ground truths are taken in order; each claims its best free anchor by
/// IoU, breaking ties by lower stride, then nearer center, then lower
/// index. A ground truth overlapping no free anchor claims the nearest
/// free center instead.
pub fn assign_targets(gts: &[GroundTruthBox], anchors: &[Anchor]) -> TargetAssignment {
    let mut states = vec![AnchorState::Negative; anchors.len()];
    let mut positive_of_gt = Vec::with_capacity(gts.len());
    for (g, gt) in gts.iter().enumerate() {
        let better_iou = |(i, iou_i): (usize, f64), (j, iou_j): (usize, f64)| -> Ordering {
            iou_i
                .total_cmp(&iou_j)
                .then(anchors[j].stride.cmp(&anchors[i].stride))
                .then(center_dist2(&anchors[j], &gt.bbox).total_cmp(&center_dist2(&anchors[i], &gt.bbox)))
                .then(j.cmp(&i))
        };
        let free = || (0..anchors.len()).filter(|&i| !matches!(states[i], AnchorState::Positive(_)));
        let best = free().map(|i| (i, iou(&anchors[i].bbox(), &gt.bbox))).max_by(|&a, &b| better_iou(a, b));
        let Some((mut chosen, best_iou)) = best else { break };
        if best_iou <= 0.0 {
            chosen = free()
                .min_by(|&i, &j| {
                    center_dist2(&anchors[i], &gt.bbox)
                        .total_cmp(&center_dist2(&anchors[j], &gt.bbox))
                        .then(anchors[i].stride.cmp(&anchors[j].stride))
                        .then(i.cmp(&j))
                })
                .expect("a free anchor exists");
        }
        states[chosen] = AnchorState::Positive(g);
        positive_of_gt.push(chosen);
    }
    for (i, a) in anchors.iter().enumerate() {
        if states[i] == AnchorState::Negative && gts.iter().any(|g| iou(&a.bbox(), &g.bbox) > IGNORE_IOU) {
            states[i] = AnchorState::Ignored;
        }
    }
    let targets = states
        .iter()
        .zip(anchors)
        .map(|(s, a)| match s {
            AnchorState::Positive(g) => Some(encode(a, &gts[*g].bbox)),
            _ => None,
        })
        .collect();
    TargetAssignment { states, targets, positive_of_gt }
}
