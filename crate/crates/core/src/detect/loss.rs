//! Detection loss over the raw head maps.
//!
//! `obj + cls + 2 box`, where `obj` is the mean objectness BCE over
//! non-ignored anchors, `cls` the mean class BCE over positive anchors and
//! classes, and `box` the mean smooth-L1 over positive anchors' four
//! offsets.

use crate::autograd::{PointLoss, Tape, Var};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::anchors::Anchor;
use super::assign::{AnchorState, TargetAssignment};
use super::boxes::GroundTruthBox;
use super::head::{align, raw_index, CLS, OBJ};

pub const OBJ_WEIGHT: f64 = 1.0;
pub const CLS_WEIGHT: f64 = 1.0;
pub const BOX_WEIGHT: f64 = 2.0;

pub fn detection_loss<T: Scalar>(
    tape: &mut Tape<T>,
    raw: &[Var],
    anchors: &[Anchor],
    assignment: &TargetAssignment,
    gts: &[GroundTruthBox],
    num_classes: usize,
) -> Result<Var> {
    if anchors.is_empty() {
        return Err(invalid("detection loss needs at least one anchor"));
    }
    if assignment.states.len() != anchors.len() {
        return Err(invalid("assignment does not match the anchor set"));
    }
    let pred_len = 5 + num_classes;
    let maps: Vec<Tensor<T>> = raw.iter().map(|&v| tape.value(v).clone()).collect();
    let map_refs: Vec<&Tensor<T>> = maps.iter().collect();
    let runs = align(&map_refs, anchors, pred_len)?;

    let n_pos = assignment.count(|s| matches!(s, AnchorState::Positive(_)));
    let n_obj = assignment.count(|s| !matches!(s, AnchorState::Ignored));
    let w_obj = if n_obj > 0 { T::of(OBJ_WEIGHT / n_obj as f64) } else { T::zero() };
    let (w_cls, w_box) = if n_pos > 0 {
        (T::of(CLS_WEIGHT / (n_pos * num_classes) as f64), T::of(BOX_WEIGHT / (n_pos * 4) as f64))
    } else {
        (T::zero(), T::zero())
    };

    let mut total: Option<Var> = None;
    let mut offset = 0;
    for ((&var, map), run) in raw.iter().zip(&maps).zip(runs) {
        let (h, w) = (map.shape().h, map.shape().w);
        let n = map.numel();
        let mut bce_t = vec![T::zero(); n];
        let mut bce_w = vec![T::zero(); n];
        let mut box_t = vec![T::zero(); n];
        let mut box_w = vec![T::zero(); n];
        for (k, a) in run.iter().enumerate() {
            let idx = |f: usize| raw_index(a, h, w, pred_len, f);
            match assignment.states[offset + k] {
                AnchorState::Ignored => {}
                AnchorState::Negative => bce_w[idx(OBJ)] = w_obj,
                AnchorState::Positive(g) => {
                    bce_w[idx(OBJ)] = w_obj;
                    bce_t[idx(OBJ)] = T::one();
                    for c in 0..num_classes {
                        bce_w[idx(CLS + c)] = w_cls;
                        if gts[g].class_id == c {
                            bce_t[idx(CLS + c)] = T::one();
                        }
                    }
                    let t = assignment.targets[offset + k].expect("positives carry targets");
                    for (f, &v) in t.iter().enumerate() {
                        box_w[idx(f)] = w_box;
                        box_t[idx(f)] = T::of(v);
                    }
                }
            }
        }
        offset += run.len();
        let mut terms = vec![tape.weighted_loss(var, PointLoss::BceWithLogits, bce_t, bce_w)?];
        if n_pos > 0 {
            terms.push(tape.weighted_loss(var, PointLoss::SmoothL1, box_t, box_w)?);
        }
        for t in terms {
            total = Some(match total {
                None => t,
                Some(acc) => tape.add(acc, t)?,
            });
        }
    }
    total.ok_or_else(|| invalid("detection loss over zero raw maps"))
}
