//! Shared prediction head and box decoding.
//!
//! The head is one 1x1 convolution to `3 * (5 + C)` channels. Channel
//! `slot * (5 + C) + k` holds field `k` of anchor `slot`: `tx, ty, tw, th`,
//! objectness, then class logits.

use crate::autograd::{sigmoid, Tape, Var};
use crate::error::{shape_err, Result};
use crate::pyramid::{ConvUnit, FeatureLevel, ANCHORS_PER_CELL};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::anchors::Anchor;
use super::boxes::{BBox, Detection};

pub const TX: usize = 0;
pub const TY: usize = 1;
pub const TW: usize = 2;
pub const TH: usize = 3;
pub const OBJ: usize = 4;
pub const CLS: usize = 5;

/// Applies the shared head to one level.
pub fn head_apply<T: Scalar>(tape: &mut Tape<T>, level: &FeatureLevel, head: ConvUnit) -> Result<Var> {
    let in_c = tape.shape(head.weight).c;
    let c = tape.shape(level.map).c;
    if c != in_c {
        return Err(shape_err(format!("head expects {in_c} channels, level has {c}")));
    }
    tape.conv2d(level.map, head.weight, head.bias, 1, 0)
}

/// Flat index of field `k` for `anchor` in a `1 x 3P x h x w` raw map.
#[inline]
pub fn raw_index(anchor: &Anchor, h: usize, w: usize, pred_len: usize, k: usize) -> usize {
    ((anchor.slot * pred_len + k) * h + anchor.row) * w + anchor.col
}

/// Splits `anchors` (ordered by level) into per-level runs aligned with
/// `maps`, checking each map's layout.
pub fn align<'a, T: Scalar>(
    maps: &[&Tensor<T>],
    anchors: &'a [Anchor],
    pred_len: usize,
) -> Result<Vec<&'a [Anchor]>> {
    let mut runs = Vec::with_capacity(maps.len());
    let mut start = 0;
    for map in maps {
        let s = map.shape();
        if s.n != 1 || s.c != ANCHORS_PER_CELL * pred_len {
            return Err(shape_err(format!("raw map {s} does not hold {} channels", ANCHORS_PER_CELL * pred_len)));
        }
        let len = ANCHORS_PER_CELL * s.h * s.w;
        if start + len > anchors.len() {
            return Err(shape_err("fewer anchors than raw predictions"));
        }
        let run = &anchors[start..start + len];
        if run.iter().any(|a| a.row >= s.h || a.col >= s.w || a.level != run[0].level) {
            return Err(shape_err("anchors do not match raw map layout"));
        }
        runs.push(run);
        start += len;
    }
    if start != anchors.len() {
        return Err(shape_err("more anchors than raw predictions"));
    }
    Ok(runs)
}

/// Box implied by raw offsets at `anchor`, before clamping.
pub fn decode_box(anchor: &Anchor, tx: f64, ty: f64, tw: f64, th: f64) -> BBox {
    let s = anchor.stride as f64;
    let cx = (anchor.col as f64 + sigmoid(tx)) * s;
    let cy = (anchor.row as f64 + sigmoid(ty)) * s;
    BBox::from_center(cx, cy, anchor.side * tw.exp(), anchor.side * th.exp())
}

/// Decodes every anchor whose score reaches `conf_threshold`.
pub fn decode<T: Scalar>(
    maps: &[&Tensor<T>],
    anchors: &[Anchor],
    num_classes: usize,
    conf_threshold: f64,
    input_size: usize,
) -> Result<Vec<Detection>> {
    let pred_len = 5 + num_classes;
    let runs = align(maps, anchors, pred_len)?;
    let size = input_size as f64;
    let mut dets = Vec::new();
    for (map, run) in maps.iter().zip(runs) {
        let (h, w) = (map.shape().h, map.shape().w);
        let data = map.data();
        let field = |a: &Anchor, k: usize| data[raw_index(a, h, w, pred_len, k)].as_f64();
        for a in run {
            let obj = sigmoid(field(a, OBJ));
            let (class_id, best) = (0..num_classes)
                .map(|c| (c, field(a, CLS + c)))
                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            let score = obj * sigmoid(best);
            if score < conf_threshold {
                continue;
            }
            let bbox = decode_box(a, field(a, TX), field(a, TY), field(a, TW), field(a, TH)).clamp(size, size);
            if !bbox.is_valid() {
                continue;
            }
            dets.push(Detection { bbox, score, class_id });
        }
    }
    Ok(dets)
}
