use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::Result;
use crate::pyramid::{FeatureLevel, Session, SfpnModel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::anchors::{anchor_count, anchors_for_levels, Anchor};
use super::boxes::Detection;
use super::head::{decode, head_apply};
use super::nms::{nms, DEFAULT_MAX_OUT, DEFAULT_NMS_IOU};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictSettings {
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub max_out: usize,
}

impl Default for PredictSettings {
    fn default() -> Self {
        Self { conf_threshold: 0.01, nms_iou: DEFAULT_NMS_IOU, max_out: DEFAULT_MAX_OUT }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub detections: Vec<Detection>,
    /// Schedule indices of the levels the head ran on.
    pub head_levels: Vec<usize>,
    /// Per-anchor head outputs evaluated.
    pub head_evaluations: usize,
}

/// Raw head maps on the head-attached levels of one forward pass.
pub struct HeadOutputs {
    pub levels: Vec<FeatureLevel>,
    pub head_levels: Vec<usize>,
    pub raw: Vec<Var>,
}

/// Runs the pyramid and applies the shared head to the original levels,
/// or to every level when `sol` is set.
pub fn head_outputs<T: Scalar>(
    model: &SfpnModel<T>,
    session: &mut Session<T>,
    image: Var,
    sol: bool,
) -> Result<HeadOutputs> {
    let levels = model.forward(session, image)?;
    let head_levels = model.schedule().head_levels(sol);
    let unit = session.unit(model.head_slot());
    let raw = head_levels
        .iter()
        .map(|&i| head_apply(&mut session.tape, &levels[i], unit))
        .collect::<Result<Vec<_>>>()?;
    Ok(HeadOutputs { levels, head_levels, raw })
}

/// Anchors matching [`head_outputs`] for the same mode.
pub fn model_anchors<T: Scalar>(model: &SfpnModel<T>, sol: bool) -> Vec<Anchor> {
    let levels = model.schedule().head_levels(sol);
    anchors_for_levels(model.schedule(), &levels, model.config().input_size)
}

/// Forward, head, decode and joint NMS for one `1 x 3 x S x S` image.
pub fn predict<T: Scalar>(
    model: &SfpnModel<T>,
    image: &Tensor<T>,
    sol: bool,
    settings: &PredictSettings,
) -> Result<Prediction> {
    let mut s = model.session(false);
    let x = s.tape.leaf(image.clone(), false);
    let out = head_outputs(model, &mut s, x, sol)?;
    let anchors = model_anchors(model, sol);
    let maps: Vec<&Tensor<T>> = out.raw.iter().map(|&v| s.tape.value(v)).collect();
    let cfg = model.config();
    let dets = decode(&maps, &anchors, cfg.num_classes, settings.conf_threshold, cfg.input_size)?;
    let head_evaluations = anchor_count(model.schedule(), &out.head_levels, cfg.input_size);
    Ok(Prediction {
        detections: nms(&dets, settings.nms_iou, settings.max_out),
        head_levels: out.head_levels,
        head_evaluations,
    })
}
