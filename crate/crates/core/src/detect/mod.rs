//! Shared detection head: anchors, decoding, assignment, loss and NMS.

pub mod anchors;
pub mod assign;
pub mod boxes;
pub mod head;
pub mod loss;
pub mod nms;
pub mod predict;

pub use anchors::{anchor_count, anchors_for_levels, gen_anchors, Anchor};
pub use assign::{assign_targets, encode, AnchorState, TargetAssignment};
pub use boxes::{iou, BBox, Detection, GroundTruthBox};
pub use head::{decode, decode_box, head_apply};
pub use loss::detection_loss;
pub use nms::nms;
pub use predict::{head_outputs, model_anchors, predict, PredictSettings, Prediction};
