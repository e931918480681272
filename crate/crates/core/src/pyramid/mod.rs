//! Pyramid construction: stride schedules, model configuration and the
//! synthetic fusion neck.

pub mod config;
pub mod model;
pub mod ops;
pub mod schedule;

pub use config::{ModelConfig, ANCHORS_PER_CELL};
pub use model::{ConvSlot, ParamScope, Session, SfmNode, SfpnModel, Wiring};
pub use ops::{front_sources, sfb_pass, sfb_wiring, sfm_fuse, synthesize_front, tiny_backbone, ConvUnit, FeatureLevel};
pub use schedule::{Origin, ScaleSchedule, Variant, DEFAULT_BASE_STRIDES};
