//! Synthetic fusion pyramid networks for object detection.
//!
//! The crate is generic over the element type ([`Scalar`]); the aliases
//! below pin it to `f32` for training and inference and `f64` for
//! gradient checks.

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod detect;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod params;
pub mod pyramid;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autograd::{PointLoss, Tape, Var};
pub use error::{Error, ErrorClass, Result};
pub use params::{Adam, Optimizer, OptimizerKind, Param, ParamStore, Sgd};
pub use scalar::Scalar;
pub use tensor::{Shape4, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;

pub use pyramid::{ModelConfig, ScaleSchedule, SfpnModel, Variant};

pub type SfpnModel32 = SfpnModel<f32>;
pub type SfpnModel64 = SfpnModel<f64>;
