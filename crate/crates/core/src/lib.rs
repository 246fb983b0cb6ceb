//! Probabilistic human motion prediction: a learned pose embedding, a
//! residual recurrent generator driven by an extrinsic random factor, a
//! dual-head bidirectional discriminator, adversarial training and
//! evaluation.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod ad;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gan;
pub mod motion;
pub mod nets;
pub mod pose;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Array64 = ad::Array<f64>;
pub type Array32 = ad::Array<f32>;
pub type Graph64 = ad::Graph<f64>;
pub type Graph32 = ad::Graph<f32>;
pub type ParameterStore64 = ad::ParameterStore<f64>;
pub type ParameterStore32 = ad::ParameterStore<f32>;
pub type MotionSequence64 = motion::MotionSequence<f64>;
pub type MotionSequence32 = motion::MotionSequence<f32>;
pub type PoseAae64 = pose::PoseAae<f64>;
pub type PoseAae32 = pose::PoseAae<f32>;
pub type GanModel64 = gan::GanModel<f64>;
pub type GanModel32 = gan::GanModel<f32>;
pub type Trainer64 = training::Trainer<f64>;
pub type Trainer32 = training::Trainer<f32>;
