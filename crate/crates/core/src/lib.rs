//! Online multi-object tracking with a message-passing network over a
//! rolling-window graph of detections and candidate associations.
//!
//! The numeric core is generic over [`Scalar`]; the aliases below fix it to
//! `f64` or `f32`.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod decoder;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
mod scalar;
pub mod tracker;
pub mod trainer;

#[cfg(test)]
mod test_util;

pub use config::RunConfig;
pub use data::{Detection, Sequence};
pub use decoder::{DecodeConfig, DecodeMethod};
pub use error::{Error, Result};
pub use graph::WindowConfig;
pub use metrics::{evaluate, MotReport};
pub use model::ModelConfig;
pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type TensorF32 = autodiff::Tensor<f32>;
pub type Graph64 = graph::DynamicGraph<f64>;
pub type GraphF32 = graph::DynamicGraph<f32>;
pub type Params64 = model::ModelParams<f64>;
pub type ParamsF32 = model::ModelParams<f32>;
pub type Trainer64 = trainer::Trainer<f64>;
pub type TrainerF32 = trainer::Trainer<f32>;
pub type Tracker64 = tracker::OnlineTracker<f64>;
pub type TrackerF32 = tracker::OnlineTracker<f32>;
