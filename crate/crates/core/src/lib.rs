//! Asynchronous multimodal fusion within temporal binding windows.
//!
//! The crate bundles everything needed to study binding-window fusion at desk
//! scale: temporal index mathematics ([`sampler`]), a log-spectrogram audio
//! frontend ([`audio`]), a small reverse-mode autodiff core ([`autodiff`]),
//! the fusion model itself ([`model`]), a controllable synthetic dataset
//! generator ([`synthgen`]) and an evaluation suite ([`metrics`]).

pub mod audio;
pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Dtype, Scalar, Tensor};
