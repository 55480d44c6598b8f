//! Minimal dense-tensor reverse-mode differentiation.
//!
//! A [`Tape<E>`](tape::Tape) records forward operations as closures and
//! replays them in reverse; leaves created from a [`ParamStore`] route their
//! gradients into the matching [`Parameter`]. Training runs in `f32`,
//! gradient checking instantiates the same code over `f64`.

mod gradcheck;
mod sgd;
mod store;
mod tape;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use sgd::{sgd_step, SgdConfig};
pub use store::{ParamId, ParamStore, Parameter};
pub use tape::{softmax_rows, Tape, Var};
