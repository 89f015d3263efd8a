//! Nonlinear system identification with GRU and TCN sequence models in
//! autoregressive and non-autoregressive configurations.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision to `f64`.

pub mod cli;
pub mod data;
pub mod error;
pub mod hpo;
pub mod inference;
pub mod models;
pub mod numkit;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Array = numkit::Tensor<f64>;
pub type Model = models::Model<f64>;
pub type ParamStore = models::ParamStore<f64>;
pub type HiddenState = models::HiddenState<f64>;
pub type SequenceData = data::SequenceData<f64>;
pub type Checkpoint = cli::Checkpoint<f64>;
