//! Convolutional auto-encoder anomaly detection for multivariate time
//! series, with counterfactual explanations restricted to the features that
//! drive each anomaly.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, the layer family, losses and a gradient tape.
//! - [`data`]: delimited-file ingestion, min-max normalisation, windowing.
//! - [`model`] and [`train`]: auto-encoder construction, Adam training and
//!   the versioned model file.
//! - [`detector`]: anomaly scores, threshold calibration, detection metrics.
//! - [`explainer`]: feature selection and masked counterfactual search.
//! - [`evalx`]: validity, sparsity and distance of explanation sets.
//! - [`synth`]: seeded synthetic sensor data with injected anomalies.

pub mod data;
pub mod detector;
pub mod error;
pub mod evalx;
pub mod explainer;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
