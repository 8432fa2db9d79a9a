//! Command-line pipeline around the `aecf` library: prepare windows, train,
//! calibrate and detect, explain flagged windows, evaluate explanations,
//! and generate synthetic data.

pub mod commands;
pub mod config;

pub use commands::{cmd_detect, cmd_evaluate, cmd_explain, cmd_prepare, cmd_synth, cmd_train, Layout};
pub use config::RunConfig;
