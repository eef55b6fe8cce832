//! Command-line harness: run configuration, checkpoint persistence, the
//! training loop, injection-sweep evaluation, and architecture ablations.

pub mod checkpoint;
pub mod config;
pub mod harness;
pub mod optim;
pub mod pool;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("config: {0}")]
    ConfigGeneral(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ovgt_core::backbone::ModelError),
    #[error(transparent)]
    Scene(#[from] ovgt_core::synth::SceneError),
    #[error(transparent)]
    Fusion(#[from] ovgt_core::fusion::FusionError),
    #[error(transparent)]
    Metrics(#[from] ovgt_core::metrics::MetricsError),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
}
