use std::path::PathBuf;

use mrrawnet_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("waveform length {len} is not a multiple of the frame hop {hop}; crop or pad the input first")]
    Crop { len: usize, hop: usize },
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error("checkpoint parameter {param:?}: {detail}")]
    CheckpointParam { param: String, detail: String },
    #[error("audio {path}: {detail}")]
    Audio { path: PathBuf, detail: String },
    #[error("{path}:{line}: {detail}")]
    Trials { path: PathBuf, line: usize, detail: String },
    #[error("unknown utterance key {0:?}")]
    UnknownKey(String),
    #[error("metric: {0}")]
    Metric(String),
    #[error("non-finite loss at step {step}; last batch: {dump}")]
    NonFinite { step: usize, dump: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
