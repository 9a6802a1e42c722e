//! Multi-resolution raw-waveform speaker embeddings: network, training on a
//! synthetic speaker corpus, and variable-duration verification scoring.

pub mod audio;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod corpus;
mod error;
pub mod eval;
pub mod frontend;
pub mod head;
pub mod model;
pub mod nn;
pub mod train;
pub mod verify;

pub use config::{BackboneConfig, BaselineConfig, HeadConfig, ModelConfig, MrfeConfig, Variant};
pub use error::{Error, Result};
pub use model::{Model, ParamCount};
pub use mrrawnet_tensor as tensor;
