//! Minimal CNN/MLP substrate with hand-written reverse-mode gradients, and
//! the policy and soft-Q networks built on it.

mod archive;
mod gaussian;
mod layers;
mod nets;
mod optim;
mod tensor;

use thiserror::Error;

pub use archive::{ArchiveTensor, WeightArchive, FORMAT_VERSION, MAGIC};
pub use gaussian::{
    clamp_action, deterministic_action, log_prob_of_action, sample_action, squash, SquashedSample,
    SQUASH_EPS,
};
pub use layers::{
    adaptive_avg_pool, adaptive_avg_pool_backward, concat, concat_backward, relu, relu_backward,
    Conv2d, ConvCache, Linear,
};
pub use nets::{
    PolicyNetwork, PolicyOutput, PolicyTape, QEncoding, QHeadTape, QNetwork, QTape, ACTION_DIM, FEATURES, LOG_STD_MAX,
    LOG_STD_MIN, STATE_CHANNELS, STATE_SIZE,
};
pub use optim::{Adam, ScalarAdam};
pub use tensor::{Grads, ParamSet, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch for {what}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("archive format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("archive is missing tensor {0}")]
    MissingTensor(String),
    #[error("archive contains unknown tensor {0}")]
    UnknownTensor(String),
    #[error("malformed archive: {0}")]
    Archive(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, NeuralError>;
