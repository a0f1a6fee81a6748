//! Declarative dense networks and a native trainer.

pub mod gradcheck;
mod matrix;
mod model;
mod optimizer;
mod spec;
mod train;
mod weights;

use thiserror::Error;

pub use matrix::Matrix;
pub use model::{
    batch_loss, compute_gradients, forward, init_params, loss_value, predict, DenseParams,
    ForwardPass, Gradients, Targets, TrainedModel,
};
pub use optimizer::OptimizerState;
pub use spec::{
    parse_model_spec, Activation, LayerSpec, Loss, Metric, ModelSpec, OptimizerKind, OptimizerSpec,
};
pub use train::{evaluate, to_batch, train, MetricsReport, TrainingConfig};
pub use weights::{load_weights, save_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MlError {
    #[error("invalid model spec: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),
    #[error("invalid training config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("expected {expected} input columns, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("corrupt weights: {0}")]
    CorruptWeights(String),
    #[error("weights do not match spec: {0}")]
    SpecMismatch(String),
    #[error("no samples to train or evaluate on")]
    EmptyDataset,
}
