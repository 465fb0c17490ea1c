//! Convolutional feasibility classifier: layers, weighted BCE, Adam,
//! training, evaluation and the model file.

mod adam;
mod infer;
mod io;
mod loss;
mod model;
mod tensor;
mod train;

use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

pub use adam::Adam;
pub use infer::Predictor;
pub use io::{load_model, read_model, save_model, write_model};
pub use loss::{loss, loss_grad, PROB_CLIP};
pub use model::{
    Conv, Dense, NfcModel, SparseInput, Trace, CONV1_FILTERS, CONV1_OUT, CONV2_FILTERS, CONV2_OUT, FEATURE_LEN, FLAT_LEN, HIDDEN, INPUT_CHANNELS,
    OUTPUTS, POOL1_OUT, POOL2_OUT,
};
pub use tensor::Tensor;
pub use train::{
    batch_gradients, evaluate, evaluate_with, train, train_observed, train_with_validation, Confusion, EpochRecord, EvalReport,
    TrainConfig, TrainOutcome, DEFAULT_POS_WEIGHTS,
};

/// Scalar type the network is generic over; f32 for training and
/// inference, f64 for the finite-difference shadow.
pub trait Real: Float + AddAssign + SubAssign + MulAssign + Default + std::fmt::Debug + Send + Sync + 'static {}

impl<T> Real for T where T: Float + AddAssign + SubAssign + MulAssign + Default + std::fmt::Debug + Send + Sync + 'static {}

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has {n} samples, training needs at least {need}")]
    DatasetTooSmall { n: usize, need: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model file version {0}")]
    VersionMismatch(u32),
    #[error("model file is truncated")]
    TruncatedFile,
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
