//! Residual regression network mapping one scan reading `[R_L, R_R, E_L, E_R]`
//! to the base-frame position of the scanned marker.
//!
//! Layout: a linear expansion from 4 inputs to `hidden` features, `blocks`
//! residual blocks (`relu(h + W2 relu(W1 h + b1) + b2)`), and a linear head
//! with 2 outputs. Inputs and targets are standardized with statistics fitted
//! on the training split; the loss is the mean squared error in that
//! normalized space.
//!
//! The network is generic over `f32`/`f64`. Models are stored in `f64`;
//! training runs in either precision.

mod adam;
mod format;
mod linalg;
mod metrics;
mod model;
mod network;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use format::{load_model, model_from_bytes, model_to_bytes, save_model, ModelFormatError, FORMAT_VERSION, MAGIC};
pub use linalg::Real;
pub use metrics::{mean_squared_error, r_squared, rmse};
pub use model::{init_model, Architecture, CalibModel, Normalizer, Predictor, FEATURES, OUTPUTS};
pub use network::{Linear, Network, ResidualBlock, Workspace};
pub use train::{
    save_history_csv, train, train_with_progress, write_history_csv, EpochStats, HISTORY_HEADER, LrSchedule, Precision, TrainConfig, TrainHistory,
    TrainOutcome,
};
