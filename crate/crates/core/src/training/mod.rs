//! Batched training with Adam, step-decayed learning rate, gradient
//! clipping, scheduled sampling and best-validation retention.

mod config;
mod trainer;

pub use config::{LossKind, ModelKind, TrainConfig};
pub use trainer::{
    build_model, evaluate_loss, model_config, predict, prepare_data, train, EpochRecord,
    PreparedData, TrainLog,
};
