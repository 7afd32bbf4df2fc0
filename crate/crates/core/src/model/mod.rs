//! Learnable core: recurrent conditioners with a hidden-state handoff, the
//! shared dilated-convolution noise predictor, training and inference.

mod adam;
mod checkpoint;
mod infer;
mod lstm;
mod network;
mod ops;
mod params;
mod predictor;
mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use infer::{reconstruct_and_forecast, reconstruct_and_forecast_batch, InferenceMode, Reconstruction};
pub use network::{ConditioningBundle, EtdModel, Handoff, LossParts, ModelConfig, TrainBatch};
pub use params::{Layout, Slot};
pub use predictor::{step_embedding, PredictorConfig};
pub use train::{fit, train_step, validation_deltas, validation_loss, FitOutcome, TraceRow, TrainConfig, TrainTrace, Trainer};

#[cfg(test)]
mod tests;
