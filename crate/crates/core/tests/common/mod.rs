#![allow(dead_code)]

use etdiff::dataio::VarianceLevel;
use etdiff::harness::ExperimentConfig;
use etdiff::model::PredictorConfig;

/// A small synthetic experiment that trains in a few seconds.
pub fn tiny_experiment(days: usize, level: VarianceLevel) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::synth(days, 60, level);
    cfg.seed = 11;
    cfg.data.attributes = Some(vec!["energy".into()]);
    cfg.windows.context_len = 12;
    cfg.windows.horizon_len = 12;
    cfg.windows.train_stride = 6;
    cfg.windows.eval_stride = 12;
    cfg.model.hidden = 8;
    cfg.model.predictor = PredictorConfig {
        residual_channels: 8,
        residual_blocks: 2,
        dilation_cycle: 2,
        step_embedding: 8,
        step_hidden: 16,
    };
    cfg.schedule.steps = 10;
    cfg.train.max_epochs = 3;
    cfg.train.batch_size = 16;
    cfg.train.val_delta_every = 2;
    cfg.train.val_delta_windows = 4;
    cfg
}
