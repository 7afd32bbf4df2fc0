//! Evaluation metrics and experiment orchestration.

mod config;
mod experiment;
mod metrics;
pub mod plot;

pub use config::{DataConfig, DataSource, DetectionConfig, ExperimentConfig, Metric, WindowConfig};
pub use experiment::{
    build_attack_sets, effective_attacks, effective_model_config, effective_train_config, evaluate, evaluate_model,
    load_data, prepare, run_experiment, score_all, train_model, write_score_files, AttackRow, AttackedSet, EvalReport, ExperimentOutcome,
    ForecastSummary, PerUserMatrix, PreparedData, RunMetadata, RunOptions, ScoreBook, ScoredSet, Summary,
};
pub use metrics::{alpha_threshold, alpha_tpr, ensemble_alpha_tpr, pairwise_auc, roc_auc, AlphaTpr, EnsembleTpr, RocCurve};
