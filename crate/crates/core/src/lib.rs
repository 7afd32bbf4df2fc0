//! Energy-theft detection for smart-meter time series.
//!
//! A conditional denoising diffusion model is trained on honest consumption
//! to jointly reconstruct a look-back window and forecast the following
//! horizon. Windows whose reconstruction error or mean-shift-corrected
//! forecasting error exceed calibrated thresholds are flagged, and the two
//! detectors are combined with an OR rule.
//!
//! Module map:
//! - [`dataio`]: ingestion, chronological splits, normalization, windows,
//!   temporal covariates and a synthetic grid generator.
//! - [`attacks`]: the seven energy-theft manipulations.
//! - [`diffusion`]: variance schedule, forward noising, reverse sampling.
//! - [`model`]: recurrent conditioner, dilated-convolution noise predictor,
//!   training loop and inference.
//! - [`detect`]: anomaly scores, threshold calibration, ensemble decision.
//! - [`harness`]: ROC/AUC and alpha-TPR metrics, experiment orchestration.

pub mod attacks;
pub mod dataio;
pub mod detect;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod model;
pub mod seed;

pub use error::{Error, Result};
