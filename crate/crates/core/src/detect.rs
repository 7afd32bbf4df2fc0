//! Anomaly scores, threshold calibration and the OR-ensemble decision.

use std::path::Path;

use chrono::NaiveDateTime;
use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataio::WindowPair;
use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::model::{reconstruct_and_forecast_batch, EtdModel, InferenceMode, Reconstruction};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub window_id: usize,
    pub origin_timestamp: NaiveDateTime,
    pub delta_r: f64,
    pub delta_f: f64,
}

fn check_same(x: ArrayView2<f64>, x_hat: ArrayView2<f64>) -> Result<()> {
    if x.dim() != x_hat.dim() {
        return Err(Error::shape(x.dim(), x_hat.dim()));
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("window"));
    }
    Ok(())
}

/// Mean absolute error over every entry.
pub fn reconstruction_error(x: ArrayView2<f64>, x_hat: ArrayView2<f64>) -> Result<f64> {
    check_same(x, x_hat)?;
    Ok((&x_hat - &x).mapv(f64::abs).mean().unwrap_or(0.0))
}

/// Mean absolute error after removing each attribute's mean offset between
/// forecast and truth, averaged over attributes.
pub fn forecasting_error(x: ArrayView2<f64>, x_hat: ArrayView2<f64>) -> Result<f64> {
    check_same(x, x_hat)?;
    let diff = &x_hat - &x;
    let shift = diff.mean_axis(Axis(0)).expect("non-empty");
    let centered = &diff - &shift;
    Ok(centered
        .mapv(f64::abs)
        .mean_axis(Axis(0))
        .expect("non-empty")
        .mean()
        .unwrap_or(0.0))
}

/// Anything that returns reconstructions of the context and forecasts of the
/// horizon for a batch of windows.
pub trait WindowModel {
    /// `seeds[i]` controls all randomness used for `windows[i]`.
    fn reconstruct(&self, windows: &[&WindowPair], seeds: &[u64]) -> Result<Vec<Reconstruction>>;
}

/// A trained diffusion model run in a fixed inference mode.
pub struct DiffusionScorer<'a> {
    pub model: &'a EtdModel,
    pub schedule: &'a DiffusionSchedule,
    pub mode: InferenceMode,
}

impl WindowModel for DiffusionScorer<'_> {
    fn reconstruct(&self, windows: &[&WindowPair], seeds: &[u64]) -> Result<Vec<Reconstruction>> {
        reconstruct_and_forecast_batch(self.model, self.schedule, windows, self.mode, seeds)
    }
}

/// Scores one window; `seed` fixes the sampling noise.
pub fn score_window<W: WindowModel + ?Sized>(model: &W, window: &WindowPair, window_id: usize, seed: u64) -> Result<AnomalyScore> {
    let out = model.reconstruct(&[window], &[seed])?;
    let out = out.first().ok_or(Error::EmptyInput("reconstruction"))?;
    score_from(window, out, window_id)
}

fn score_from(w: &WindowPair, out: &Reconstruction, window_id: usize) -> Result<AnomalyScore> {
    Ok(AnomalyScore {
        window_id,
        origin_timestamp: w.origin_timestamp,
        delta_r: reconstruction_error(w.context.view(), out.context.view())?,
        delta_f: forecasting_error(w.horizon.view(), out.horizon.view())?,
    })
}

/// Plain forecasting MAE without the mean-shift correction.
pub fn forecast_mae(x: ArrayView2<f64>, x_hat: ArrayView2<f64>) -> Result<f64> {
    reconstruction_error(x, x_hat)
}

/// Scores windows in batches of `batch_size`. Window `i` uses the seed
/// `derive(base_seed, origin_index)`, so a window and its attacked copy see
/// the same sampling noise, and results do not depend on `batch_size`.
pub fn score_windows<W: WindowModel + ?Sized>(
    model: &W,
    windows: &[WindowPair],
    base_seed: u64,
    batch_size: usize,
) -> Result<Vec<AnomalyScore>> {
    Ok(score_windows_detailed(model, windows, base_seed, batch_size)?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

/// [`score_windows`] that also returns each model output.
pub fn score_windows_detailed<W: WindowModel + ?Sized>(
    model: &W,
    windows: &[WindowPair],
    base_seed: u64,
    batch_size: usize,
) -> Result<Vec<(AnomalyScore, Reconstruction)>> {
    let batch_size = batch_size.max(1);
    let mut scores = Vec::with_capacity(windows.len());
    for (c, chunk) in windows.chunks(batch_size).enumerate() {
        let refs: Vec<&WindowPair> = chunk.iter().collect();
        let seeds: Vec<u64> = chunk.iter().map(|w| seed::derive(base_seed, w.origin_index as u64)).collect();
        let outs = model.reconstruct(&refs, &seeds)?;
        if outs.len() != chunk.len() {
            return Err(Error::shape((chunk.len(), 1), (outs.len(), 1)));
        }
        for (j, (w, o)) in chunk.iter().zip(outs).enumerate() {
            scores.push((score_from(w, &o, c * batch_size + j)?, o));
        }
    }
    Ok(scores)
}

/// How the overall false-positive budget is split between the detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BudgetSplit {
    #[default]
    HalfHalf,
    /// `share_r` of the budget to reconstruction, the rest to forecasting.
    Custom { share_r: f64 },
}

impl BudgetSplit {
    pub fn budgets(self, alpha: f64) -> Result<(f64, f64)> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::BadRange(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let share = match self {
            Self::HalfHalf => 0.5,
            Self::Custom { share_r } if (0.0..=1.0).contains(&share_r) => share_r,
            Self::Custom { share_r } => return Err(Error::BadRange(format!("share_r must lie in [0, 1], got {share_r}"))),
        };
        Ok((alpha * share, alpha * (1.0 - share)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorThresholds {
    pub th_r: f64,
    pub th_f: f64,
    pub budget_r: f64,
    pub budget_f: f64,
}

/// Empirical quantile with the "higher" convention: the sorted value at
/// index `ceil(q (n - 1))`.
pub fn higher_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("quantile"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = (q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64 - 1e-12).ceil().max(0.0) as usize;
    Ok(sorted[idx.min(sorted.len() - 1)])
}

/// Thresholds at the `1 - budget` higher quantiles of normal validation
/// scores; with strict exceedance the realized validation rate of each
/// detector stays within its budget.
pub fn calibrate_thresholds(validation: &[AnomalyScore], alpha: f64, split: BudgetSplit) -> Result<DetectorThresholds> {
    if validation.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let (budget_r, budget_f) = split.budgets(alpha)?;
    let r: Vec<f64> = validation.iter().map(|s| s.delta_r).collect();
    let f: Vec<f64> = validation.iter().map(|s| s.delta_f).collect();
    Ok(DetectorThresholds {
        th_r: higher_quantile(&r, 1.0 - budget_r)?,
        th_f: higher_quantile(&f, 1.0 - budget_f)?,
        budget_r,
        budget_f,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reason {
    R,
    F,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Normal,
    Anomaly(Reason),
}

impl Decision {
    pub fn is_anomaly(self) -> bool {
        matches!(self, Self::Anomaly(_))
    }

    fn labels(self) -> (&'static str, &'static str) {
        match self {
            Self::Normal => ("normal", ""),
            Self::Anomaly(Reason::R) => ("anomaly", "R"),
            Self::Anomaly(Reason::F) => ("anomaly", "F"),
            Self::Anomaly(Reason::Both) => ("anomaly", "both"),
        }
    }
}

/// Flags a window when either score strictly exceeds its threshold.
pub fn ensemble_decide(score: &AnomalyScore, th: &DetectorThresholds) -> Decision {
    match (score.delta_r > th.th_r, score.delta_f > th.th_f) {
        (false, false) => Decision::Normal,
        (true, false) => Decision::Anomaly(Reason::R),
        (false, true) => Decision::Anomaly(Reason::F),
        (true, true) => Decision::Anomaly(Reason::Both),
    }
}

/// Writes `window_id, origin_timestamp, delta_r, delta_f, label, decision, reason`.
pub fn write_scores_csv(path: &Path, rows: &[(AnomalyScore, &str)], th: &DetectorThresholds) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["window_id", "origin_timestamp", "delta_r", "delta_f", "label", "decision", "reason"])?;
    for (s, label) in rows {
        let (decision, reason) = ensemble_decide(s, th).labels();
        w.write_record([
            s.window_id.to_string(),
            s.origin_timestamp.format("%Y-%m-%dT%H:%M:%S").to_string(),
            s.delta_r.to_string(),
            s.delta_f.to_string(),
            label.to_string(),
            decision.to_string(),
            reason.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::WindowLabel;
    use chrono::NaiveDate;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn ts() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2014, 1, 6).unwrap().and_hms_opt(0, 0, 0).unwrap()
    }

    fn score(r: f64, f: f64) -> AnomalyScore {
        AnomalyScore {
            window_id: 0,
            origin_timestamp: ts(),
            delta_r: r,
            delta_f: f,
        }
    }

    #[test]
    fn reconstruction_error_examples() {
        let x = array![[1.0], [2.0]];
        assert_eq!(reconstruction_error(x.view(), array![[1.5], [2.5]].view()).unwrap(), 0.5);
        assert_eq!(reconstruction_error(x.view(), x.view()).unwrap(), 0.0);
        let y = array![[0.0, 0.0], [0.0, 0.0]];
        let y_hat = array![[0.0, 1.0], [0.0, -1.0]];
        assert_eq!(reconstruction_error(y.view(), y_hat.view()).unwrap(), 0.5);
        assert!(matches!(
            reconstruction_error(x.view(), y.view()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn forecasting_error_examples() {
        let x = array![[1.0], [2.0], [3.0]];
        assert!(forecasting_error(x.view(), (&x + 7.0).view()).unwrap().abs() < 1e-12);
        assert_eq!(forecasting_error(x.view(), x.view()).unwrap(), 0.0);
        // diff (0, 0, 2), mean 2/3, centered (-2/3, -2/3, 4/3)
        let got = forecasting_error(x.view(), array![[1.0], [2.0], [5.0]].view()).unwrap();
        assert!((got - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn forecasting_error_centers_each_attribute() {
        let x = array![[0.0, 0.0], [0.0, 0.0]];
        let x_hat = array![[3.0, 1.0], [3.0, -1.0]];
        // attribute 0 is a pure shift; attribute 1 has MAE 1 around its mean
        assert!((forecasting_error(x.view(), x_hat.view()).unwrap() - 0.5).abs() < 1e-12);
    }

    struct Echo(f64);

    impl WindowModel for Echo {
        fn reconstruct(&self, windows: &[&WindowPair], _: &[u64]) -> Result<Vec<Reconstruction>> {
            Ok(windows
                .iter()
                .map(|w| Reconstruction {
                    context: &w.context + self.0,
                    horizon: &w.horizon + self.0,
                })
                .collect())
        }
    }

    fn window(origin: usize) -> WindowPair {
        WindowPair {
            context: Array2::from_shape_fn((4, 2), |(i, j)| (i + j + origin) as f64),
            horizon: Array2::from_shape_fn((3, 2), |(i, j)| (i * j) as f64),
            covariates: Array2::zeros((7, 4)),
            origin_index: origin,
            origin_timestamp: ts(),
            label: WindowLabel::Normal,
        }
    }

    #[test]
    fn stub_scores() {
        let w = window(0);
        let s = score_window(&Echo(0.0), &w, 3, 1).unwrap();
        assert_eq!((s.delta_r, s.delta_f, s.window_id), (0.0, 0.0, 3));
        let s = score_window(&Echo(2.5), &w, 0, 1).unwrap();
        assert!((s.delta_r - 2.5).abs() < 1e-12 && s.delta_f.abs() < 1e-12);
    }

    #[test]
    fn score_windows_numbers_in_order() {
        let ws: Vec<_> = (0..5).map(window).collect();
        let s = score_windows(&Echo(1.0), &ws, 9, 2).unwrap();
        assert_eq!(s.iter().map(|s| s.window_id).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn calibration_examples() {
        let vals: Vec<AnomalyScore> = (1..=100).map(|v| score(v as f64, v as f64)).collect();
        let th = calibrate_thresholds(&vals, 0.05, BudgetSplit::HalfHalf).unwrap();
        assert_eq!((th.budget_r, th.budget_f), (0.025, 0.025));
        assert_eq!(th.th_r, 98.0);
        let fpr = vals.iter().filter(|s| s.delta_r > th.th_r).count();
        assert_eq!(fpr, 2);

        let flat = vec![score(0.3, 0.7); 10];
        let th = calibrate_thresholds(&flat, 0.05, BudgetSplit::HalfHalf).unwrap();
        assert_eq!((th.th_r, th.th_f), (0.3, 0.7));
        assert!(flat.iter().all(|s| !ensemble_decide(s, &th).is_anomaly()));

        assert!(matches!(
            calibrate_thresholds(&[], 0.05, BudgetSplit::HalfHalf),
            Err(Error::EmptyValidation)
        ));
        let th = calibrate_thresholds(&vals, 0.1, BudgetSplit::Custom { share_r: 0.2 }).unwrap();
        assert!((th.budget_r - 0.02).abs() < 1e-15 && (th.budget_f - 0.08).abs() < 1e-15);
    }

    #[test]
    fn decision_examples() {
        let th = DetectorThresholds {
            th_r: 1.0,
            th_f: 2.0,
            budget_r: 0.025,
            budget_f: 0.025,
        };
        assert_eq!(ensemble_decide(&score(1.0 + 1e-9, 0.0), &th), Decision::Anomaly(Reason::R));
        assert_eq!(ensemble_decide(&score(0.0, 2.5), &th), Decision::Anomaly(Reason::F));
        assert_eq!(ensemble_decide(&score(1.0, 2.0), &th), Decision::Normal);
        assert_eq!(ensemble_decide(&score(5.0, 5.0), &th), Decision::Anomaly(Reason::Both));
    }

    #[test]
    fn scores_csv_has_decisions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let th = DetectorThresholds {
            th_r: 1.0,
            th_f: 1.0,
            budget_r: 0.0,
            budget_f: 0.0,
        };
        write_scores_csv(&path, &[(score(2.0, 0.0), "normal"), (score(0.0, 0.0), "FR")], &th).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with("normal,anomaly,R"));
        assert!(lines[2].ends_with("FR,normal,"));
    }

    proptest! {
        #[test]
        fn shift_invariance(vals in proptest::collection::vec(-5.0f64..5.0, 12), c0 in -50.0f64..50.0, c1 in -50.0f64..50.0) {
            let x = Array2::from_shape_vec((6, 2), vals.clone()).unwrap();
            let x_hat = x.mapv(|v| (v * 1.7).sin());
            let mut shifted = x_hat.clone();
            shifted.column_mut(0).mapv_inplace(|v| v + c0);
            shifted.column_mut(1).mapv_inplace(|v| v + c1);
            let a = forecasting_error(x.view(), x_hat.view()).unwrap();
            let b = forecasting_error(x.view(), shifted.view()).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn zero_iff_equal(vals in proptest::collection::vec(-5.0f64..5.0, 8), k in 0usize..8, d in prop_oneof![Just(0.0), 1e-6f64..1.0]) {
            let x = Array2::from_shape_vec((4, 2), vals).unwrap();
            let mut y = x.clone();
            y[[k / 2, k % 2]] += d;
            let e = reconstruction_error(x.view(), y.view()).unwrap();
            prop_assert_eq!(e == 0.0, d == 0.0);
        }

        #[test]
        fn calibrated_fpr_within_budget(vals in proptest::collection::vec(0.0f64..1.0, 1..300), alpha in 0.01f64..0.5) {
            let s: Vec<_> = vals.iter().map(|&v| score(v, 1.0 - v)).collect();
            let th = calibrate_thresholds(&s, alpha, BudgetSplit::HalfHalf).unwrap();
            let n = s.len() as f64;
            let fr = s.iter().filter(|x| x.delta_r > th.th_r).count() as f64 / n;
            let ff = s.iter().filter(|x| x.delta_f > th.th_f).count() as f64 / n;
            let fe = s.iter().filter(|x| ensemble_decide(x, &th).is_anomaly()).count() as f64 / n;
            prop_assert!(fr <= th.budget_r + 1e-12 && ff <= th.budget_f + 1e-12 && fe <= alpha + 1e-12);
        }

        #[test]
        fn raising_threshold_shrinks_flags(vals in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..100), t in 0.0f64..1.0, bump in 0.0f64..0.5) {
            let th = DetectorThresholds { th_r: t, th_f: 0.5, budget_r: 0.0, budget_f: 0.0 };
            let hi = DetectorThresholds { th_r: t + bump, ..th };
            for &(r, f) in &vals {
                let s = score(r, f);
                if ensemble_decide(&s, &hi).is_anomaly() {
                    prop_assert!(ensemble_decide(&s, &th).is_anomaly());
                }
            }
        }
    }
}
