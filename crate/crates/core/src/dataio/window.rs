use std::f64::consts::TAU;

use chrono::{Datelike, NaiveDateTime, Timelike};
use ndarray::{s, concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::SeriesFrame;
use crate::attacks::AttackKind;
use crate::error::{Error, Result};

/// Number of temporal covariates per time step.
pub const COVARIATE_COUNT: usize = 4;

/// Column names of [`make_covariates`].
pub const COVARIATE_NAMES: [&str; COVARIATE_COUNT] = ["sin_hour", "cos_hour", "sin_week", "cos_week"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowLabel {
    Normal,
    Attacked(AttackKind),
}

/// One detection instance: look-back context, forecast horizon and the
/// covariates covering both.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub context: Array2<f64>,
    pub horizon: Array2<f64>,
    pub covariates: Array2<f64>,
    pub origin_index: usize,
    pub origin_timestamp: NaiveDateTime,
    pub label: WindowLabel,
}

impl WindowPair {
    pub fn context_len(&self) -> usize {
        self.context.nrows()
    }

    pub fn horizon_len(&self) -> usize {
        self.horizon.nrows()
    }

    pub fn n_attributes(&self) -> usize {
        self.context.ncols()
    }

    /// Context and horizon stacked into one `(L+T) x M` block.
    pub fn full(&self) -> Array2<f64> {
        concatenate![Axis(0), self.context, self.horizon]
    }

    /// Replaces the values with an `(L+T) x M` block, keeping covariates.
    pub fn with_full(&self, full: &Array2<f64>, label: WindowLabel) -> Result<Self> {
        let (l, t, m) = (self.context_len(), self.horizon_len(), self.n_attributes());
        if full.dim() != (l + t, m) {
            return Err(Error::shape((l + t, m), full.dim()));
        }
        Ok(Self {
            context: full.slice(s![..l, ..]).to_owned(),
            horizon: full.slice(s![l.., ..]).to_owned(),
            covariates: self.covariates.clone(),
            origin_index: self.origin_index,
            origin_timestamp: self.origin_timestamp,
            label,
        })
    }
}

/// Sin/cos of hour-of-day (24 h period) and of day-of-week (7 d period).
///
/// Columns: `[sin_hour, cos_hour, sin_week, cos_week]`. The week phase is
/// zero at Monday 00:00.
pub fn make_covariates(timestamps: &[NaiveDateTime]) -> Array2<f64> {
    let mut out = Array2::zeros((timestamps.len(), COVARIATE_COUNT));
    for (mut row, ts) in out.rows_mut().into_iter().zip(timestamps) {
        let hour = f64::from(ts.hour()) + f64::from(ts.minute()) / 60.0 + f64::from(ts.second()) / 3600.0;
        let day = f64::from(ts.weekday().num_days_from_monday()) + hour / 24.0;
        let h = TAU * hour / 24.0;
        let d = TAU * day / 7.0;
        row[0] = h.sin();
        row[1] = h.cos();
        row[2] = d.sin();
        row[3] = d.cos();
    }
    out
}

/// Slices `series` into windows of `context_len + horizon_len` rows starting
/// at `0, stride, 2*stride, ...`.
pub fn make_windows(
    series: &SeriesFrame,
    context_len: usize,
    horizon_len: usize,
    stride: usize,
) -> Result<Vec<WindowPair>> {
    if context_len == 0 || horizon_len == 0 || stride == 0 {
        return Err(Error::BadRange(
            "context length, horizon length and stride must be positive".into(),
        ));
    }
    let span = context_len + horizon_len;
    if series.len() < span {
        return Err(Error::TooShort {
            what: "series".into(),
            rows: series.len(),
            needed: span,
        });
    }
    let count = (series.len() - span) / stride + 1;
    let values = series.values();
    let covariates = make_covariates(series.timestamps());
    Ok((0..count)
        .map(|w| {
            let o = w * stride;
            WindowPair {
                context: values.slice(s![o..o + context_len, ..]).to_owned(),
                horizon: values.slice(s![o + context_len..o + span, ..]).to_owned(),
                covariates: covariates.slice(s![o..o + span, ..]).to_owned(),
                origin_index: o,
                origin_timestamp: series.timestamps()[o],
                label: WindowLabel::Normal,
            }
        })
        .collect())
}
