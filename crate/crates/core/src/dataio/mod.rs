//! Ingestion, chronological splitting, normalization and windowing of
//! regularly sampled meter series.

mod csvio;
mod dataset;
mod synth;
mod window;

pub use csvio::{load_series, write_series_csv, SeriesFormat};
pub use dataset::{write_dataset_dir, write_windows_csv, DatasetManifest};
pub use synth::{synth_grid_series, VarianceLevel, SYNTH_ATTRIBUTES};
pub use window::{make_covariates, make_windows, WindowLabel, WindowPair, COVARIATE_COUNT, COVARIATE_NAMES};

use chrono::NaiveDateTime;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A multivariate, regularly sampled series. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    timestamps: Vec<NaiveDateTime>,
    values: Array2<f64>,
    attribute_names: Vec<String>,
    interval_minutes: u32,
}

impl SeriesFrame {
    /// Validates and builds a frame.
    ///
    /// Timestamps must be strictly increasing with a constant spacing of
    /// `interval_minutes`, every value finite, and any `energy` attribute
    /// non-negative.
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        values: Array2<f64>,
        attribute_names: Vec<String>,
        interval_minutes: u32,
    ) -> Result<Self> {
        if timestamps.is_empty() {
            return Err(Error::EmptySeries);
        }
        if attribute_names.is_empty() {
            return Err(Error::BadRange("a series needs at least one attribute".into()));
        }
        if interval_minutes == 0 {
            return Err(Error::BadRange("interval_minutes must be positive".into()));
        }
        let expected = (timestamps.len(), attribute_names.len());
        if values.dim() != expected {
            return Err(Error::shape(expected, values.dim()));
        }
        for (i, pair) in timestamps.windows(2).enumerate() {
            let gap = (pair[1] - pair[0]).num_minutes();
            if gap != i64::from(interval_minutes) || pair[1] <= pair[0] {
                return Err(Error::IrregularSampling {
                    line: i + 1,
                    expected_minutes: i64::from(interval_minutes),
                    found_minutes: gap,
                });
            }
        }
        for ((row, col), v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::MalformedRow {
                    line: row,
                    reason: format!("non-finite value in `{}`", attribute_names[col]),
                });
            }
        }
        for (col, name) in attribute_names.iter().enumerate() {
            if is_energy_name(name) {
                if let Some(row) = values.column(col).iter().position(|&v| v < 0.0) {
                    return Err(Error::MalformedRow {
                        line: row,
                        reason: format!("negative energy reading in `{name}`"),
                    });
                }
            }
        }
        Ok(Self {
            timestamps,
            values,
            attribute_names,
            interval_minutes,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_attributes(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn interval_minutes(&self) -> u32 {
        self.interval_minutes
    }

    pub fn samples_per_hour(&self) -> u32 {
        (60 / self.interval_minutes).max(1)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attribute_names.iter().position(|n| n == name)
    }

    /// Rows `range`, keeping all attributes.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::BadRange(format!(
                "row range {range:?} outside 0..{}",
                self.len()
            )));
        }
        Ok(Self {
            timestamps: self.timestamps[range.clone()].to_vec(),
            values: self.values.slice(s![range, ..]).to_owned(),
            attribute_names: self.attribute_names.clone(),
            interval_minutes: self.interval_minutes,
        })
    }

    /// Rows with `start <= timestamp < end`.
    pub fn slice_time(&self, start: NaiveDateTime, end: NaiveDateTime) -> Result<Self> {
        let lo = self.timestamps.partition_point(|t| *t < start);
        let hi = self.timestamps.partition_point(|t| *t < end);
        if lo >= hi {
            return Err(Error::EmptySeries);
        }
        self.slice_rows(lo..hi)
    }

    /// Keeps only the named attributes, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                self.attribute_index(n)
                    .ok_or_else(|| Error::Config(format!("no attribute named `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            timestamps: self.timestamps.clone(),
            values: self.values.select(Axis(1), &idx),
            attribute_names: names.iter().map(|n| n.to_string()).collect(),
            interval_minutes: self.interval_minutes,
        })
    }

    /// Same timestamps and names, new values. Used for normalized views.
    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        if values.dim() != self.values.dim() {
            return Err(Error::shape(self.values.dim(), values.dim()));
        }
        Ok(Self {
            timestamps: self.timestamps.clone(),
            values,
            attribute_names: self.attribute_names.clone(),
            interval_minutes: self.interval_minutes,
        })
    }
}

fn is_energy_name(name: &str) -> bool {
    name.to_ascii_lowercase().starts_with("energy")
}

/// Chronological split fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        let sum: f64 = all.iter().sum();
        if all.iter().any(|f| !(*f > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::FractionSum((self.train, self.val, self.test)));
        }
        Ok(())
    }
}

/// Row boundaries `[0, train_end)`, `[train_end, val_end)`, `[val_end, len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBoundaries {
    pub train_end: usize,
    pub val_end: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: SeriesFrame,
    pub val: SeriesFrame,
    pub test: SeriesFrame,
    pub boundaries: SplitBoundaries,
}

/// Contiguous train/val/test partition. Train and val sizes are floored,
/// the remainder goes to test. Every split must hold at least `min_rows`.
pub fn split_chronological(
    series: &SeriesFrame,
    fractions: SplitFractions,
    min_rows: usize,
) -> Result<Splits> {
    fractions.validate()?;
    let n = series.len();
    // the epsilon keeps products like 0.7 * 100 from flooring to 69
    let n_train = (n as f64 * fractions.train + 1e-9).floor() as usize;
    let n_val = (n as f64 * fractions.val + 1e-9).floor() as usize;
    let n_test = n.saturating_sub(n_train + n_val);
    for (what, rows) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if rows < min_rows.max(1) {
            return Err(Error::TooShort {
                what: format!("{what} split"),
                rows,
                needed: min_rows.max(1),
            });
        }
    }
    let train_end = n_train;
    let val_end = n_train + n_val;
    Ok(Splits {
        train: series.slice_rows(0..train_end)?,
        val: series.slice_rows(train_end..val_end)?,
        test: series.slice_rows(val_end..n)?,
        boundaries: SplitBoundaries {
            train_end,
            val_end,
            len: n,
        },
    })
}

/// Per-attribute training mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub source: String,
}

pub fn fit_normalizer(train: &SeriesFrame) -> Result<NormStats> {
    let values = train.values();
    let n = values.nrows() as f64;
    let mut mean = Vec::with_capacity(train.n_attributes());
    let mut std = Vec::with_capacity(train.n_attributes());
    for (col, name) in values.columns().into_iter().zip(train.attribute_names()) {
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 0.0) {
            return Err(Error::ConstantAttribute(name.clone()));
        }
        mean.push(m);
        std.push(sd);
    }
    let ts = train.timestamps();
    Ok(NormStats {
        mean,
        std,
        source: format!("train[{} .. {}]", ts[0], ts[ts.len() - 1]),
    })
}

impl NormStats {
    pub fn n_attributes(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, cols: usize) -> Result<()> {
        if cols != self.mean.len() {
            return Err(Error::shape((0, self.mean.len()), (0, cols)));
        }
        Ok(())
    }

    /// `(raw - mean) / std` per column.
    pub fn normalize(&self, raw: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(raw.ncols())?;
        let mean = Array1::from(self.mean.clone());
        let std = Array1::from(self.std.clone());
        Ok((&raw - &mean) / &std)
    }

    /// `x * std + mean` per column.
    pub fn denormalize(&self, normalized: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(normalized.ncols())?;
        let mean = Array1::from(self.mean.clone());
        let std = Array1::from(self.std.clone());
        Ok(&normalized * &std + &mean)
    }
}

/// Normalizes a whole frame with previously fitted statistics.
///
/// The result is a view of the data for the model and skips the raw-unit
/// non-negativity check.
pub fn apply_normalizer(series: &SeriesFrame, stats: &NormStats) -> Result<SeriesFrame> {
    let values = stats.normalize(series.values())?;
    series.with_values(values)
}

/// Column-wise concatenation of single-attribute series sharing a time axis.
pub fn concat_users(series_list: &[SeriesFrame]) -> Result<SeriesFrame> {
    let first = series_list.first().ok_or(Error::EmptySeries)?;
    let mut names = Vec::with_capacity(series_list.len());
    for (i, s) in series_list.iter().enumerate() {
        if s.n_attributes() != 1 {
            return Err(Error::Config(format!(
                "concat_users expects single-attribute series, input {i} has {}",
                s.n_attributes()
            )));
        }
        if s.timestamps() != first.timestamps() || s.interval_minutes() != first.interval_minutes() {
            return Err(Error::TimestampMismatch(i));
        }
        names.push(s.attribute_names()[0].clone());
    }
    let mut values = Array2::zeros((first.len(), series_list.len()));
    for (j, s) in series_list.iter().enumerate() {
        values.column_mut(j).assign(&s.values().column(0));
    }
    SeriesFrame::new(
        first.timestamps().to_vec(),
        values,
        names,
        first.interval_minutes(),
    )
}

#[cfg(test)]
pub(crate) fn hourly(start: &str, values: Array2<f64>, names: &[&str]) -> SeriesFrame {
    let t0 = NaiveDateTime::parse_from_str(start, "%Y-%m-%d %H:%M:%S").unwrap();
    let ts = (0..values.nrows())
        .map(|i| t0 + chrono::Duration::hours(i as i64))
        .collect();
    SeriesFrame::new(ts, values, names.iter().map(|s| s.to_string()).collect(), 60).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn ramp(n: usize) -> SeriesFrame {
        let v = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        hourly("2014-01-01 00:00:00", v, &["energy"])
    }

    #[test]
    fn split_100_rows_70_10_20() {
        let s = split_chronological(&ramp(100), SplitFractions::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 10, 20));
        assert!(s.train.timestamps().last() < s.val.timestamps().first());
        assert!(s.val.timestamps().last() < s.test.timestamps().first());
    }

    #[test]
    fn split_remainder_goes_to_test() {
        let f = SplitFractions {
            train: 0.5,
            val: 0.25,
            test: 0.25,
        };
        let s = split_chronological(&ramp(10), f, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (5, 2, 3));
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let f = SplitFractions {
            train: 0.5,
            val: 0.5,
            test: 0.5,
        };
        assert!(matches!(
            split_chronological(&ramp(10), f, 1),
            Err(Error::FractionSum(_))
        ));
    }

    #[test]
    fn split_too_short() {
        let err = split_chronological(&ramp(100), SplitFractions::default(), 48).unwrap_err();
        assert!(matches!(err, Error::TooShort { .. }));
    }

    #[test]
    fn normalizer_population_std() {
        let s = hourly("2014-01-01 00:00:00", array![[1.0], [2.0], [3.0]], &["energy"]);
        let stats = fit_normalizer(&s).unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert!((stats.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let z = apply_normalizer(&s, &stats).unwrap();
        let z = z.values();
        assert!((z[[0, 0]] + 1.224_744_871).abs() < 1e-9);
        assert_eq!(z[[1, 0]], 0.0);
        assert!((z[[2, 0]] - 1.224_744_871).abs() < 1e-9);

        let test = hourly("2014-01-02 00:00:00", array![[2.0], [2.0]], &["energy"]);
        let zt = apply_normalizer(&test, &stats).unwrap();
        assert_eq!(zt.values().column(0).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn normalizer_rejects_constant() {
        let s = hourly("2014-01-01 00:00:00", array![[5.0], [5.0], [5.0]], &["energy"]);
        assert!(matches!(fit_normalizer(&s), Err(Error::ConstantAttribute(_))));
    }

    #[test]
    fn frame_rejects_gap_and_negative_energy() {
        let t0 = NaiveDateTime::parse_from_str("2014-01-01 00:00:00", "%Y-%m-%d %H:%M:%S").unwrap();
        let ts = vec![t0, t0 + chrono::Duration::hours(1), t0 + chrono::Duration::hours(3)];
        let err = SeriesFrame::new(ts, Array2::zeros((3, 1)), vec!["energy".into()], 60);
        assert!(matches!(err, Err(Error::IrregularSampling { .. })));

        let ts = vec![t0, t0 + chrono::Duration::hours(1)];
        let err = SeriesFrame::new(ts, array![[1.0], [-1.0]], vec!["energy".into()], 60);
        assert!(matches!(err, Err(Error::MalformedRow { .. })));
    }

    #[test]
    fn concat_two_users() {
        let a = hourly("2014-01-01 00:00:00", array![[1.0], [2.0]], &["u1"]);
        let b = hourly("2014-01-01 00:00:00", array![[3.0], [4.0]], &["u2"]);
        let c = concat_users(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.n_attributes(), 2);
        assert_eq!(c.attribute_names(), &["u1".to_string(), "u2".to_string()]);
        assert_eq!(c.values().column(0), a.values().column(0));
        assert_eq!(c.values().column(1), b.values().column(0));

        let late = hourly("2014-01-01 01:00:00", array![[3.0], [4.0]], &["u3"]);
        assert!(matches!(concat_users(&[a, late]), Err(Error::TimestampMismatch(1))));
    }

    #[test]
    fn concat_278_users() {
        let users: Vec<_> = (0..278)
            .map(|u| {
                let v = Array2::from_shape_fn((5, 1), |(i, _)| (u * 10 + i) as f64);
                hourly("2014-01-01 00:00:00", v, &[&format!("MT_{u:03}")])
            })
            .collect();
        let c = concat_users(&users).unwrap();
        assert_eq!(c.n_attributes(), 278);
        for (u, s) in users.iter().enumerate() {
            let same = c
                .values()
                .column(u)
                .iter()
                .zip(s.values().column(0))
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same);
        }
    }

    proptest! {
        #[test]
        fn normalization_round_trip_and_moments(
            data in proptest::collection::vec((0.0f64..500.0, -50.0f64..50.0), 3..80)
        ) {
            let n = data.len();
            let v = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { data[i].0 } else { data[i].1 + i as f64 });
            let s = hourly("2014-03-01 00:00:00", v, &["energy", "voltage"]);
            let stats = match fit_normalizer(&s) {
                Ok(st) => st,
                Err(_) => return Ok(()),
            };
            let z = apply_normalizer(&s, &stats).unwrap();
            for j in 0..2 {
                let col = z.values().column(j).to_owned();
                let m = col.sum() / n as f64;
                let sd = (col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64).sqrt();
                prop_assert!(m.abs() < 1e-9);
                prop_assert!((sd - 1.0).abs() < 1e-9);
            }
            let back = stats.denormalize(z.values()).unwrap();
            for (a, b) in back.iter().zip(s.values().iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
