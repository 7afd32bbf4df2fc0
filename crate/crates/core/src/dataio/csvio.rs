use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDateTime;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::SeriesFrame;
use crate::error::{Error, Result};

/// CSV dialects accepted by [`load_series`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesFormat {
    /// `;` separated, `,` decimal mark, optional quoted header
    /// (the public hourly-load dataset layout).
    UciSemicolon,
    /// `,` separated, `.` decimal mark, ISO-8601 first column.
    GenericCsv,
}

impl FromStr for SeriesFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uci_semicolon" | "uci" => Ok(Self::UciSemicolon),
            "generic_csv" | "generic" | "csv" => Ok(Self::GenericCsv),
            other => Err(Error::Config(format!("unknown series format `{other}`"))),
        }
    }
}

const TIME_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

pub(crate) fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim().trim_end_matches('Z');
    TIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Reads a meter series in one of the supported dialects.
///
/// A header row is optional: when the first field of the first record does
/// not parse as a timestamp the record supplies attribute names, otherwise
/// attributes are named `attr_0`, `attr_1`, ... The sampling interval is
/// taken from the first two rows (60 minutes for a single-row file).
pub fn load_series(path: impl AsRef<Path>, format: SeriesFormat) -> Result<SeriesFrame> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let delimiter = match format {
        SeriesFormat::UciSemicolon => b';',
        SeriesFormat::GenericCsv => b',',
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut names: Option<Vec<String>> = None;
    let mut timestamps = Vec::new();
    let mut flat = Vec::new();
    let mut width = None;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let stamp = record.get(0).unwrap_or_default();
        let Some(ts) = parse_timestamp(stamp) else {
            if timestamps.is_empty() && names.is_none() {
                names = Some(record.iter().skip(1).map(str::to_string).collect());
                continue;
            }
            return Err(Error::MalformedRow {
                line: line + 1,
                reason: format!("bad timestamp `{stamp}`"),
            });
        };
        let fields = record.len() - 1;
        let expected = *width.get_or_insert(names.as_ref().map_or(fields, Vec::len));
        if fields != expected || fields == 0 {
            return Err(Error::MalformedRow {
                line: line + 1,
                reason: format!("expected {expected} values, found {fields}"),
            });
        }
        for field in record.iter().skip(1) {
            let text = match format {
                SeriesFormat::UciSemicolon => field.replace(',', "."),
                SeriesFormat::GenericCsv => field.to_string(),
            };
            let v: f64 = text.parse().map_err(|_| Error::MalformedRow {
                line: line + 1,
                reason: format!("bad number `{field}`"),
            })?;
            flat.push(v);
        }
        timestamps.push(ts);
    }
    if timestamps.is_empty() {
        return Err(Error::EmptySeries);
    }
    let m = width.unwrap_or(0);
    let names = names.unwrap_or_else(|| (0..m).map(|i| format!("attr_{i}")).collect());
    let interval = if timestamps.len() > 1 {
        let gap = (timestamps[1] - timestamps[0]).num_minutes();
        if gap <= 0 {
            return Err(Error::IrregularSampling {
                line: 1,
                expected_minutes: 1,
                found_minutes: gap,
            });
        }
        gap as u32
    } else {
        60
    };
    let values = Array2::from_shape_vec((timestamps.len(), m), flat)
        .map_err(|e| Error::Config(e.to_string()))?;
    SeriesFrame::new(timestamps, values, names, interval)
}

/// Writes a frame as generic CSV with a `timestamp` header column.
pub fn write_series_csv(series: &SeriesFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("timestamp");
    for n in series.attribute_names() {
        text.push(',');
        text.push_str(n);
    }
    text.push('\n');
    for (ts, row) in series.timestamps().iter().zip(series.values().rows()) {
        text.push_str(&ts.format("%Y-%m-%dT%H:%M:%S").to_string());
        for v in row {
            text.push(',');
            text.push_str(&format!("{v}"));
        }
        text.push('\n');
    }
    out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
