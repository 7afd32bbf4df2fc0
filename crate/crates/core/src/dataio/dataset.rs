use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_series_csv, NormStats, SplitBoundaries, Splits, WindowPair};
use crate::error::{Error, Result};

/// JSON manifest written next to the window CSVs of a prepared dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub context_len: usize,
    pub horizon_len: usize,
    pub train_stride: usize,
    pub eval_stride: usize,
    pub interval_minutes: u32,
    pub attributes: Vec<String>,
    pub covariates: Vec<String>,
    pub norm_stats: NormStats,
    pub boundaries: SplitBoundaries,
    pub window_counts: [usize; 3],
}

/// One row per window position: ids, timestamp, attribute values, covariates.
pub fn write_windows_csv(path: &Path, windows: &[WindowPair], attributes: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "window_id".to_string(),
        "origin_index".into(),
        "origin_timestamp".into(),
        "position".into(),
    ];
    header.extend(attributes.iter().cloned());
    header.extend((0..super::COVARIATE_COUNT).map(|c| format!("cov_{c}")));
    w.write_record(&header)?;
    for (id, win) in windows.iter().enumerate() {
        let full = win.full();
        for (pos, (row, cov)) in full.rows().into_iter().zip(win.covariates.rows()).enumerate() {
            let mut rec = vec![
                id.to_string(),
                win.origin_index.to_string(),
                win.origin_timestamp.format("%Y-%m-%dT%H:%M:%S").to_string(),
                pos.to_string(),
            ];
            rec.extend(row.iter().map(|v| v.to_string()));
            rec.extend(cov.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes raw split CSVs, normalized window CSVs and `manifest.json`.
pub fn write_dataset_dir(
    dir: impl AsRef<Path>,
    splits: &Splits,
    windows: [&[WindowPair]; 3],
    manifest: &DatasetManifest,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, frame) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        write_series_csv(frame, dir.join(format!("{name}_raw.csv")))?;
    }
    for (name, ws) in ["train", "val", "test"].iter().zip(windows) {
        write_windows_csv(&dir.join(format!("windows_{name}.csv")), ws, &manifest.attributes)?;
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}
