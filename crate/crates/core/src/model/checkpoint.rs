//! Binary checkpoint: magic, little-endian header length, JSON header, then
//! the parameter vector as little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{EtdModel, ModelConfig};
use super::train::TrainConfig;
use crate::dataio::COVARIATE_NAMES;
use crate::dataio::NormStats;
use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ETDCKPT1";

/// Everything needed to score new data without the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub schedule: DiffusionSchedule,
    pub norm_stats: NormStats,
    pub attributes: Vec<String>,
    pub covariates: Vec<String>,
    pub interval_minutes: u32,
    #[serde(skip)]
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(
        model: &EtdModel,
        train: TrainConfig,
        schedule: DiffusionSchedule,
        norm_stats: NormStats,
        attributes: Vec<String>,
        interval_minutes: u32,
    ) -> Self {
        Self {
            model: *model.config(),
            train,
            schedule,
            norm_stats,
            attributes,
            covariates: COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
            interval_minutes,
            params: model.params().to_vec(),
        }
    }

    pub fn to_model(&self) -> Result<EtdModel> {
        EtdModel::from_params(self.model, self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(self)?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
        let mut ckpt: Checkpoint = serde_json::from_slice(header)?;
        let body = &bytes[16 + len..];
        if body.len() % 8 != 0 {
            return Err(bad("parameter block is not a whole number of f64 values"));
        }
        ckpt.params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        ckpt.to_model()?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
