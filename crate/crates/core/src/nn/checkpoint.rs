//! Model checkpoints: `manifest.json` plus `params.bin` (little-endian f64,
//! parameters concatenated in manifest order).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::Tensor;
use super::model::{Param, ParamStore, SequenceModel};
use super::optim::Schedule;
use super::NnError;
use crate::digest::sha256_hex;

const FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub architecture: String,
    pub config: super::model::ModelConfig,
    pub epoch: usize,
    pub schedule: Schedule,
    pub optimizer_steps: u64,
    pub params: Vec<ParamEntry>,
    pub sha256: String,
    /// Caller-defined metadata (training settings, task).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SequenceModel,
    pub epoch: usize,
    pub schedule: Schedule,
    pub optimizer_steps: u64,
    pub extra: serde_json::Value,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<(), NnError> {
        fs::create_dir_all(dir)?;
        let mut blob = Vec::with_capacity(self.model.params.num_values() * 8);
        for p in &self.model.params.params {
            for v in &p.value.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: FORMAT,
            architecture: self.model.config.architecture.name().into(),
            config: self.model.config.clone(),
            epoch: self.epoch,
            schedule: self.schedule,
            optimizer_steps: self.optimizer_steps,
            params: self
                .model
                .params
                .params
                .iter()
                .map(|p| ParamEntry { name: p.name.clone(), rows: p.value.rows, cols: p.value.cols })
                .collect(),
            sha256: sha256_hex(&blob),
            extra: self.extra.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| NnError::Corrupt(e.to_string()))?;
        fs::write(dir.join("manifest.json"), json + "\n")?;
        fs::write(dir.join("params.bin"), blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, NnError> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| NnError::Corrupt(format!("manifest: {e}")))?;
        if m.format != FORMAT {
            return Err(NnError::Corrupt(format!("unsupported checkpoint format {}", m.format)));
        }
        m.config.check()?;
        let expected = m.config.param_shapes();
        let matches = expected.len() == m.params.len()
            && expected.iter().zip(&m.params).all(|((n, r, c), e)| *n == e.name && *r == e.rows && *c == e.cols);
        if !matches {
            return Err(NnError::Corrupt("parameter list does not match the model config".into()));
        }
        let blob = fs::read(dir.join("params.bin"))?;
        if sha256_hex(&blob) != m.sha256 {
            return Err(NnError::Corrupt("params.bin checksum mismatch".into()));
        }
        let total: usize = m.params.iter().map(|p| p.rows * p.cols).sum();
        if blob.len() != total * 8 {
            return Err(NnError::Corrupt(format!("params.bin has {} bytes, expected {}", blob.len(), total * 8)));
        }
        let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let params = m
            .params
            .iter()
            .map(|e| Param {
                name: e.name.clone(),
                value: Tensor::new(e.rows, e.cols, values.by_ref().take(e.rows * e.cols).collect()),
            })
            .collect();
        Ok(Self {
            model: SequenceModel { config: m.config, params: ParamStore { params } },
            epoch: m.epoch,
            schedule: m.schedule,
            optimizer_steps: m.optimizer_steps,
            extra: m.extra,
        })
    }
}
