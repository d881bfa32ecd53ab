//! Versioned binary checkpoints.
//!
//! Layout: the magic `VLQACKPT`, a little-endian `u32` format version, a
//! little-endian `u64` header length, the JSON header, then every tensor
//! listed in the header as little-endian `f64`s, in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::Manifest;
use crate::error::{Result, VlqaError};
use crate::model::Model;
use crate::tensor::Tensor;
use crate::train::TrainState;

pub const MAGIC: &[u8; 8] = b"VLQACKPT";
pub const FORMAT_VERSION: u32 = 1;
const VELOCITY_PREFIX: &str = "velocity/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub config: RunConfig,
    pub step: u64,
    pub epoch: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub epoch: u64,
    pub params: Vec<(String, Tensor)>,
    pub velocity: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn capture(model: &Model, config: &RunConfig, state: &TrainState) -> Self {
        let params: Vec<(String, Tensor)> = model
            .params()
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        let velocity = params
            .iter()
            .zip(&state.velocity)
            .map(|((n, _), v)| (format!("{VELOCITY_PREFIX}{n}"), v.clone()))
            .collect();
        Self {
            config: config.clone(),
            step: state.step,
            epoch: state.epoch,
            params,
            velocity,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let all: Vec<&(String, Tensor)> = self.params.iter().chain(&self.velocity).collect();
        let header = Header {
            version: FORMAT_VERSION,
            config: self.config.clone(),
            step: self.step,
            epoch: self.epoch,
            tensors: all
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(json.len() + 20 + 8 * all.iter().map(|(_, t)| t.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in all {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || VlqaError::Data("truncated checkpoint".into());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(VlqaError::Data("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(VlqaError::CheckpointVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(20..20 + len).ok_or_else(truncated)?;
        let header: Header = serde_json::from_slice(json)
            .map_err(|e| VlqaError::Data(format!("checkpoint header: {e}")))?;
        if header.version != version {
            return Err(VlqaError::CheckpointVersion {
                found: header.version,
                expected: FORMAT_VERSION,
            });
        }
        let mut at = 20 + len;
        let mut params = Vec::new();
        let mut velocity = Vec::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes.get(at..at + 8 * n).ok_or_else(truncated)?;
            at += 8 * n;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(entry.shape, data)?;
            if entry.name.starts_with(VELOCITY_PREFIX) {
                velocity.push((entry.name, t));
            } else {
                params.push((entry.name, t));
            }
        }
        if at != bytes.len() {
            return Err(VlqaError::Data(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - at
            )));
        }
        Ok(Self {
            config: header.config,
            step: header.step,
            epoch: header.epoch,
            params,
            velocity,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| VlqaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| VlqaError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuild the model and optimizer state against `manifest`.
    pub fn restore(&self, manifest: &Manifest) -> Result<(Model, TrainState)> {
        let mut model = Model::from_config(&self.config, manifest)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .params()
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect();
        let found: Vec<(String, Vec<usize>)> = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect();
        if expected != found {
            return Err(VlqaError::Config(
                "checkpoint parameters do not match the model built from its config and this dataset".into(),
            ));
        }
        let ids: Vec<_> = model.params().ids().collect();
        for (id, (_, t)) in ids.into_iter().zip(&self.params) {
            *model.params_mut().get_mut(id) = t.clone();
        }
        let mut state = TrainState::new(&model);
        state.step = self.step;
        state.epoch = self.epoch;
        if !self.velocity.is_empty() {
            if self.velocity.len() != self.params.len() {
                return Err(VlqaError::Data("checkpoint has a partial optimizer state".into()));
            }
            state.velocity = self.velocity.iter().map(|(_, t)| t.clone()).collect();
        }
        Ok((model, state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;

    #[test]
    fn version_mismatch_names_both() {
        let ds = Dataset::synthetic(1, 2, 1, 0.0, 6).unwrap();
        let cfg = RunConfig::default();
        let m = Model::from_config(&cfg, &ds.manifest).unwrap();
        let mut bytes = Checkpoint::capture(&m, &cfg, &TrainState::new(&m)).to_bytes();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let e = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(matches!(e, VlqaError::CheckpointVersion { found: 7, expected: 1 }));
        let msg = e.to_string();
        assert!(msg.contains("v7") && msg.contains("v1"));
    }

    #[test]
    fn bytes_round_trip() {
        let ds = Dataset::synthetic(1, 2, 1, 0.0, 6).unwrap();
        let cfg = RunConfig::default();
        let m = Model::from_config(&cfg, &ds.manifest).unwrap();
        let ck = Checkpoint::capture(&m, &cfg, &TrainState::new(&m));
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let (m2, _) = back.restore(&ds.manifest).unwrap();
        assert_eq!(m2, m);
        assert!(Checkpoint::from_bytes(&ck.to_bytes()[..40]).is_err());
    }
}
