//! JSON checkpoints of the reference network.
//!
//! Parameters are stored as `f64` whatever the training scalar, so `f32`
//! and `f64` weights both round-trip exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backbone::{Backbone, ConvNet, ConvNetConfig};
use super::optim::OptimizerState;
use super::TrainHistory;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::scalar::Scalar;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// SHA-256 (hex) of the value's JSON encoding.
pub fn config_fingerprint<S: Serialize>(config: &S) -> Result<String> {
    let bytes = serde_json::to_vec(config).map_err(|e| Error::Json {
        context: "config fingerprint".into(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub backbone: ConvNetConfig,
    pub stage: String,
    pub stage_index: usize,
    /// Epochs of `stage` completed.
    pub epoch: usize,
    pub fingerprint: String,
    pub params: Vec<f64>,
    pub optimizer: Option<OptimizerState<f64>>,
    pub histories: Vec<TrainHistory<f64>>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(
        model: &ConvNet<T>,
        stage: &str,
        stage_index: usize,
        epoch: usize,
        fingerprint: String,
    ) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            backbone: model.config(),
            stage: stage.into(),
            stage_index,
            epoch,
            fingerprint,
            params: model.params().iter().map(|p| p.as_f64()).collect(),
            optimizer: None,
            histories: Vec::new(),
        }
    }

    pub fn model<T: Scalar>(&self) -> Result<ConvNet<T>> {
        ConvNet::from_params(self.backbone, self.params.iter().map(|p| T::lit(*p)).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Json {
            context: "checkpoint".into(),
            source: e,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Json {
            context: format!("checkpoint {}", path.display()),
            source: e,
        })?;
        if c.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::input(format!(
                "{}: unsupported checkpoint schema_version {}",
                path.display(),
                c.schema_version
            )));
        }
        Ok(c)
    }
}
