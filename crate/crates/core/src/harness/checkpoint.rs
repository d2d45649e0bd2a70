//! Versioned JSON checkpoints.
//!
//! Floats are written in shortest round-trip form and parsed with exact
//! rounding, so save/load is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ade::CentroidSet;
use crate::error::{PfbError, Result};
use crate::harness::config::RunConfig;
use crate::net::TwoStageNet;

pub const CHECKPOINT_SCHEMA: &str = "pfb-checkpoint/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema: String,
    pub config: RunConfig,
    /// Iterations completed.
    pub iteration: u64,
    pub net: TwoStageNet,
    pub ade: CentroidSet,
}

impl Checkpoint {
    pub fn new(config: RunConfig, iteration: u64, net: TwoStageNet, ade: CentroidSet) -> Self {
        Self { schema: CHECKPOINT_SCHEMA.to_string(), config, iteration, net, ade }
    }

    pub fn to_text(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| PfbError::SchemaViolation(format!("cannot serialize checkpoint: {e}")))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| PfbError::CorruptCheckpoint(e.to_string()))?;
        match value.get("schema").and_then(|s| s.as_str()) {
            Some(CHECKPOINT_SCHEMA) => {}
            Some(other) => {
                return Err(PfbError::VersionMismatch {
                    expected: CHECKPOINT_SCHEMA.into(),
                    found: other.into(),
                })
            }
            None => return Err(PfbError::SchemaViolation("missing schema id".into())),
        }
        let ck: Checkpoint =
            serde_json::from_value(value).map_err(|e| PfbError::SchemaViolation(e.to_string()))?;
        ck.validate()?;
        Ok(ck)
    }

    fn validate(&self) -> Result<()> {
        self.config
            .validate()
            .map_err(|e| PfbError::SchemaViolation(format!("config: {e}")))?;
        let net = &self.net;
        TwoStageNet::from_layers(*net.dims(), net.shallow().clone(), net.deep().to_vec())
            .map_err(|e| PfbError::SchemaViolation(format!("net: {e}")))?;
        self.ade.validate()?;
        Ok(())
    }
}

pub fn save_checkpoint(
    net: &TwoStageNet,
    ade: &CentroidSet,
    config: &RunConfig,
    iteration: u64,
    path: impl AsRef<Path>,
) -> Result<()> {
    let ck = Checkpoint::new(config.clone(), iteration, net.clone(), ade.clone());
    fs::write(path, ck.to_text()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    Checkpoint::from_text(&text)
}
