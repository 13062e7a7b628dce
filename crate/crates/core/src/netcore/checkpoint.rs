use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkConfig, NetworkParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained weights together with the configuration that shapes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub seed: u64,
    pub config: NetworkConfig,
    pub params: NetworkParams,
}

impl Checkpoint {
    pub fn new(config: NetworkConfig, params: NetworkParams, seed: u64) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            seed,
            config,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {}",
                ck.format_version
            )));
        }
        ck.config.validate()?;
        if !ck.params.matches(&ck.config) {
            return Err(Error::Checkpoint(
                "weight shapes do not match the stored config".into(),
            ));
        }
        Ok(ck)
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, ck.to_json()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)
}
