use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::ModelConfig;
use super::network::Model;
use super::params::ParamStore;

pub const CHECKPOINT_FORMAT: &str = "deepdtf-checkpoint/1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub step: u64,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn from_model(model: &Model, seed: u64, step: u64) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: model.config.clone(),
            seed,
            step,
            params: model.params.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Serialization(format!("checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Serialization(format!(
                "unsupported checkpoint format '{}' (expected {CHECKPOINT_FORMAT})",
                ck.format
            )));
        }
        for p in ck.params.iter() {
            let n: usize = p.value.shape().iter().product();
            if n != p.value.len() || p.value.shape().contains(&0) {
                return Err(Error::Serialization(format!("parameter {} has inconsistent shape", p.name)));
            }
        }
        ck.params.rebuild_index();
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Rebuilds the model and copies the stored parameters into it.
    pub fn into_model(self) -> Result<Model> {
        let mut model = Model::new(self.config, self.seed)?;
        model.params.load_from(&self.params)?;
        Ok(model)
    }
}
