//! Checkpoint container: hyperparameters plus flat parameter arrays for
//! each trained stage, at full float precision.

use std::path::Path;

use serde::{Deserialize, Serialize};

use rigforge_core::nn::ParamStore;
use rigforge_core::seqmodel::{ModelParams, SeqModelConfig};
use rigforge_core::sequencer::Ordering;
use rigforge_core::skindiff::{DenoiserConfig, DenoiserParams, ScheduleConfig};

use crate::error::{Error, Result};
use crate::fsio::{read_string, write_atomic};
use crate::rigfile::check_version;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSection {
    pub config: SeqModelConfig,
    pub ordering: Ordering,
    pub params: ParamStore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkinSection {
    pub config: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub params: ParamStore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<SkeletonSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skin: Option<SkinSection>,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self { version: CHECKPOINT_VERSION, skeleton: None, skin: None }
    }
}

impl Checkpoint {
    pub fn set_skeleton(&mut self, params: &ModelParams, ordering: Ordering) {
        self.skeleton = Some(SkeletonSection { config: params.config().clone(), ordering, params: params.store().clone() });
    }

    pub fn set_skin(&mut self, params: &DenoiserParams, schedule: ScheduleConfig) {
        self.skin = Some(SkinSection { config: params.config().clone(), schedule, params: params.store().clone() });
    }

    pub fn skeleton_model(&self) -> Result<(ModelParams, Ordering)> {
        let s = self.skeleton.as_ref().ok_or_else(|| Error::Format("checkpoint has no skeleton section".into()))?;
        Ok((ModelParams::from_store(s.config.clone(), s.params.clone())?, s.ordering))
    }

    pub fn skin_model(&self) -> Result<(DenoiserParams, ScheduleConfig)> {
        let s = self.skin.as_ref().ok_or_else(|| Error::Format("checkpoint has no skin section".into()))?;
        Ok((DenoiserParams::from_store(s.config.clone(), s.params.clone())?, s.schedule))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| Error::json(context, e))?;
        check_version(c.version, CHECKPOINT_VERSION, "checkpoint")?;
        c.skeleton_model().map(drop).or_else(|e| if c.skeleton.is_none() { Ok(()) } else { Err(e) })?;
        c.skin_model().map(drop).or_else(|e| if c.skin.is_none() { Ok(()) } else { Err(e) })?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&read_string(path)?, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }
}
