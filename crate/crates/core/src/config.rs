//! Pipeline-wide configuration with documented defaults.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesic::GeodesicConfig;
use crate::seqmodel::{SamplingConfig, SeqModelConfig, TrainingConfig};
use crate::sequencer::Ordering;
use crate::skindiff::{DenoiserConfig, ScheduleConfig, SkinSamplingConfig, SkinTrainingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseConfig {
    pub count: usize,
    pub max_angle_deg: f64,
    pub seed: u64,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self { count: 10, max_angle_deg: 30.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub samples_per_bone: usize,
    pub influence_threshold: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { samples_per_bone: 32, influence_threshold: 1e-4 }
    }
}

/// Every tunable of the two-stage pipeline. Missing fields in a serialized
/// config take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub ordering: Ordering,
    /// Surface points per shape.
    pub sample_count: usize,
    pub seqmodel: SeqModelConfig,
    pub seq_training: TrainingConfig,
    pub seq_sampling: SamplingConfig,
    pub geodesic: GeodesicConfig,
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserConfig,
    pub skin_training: SkinTrainingConfig,
    pub skin_sampling: SkinSamplingConfig,
    pub metrics: MetricConfig,
    pub poses: PoseConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            ordering: Ordering::Spatial,
            sample_count: 8192,
            seqmodel: SeqModelConfig::default(),
            seq_training: TrainingConfig::default(),
            seq_sampling: SamplingConfig::default(),
            geodesic: GeodesicConfig::default(),
            schedule: ScheduleConfig::default(),
            denoiser: DenoiserConfig::default(),
            skin_training: SkinTrainingConfig::default(),
            skin_sampling: SkinSamplingConfig::default(),
            metrics: MetricConfig::default(),
            poses: PoseConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Sets every seed from one master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seqmodel.seed = seed;
        self.seq_training.seed = seed.wrapping_add(1);
        self.seq_sampling.seed = seed.wrapping_add(2);
        self.denoiser.seed = seed.wrapping_add(3);
        self.skin_training.seed = seed.wrapping_add(4);
        self.skin_sampling.seed = seed.wrapping_add(5);
        self.poses.seed = seed.wrapping_add(6);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::arg(format!("config: {what}")));
        if self.sample_count == 0 {
            return bad("sample_count must be positive");
        }
        if self.seqmodel.point_count != self.sample_count {
            return bad("seqmodel.point_count must equal sample_count");
        }
        if self.seqmodel.shape_tokens < 2 || self.seqmodel.shape_tokens > self.sample_count + 1 {
            return bad("seqmodel.shape_tokens out of range");
        }
        if self.denoiser.shape_width != 0 && self.denoiser.shape_width != self.seqmodel.width {
            return bad("denoiser.shape_width must be 0 or seqmodel.width");
        }
        if self.denoiser.max_joints == 0 || self.denoiser.max_joints > 255 {
            return bad("denoiser.max_joints out of range");
        }
        if self.geodesic.resolution < 8 || self.geodesic.resolution > 512 {
            return bad("geodesic.resolution must lie in [8, 512]");
        }
        if !(self.geodesic.sharpness > 0.0) {
            return bad("geodesic.sharpness must be positive");
        }
        if self.skin_sampling.steps == 0 || self.skin_sampling.steps > self.schedule.timesteps {
            return bad("skin_sampling.steps must lie in [1, timesteps]");
        }
        if self.seq_sampling.max_tokens < 2 {
            return bad("seq_sampling.max_tokens must be at least 2");
        }
        if self.metrics.samples_per_bone < 2 {
            return bad("metrics.samples_per_bone must be at least 2");
        }
        if !(0.0..=180.0).contains(&self.poses.max_angle_deg) {
            return bad("poses.max_angle_deg must lie in [0, 180]");
        }
        Ok(())
    }
}
