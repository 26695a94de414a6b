//! Training and inference for the two stages, on top of the corpus and
//! checkpoint formats.

use rigforge_core::config::PipelineConfig;
use rigforge_core::geodesic::{geodesic_prior, GeodesicPrior};
use rigforge_core::geometry::{normalize_to_unit_cube, sample_surface};
use rigforge_core::seqmodel::{
    encode_shape, sample_skeleton, ModelParams, SeqTrainer, ShapeInput, SkeletonExample,
};
use rigforge_core::sequencer::{detokenize, Ordering, TokenSequence};
use rigforge_core::skindiff::{
    sample_skin, Condition, DenoiserParams, NoiseSchedule, SkinExample, SkinTrainer,
};
use rigforge_core::{Matrix, Mesh, NormalizationTransform, PointCloud, Skeleton, SkinMatrix};

use crate::checkpoint::Checkpoint;
use crate::corpus::CorpusAsset;
use crate::error::{Error, Result};
use crate::rigfile::Rig;

/// A corpus asset moved into the unit cube, with matching surface samples.
#[derive(Debug, Clone)]
pub struct NormalizedAsset {
    pub mesh: Mesh,
    pub skeleton: Skeleton,
    pub skin: SkinMatrix,
    pub cloud: PointCloud,
}

/// Normalizes every asset and resamples its surface when the stored point
/// cloud does not hold exactly `config.sample_count` points.
pub fn normalize_assets(assets: &[CorpusAsset], config: &PipelineConfig) -> Result<Vec<NormalizedAsset>> {
    assets
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let skin = a.rig.skin.clone().ok_or_else(|| Error::Format(format!("{}: rig has no skin", a.id)))?;
            let (mesh, skel, t) = normalize_to_unit_cube(&a.mesh, Some(&a.rig.skeleton))?;
            let cloud = if a.points.len() == config.sample_count {
                PointCloud { points: a.points.points.iter().map(|&p| t.apply(p)).collect(), ..a.points.clone() }
            } else {
                sample_surface(&mesh, config.sample_count, config.seq_training.seed.wrapping_add(i as u64))?
            };
            Ok(NormalizedAsset { mesh, skeleton: skel.expect("skeleton was passed in"), skin, cloud })
        })
        .collect()
}

pub fn skeleton_examples(assets: &[NormalizedAsset], config: &PipelineConfig) -> Result<Vec<SkeletonExample>> {
    assets
        .iter()
        .map(|a| Ok(SkeletonExample { shape: ShapeInput::from_cloud(&a.cloud, &config.seqmodel)?, skeleton: a.skeleton.clone() }))
        .collect()
}

/// Runs `config.seq_training.steps` updates; `on_step` sees every loss.
pub fn train_skeleton(
    examples: &[SkeletonExample],
    config: &PipelineConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<ModelParams> {
    let params = ModelParams::init(config.seqmodel.clone())?;
    let mut trainer = SeqTrainer::new(params, config.seq_training.clone())?;
    for step in 0..config.seq_training.steps {
        let loss = trainer.step_on(examples, config.ordering)?;
        on_step(step, loss);
    }
    Ok(trainer.params)
}

fn pad_columns(m: &Matrix, cols: usize) -> Result<Matrix> {
    if m.cols() > cols {
        return Err(Error::Format(format!("{} joints exceed the limit of {cols}", m.cols())));
    }
    let mut out = Matrix::zeros(m.rows(), cols);
    for r in 0..m.rows() {
        out.row_mut(r)[..m.cols()].copy_from_slice(m.row(r));
    }
    Ok(out)
}

fn shape_condition(cloud: &PointCloud, seq: Option<&ModelParams>, config: &PipelineConfig) -> Result<Option<Matrix>> {
    if config.denoiser.shape_width == 0 {
        return Ok(None);
    }
    let seq = seq.ok_or_else(|| Error::Format("the skin model is conditioned on shape tokens and needs a skeleton model".into()))?;
    Ok(Some(encode_shape(cloud, seq)?.0))
}

/// Point-sampled skinning targets with their geodesic priors.
pub fn skin_examples(
    assets: &[NormalizedAsset],
    seq: Option<&ModelParams>,
    config: &PipelineConfig,
) -> Result<Vec<SkinExample>> {
    let n = config.denoiser.max_joints;
    assets
        .iter()
        .map(|a| {
            let prior = geodesic_prior(&a.mesh, &a.skeleton, &config.geodesic)?;
            let rows = &a.cloud.source_vertex;
            let weights = pad_columns(a.skin.matrix(), n)?.select_rows(rows);
            let prior = pad_columns(prior.matrix.matrix(), n)?.select_rows(rows);
            let cond = Condition::new(a.skeleton.joints().to_vec(), n, shape_condition(&a.cloud, seq, config)?)?;
            Ok(SkinExample::new(a.cloud.points.clone(), &weights, &prior, cond)?)
        })
        .collect()
}

pub fn train_skin(
    examples: &[SkinExample],
    config: &PipelineConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<DenoiserParams> {
    let schedule = NoiseSchedule::new(&config.schedule)?;
    let params = DenoiserParams::init(config.denoiser.clone())?;
    let mut trainer = SkinTrainer::new(params, schedule, config.skin_training.clone())?;
    for step in 0..config.skin_training.steps {
        let loss = trainer.step(examples)?;
        on_step(step, loss);
    }
    Ok(trainer.params)
}

/// A mesh ready for inference: normalized copy, its transform and samples.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub mesh: Mesh,
    pub transform: NormalizationTransform,
    pub cloud: PointCloud,
}

#[derive(Debug, Clone)]
pub struct GeneratedSkeleton {
    /// In normalized coordinates.
    pub skeleton: Skeleton,
    pub tokens: TokenSequence,
    pub truncated: bool,
}

/// Frozen models plus the configuration used at inference.
#[derive(Debug, Clone)]
pub struct Rigger {
    pub config: PipelineConfig,
    pub skeleton_model: Option<(ModelParams, Ordering)>,
    pub skin_model: Option<(DenoiserParams, NoiseSchedule)>,
}

impl Rigger {
    /// Model hyperparameters come from the checkpoint and override `config`.
    pub fn from_checkpoint(checkpoint: &Checkpoint, mut config: PipelineConfig) -> Result<Self> {
        let skeleton_model = checkpoint.skeleton.is_some().then(|| checkpoint.skeleton_model()).transpose()?;
        let skin_model = match checkpoint.skin.is_some().then(|| checkpoint.skin_model()).transpose()? {
            Some((p, sched)) => {
                config.denoiser = p.config().clone();
                config.schedule = sched;
                Some((p, NoiseSchedule::new(&sched)?))
            }
            None => None,
        };
        if let Some((p, _)) = &skeleton_model {
            config.seqmodel = p.config().clone();
            config.sample_count = p.config().point_count;
        }
        Ok(Self { config, skeleton_model, skin_model })
    }

    pub fn prepare(&self, mesh: &Mesh) -> Result<Prepared> {
        let (mesh, _, transform) = normalize_to_unit_cube(mesh, None)?;
        let cloud = sample_surface(&mesh, self.config.sample_count, self.config.seq_sampling.seed)?;
        Ok(Prepared { mesh, transform, cloud })
    }

    fn seq(&self) -> Result<&(ModelParams, Ordering)> {
        self.skeleton_model.as_ref().ok_or_else(|| Error::Format("checkpoint has no skeleton section".into()))
    }

    /// Greedy or temperature sampling per `config.seq_sampling`. `ordering`
    /// overrides the one the model was trained with.
    pub fn generate_skeleton(&self, prepared: &Prepared, ordering: Option<Ordering>) -> Result<GeneratedSkeleton> {
        let (params, trained) = self.seq()?;
        let ordering = ordering.unwrap_or(*trained);
        let shape = encode_shape(&prepared.cloud, params)?;
        let out = sample_skeleton(&shape, params, &self.config.seq_sampling, ordering)?;
        let decoded = detokenize(&out.sequence.tokens, ordering)?;
        Ok(GeneratedSkeleton { skeleton: decoded.skeleton, tokens: out.sequence, truncated: out.truncated })
    }

    /// Samples per-vertex weights for a skeleton given in normalized coordinates.
    pub fn predict_skin(&self, prepared: &Prepared, skeleton: &Skeleton) -> Result<(SkinMatrix, GeodesicPrior)> {
        let (params, schedule) =
            self.skin_model.as_ref().ok_or_else(|| Error::Format("checkpoint has no skin section".into()))?;
        let n = params.config().max_joints;
        let prior = geodesic_prior(&prepared.mesh, skeleton, &self.config.geodesic)?;
        let seq = self.skeleton_model.as_ref().map(|(p, _)| p);
        let cond = Condition::new(skeleton.joints().to_vec(), n, shape_condition(&prepared.cloud, seq, &self.config)?)?;
        let padded = pad_columns(prior.matrix.matrix(), n)?;
        let w = sample_skin(params, prepared.mesh.vertices(), &padded, &cond, schedule, &self.config.skin_sampling)?;
        Ok((w.truncate_joints(skeleton.joint_count())?, prior))
    }

    /// Mesh in, rig out: skeleton generation followed by skin prediction.
    /// Joints are returned in the mesh's own coordinates.
    pub fn rig(&self, mesh: &Mesh, ordering: Option<Ordering>) -> Result<Rig> {
        let prepared = self.prepare(mesh)?;
        let generated = self.generate_skeleton(&prepared, ordering)?;
        let (skin, _) = self.predict_skin(&prepared, &generated.skeleton)?;
        Ok(to_mesh_space(Rig::new(generated.skeleton), prepared.transform)?.with_skin(skin)?)
    }
}

/// Maps a rig built in normalized coordinates back onto the source mesh
/// and records the transform.
pub fn to_mesh_space(rig: Rig, transform: NormalizationTransform) -> Result<Rig> {
    let skeleton = rig.skeleton.map_joints(|p| transform.invert(p));
    Ok(Rig { skeleton, normalization: Some(transform), ..rig })
}
