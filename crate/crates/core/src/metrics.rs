//! Skeleton and skinning evaluation metrics.

use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::animation::{lbs_positions, Pose, RiggedAsset};
use crate::error::{Error, Result};
use crate::geometry::Skeleton;
use crate::math::Vec3;
use crate::skin::SkinMatrix;

pub const DEFAULT_SAMPLES_PER_BONE: usize = 32;
pub const DEFAULT_INFLUENCE_THRESHOLD: f64 = 1e-4;
/// Reported values are in units of 1e-2.
pub const REPORT_SCALE: f64 = 100.0;

/// Chamfer distances in normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkeletonReport {
    pub cd_j2j: f64,
    pub cd_j2b: f64,
    pub cd_b2b: f64,
}

impl SkeletonReport {
    pub fn compute(a: &Skeleton, b: &Skeleton, samples_per_bone: usize) -> Result<Self> {
        Ok(Self {
            cd_j2j: cd_j2j(a, b)?,
            cd_j2b: cd_j2b(a, b, samples_per_bone)?,
            cd_b2b: cd_b2b(a, b, samples_per_bone)?,
        })
    }

    /// Values in units of 1e-2.
    pub fn scaled(&self) -> Self {
        Self { cd_j2j: self.cd_j2j * REPORT_SCALE, cd_j2b: self.cd_j2b * REPORT_SCALE, cd_b2b: self.cd_b2b * REPORT_SCALE }
    }

    pub fn mean(reports: &[SkeletonReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(Self {
            cd_j2j: reports.iter().map(|r| r.cd_j2j).sum::<f64>() / n,
            cd_j2b: reports.iter().map(|r| r.cd_j2b).sum::<f64>() / n,
            cd_b2b: reports.iter().map(|r| r.cd_b2b).sum::<f64>() / n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkinReport {
    pub precision: f64,
    pub recall: f64,
    pub avg_l1: f64,
    pub avg_dist: Option<f64>,
    /// The predicted influence set was empty.
    pub precision_undefined: bool,
    /// The ground-truth influence set was empty.
    pub recall_undefined: bool,
}

impl SkinReport {
    pub fn compute(pred: &SkinMatrix, truth: &SkinMatrix, threshold: f64) -> Result<Self> {
        let pr = skin_precision_recall(pred, truth, threshold)?;
        Ok(Self {
            precision: pr.precision,
            recall: pr.recall,
            avg_l1: skin_avg_l1(pred, truth)?,
            avg_dist: None,
            precision_undefined: pr.precision_undefined,
            recall_undefined: pr.recall_undefined,
        })
    }
}

/// `½·mean_a min_b ‖a−b‖ + ½·mean_b min_a ‖a−b‖`.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::arg("chamfer distance of an empty point set"));
    }
    Ok(0.5 * one_sided(a, b) + 0.5 * one_sided(b, a))
}

fn one_sided(from: &[Vec3], to: &[Vec3]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|&p| to.iter().map(|&q| p.distance_squared(q)).fold(f64::INFINITY, f64::min).sqrt())
        .sum();
    total / from.len() as f64
}

/// Endpoint-inclusive uniform samples along every bone.
pub fn bone_samples(s: &Skeleton, samples_per_bone: usize) -> Result<Vec<Vec3>> {
    if s.bone_count() == 0 {
        return Err(Error::InvalidSkeleton("skeleton has no bones".into()));
    }
    if samples_per_bone < 2 {
        return Err(Error::arg("need at least two samples per bone"));
    }
    let k = samples_per_bone - 1;
    Ok(s
        .segments()
        .flat_map(|(a, b)| (0..=k).map(move |i| a.lerp(b, i as f64 / k as f64)))
        .collect())
}

pub fn cd_j2j(a: &Skeleton, b: &Skeleton) -> Result<f64> {
    chamfer(a.joints(), b.joints())
}

/// `½·mean_{a∈J_A} min_{s∈S_B} ‖a−s‖ + ½·mean_{b∈J_B} min_{s∈S_A} ‖b−s‖`
/// with `S` the bone samples.
pub fn cd_j2b(a: &Skeleton, b: &Skeleton, samples_per_bone: usize) -> Result<f64> {
    let sa = bone_samples(a, samples_per_bone)?;
    let sb = bone_samples(b, samples_per_bone)?;
    Ok(0.5 * one_sided(a.joints(), &sb) + 0.5 * one_sided(b.joints(), &sa))
}

pub fn cd_b2b(a: &Skeleton, b: &Skeleton, samples_per_bone: usize) -> Result<f64> {
    chamfer(&bone_samples(a, samples_per_bone)?, &bone_samples(b, samples_per_bone)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

fn same_shape(a: &SkinMatrix, b: &SkinMatrix) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(Error::DimensionMismatch { expected: b.rows(), found: a.rows() });
    }
    if a.joints() != b.joints() {
        return Err(Error::DimensionMismatch { expected: b.joints(), found: a.joints() });
    }
    Ok(())
}

/// Precision and recall of the influence sets `{w > threshold}`.
pub fn skin_precision_recall(pred: &SkinMatrix, truth: &SkinMatrix, threshold: f64) -> Result<PrecisionRecall> {
    same_shape(pred, truth)?;
    let (mut np, mut nt, mut both) = (0usize, 0usize, 0usize);
    for (p, t) in pred.matrix().data().iter().zip(truth.matrix().data()) {
        let (sp, st) = (*p > threshold, *t > threshold);
        np += sp as usize;
        nt += st as usize;
        both += (sp && st) as usize;
    }
    let ratio = |n: usize| if n == 0 { 0.0 } else { both as f64 / n as f64 };
    Ok(PrecisionRecall { precision: ratio(np), recall: ratio(nt), precision_undefined: np == 0, recall_undefined: nt == 0 })
}

/// Mean over rows of the L1 norm of the row difference.
pub fn skin_avg_l1(pred: &SkinMatrix, truth: &SkinMatrix) -> Result<f64> {
    same_shape(pred, truth)?;
    if pred.rows() == 0 {
        return Err(Error::arg("empty skin matrix"));
    }
    let total: f64 = (0..pred.rows())
        .map(|r| pred.row(r).iter().zip(truth.row(r)).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .sum();
    Ok(total / pred.rows() as f64)
}

/// Mean over poses and vertices of the distance between the two LBS results.
pub fn deformation_error(pred: &RiggedAsset, truth: &RiggedAsset, poses: &[Pose]) -> Result<f64> {
    if poses.is_empty() {
        return Err(Error::arg("empty pose list"));
    }
    if pred.mesh.vertices() != truth.mesh.vertices() {
        return Err(Error::arg("assets do not share a mesh"));
    }
    let v = truth.mesh.vertices();
    let mut total = 0.0;
    for pose in poses {
        let a = lbs_positions(v, &pred.skin, pose)?;
        let b = lbs_positions(v, &truth.skin, pose)?;
        total += a.iter().zip(&b).map(|(p, q)| p.distance(*q)).sum::<f64>() / v.len() as f64;
    }
    Ok(total / poses.len() as f64)
}
