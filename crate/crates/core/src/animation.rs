//! Linear blend skinning and random poses.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mesh, NormalizationTransform, Skeleton};
use crate::math::{Mat3, Vec3};
use crate::skin::SkinMatrix;

/// A rigid transform `v ↦ R v + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rigid {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Rigid {
    pub const IDENTITY: Rigid = Rigid { rotation: Mat3::IDENTITY, translation: Vec3::ZERO };

    pub fn apply(&self, v: Vec3) -> Vec3 {
        self.rotation.mul_vec(v) + self.translation
    }

    /// Rotation by `rotation` about `pivot`.
    pub fn about(rotation: Mat3, pivot: Vec3) -> Rigid {
        Rigid { rotation, translation: pivot - rotation.mul_vec(pivot) }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Rigid) -> Rigid {
        Rigid {
            rotation: self.rotation.mul_mat(&other.rotation),
            translation: self.apply(other.translation),
        }
    }
}

/// Per-joint transforms in the common (world) frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub transforms: Vec<Rigid>,
}

impl Pose {
    pub fn identity(joints: usize) -> Pose {
        Pose { transforms: alloc::vec![Rigid::IDENTITY; joints] }
    }

    pub fn uniform(joints: usize, t: Rigid) -> Pose {
        Pose { transforms: alloc::vec![t; joints] }
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    /// Largest deviation of any rotation block from an orthonormal,
    /// positively oriented matrix.
    pub fn rotation_error(&self) -> f64 {
        self.transforms
            .iter()
            .map(|t| t.rotation.orthonormality_error().max((t.rotation.determinant() - 1.0).abs()))
            .fold(0.0, f64::max)
    }
}

/// Mesh, skeleton and per-vertex weights, plus the transform that maps
/// original coordinates into the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct RiggedAsset {
    pub mesh: Mesh,
    pub skeleton: Skeleton,
    pub skin: SkinMatrix,
    pub normalization: NormalizationTransform,
}

impl RiggedAsset {
    pub fn new(mesh: Mesh, skeleton: Skeleton, skin: SkinMatrix, normalization: NormalizationTransform) -> Result<Self> {
        if skin.rows() != mesh.vertex_count() {
            return Err(Error::DimensionMismatch { expected: mesh.vertex_count(), found: skin.rows() });
        }
        if skin.joints() != skeleton.joint_count() {
            return Err(Error::DimensionMismatch { expected: skeleton.joint_count(), found: skin.joints() });
        }
        Ok(Self { mesh, skeleton, skin, normalization })
    }

    pub fn with_skin(&self, skin: SkinMatrix) -> Result<Self> {
        Self::new(self.mesh.clone(), self.skeleton.clone(), skin, self.normalization)
    }
}

/// `v' = Σ_j w_vj (R_j v + t_j)`.
pub fn lbs_deform(asset: &RiggedAsset, pose: &Pose) -> Result<Mesh> {
    let v = lbs_positions(asset.mesh.vertices(), &asset.skin, pose)?;
    asset.mesh.with_vertices(v)
}

pub fn lbs_positions(vertices: &[Vec3], skin: &SkinMatrix, pose: &Pose) -> Result<Vec<Vec3>> {
    if skin.rows() != vertices.len() {
        return Err(Error::DimensionMismatch { expected: vertices.len(), found: skin.rows() });
    }
    if pose.len() != skin.joints() {
        return Err(Error::DimensionMismatch { expected: skin.joints(), found: pose.len() });
    }
    Ok(vertices
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut out = Vec3::ZERO;
            for (w, t) in skin.row(i).iter().zip(&pose.transforms) {
                if *w != 0.0 {
                    out += t.apply(v) * *w;
                }
            }
            out
        })
        .collect())
}

/// A uniformly distributed unit axis and an angle uniform in
/// `[-max_angle, max_angle]` (radians).
pub fn random_axis_angle(rng: &mut impl Rng, max_angle: f64) -> (Vec3, f64) {
    let axis = loop {
        let v = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        if let Some(a) = v.normalized() {
            break a;
        }
    };
    let angle = (rng.random::<f64>() * 2.0 - 1.0) * max_angle;
    (axis, angle)
}

/// `count` random poses. Each joint rotates about its rest position by a
/// random axis-angle; rotations compose down the hierarchy when the
/// skeleton has one.
pub fn random_poses(skeleton: &Skeleton, count: usize, max_angle_deg: f64, seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = max_angle_deg.to_radians();
    let parents = skeleton.parents();
    let order = parents.as_ref().map(|p| topological_order(p));
    (0..count)
        .map(|_| {
            let local: Vec<Rigid> = skeleton
                .joints()
                .iter()
                .map(|&r| {
                    let (axis, angle) = random_axis_angle(&mut rng, max);
                    Rigid::about(Mat3::from_axis_angle(axis, angle), r)
                })
                .collect();
            match (&parents, &order) {
                (Some(parent), Some(order)) => {
                    let mut global = local.clone();
                    for &j in order {
                        if let Some(p) = parent[j] {
                            global[j] = global[p].compose(&local[j]);
                        }
                    }
                    Pose { transforms: global }
                }
                _ => Pose { transforms: local },
            }
        })
        .collect()
}

/// Joints ordered so that every parent precedes its children.
fn topological_order(parent: &[Option<usize>]) -> Vec<usize> {
    let n = parent.len();
    let mut children = alloc::vec![Vec::new(); n];
    let mut order = Vec::with_capacity(n);
    for (j, p) in parent.iter().enumerate() {
        match p {
            Some(p) => children[*p].push(j),
            None => order.push(j),
        }
    }
    let mut head = 0;
    while head < order.len() {
        let j = order[head];
        head += 1;
        order.extend_from_slice(&children[j]);
    }
    order
}
