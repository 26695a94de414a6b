//! Procedural rigged shapes with exact ground-truth skinning.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::animation::RiggedAsset;
use crate::error::{Error, Result};
use crate::geometry::{normalize_to_unit_cube, Mesh, Skeleton};
use crate::math::{Matrix, Vec3};
use crate::sequencer::quantize_point;
use crate::skin::SkinMatrix;

pub const MIN_JOINTS: usize = 3;
pub const MAX_JOINTS: usize = 55;
const RING_SEGMENTS: usize = 12;
const CAP_RINGS: usize = 3;
const MAX_ATTEMPTS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Template {
    Chain,
    Star,
    Biped,
    Quadruped,
}

impl Template {
    pub const ALL: [Template; 4] = [Template::Chain, Template::Star, Template::Biped, Template::Quadruped];
}

impl core::fmt::Display for Template {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Template::Chain => "chain",
            Template::Star => "star",
            Template::Biped => "biped",
            Template::Quadruped => "quadruped",
        })
    }
}

impl core::str::FromStr for Template {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Template::ALL
            .into_iter()
            .find(|t| format!("{t}") == s)
            .ok_or_else(|| Error::arg(format!("unknown template `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub template: Template,
    /// Inclusive joint count range.
    pub joints: (usize, usize),
    /// Inclusive bone length range (before normalization).
    pub limb_length: (f64, f64),
    /// Capsule radius as a fraction of the mean bone length.
    pub radius: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { template: Template::Chain, joints: (4, 12), limb_length: (0.8, 1.2), radius: 0.25, seed: 0 }
    }
}

impl SynthSpec {
    /// A spec cycling through templates with seed-derived joint ranges.
    pub fn varied(seed: u64, max_joints: usize) -> Self {
        let template = Template::ALL[(seed % 4) as usize];
        let hi = max_joints.clamp(MIN_JOINTS, MAX_JOINTS);
        Self { template, joints: (MIN_JOINTS.max(hi / 2), hi), seed, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.joints;
        if lo < MIN_JOINTS || hi > MAX_JOINTS || lo > hi {
            return Err(Error::arg(format!("joint range must lie within [{MIN_JOINTS}, {MAX_JOINTS}]")));
        }
        let (a, b) = self.limb_length;
        if !(a > 0.0 && a <= b && b.is_finite()) {
            return Err(Error::arg("limb length range must be positive and ordered"));
        }
        if !(self.radius > 0.0 && self.radius < 1.0) {
            return Err(Error::arg("radius fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Attach {
    Root,
    EndOf(usize),
}

fn limbs(template: Template, rng: &mut impl Rng) -> Vec<(Attach, Vec3)> {
    use Attach::*;
    let v = Vec3::new;
    match template {
        Template::Chain => vec![(Root, v(0.0, 0.0, 1.0))],
        Template::Star => {
            let k = rng.random_range(3..=5);
            let phase = rng.random::<f64>() * core::f64::consts::TAU;
            (0..k)
                .map(|i| {
                    let a = phase + core::f64::consts::TAU * i as f64 / k as f64;
                    (Root, v(a.cos(), a.sin(), 0.3 * (rng.random::<f64>() - 0.5)))
                })
                .collect()
        }
        Template::Biped => vec![
            (Root, v(0.0, 0.0, 1.0)),
            (Root, v(-0.35, 0.0, -1.0)),
            (Root, v(0.35, 0.0, -1.0)),
            (EndOf(0), v(-1.0, 0.0, -0.25)),
            (EndOf(0), v(1.0, 0.0, -0.25)),
            (EndOf(0), v(0.0, 0.0, 1.0)),
        ],
        Template::Quadruped => vec![
            (Root, v(1.0, 0.0, 0.0)),
            (Root, v(0.0, -0.35, -1.0)),
            (Root, v(0.0, 0.35, -1.0)),
            (EndOf(0), v(0.0, -0.35, -1.0)),
            (EndOf(0), v(0.0, 0.35, -1.0)),
            (EndOf(0), v(1.0, 0.0, 0.8)),
            (Root, v(-1.0, 0.0, 0.3)),
        ],
    }
}

/// Joints and parent map. Limb joints are allocated round-robin so every
/// limb gets at least one.
fn build_skeleton(spec: &SynthSpec, rng: &mut impl Rng) -> Result<Skeleton> {
    let limbs = limbs(spec.template, rng);
    let (lo, hi) = spec.joints;
    let lo = lo.max(limbs.len() + 1);
    if lo > hi {
        return Err(Error::arg(format!("{} needs at least {lo} joints", spec.template)));
    }
    let n = rng.random_range(lo..=hi);
    let mut per_limb = vec![0usize; limbs.len()];
    for i in 0..n - 1 {
        per_limb[i % limbs.len()] += 1;
    }
    let mut joints = vec![Vec3::ZERO];
    let mut parent = vec![None];
    let mut ends = Vec::with_capacity(limbs.len());
    for (li, &(attach, dir)) in limbs.iter().enumerate() {
        let mut prev = match attach {
            Attach::Root => 0,
            Attach::EndOf(l) => ends[l],
        };
        let base = dir.normalized().expect("template directions are nonzero");
        for _ in 0..per_limb[li] {
            let jitter = Vec3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let d = (base + jitter * 0.5).normalized().unwrap_or(base);
            let (a, b) = spec.limb_length;
            let len = a + (b - a) * rng.random::<f64>();
            joints.push(joints[prev] + d * len);
            parent.push(Some(prev));
            prev = joints.len() - 1;
        }
        ends.push(prev);
    }
    Skeleton::from_parents(joints, parent)
}

/// Closed capsule around segment `a → b`.
fn capsule(a: Vec3, b: Vec3, r: f64, verts: &mut Vec<Vec3>, faces: &mut Vec<[usize; 3]>) {
    let axis = (b - a).normalized().unwrap_or(Vec3::new(0.0, 0.0, 1.0));
    let helper = if axis.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
    let u = axis.cross(helper).normalized().expect("helper is not parallel");
    let w = axis.cross(u);
    let base = verts.len();
    verts.push(a - axis * r);
    let half_pi = core::f64::consts::FRAC_PI_2;
    let mut rings = Vec::new();
    for k in 1..=CAP_RINGS {
        rings.push((a, -half_pi + half_pi * k as f64 / CAP_RINGS as f64));
    }
    for k in 0..CAP_RINGS {
        rings.push((b, half_pi * k as f64 / CAP_RINGS as f64));
    }
    for &(c, phi) in &rings {
        for s in 0..RING_SEGMENTS {
            let th = core::f64::consts::TAU * s as f64 / RING_SEGMENTS as f64;
            let radial = u * th.cos() + w * th.sin();
            verts.push(c + radial * (r * phi.cos()) + axis * (r * phi.sin()));
        }
    }
    verts.push(b + axis * r);
    let top = verts.len() - 1;
    let ring = |k: usize, s: usize| base + 1 + k * RING_SEGMENTS + s % RING_SEGMENTS;
    for s in 0..RING_SEGMENTS {
        faces.push([base, ring(0, s + 1), ring(0, s)]);
    }
    for k in 0..rings.len() - 1 {
        for s in 0..RING_SEGMENTS {
            faces.push([ring(k, s), ring(k, s + 1), ring(k + 1, s + 1)]);
            faces.push([ring(k, s), ring(k + 1, s + 1), ring(k + 1, s)]);
        }
    }
    let last = rings.len() - 1;
    for s in 0..RING_SEGMENTS {
        faces.push([ring(last, s), ring(last, s + 1), top]);
    }
}

/// Distance from `p` to segment `a → b`.
pub fn point_segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    p.distance(a + ab * t)
}

/// Capsules for every bone with faces buried inside another capsule dropped.
fn capsule_union(skeleton: &Skeleton, r: f64) -> Result<Mesh> {
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    let mut owner = Vec::new();
    for (bi, (a, b)) in skeleton.segments().enumerate() {
        let f0 = faces.len();
        capsule(a, b, r, &mut verts, &mut faces);
        owner.extend(core::iter::repeat_n(bi, faces.len() - f0));
    }
    let segs: Vec<(Vec3, Vec3)> = skeleton.segments().collect();
    // capsules are convex, so a face is buried only when one capsule holds all its corners
    let buried = |f: &[usize; 3], own: usize| {
        segs.iter().enumerate().any(|(bi, &(a, b))| {
            bi != own && f.iter().all(|&i| point_segment_distance(verts[i], a, b) < r * (1.0 - 1e-6))
        })
    };
    let kept: Vec<[usize; 3]> = faces
        .iter()
        .zip(&owner)
        .filter(|(f, &o)| !buried(f, o))
        .map(|(f, _)| *f)
        .collect();
    let mut remap = vec![usize::MAX; verts.len()];
    let mut out_verts = Vec::new();
    let faces = kept
        .iter()
        .map(|f| {
            f.map(|i| {
                if remap[i] == usize::MAX {
                    remap[i] = out_verts.len();
                    out_verts.push(verts[i]);
                }
                remap[i]
            })
        })
        .collect();
    Mesh::new(out_verts, faces)
}

/// Falloff `exp(−d²/r²)` to the two nearest bones, credited to each bone's
/// parent joint.
pub fn analytic_skin(vertices: &[Vec3], skeleton: &Skeleton, r: f64) -> Result<SkinMatrix> {
    let segs: Vec<(Vec3, Vec3)> = skeleton.segments().collect();
    let mut m = Matrix::zeros(vertices.len(), skeleton.joint_count());
    for (i, &v) in vertices.iter().enumerate() {
        let mut d: Vec<(f64, usize)> =
            segs.iter().enumerate().map(|(bi, &(a, b))| (point_segment_distance(v, a, b), bi)).collect();
        d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut total = 0.0;
        for &(dist, bi) in d.iter().take(2) {
            let w = (-(dist * dist) / (r * r)).exp();
            m[(i, skeleton.bones()[bi][0])] += w;
            total += w;
        }
        if total == 0.0 {
            m[(i, skeleton.bones()[d[0].1][0])] = 1.0;
        }
    }
    SkinMatrix::from_unnormalized(m, &vec![true; skeleton.joint_count()], None)
}

/// Builds a normalized rigged asset. Draws that would merge joints under
/// coordinate quantization are redrawn from a derived seed.
pub fn generate(spec: &SynthSpec) -> Result<RiggedAsset> {
    spec.validate()?;
    for attempt in 0..MAX_ATTEMPTS {
        let seed = spec.seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let skel = build_skeleton(spec, &mut rng)?;
        let mean_len = skel.segments().map(|(a, b)| a.distance(b)).sum::<f64>() / skel.bone_count() as f64;
        let r = spec.radius * mean_len;
        let mesh = capsule_union(&skel, r)?;
        let (mesh, skel, norm) = normalize_to_unit_cube(&mesh, Some(&skel))?;
        let skel = skel.expect("skeleton passed in");
        let mut cells: Vec<[u8; 3]> = skel.joints().iter().map(|&j| quantize_point(j)).collect::<Result<_>>()?;
        cells.sort_unstable();
        if cells.windows(2).any(|w| w[0] == w[1]) {
            continue;
        }
        let skin = analytic_skin(mesh.vertices(), &skel, r * norm.scale)?;
        return RiggedAsset::new(mesh, skel, skin, norm);
    }
    Err(Error::arg(format!("could not draw a quantization-separable skeleton from seed {}", spec.seed)))
}
