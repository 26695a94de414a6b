//! Canonical rig JSON: sorted keys, floats at 9 significant digits, a
//! `version` field, and skeleton validation on load.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use rigforge_core::{Matrix, NormalizationTransform, Skeleton, SkinMatrix, Vec3};

use crate::error::{Error, Result};
use crate::fsio::{canonical_json, read_string, round9, write_atomic};

pub const RIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub names: Vec<String>,
    pub skeleton: Skeleton,
    pub skin: Option<SkinMatrix>,
    pub normalization: Option<NormalizationTransform>,
}

#[derive(Serialize, Deserialize)]
struct RigWire {
    bones: Vec<[usize; 2]>,
    joints: Vec<JointWire>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalization: Option<NormWire>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    root: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    skin: Option<SkinWire>,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct JointWire {
    name: String,
    position: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct NormWire {
    scale: f64,
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
pub(crate) struct SkinWire {
    pub joint_count: usize,
    pub weights: Vec<Vec<f64>>,
}

impl SkinWire {
    pub(crate) fn from_skin(skin: &SkinMatrix) -> Self {
        Self {
            joint_count: skin.joints(),
            weights: (0..skin.rows()).map(|r| skin.row(r).iter().map(|&w| round9(w)).collect()).collect(),
        }
    }

    pub(crate) fn into_matrix(self) -> Result<Matrix> {
        if let Some(r) = self.weights.iter().position(|row| row.len() != self.joint_count) {
            return Err(Error::Format(format!("skin row {r} has {} entries, expected {}", self.weights[r].len(), self.joint_count)));
        }
        let rows = self.weights.len();
        Ok(Matrix::from_vec(rows, self.joint_count, self.weights.into_iter().flatten().collect())?)
    }
}

pub(crate) fn check_version(found: u32, supported: u32, what: &str) -> Result<()> {
    if found == 0 || found > supported {
        return Err(Error::Format(format!("unsupported {what} version {found} (this build reads up to {supported})")));
    }
    Ok(())
}

fn r3(v: Vec3) -> [f64; 3] {
    [round9(v.x), round9(v.y), round9(v.z)]
}

pub fn default_joint_name(i: usize) -> String {
    format!("joint_{i}")
}

impl Rig {
    pub fn new(skeleton: Skeleton) -> Self {
        let names = (0..skeleton.joint_count()).map(default_joint_name).collect();
        Self { names, skeleton, skin: None, normalization: None }
    }

    pub fn with_skin(mut self, skin: SkinMatrix) -> Result<Self> {
        if skin.joints() != self.skeleton.joint_count() {
            return Err(Error::Format(format!(
                "skin has {} joint columns, skeleton has {} joints",
                skin.joints(),
                self.skeleton.joint_count()
            )));
        }
        self.skin = Some(skin);
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        let wire = RigWire {
            bones: self.skeleton.bones().to_vec(),
            joints: self
                .names
                .iter()
                .zip(self.skeleton.joints())
                .map(|(n, &p)| JointWire { name: n.clone(), position: r3(p) })
                .collect(),
            normalization: self.normalization.map(|t| NormWire { scale: round9(t.scale), translation: r3(t.translation) }),
            root: self.skeleton.root(),
            skin: self.skin.as_ref().map(SkinWire::from_skin),
            version: RIG_VERSION,
        };
        canonical_json(&serde_json::to_value(&wire).expect("rig serializes"))
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let wire: RigWire = serde_json::from_str(text).map_err(|e| Error::json(context, e))?;
        check_version(wire.version, RIG_VERSION, "rig")?;
        let joints: Vec<Vec3> = wire.joints.iter().map(|j| Vec3::new(j.position[0], j.position[1], j.position[2])).collect();
        let names: Vec<String> = wire.joints.into_iter().map(|j| j.name).collect();
        let skeleton = Skeleton::new(joints, wire.bones, wire.root, None)?;
        skeleton.parents_checked(wire.root)?;
        let skin = match wire.skin {
            Some(s) => {
                if s.joint_count != skeleton.joint_count() {
                    return Err(Error::Format(format!(
                        "skin joint_count {} does not match {} joints",
                        s.joint_count,
                        skeleton.joint_count()
                    )));
                }
                Some(SkinMatrix::new(s.into_matrix()?)?)
            }
            None => None,
        };
        let normalization = match wire.normalization {
            Some(n) => {
                if !(n.scale > 0.0 && n.scale.is_finite()) || n.translation.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Format("normalization record must be finite with positive scale".into()));
                }
                Some(NormalizationTransform { translation: Vec3::new(n.translation[0], n.translation[1], n.translation[2]), scale: n.scale })
            }
            None => None,
        };
        Ok(Self { names, skeleton, skin, normalization })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&read_string(path)?, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    /// Imports the plain-text rig layout with `joints name x y z`,
    /// `root name`, `hier parent child` and `skin vertex name w ...` lines.
    pub fn from_rignet_text(text: &str, context: &str) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut joints = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut root = None;
        let mut hier = Vec::new();
        let mut skin_lines = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let w: Vec<&str> = line.split_whitespace().collect();
            let bad = |m: &str| Error::parse(context, ln + 1, m);
            match w.first().copied() {
                Some("joints") => {
                    if w.len() != 5 {
                        return Err(bad("expected `joints name x y z`"));
                    }
                    let c: Vec<f64> = w[2..].iter().map(|s| s.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad("bad coordinate"))?;
                    if index.insert(w[1].to_string(), names.len()).is_some() {
                        return Err(bad("duplicate joint name"));
                    }
                    names.push(w[1].to_string());
                    joints.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("root") if w.len() == 2 => root = Some((ln + 1, w[1].to_string())),
                Some("hier") if w.len() == 3 => hier.push((ln + 1, w[1].to_string(), w[2].to_string())),
                Some("skin") => skin_lines.push((ln + 1, w[1..].iter().map(|s| s.to_string()).collect::<Vec<_>>())),
                Some(_) => return Err(bad("unrecognized record")),
                None => {}
            }
        }
        let lookup = |ln: usize, n: &str| index.get(n).copied().ok_or_else(|| Error::parse(context, ln, format!("unknown joint `{n}`")));
        let root = root.map(|(ln, n)| lookup(ln, &n)).transpose()?;
        let bones = hier.iter().map(|(ln, p, c)| Ok([lookup(*ln, p)?, lookup(*ln, c)?])).collect::<Result<Vec<_>>>()?;
        let skeleton = Skeleton::new(joints, bones, root, None)?;
        let skin = if skin_lines.is_empty() {
            None
        } else {
            let mut m = Matrix::zeros(skin_lines.len(), names.len());
            for (ln, words) in &skin_lines {
                let bad = |m: &str| Error::parse(context, *ln, m);
                let v: usize = words.first().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad vertex index"))?;
                if v >= m.rows() || words.len() % 2 != 1 {
                    return Err(bad("skin lines must cover vertices 0..n with name/weight pairs"));
                }
                for pair in words[1..].chunks(2) {
                    let j = lookup(*ln, &pair[0])?;
                    m.row_mut(v)[j] = pair[1].parse().map_err(|_| bad("bad weight"))?;
                }
            }
            Some(SkinMatrix::from_unnormalized(m, &vec![true; names.len()], None)?)
        };
        Ok(Self { names, skeleton, skin, normalization: None })
    }
}

trait ParentsChecked {
    fn parents_checked(&self, root: Option<usize>) -> Result<()>;
}

impl ParentsChecked for Skeleton {
    /// A declared root must reach every joint through a tree.
    fn parents_checked(&self, root: Option<usize>) -> Result<()> {
        if root.is_some() && self.parents().is_none() {
            return Err(rigforge_core::Error::NotATree("bones do not form a tree under the declared root".into()).into());
        }
        Ok(())
    }
}
