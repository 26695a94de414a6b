//! Synthetic training corpora on disk, indexed by a checksummed manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use rigforge_core::geometry::sample_surface;
use rigforge_core::sequencer::{tokenize, Ordering};
use rigforge_core::synthgen::{generate, SynthSpec};
use rigforge_core::{Mesh, PointCloud};

use crate::error::{Error, Result};
use crate::fsio::{canonical_json, read_string, sha256_hex, write_atomic};
use crate::obj::{emit_obj, parse_obj};
use crate::pts::{emit_pts, parse_pts};
use crate::rigfile::{check_version, Rig};
use crate::tokfile::emit_tokens;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub spec: SynthSpec,
    pub joints: usize,
    pub bones: usize,
    pub vertices: usize,
    /// Keyed by role: `mesh`, `rig`, `points`, `tokens_spatial`, `tokens_hierarchical`.
    pub files: BTreeMap<String, FileRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub assets: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("manifest serializes"))
    }
}

/// One asset as loaded back from a corpus.
#[derive(Debug, Clone)]
pub struct CorpusAsset {
    pub id: String,
    pub mesh: Mesh,
    pub rig: Rig,
    pub points: PointCloud,
}

/// Generates every spec and writes its mesh, rig (with ground-truth skin),
/// surface samples and token lines for both orderings. An empty spec list
/// writes nothing.
pub fn build_corpus(specs: &[SynthSpec], dir: &Path, points_per_asset: usize) -> Result<Manifest> {
    let mut manifest = Manifest { version: MANIFEST_VERSION, assets: Vec::new() };
    if specs.is_empty() {
        return Ok(manifest);
    }
    for (i, spec) in specs.iter().enumerate() {
        let asset = generate(spec)?;
        let id = format!("asset_{i:04}");
        let cloud = sample_surface(&asset.mesh, points_per_asset, spec.seed)?;
        // the stored mesh is already in the unit cube, so the rig carries no transform
        let rig = Rig::new(asset.skeleton.clone()).with_skin(asset.skin.clone())?;
        let mut files: Vec<(&str, String, String)> = vec![
            ("mesh", format!("{id}.obj"), emit_obj(&asset.mesh, None)?),
            ("rig", format!("{id}.rig.json"), rig.to_json()),
            ("points", format!("{id}.pts"), emit_pts(&cloud)),
        ];
        for ordering in [Ordering::Spatial, Ordering::Hierarchical] {
            let seq = tokenize(&asset.skeleton, ordering)?;
            let role = if ordering == Ordering::Spatial { "tokens_spatial" } else { "tokens_hierarchical" };
            files.push((role, format!("{id}.{ordering}.tok"), emit_tokens(&seq)));
        }
        let mut records = BTreeMap::new();
        for (role, name, body) in files {
            write_atomic(&dir.join(&name), body.as_bytes())?;
            records.insert(role.to_string(), FileRecord { path: name, sha256: sha256_hex(body.as_bytes()) });
        }
        manifest.assets.push(ManifestEntry {
            id,
            spec: *spec,
            joints: asset.skeleton.joint_count(),
            bones: asset.skeleton.bone_count(),
            vertices: asset.mesh.vertex_count(),
            files: records,
        });
    }
    write_atomic(&dir.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let m: Manifest = serde_json::from_str(&read_string(&path)?).map_err(|e| Error::json(path.display().to_string(), e))?;
    check_version(m.version, MANIFEST_VERSION, "manifest")?;
    Ok(m)
}

fn read_verified(dir: &Path, entry: &ManifestEntry, role: &str) -> Result<String> {
    let rec = entry.files.get(role).ok_or_else(|| Error::Format(format!("{}: no `{role}` file listed", entry.id)))?;
    let path = dir.join(&rec.path);
    let text = read_string(&path)?;
    if sha256_hex(text.as_bytes()) != rec.sha256 {
        return Err(Error::Checksum(path));
    }
    Ok(text)
}

/// Loads every asset listed in the manifest, verifying checksums.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusAsset>> {
    let manifest = read_manifest(dir)?;
    manifest
        .assets
        .iter()
        .map(|e| {
            let mesh = parse_obj(&read_verified(dir, e, "mesh")?, &format!("{}.obj", e.id))?;
            let rig = Rig::from_json(&read_verified(dir, e, "rig")?, &format!("{}.rig.json", e.id))?;
            let points = parse_pts(&read_verified(dir, e, "points")?, &format!("{}.pts", e.id))?;
            if rig.skin.as_ref().map(|s| s.rows()) != Some(mesh.vertex_count()) {
                return Err(Error::Format(format!("{}: rig skin does not cover the mesh", e.id)));
            }
            Ok(CorpusAsset { id: e.id.clone(), mesh, rig, points })
        })
        .collect()
}
