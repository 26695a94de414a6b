//! Standalone skin-matrix JSON, used for predicted weights and for
//! geodesic priors (`prior: true`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use rigforge_core::SkinMatrix;

use crate::error::{Error, Result};
use crate::fsio::{canonical_json, read_string, write_atomic};
use crate::rigfile::{check_version, SkinWire};

pub const SKIN_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SkinFile {
    pub weights: SkinMatrix,
    pub prior: bool,
    /// Rows computed from Euclidean distances because no geodesic path existed.
    pub fallback_rows: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Wire {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    fallback_rows: Vec<usize>,
    joint_count: usize,
    prior: bool,
    version: u32,
    vertex_count: usize,
    weights: Vec<Vec<f64>>,
}

impl SkinFile {
    pub fn to_json(&self) -> String {
        let s = SkinWire::from_skin(&self.weights);
        let wire = Wire {
            fallback_rows: self.fallback_rows.clone(),
            joint_count: s.joint_count,
            prior: self.prior,
            version: SKIN_VERSION,
            vertex_count: self.weights.rows(),
            weights: s.weights,
        };
        canonical_json(&serde_json::to_value(&wire).expect("skin serializes"))
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let w: Wire = serde_json::from_str(text).map_err(|e| Error::json(context, e))?;
        check_version(w.version, SKIN_VERSION, "skin")?;
        if w.weights.len() != w.vertex_count {
            return Err(Error::Format(format!("{}: {} rows, header says {}", context, w.weights.len(), w.vertex_count)));
        }
        if let Some(&r) = w.fallback_rows.iter().find(|&&r| r >= w.vertex_count) {
            return Err(Error::Format(format!("{context}: fallback row {r} out of range")));
        }
        let m = SkinWire { joint_count: w.joint_count, weights: w.weights }.into_matrix()?;
        Ok(Self { weights: SkinMatrix::new(m)?, prior: w.prior, fallback_rows: w.fallback_rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&read_string(path)?, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }
}
