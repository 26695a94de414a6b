//! Wavefront OBJ: `v` and `f` records in, `v` (optionally with RGB) and `f` out.

use std::fmt::Write as _;
use std::path::Path;

use rigforge_core::{Mesh, SkinMatrix, Vec3};

use crate::error::{Error, Result};
use crate::fsio::{fmt9, read_string, write_atomic};

/// Parses vertex and triangle records; every other record is ignored.
/// Face corners may carry texture/normal references (`v/t/n`) and
/// negative (relative) indices.
pub fn parse_obj(text: &str, context: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let mut words = line.split_whitespace();
        match words.next() {
            Some("v") => {
                let c: Vec<f64> = words
                    .take(3)
                    .map(|w| w.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(context, ln + 1, format!("bad vertex coordinate: {e}")))?;
                if c.len() != 3 {
                    return Err(Error::parse(context, ln + 1, "vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let corners: Vec<&str> = words.collect();
                if corners.len() != 3 {
                    return Err(Error::parse(context, ln + 1, format!("face with {} corners; only triangles are supported", corners.len())));
                }
                let mut f = [0usize; 3];
                for (slot, corner) in f.iter_mut().zip(&corners) {
                    let head = corner.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| Error::parse(context, ln + 1, format!("bad face index `{corner}`")))?;
                    let resolved = if i > 0 { i - 1 } else { vertices.len() as i64 + i };
                    if i == 0 || resolved < 0 {
                        return Err(Error::parse(context, ln + 1, format!("face index {i} out of range")));
                    }
                    *slot = resolved as usize;
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    Ok(Mesh::new(vertices, faces)?)
}

pub fn read_obj(path: &Path) -> Result<Mesh> {
    parse_obj(&read_string(path)?, &path.display().to_string())
}

/// OBJ text; `colors` adds per-vertex RGB in `[0, 1]`.
pub fn emit_obj(mesh: &Mesh, colors: Option<&[[f64; 3]]>) -> Result<String> {
    if let Some(c) = colors {
        if c.len() != mesh.vertex_count() {
            return Err(Error::Format(format!("{} colors for {} vertices", c.len(), mesh.vertex_count())));
        }
    }
    let mut out = String::new();
    for (i, v) in mesh.vertices().iter().enumerate() {
        let _ = write!(out, "v {} {} {}", fmt9(v.x), fmt9(v.y), fmt9(v.z));
        if let Some(c) = colors {
            let _ = write!(out, " {} {} {}", fmt9(c[i][0]), fmt9(c[i][1]), fmt9(c[i][2]));
        }
        out.push('\n');
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    Ok(out)
}

pub fn write_obj(path: &Path, mesh: &Mesh, colors: Option<&[[f64; 3]]>) -> Result<()> {
    write_atomic(path, emit_obj(mesh, colors)?.as_bytes())
}

/// Blends a fixed per-joint palette by the skinning weights.
pub fn skin_colors(skin: &SkinMatrix) -> Vec<[f64; 3]> {
    let palette: Vec<[f64; 3]> = (0..skin.joints()).map(joint_color).collect();
    (0..skin.rows())
        .map(|r| {
            let mut c = [0.0; 3];
            for (w, p) in skin.row(r).iter().zip(&palette) {
                for k in 0..3 {
                    c[k] += w * p[k];
                }
            }
            c
        })
        .collect()
}

// Hues spaced by the golden angle, full saturation and value.
fn joint_color(j: usize) -> [f64; 3] {
    let h = (j as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    match h as usize {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_extended_corners_and_ignores_other_records() {
        let text = "# cube corner\nv 0 0 0\nv 1 0 0 0.5 0.5 0.5\nvn 0 0 1\nv 0 1 0\nusemtl x\nf 1/1/1 2//1 -1\n";
        let m = parse_obj(text, "t").unwrap();
        assert_eq!(m.vertex_count(), 3);
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn rejects_quads_and_bad_indices() {
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n", "t").is_err());
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n", "t").is_err());
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n", "t").is_err());
    }

    #[test]
    fn emission_round_trips() {
        let text = "v 0 0 0\nv 1 0.25 0\nv 0 1 -3.5\nf 1 2 3\n";
        let m = parse_obj(text, "t").unwrap();
        assert_eq!(emit_obj(&m, None).unwrap(), text);
        assert_eq!(parse_obj(&emit_obj(&m, None).unwrap(), "t").unwrap(), m);
    }
}
