//! Point-cloud text files: a header line, then `x y z [nx ny nz] vertex` per point.

use std::fmt::Write as _;
use std::path::Path;

use rigforge_core::{PointCloud, Vec3};

use crate::error::{Error, Result};
use crate::fsio::{fmt9, read_string, write_atomic};

pub const PTS_VERSION: u32 = 1;
const MAGIC: &str = "rigforge-pts";

pub fn emit_pts(cloud: &PointCloud) -> String {
    let normals = cloud.normals.as_deref();
    let mut out = format!("{MAGIC} {PTS_VERSION} {} {}\n", cloud.len(), u8::from(normals.is_some()));
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(out, "{} {} {}", fmt9(p.x), fmt9(p.y), fmt9(p.z));
        if let Some(n) = normals {
            let _ = write!(out, " {} {} {}", fmt9(n[i].x), fmt9(n[i].y), fmt9(n[i].z));
        }
        let _ = writeln!(out, " {}", cloud.source_vertex[i]);
    }
    out
}

pub fn parse_pts(text: &str, context: &str) -> Result<PointCloud> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
    if header.len() != 4 || header[0] != MAGIC {
        return Err(Error::parse(context, 1, "missing point-cloud header"));
    }
    let version: u32 = header[1].parse().map_err(|_| Error::parse(context, 1, "bad version"))?;
    crate::rigfile::check_version(version, PTS_VERSION, "point cloud")?;
    let count: usize = header[2].parse().map_err(|_| Error::parse(context, 1, "bad count"))?;
    let has_normals = match header[3] {
        "0" => false,
        "1" => true,
        _ => return Err(Error::parse(context, 1, "bad normals flag")),
    };
    let width = if has_normals { 7 } else { 4 };
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::new();
    let mut source = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        let ln = i + 2;
        let w: Vec<&str> = line.split_whitespace().collect();
        if w.is_empty() {
            continue;
        }
        if w.len() != width {
            return Err(Error::parse(context, ln, format!("expected {width} fields")));
        }
        let f: Vec<f64> = w[..width - 1].iter().map(|s| s.parse()).collect::<std::result::Result<_, _>>().map_err(|_| Error::parse(context, ln, "bad number"))?;
        points.push(Vec3::new(f[0], f[1], f[2]));
        if has_normals {
            normals.push(Vec3::new(f[3], f[4], f[5]));
        }
        source.push(w[width - 1].parse().map_err(|_| Error::parse(context, ln, "bad vertex index"))?);
    }
    if points.len() != count {
        return Err(Error::Format(format!("{context}: {} points, header says {count}", points.len())));
    }
    Ok(PointCloud { points, normals: has_normals.then_some(normals), source_vertex: source })
}

pub fn read_pts(path: &Path) -> Result<PointCloud> {
    parse_pts(&read_string(path)?, &path.display().to_string())
}

pub fn write_pts(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_atomic(path, emit_pts(cloud).as_bytes())
}
