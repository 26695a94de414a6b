//! Mesh and skeleton types, unit-cube normalization, surface sampling and
//! nearest-vertex lookups.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Matrix, Vec3};

/// Triangle mesh. Construct through [`Mesh::new`] to get validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidMesh(format!("{} vertices, need at least 3", vertices.len())));
        }
        if faces.is_empty() {
            return Err(Error::InvalidMesh("no faces".into()));
        }
        if let Some(i) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::InvalidMesh(format!("face {fi} references a missing vertex")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} repeats a vertex")));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        bounds(&self.vertices)
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Same topology with every vertex mapped through `f`.
    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> Mesh {
        Mesh { vertices: self.vertices.iter().map(|&v| f(v)).collect(), faces: self.faces.clone() }
    }

    /// Same topology with new vertex positions. Positions must be finite.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Mesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch { expected: self.vertices.len(), found: vertices.len() });
        }
        Mesh::new(vertices, self.faces.clone())
    }
}

pub(crate) fn bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::splat(f64::INFINITY);
    let mut hi = Vec3::splat(f64::NEG_INFINITY);
    for &p in points {
        lo = lo.min(p);
        hi = hi.max(p);
    }
    (lo, hi)
}

/// Joints connected by bones, optionally rooted with a parent map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    joints: Vec<Vec3>,
    bones: Vec<[usize; 2]>,
    root: Option<usize>,
    parent: Option<Vec<Option<usize>>>,
}

impl Skeleton {
    pub fn new(
        joints: Vec<Vec3>,
        bones: Vec<[usize; 2]>,
        root: Option<usize>,
        parent: Option<Vec<Option<usize>>>,
    ) -> Result<Self> {
        let n = joints.len();
        if n < 2 {
            return Err(Error::InvalidSkeleton(format!("{n} joints, need at least 2")));
        }
        if bones.is_empty() {
            return Err(Error::InvalidSkeleton("no bones".into()));
        }
        if let Some(i) = joints.iter().position(|j| !j.is_finite()) {
            return Err(Error::InvalidSkeleton(format!("joint {i} is not finite")));
        }
        let mut seen = Vec::with_capacity(bones.len());
        for (bi, &[a, b]) in bones.iter().enumerate() {
            if a >= n || b >= n {
                return Err(Error::InvalidSkeleton(format!("bone {bi} references a missing joint")));
            }
            if a == b {
                return Err(Error::InvalidSkeleton(format!("bone {bi} is a self-loop")));
            }
            let key = (a.min(b), a.max(b));
            if seen.contains(&key) {
                return Err(Error::InvalidSkeleton(format!("bone {bi} duplicates another bone")));
            }
            seen.push(key);
        }
        if let Some(r) = root {
            if r >= n {
                return Err(Error::InvalidSkeleton(format!("root {r} out of range")));
            }
        }
        if let Some(p) = &parent {
            validate_parent_map(p, root)?;
        }
        Ok(Self { joints, bones, root, parent })
    }

    /// Tree skeleton from a parent map; one bone `(parent, child)` per
    /// non-root joint, listed in child order.
    pub fn from_parents(joints: Vec<Vec3>, parent: Vec<Option<usize>>) -> Result<Self> {
        let roots: Vec<usize> = (0..parent.len()).filter(|&i| parent[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidSkeleton(format!("{} roots in parent map", roots.len())));
        }
        let bones = parent
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.map(|p| [p, c]))
            .collect();
        Skeleton::new(joints, bones, Some(roots[0]), Some(parent))
    }

    pub fn joints(&self) -> &[Vec3] {
        &self.joints
    }

    pub fn bones(&self) -> &[[usize; 2]] {
        &self.bones
    }

    pub fn root(&self) -> Option<usize> {
        self.root
    }

    pub fn parent_map(&self) -> Option<&[Option<usize>]> {
        self.parent.as_deref()
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn bone_count(&self) -> usize {
        self.bones.len()
    }

    /// Parent of every joint: the stored map, or one derived by walking the
    /// bone graph from the root. `None` when neither is available or the
    /// bones do not form a tree spanning every joint.
    pub fn parents(&self) -> Option<Vec<Option<usize>>> {
        if let Some(p) = &self.parent {
            return Some(p.clone());
        }
        let root = self.root?;
        let adj = self.adjacency();
        let mut parent = vec![None; self.joints.len()];
        let mut visited = vec![false; self.joints.len()];
        visited[root] = true;
        let mut queue = VecDeque::from([root]);
        let mut edges = 0;
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if !visited[w] {
                    visited[w] = true;
                    parent[w] = Some(u);
                    edges += 1;
                    queue.push_back(w);
                }
            }
        }
        (visited.iter().all(|&v| v) && edges == self.bones.len()).then_some(parent)
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.joints.len()];
        for &[a, b] in &self.bones {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Same structure with every joint mapped through `f`.
    pub fn map_joints(&self, f: impl Fn(Vec3) -> Vec3) -> Skeleton {
        Skeleton {
            joints: self.joints.iter().map(|&j| f(j)).collect(),
            bones: self.bones.clone(),
            root: self.root,
            parent: self.parent.clone(),
        }
    }

    /// Line segments of every bone.
    pub fn segments(&self) -> impl Iterator<Item = (Vec3, Vec3)> + '_ {
        self.bones.iter().map(|&[a, b]| (self.joints[a], self.joints[b]))
    }
}

fn validate_parent_map(parent: &[Option<usize>], root: Option<usize>) -> Result<()> {
    let n = parent.len();
    if let Some(r) = root {
        if r < n && parent[r].is_some() {
            return Err(Error::InvalidSkeleton("root has a parent".into()));
        }
    }
    for (c, p) in parent.iter().enumerate() {
        if let Some(p) = *p {
            if p >= n || p == c {
                return Err(Error::InvalidSkeleton(format!("joint {c} has invalid parent {p}")));
            }
        }
    }
    // Walking up from any joint must terminate within n steps.
    for start in 0..n {
        let mut cur = start;
        let mut steps = 0;
        while let Some(p) = parent[cur] {
            cur = p;
            steps += 1;
            if steps > n {
                return Err(Error::InvalidSkeleton("parent map contains a cycle".into()));
            }
        }
    }
    Ok(())
}

/// Uniform scale about the bounding-box centre: `p ↦ (p + translation) · scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub translation: Vec3,
    pub scale: f64,
}

impl Default for NormalizationTransform {
    fn default() -> Self {
        Self { translation: Vec3::ZERO, scale: 1.0 }
    }
}

impl NormalizationTransform {
    pub fn apply(&self, p: Vec3) -> Vec3 {
        (p + self.translation) * self.scale
    }

    pub fn invert(&self, p: Vec3) -> Vec3 {
        p * (1.0 / self.scale) - self.translation
    }
}

/// Maps the mesh bounding box into `[-0.5, 0.5]³` with its longest side
/// spanning exactly one unit, and applies the same transform to `skeleton`.
pub fn normalize_to_unit_cube(
    mesh: &Mesh,
    skeleton: Option<&Skeleton>,
) -> Result<(Mesh, Option<Skeleton>, NormalizationTransform)> {
    let (lo, hi) = mesh.bounds();
    let extent = hi - lo;
    let longest = extent.x.max(extent.y).max(extent.z);
    if longest <= 0.0 || !longest.is_finite() {
        return Err(Error::DegenerateExtent);
    }
    let center = (lo + hi) * 0.5;
    let t = NormalizationTransform { translation: -center, scale: 1.0 / longest };
    let mesh = mesh.map_vertices(|v| clamp_cube(t.apply(v)));
    let skeleton = skeleton.map(|s| s.map_joints(|j| t.apply(j)));
    Ok((mesh, skeleton, t))
}

// Rounding can push the extreme vertices a hair past ±0.5.
fn clamp_cube(p: Vec3) -> Vec3 {
    let c = |v: f64| v.clamp(-0.5, 0.5);
    Vec3::new(c(p.x), c(p.y), c(p.z))
}

/// Surface samples annotated with normals and their nearest mesh vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub source_vertex: Vec<usize>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point cloud whose points sit exactly on mesh vertices.
    pub fn from_vertices(mesh: &Mesh) -> PointCloud {
        PointCloud {
            points: mesh.vertices().to_vec(),
            normals: None,
            source_vertex: (0..mesh.vertex_count()).collect(),
        }
    }
}

fn triangle_area(t: &[Vec3; 3]) -> f64 {
    (t[1] - t[0]).cross(t[2] - t[0]).norm() * 0.5
}

/// Draws `count` area-weighted samples from the mesh surface.
pub fn sample_surface(mesh: &Mesh, count: usize, seed: u64) -> Result<PointCloud> {
    if count == 0 {
        return Err(Error::arg("sample count must be positive"));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces().len());
    let mut total = 0.0;
    for f in 0..mesh.faces().len() {
        total += triangle_area(&mesh.triangle(f));
        cumulative.push(total);
    }
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::InvalidMesh("zero surface area".into()));
    }

    let locator = VertexLocator::new(mesh.vertices());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    let mut source = Vec::with_capacity(count);
    for _ in 0..count {
        let target = rng.random::<f64>() * total;
        let face = cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangle(face);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let p = a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2);
        let n = (b - a).cross(c - a).normalized().unwrap_or(Vec3::new(0.0, 0.0, 1.0));
        points.push(p);
        normals.push(n);
        source.push(locator.nearest(p));
    }
    Ok(PointCloud { points, normals: Some(normals), source_vertex: source })
}

/// Row `i` of the output is row `points.source_vertex[i]` of `per_vertex`.
pub fn nearest_vertex_transfer(points: &PointCloud, per_vertex: &Matrix) -> Result<Matrix> {
    if points.source_vertex.len() != points.points.len() {
        return Err(Error::DimensionMismatch {
            expected: points.points.len(),
            found: points.source_vertex.len(),
        });
    }
    if let Some(&bad) = points.source_vertex.iter().find(|&&s| s >= per_vertex.rows()) {
        return Err(Error::DimensionMismatch { expected: per_vertex.rows(), found: bad + 1 });
    }
    Ok(per_vertex.select_rows(&points.source_vertex))
}

/// Uniform-grid index answering exact nearest-point queries, ties going to
/// the lowest index.
#[derive(Debug, Clone)]
pub struct VertexLocator {
    points: Vec<Vec3>,
    lo: Vec3,
    cell: Vec3,
    dims: [usize; 3],
    starts: Vec<usize>,
    entries: Vec<usize>,
}

impl VertexLocator {
    pub fn new(points: &[Vec3]) -> Self {
        let (mut lo, mut hi) = bounds(points);
        if points.is_empty() {
            lo = Vec3::ZERO;
            hi = Vec3::ZERO;
        }
        let per_axis = ((points.len() as f64 / 2.0).cbrt().ceil() as usize).clamp(1, 96);
        let extent = hi - lo;
        let mut dims = [1usize; 3];
        let mut cell = Vec3::splat(1.0);
        for a in 0..3 {
            if extent[a] > 0.0 {
                dims[a] = per_axis;
                cell[a] = extent[a] / per_axis as f64;
            }
        }
        let total = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; total + 1];
        let mut keys = Vec::with_capacity(points.len());
        let mut tmp = Self { points: Vec::new(), lo, cell, dims, starts: Vec::new(), entries: Vec::new() };
        for &p in points {
            let k = tmp.flat(tmp.cell_of(p));
            keys.push(k);
            counts[k + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut entries = vec![0usize; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            entries[fill[k]] = i;
            fill[k] += 1;
        }
        tmp.points = points.to_vec();
        tmp.starts = counts;
        tmp.entries = entries;
        tmp
    }

    fn cell_of(&self, p: Vec3) -> [usize; 3] {
        let mut c = [0usize; 3];
        for (a, slot) in c.iter_mut().enumerate() {
            let f = ((p[a] - self.lo[a]) / self.cell[a]).floor();
            *slot = if f.is_nan() || f < 0.0 { 0 } else { (f as usize).min(self.dims[a] - 1) };
        }
        c
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Index of the nearest stored point. Panics on an empty locator.
    pub fn nearest(&self, q: Vec3) -> usize {
        assert!(!self.points.is_empty(), "nearest() on an empty locator");
        let c = self.cell_of(q);
        let max_ring = self.dims.iter().copied().max().unwrap_or(1);
        let mut best = (f64::INFINITY, usize::MAX);
        for ring in 0..=max_ring {
            self.visit_ring(c, ring, |i| {
                let d = q.distance_squared(self.points[i]);
                if d < best.0 || (d == best.0 && i < best.1) {
                    best = (d, i);
                }
            });
            // Cells beyond this ring lie outside the box of cells within it.
            let bound = self.escape_distance(q, c, ring);
            if best.1 != usize::MAX && bound * bound > best.0 {
                break;
            }
        }
        best.1
    }

    fn visit_ring(&self, c: [usize; 3], ring: usize, mut f: impl FnMut(usize)) {
        let r = ring as isize;
        let range = |a: usize| {
            let lo = (c[a] as isize - r).max(0);
            let hi = (c[a] as isize + r).min(self.dims[a] as isize - 1);
            (lo, hi)
        };
        let (x0, x1) = range(0);
        let (y0, y1) = range(1);
        let (z0, z1) = range(2);
        for z in z0..=z1 {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let on_ring = (x - c[0] as isize).abs() == r
                        || (y - c[1] as isize).abs() == r
                        || (z - c[2] as isize).abs() == r;
                    if !on_ring {
                        continue;
                    }
                    let k = self.flat([x as usize, y as usize, z as usize]);
                    for &i in &self.entries[self.starts[k]..self.starts[k + 1]] {
                        f(i);
                    }
                }
            }
        }
    }

    /// Lower bound on the distance from `q` to any cell outside the
    /// `ring`-neighbourhood of `c`.
    fn escape_distance(&self, q: Vec3, c: [usize; 3], ring: usize) -> f64 {
        let mut bound = f64::INFINITY;
        for a in 0..3 {
            let lo_idx = c[a] as isize - ring as isize;
            let hi_idx = c[a] + ring;
            if lo_idx > 0 {
                let face = self.lo[a] + lo_idx as f64 * self.cell[a];
                let d = q[a] - face;
                if d < 0.0 {
                    return 0.0;
                }
                bound = bound.min(d);
            }
            if hi_idx + 1 < self.dims[a] {
                let face = self.lo[a] + (hi_idx + 1) as f64 * self.cell[a];
                let d = face - q[a];
                if d < 0.0 {
                    return 0.0;
                }
                bound = bound.min(d);
            }
        }
        bound
    }
}
