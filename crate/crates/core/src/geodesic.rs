//! Voxelization, volumetric geodesic distances and the geodesic prior.
//!
//! Distances run through surface and interior cells of a regular grid over
//! the unit cube. From each joint, cells in straight line of sight (a segment
//! that never enters an exterior cell) receive their Euclidean distance
//! directly; everything else is reached by shortest paths over the
//! 26-connected cell graph with metric edge lengths.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering as CmpOrdering;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mesh, Skeleton};
use crate::math::{Matrix, Vec3};
use crate::skin::SkinMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Exterior,
    Surface,
    Interior,
}

/// Cell classification on a cubic grid covering `[-0.5, 0.5]³`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    resolution: usize,
    cells: Vec<Cell>,
}

const LO: f64 = -0.5;

impl VoxelGrid {
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn edge(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    pub fn diagonal(&self) -> f64 {
        self.edge() * 3f64.sqrt()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution * (j + self.resolution * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let r = self.resolution;
        [idx % r, (idx / r) % r, idx / (r * r)]
    }

    pub fn cell(&self, idx: usize) -> Cell {
        self.cells[idx]
    }

    pub fn center(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.coords(idx);
        let e = self.edge();
        Vec3::new(LO + (i as f64 + 0.5) * e, LO + (j as f64 + 0.5) * e, LO + (k as f64 + 0.5) * e)
    }

    /// Cell containing `p`, clamped into the grid.
    pub fn locate(&self, p: Vec3) -> usize {
        let c = |v: f64| (((v - LO) / self.edge()).floor().max(0.0) as usize).min(self.resolution - 1);
        self.index(c(p.x), c(p.y), c(p.z))
    }

    pub fn count(&self, kind: Cell) -> usize {
        self.cells.iter().filter(|&&c| c == kind).count()
    }

    pub fn is_solid(&self, idx: usize) -> bool {
        self.cells[idx] != Cell::Exterior
    }

    /// Enclosed volume estimate: interior cells plus half of the surface shell.
    pub fn solid_volume(&self) -> f64 {
        let e3 = self.edge().powi(3);
        (self.count(Cell::Interior) as f64 + 0.5 * self.count(Cell::Surface) as f64) * e3
    }

    /// In-grid neighbours of `idx` under 26-connectivity with their step lengths.
    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let [i, j, k] = self.coords(idx);
        let r = self.resolution as isize;
        let e = self.edge();
        let lengths = [0.0, e, e * 2f64.sqrt(), e * 3f64.sqrt()];
        OFFSETS.iter().filter_map(move |&(di, dj, dk)| {
            let (a, b, c) = (i as isize + di, j as isize + dj, k as isize + dk);
            if a < 0 || b < 0 || c < 0 || a >= r || b >= r || c >= r {
                return None;
            }
            let steps = (di != 0) as usize + (dj != 0) as usize + (dk != 0) as usize;
            Some((self.index(a as usize, b as usize, c as usize), lengths[steps]))
        })
    }

    /// Whether the segment between two cell centres stays in solid cells.
    pub fn line_of_sight(&self, from: usize, to: usize) -> bool {
        let a = self.coords(from);
        let b = self.coords(to);
        let mut cur = a;
        let mut step = [0isize; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for ax in 0..3 {
            let d = b[ax] as f64 - a[ax] as f64;
            if d != 0.0 {
                step[ax] = if d > 0.0 { 1 } else { -1 };
                t_delta[ax] = 1.0 / d.abs();
                t_max[ax] = 0.5 / d.abs();
            }
        }
        loop {
            if !self.is_solid(self.index(cur[0], cur[1], cur[2])) {
                return false;
            }
            if cur == b {
                return true;
            }
            let mut ax = 0;
            for c in 1..3 {
                if t_max[c] < t_max[ax] {
                    ax = c;
                }
            }
            cur[ax] = (cur[ax] as isize + step[ax]) as usize;
            t_max[ax] += t_delta[ax];
        }
    }
}

const OFFSETS: [(isize, isize, isize); 26] = {
    let mut out = [(0, 0, 0); 26];
    let mut n = 0;
    let mut k = -1;
    while k <= 1 {
        let mut j = -1;
        while j <= 1 {
            let mut i = -1;
            while i <= 1 {
                if !(i == 0 && j == 0 && k == 0) {
                    out[n] = (i, j, k);
                    n += 1;
                }
                i += 1;
            }
            j += 1;
        }
        k += 1;
    }
    out
};

/// Triangle/axis-aligned-box overlap by the separating axis theorem.
pub fn triangle_box_overlap(center: Vec3, half: f64, tri: &[Vec3; 3]) -> bool {
    let v = [tri[0] - center, tri[1] - center, tri[2] - center];
    // box face normals
    for ax in 0..3 {
        let lo = v[0][ax].min(v[1][ax]).min(v[2][ax]);
        let hi = v[0][ax].max(v[1][ax]).max(v[2][ax]);
        if lo > half || hi < -half {
            return false;
        }
    }
    let e = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
    let n = e[0].cross(e[1]);
    // triangle plane
    let r = half * (n.x.abs() + n.y.abs() + n.z.abs());
    if n.dot(v[0]).abs() > r {
        return false;
    }
    let units = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0)];
    for edge in &e {
        for u in &units {
            let axis = u.cross(*edge);
            let p = [axis.dot(v[0]), axis.dot(v[1]), axis.dot(v[2])];
            let lo = p[0].min(p[1]).min(p[2]);
            let hi = p[0].max(p[1]).max(p[2]);
            let r = half * (axis.x.abs() + axis.y.abs() + axis.z.abs());
            if lo > r || hi < -r {
                return false;
            }
        }
    }
    true
}

/// Marks cells touched by a triangle as surface, floods the exterior from
/// the grid border through 6-connected non-surface cells, and labels the
/// rest interior.
pub fn voxelize(mesh: &Mesh, resolution: usize) -> Result<VoxelGrid> {
    if resolution < 8 {
        return Err(Error::arg("voxel resolution must be at least 8"));
    }
    let n = resolution * resolution * resolution;
    let mut grid = VoxelGrid { resolution, cells: vec![Cell::Interior; n] };
    let mut surface = vec![false; n];
    let e = grid.edge();
    // slightly conservative so that faces lying on cell boundaries mark both sides
    let half = 0.5 * e * (1.0 + 1e-9);
    let cell_range = |lo: f64, hi: f64| {
        let a = (((lo - LO) / e).floor() - 1.0).max(0.0) as usize;
        let b = ((((hi - LO) / e).floor() + 1.0).max(0.0) as usize).min(resolution - 1);
        (a.min(resolution - 1), b)
    };
    for f in 0..mesh.faces().len() {
        let tri = mesh.triangle(f);
        let lo = tri[0].min(tri[1]).min(tri[2]);
        let hi = tri[0].max(tri[1]).max(tri[2]);
        let (i0, i1) = cell_range(lo.x, hi.x);
        let (j0, j1) = cell_range(lo.y, hi.y);
        let (k0, k1) = cell_range(lo.z, hi.z);
        for k in k0..=k1 {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let idx = grid.index(i, j, k);
                    if !surface[idx] && triangle_box_overlap(grid.center(idx), half, &tri) {
                        surface[idx] = true;
                    }
                }
            }
        }
    }
    let mut exterior = vec![false; n];
    let mut stack = Vec::new();
    let r = resolution;
    for idx in 0..n {
        let [i, j, k] = grid.coords(idx);
        let border = i == 0 || j == 0 || k == 0 || i == r - 1 || j == r - 1 || k == r - 1;
        if border && !surface[idx] {
            exterior[idx] = true;
            stack.push(idx);
        }
    }
    while let Some(idx) = stack.pop() {
        let [i, j, k] = grid.coords(idx);
        let mut visit = |a: usize, b: usize, c: usize| {
            let m = grid.index(a, b, c);
            if !surface[m] && !exterior[m] {
                exterior[m] = true;
                stack.push(m);
            }
        };
        if i > 0 {
            visit(i - 1, j, k);
        }
        if i + 1 < r {
            visit(i + 1, j, k);
        }
        if j > 0 {
            visit(i, j - 1, k);
        }
        if j + 1 < r {
            visit(i, j + 1, k);
        }
        if k > 0 {
            visit(i, j, k - 1);
        }
        if k + 1 < r {
            visit(i, j, k + 1);
        }
    }
    for idx in 0..n {
        grid.cells[idx] = if surface[idx] {
            Cell::Surface
        } else if exterior[idx] {
            Cell::Exterior
        } else {
            Cell::Interior
        };
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // reversed for a min-heap
    fn cmp(&self, other: &Self) -> CmpOrdering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

/// Starting distances for one joint: the joint's cell (snapped to the
/// nearest solid cell when it lies outside) and every cell in line of sight
/// from it get their straight-line distance; all other cells start at
/// infinity.
pub fn source_distances(grid: &VoxelGrid, joint: Vec3) -> Result<Vec<f64>> {
    let mut start = grid.locate(joint);
    if !grid.is_solid(start) {
        start = nearest_solid(grid, joint).ok_or(Error::EmptyVoxelGrid)?;
    }
    let anchor_center = grid.center(start);
    let (anchor, offset) =
        if grid.locate(joint) == start { (joint, 0.0) } else { (anchor_center, joint.distance(anchor_center)) };
    let mut d = vec![f64::INFINITY; grid.len()];
    for idx in 0..grid.len() {
        if grid.is_solid(idx) && grid.line_of_sight(start, idx) {
            d[idx] = offset + anchor.distance(grid.center(idx));
        }
    }
    Ok(d)
}

fn nearest_solid(grid: &VoxelGrid, p: Vec3) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for idx in 0..grid.len() {
        if grid.is_solid(idx) {
            let d = p.distance_squared(grid.center(idx));
            if best.is_none_or(|(b, _)| d < b) {
                best = Some((d, idx));
            }
        }
    }
    best.map(|b| b.1)
}

/// Relaxes `dist` to shortest-path distances over the solid 26-connected graph.
pub fn dijkstra(grid: &VoxelGrid, dist: &mut [f64]) {
    let mut heap: BinaryHeap<Entry> =
        dist.iter().enumerate().filter(|(_, d)| d.is_finite()).map(|(i, &d)| Entry(d, i)).collect();
    let mut done = vec![false; dist.len()];
    while let Some(Entry(d, u)) = heap.pop() {
        if done[u] || d > dist[u] {
            continue;
        }
        done[u] = true;
        for (v, w) in grid.neighbors(u) {
            if !grid.is_solid(v) || done[v] {
                continue;
            }
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Entry(nd, v));
            }
        }
    }
}

/// Per-cell geodesic distance field from one joint.
pub fn distance_field(grid: &VoxelGrid, joint: Vec3) -> Result<Vec<f64>> {
    let mut d = source_distances(grid, joint)?;
    dijkstra(grid, &mut d);
    Ok(d)
}

/// Solid cells near each vertex, from which vertex distances are read.
fn vertex_cells(grid: &VoxelGrid, vertices: &[Vec3]) -> Result<Vec<Vec<usize>>> {
    vertices
        .iter()
        .map(|&v| {
            let c = grid.locate(v);
            let mut cells: Vec<usize> =
                core::iter::once(c).chain(grid.neighbors(c).map(|(n, _)| n)).filter(|&n| grid.is_solid(n)).collect();
            if cells.is_empty() {
                cells.push(nearest_solid(grid, v).ok_or(Error::EmptyVoxelGrid)?);
            }
            Ok(cells)
        })
        .collect()
}

/// Raw `vertices × joints` geodesic distances. A vertex reads the smallest
/// `D[cell] + ‖v − centre(cell)‖` over solid cells in its 3×3×3 neighbourhood.
pub fn volumetric_geodesic(grid: &VoxelGrid, mesh: &Mesh, skeleton: &Skeleton) -> Result<Matrix> {
    if grid.count(Cell::Exterior) == grid.len() {
        return Err(Error::EmptyVoxelGrid);
    }
    let verts = mesh.vertices();
    let near = vertex_cells(grid, verts)?;
    let mut out = Matrix::zeros(verts.len(), skeleton.joint_count());
    for (j, &joint) in skeleton.joints().iter().enumerate() {
        let field = distance_field(grid, joint)?;
        for (i, (&v, cells)) in verts.iter().zip(&near).enumerate() {
            out[(i, j)] = cells.iter().map(|&c| field[c] + v.distance(grid.center(c))).fold(f64::INFINITY, f64::min);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicPrior {
    /// Row-normalized inverse-power weights.
    pub matrix: SkinMatrix,
    /// Distances the weights were computed from (Euclidean on fallback rows).
    pub distances: Matrix,
    pub joint_mask: Vec<bool>,
    /// Rows with no finite geodesic distance that used Euclidean distances.
    pub fallback_rows: Vec<usize>,
}

impl GeodesicPrior {
    pub fn used_fallback(&self) -> bool {
        !self.fallback_rows.is_empty()
    }
}

/// `G_ij ∝ max(d_ij, floor)^(−sharpness)` over valid joints. Rows whose valid
/// distances are all infinite take the matching row of `euclidean`.
pub fn build_prior(
    raw: &Matrix,
    joint_mask: &[bool],
    sharpness: f64,
    floor: f64,
    euclidean: &Matrix,
) -> Result<GeodesicPrior> {
    if joint_mask.len() != raw.cols() {
        return Err(Error::DimensionMismatch { expected: raw.cols(), found: joint_mask.len() });
    }
    if euclidean.shape() != raw.shape() {
        return Err(Error::DimensionMismatch { expected: raw.rows(), found: euclidean.rows() });
    }
    if !(sharpness > 0.0) || !(floor > 0.0) {
        return Err(Error::arg("sharpness and floor must be positive"));
    }
    if !joint_mask.iter().any(|&m| m) {
        return Err(Error::arg("no valid joints"));
    }
    let mut distances = raw.clone();
    let mut fallback_rows = Vec::new();
    let mut w = Matrix::zeros(raw.rows(), raw.cols());
    for r in 0..raw.rows() {
        if raw.row(r).iter().zip(joint_mask).any(|(d, &m)| m && (d.is_nan() || *d < 0.0)) {
            return Err(Error::arg("negative or NaN distance"));
        }
        if !raw.row(r).iter().zip(joint_mask).any(|(d, &m)| m && d.is_finite()) {
            fallback_rows.push(r);
            distances.row_mut(r).copy_from_slice(euclidean.row(r));
        }
        let row = w.row_mut(r);
        for ((x, &d), &m) in row.iter_mut().zip(distances.row(r)).zip(joint_mask) {
            *x = if m && d.is_finite() { d.max(floor).powf(-sharpness) } else { 0.0 };
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    Ok(GeodesicPrior { matrix: SkinMatrix::new(w)?, distances, joint_mask: joint_mask.to_vec(), fallback_rows })
}

/// Pairwise Euclidean distances between vertices and joints.
pub fn euclidean_distances(vertices: &[Vec3], joints: &[Vec3]) -> Matrix {
    let mut m = Matrix::zeros(vertices.len(), joints.len());
    for (i, v) in vertices.iter().enumerate() {
        for (j, p) in joints.iter().enumerate() {
            m[(i, j)] = v.distance(*p);
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeodesicConfig {
    pub resolution: usize,
    pub sharpness: f64,
}

impl Default for GeodesicConfig {
    fn default() -> Self {
        Self { resolution: 64, sharpness: 2.0 }
    }
}

/// Voxelizes `mesh` and builds the prior for every joint of `skeleton`.
pub fn geodesic_prior(mesh: &Mesh, skeleton: &Skeleton, config: &GeodesicConfig) -> Result<GeodesicPrior> {
    let grid = voxelize(mesh, config.resolution)?;
    let raw = volumetric_geodesic(&grid, mesh, skeleton)?;
    let euclid = euclidean_distances(mesh.vertices(), skeleton.joints());
    build_prior(&raw, &vec![true; skeleton.joint_count()], config.sharpness, grid.edge(), &euclid)
}

/// Keeps each row's `k` geodesically nearest valid joints and renormalizes.
pub fn gvb_baseline(prior: &GeodesicPrior, k: usize) -> Result<SkinMatrix> {
    if k < 1 {
        return Err(Error::arg("k_nearest must be at least 1"));
    }
    let m = prior.matrix.matrix();
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let mut order: Vec<usize> = (0..m.cols()).filter(|&j| prior.joint_mask[j]).collect();
        let d = prior.distances.row(r);
        order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            out[(r, j)] = m[(r, j)];
        }
        if out.row(r).iter().sum::<f64>() == 0.0 {
            out[(r, order[0])] = 1.0;
        }
    }
    SkinMatrix::from_unnormalized(out, &prior.joint_mask, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior_of(rows: &[Vec<f64>], mask: &[bool]) -> GeodesicPrior {
        let raw = Matrix::from_rows(rows).unwrap();
        build_prior(&raw, mask, 2.0, 1e-3, &raw).unwrap()
    }

    #[test]
    fn prior_forced_values() {
        let p = prior_of(&[vec![1.0, 2.0]], &[true, true]);
        assert!((p.matrix.row(0)[0] - 0.8).abs() < 1e-15 && (p.matrix.row(0)[1] - 0.2).abs() < 1e-15);
        let p = prior_of(&[vec![0.3, 0.3, 0.1]], &[true, true, false]);
        assert_eq!(p.matrix.row(0), &[0.5, 0.5, 0.0]);
        let p = prior_of(&[vec![0.7]], &[true]);
        assert_eq!(p.matrix.row(0), &[1.0]);
    }

    #[test]
    fn gvb_k_rules() {
        let p = prior_of(&[vec![1.0, 2.0, 3.0]], &[true, true, true]);
        assert_eq!(gvb_baseline(&p, 1).unwrap().row(0), &[1.0, 0.0, 0.0]);
        let all = gvb_baseline(&p, 5).unwrap();
        for (a, b) in all.row(0).iter().zip(p.matrix.row(0)) {
            assert!((a - b).abs() < 1e-15);
        }
        let p = prior_of(&[vec![1.0, 2.0]], &[true, true]);
        let g = gvb_baseline(&p, 2).unwrap();
        assert!((g.row(0)[0] - 0.8).abs() < 1e-15);
        assert!(gvb_baseline(&p, 0).is_err());
    }

    #[test]
    fn infinite_rows_fall_back() {
        let raw = Matrix::from_rows(&[vec![f64::INFINITY, f64::INFINITY]]).unwrap();
        let eu = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let p = build_prior(&raw, &[true, true], 2.0, 1e-3, &eu).unwrap();
        assert!(p.used_fallback());
        assert!((p.matrix.row(0)[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn overlap_basic() {
        let tri = [Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, -1.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        assert!(triangle_box_overlap(Vec3::ZERO, 0.1, &tri));
        assert!(!triangle_box_overlap(Vec3::new(0.0, 0.0, 0.2), 0.1, &tri));
        assert!(!triangle_box_overlap(Vec3::new(0.9, 0.9, 0.0), 0.1, &tri));
    }

    #[test]
    fn small_resolution_rejected() {
        let m = Mesh::new(
            vec![Vec3::new(-0.2, -0.2, 0.0), Vec3::new(0.2, -0.2, 0.0), Vec3::new(0.0, 0.2, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(voxelize(&m, 7).is_err());
        let g = voxelize(&m, 16).unwrap();
        assert_eq!(g.count(Cell::Interior), 0);
        assert!(g.count(Cell::Surface) > 0);
    }
}
