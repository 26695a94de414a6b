//! Helpers shared by the integration suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rigforge_core::nn::{Gradients, ParamStore};
use rigforge_core::sequencer::{quantize_point, Ordering};
use rigforge_core::geodesic::VoxelGrid;
use rigforge_core::synthgen::{generate, SynthSpec};
use rigforge_core::{Mat3, Mesh, Skeleton, Vec3};

/// Random tree with `n` joints whose quantized cells are all distinct.
pub fn random_tree(rng: &mut impl Rng, n: usize) -> Skeleton {
    let mut joints: Vec<Vec3> = Vec::with_capacity(n);
    let mut cells = BTreeSet::new();
    while joints.len() < n {
        let p = Vec3::new(rng.random_range(-0.5..=0.5), rng.random_range(-0.5..=0.5), rng.random_range(-0.5..=0.5));
        if cells.insert(quantize_point(p).unwrap()) {
            joints.push(p);
        }
    }
    let parent: Vec<Option<usize>> = (0..n).map(|i| (i > 0).then(|| rng.random_range(0..i))).collect();
    let bones = parent.iter().enumerate().filter_map(|(c, p)| p.map(|p| [p, c])).collect();
    Skeleton::new(joints, bones, Some(0), None).unwrap()
}

/// Same skeleton with joints relabelled and bones listed in a random order.
pub fn permute_storage(s: &Skeleton, rng: &mut impl Rng) -> Skeleton {
    let n = s.joint_count();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut joints = vec![Vec3::ZERO; n];
    for (old, &new) in perm.iter().enumerate() {
        joints[new] = s.joints()[old];
    }
    let mut bones: Vec<[usize; 2]> = s.bones().iter().map(|&[a, b]| [perm[a], perm[b]]).collect();
    bones.shuffle(rng);
    Skeleton::new(joints, bones, s.root().map(|r| perm[r]), None).unwrap()
}

/// Checks that `decoded` is `original` up to quantization: one decoded
/// joint per original joint (same quantized cell, per-axis error ≤ 1/256),
/// identical undirected bone sets under that correspondence and, for the
/// hierarchical ordering, the same root and parent map.
pub fn check_round_trip(original: &Skeleton, decoded: &Skeleton, ordering: Ordering) -> Result<(), String> {
    if original.joint_count() != decoded.joint_count() || original.bone_count() != decoded.bone_count() {
        return Err(format!(
            "sizes differ: {}j/{}b vs {}j/{}b",
            original.joint_count(),
            original.bone_count(),
            decoded.joint_count(),
            decoded.bone_count()
        ));
    }
    let cell_of: BTreeMap<[u8; 3], usize> =
        decoded.joints().iter().enumerate().map(|(i, &p)| (quantize_point(p).unwrap(), i)).collect();
    let mut map = Vec::with_capacity(original.joint_count());
    for (i, &p) in original.joints().iter().enumerate() {
        let j = *cell_of.get(&quantize_point(p).unwrap()).ok_or(format!("joint {i} has no decoded counterpart"))?;
        let q = decoded.joints()[j];
        let err = (p.x - q.x).abs().max((p.y - q.y).abs()).max((p.z - q.z).abs());
        if err > 1.0 / 256.0 + 1e-12 {
            return Err(format!("joint {i} off by {err}"));
        }
        map.push(j);
    }
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let want: BTreeSet<_> = original.bones().iter().map(|&[a, b]| key(map[a], map[b])).collect();
    let got: BTreeSet<_> = decoded.bones().iter().map(|&[a, b]| key(a, b)).collect();
    if want != got {
        return Err("bone sets differ".into());
    }
    if ordering == Ordering::Hierarchical {
        if decoded.root() != original.root().map(|r| map[r]) {
            return Err("root differs".into());
        }
        let (po, pd) = (original.parents().ok_or("original is not a tree")?, decoded.parents().ok_or("decoded is not a tree")?);
        for (i, p) in po.iter().enumerate() {
            if pd[map[i]] != p.map(|p| map[p]) {
                return Err(format!("parent of joint {i} differs"));
            }
        }
    }
    Ok(())
}

/// In hierarchical token order, the first joint of every bone after the
/// first is a joint already emitted.
pub fn prefix_closed(tokens: &[u16]) -> bool {
    let interior: Vec<[u16; 3]> = tokens[1..tokens.len() - 1].chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    let mut seen = BTreeSet::new();
    for (b, pair) in interior.chunks(2).enumerate() {
        if b > 0 && !seen.contains(&pair[0]) {
            return false;
        }
        seen.insert(pair[0]);
        seen.insert(pair[1]);
    }
    true
}

/// Central-difference check of `probes` randomly chosen scalars (every
/// tensor is probed at least once). Returns the worst relative error
/// `|fd − an| / max(|fd|, |an|, 1e-6)` and the number of probes.
pub fn finite_difference_check(
    store: &mut ParamStore,
    grads: &Gradients,
    probes: usize,
    rng: &mut impl Rng,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> (f64, usize) {
    let ids: Vec<_> = store.ids().collect();
    let mut picks: Vec<(usize, usize)> = ids.iter().enumerate().map(|(i, &id)| (i, rng.random_range(0..store.get(id).data().len()))).collect();
    while picks.len() < probes {
        let i = rng.random_range(0..ids.len());
        picks.push((i, rng.random_range(0..store.get(ids[i]).data().len())));
    }
    let h = 1e-5;
    let mut worst = 0.0f64;
    for &(i, k) in &picks {
        let id = ids[i];
        let orig = store.get(id).data()[k];
        store.get_mut(id).data_mut()[k] = orig + h;
        let up = loss(store);
        store.get_mut(id).data_mut()[k] = orig - h;
        let down = loss(store);
        store.get_mut(id).data_mut()[k] = orig;
        let fd = (up - down) / (2.0 * h);
        let an = grads.get(id).data()[k];
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
    }
    (worst, picks.len())
}

/// Replaces every parameter by a draw from `N(0, std²)` so that no gradient
/// path is switched off by zero initialisation.
pub fn randomize(store: &mut ParamStore, std: f64, rng: &mut impl Rng) {
    use rand_distr::{Distribution, Normal};
    let d = Normal::new(0.0, std).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = d.sample(rng));
    }
}

/// Closed box with half extents `half`, rotated by `rot` about its centre.
pub fn box_mesh(center: Vec3, half: Vec3, rot: &Mat3) -> Mesh {
    let mut v = Vec::with_capacity(8);
    for i in 0..8 {
        let s = |bit: usize| if i & bit == 0 { -1.0 } else { 1.0 };
        v.push(center + rot.mul_vec(Vec3::new(s(1) * half.x, s(2) * half.y, s(4) * half.z)));
    }
    let quads = [[0, 2, 6, 4], [1, 5, 7, 3], [0, 4, 5, 1], [2, 3, 7, 6], [0, 1, 3, 2], [4, 6, 7, 5]];
    let faces = quads.iter().flat_map(|&[a, b, c, d]| [[a, b, c], [a, c, d]]).collect();
    Mesh::new(v, faces).unwrap()
}

/// Latitude-longitude sphere.
pub fn uv_sphere(center: Vec3, r: f64, rings: usize, segments: usize) -> Mesh {
    use std::f64::consts::{PI, TAU};
    let mut v = vec![center + Vec3::new(0.0, 0.0, r)];
    for i in 1..rings {
        let th = PI * i as f64 / rings as f64;
        for j in 0..segments {
            let ph = TAU * j as f64 / segments as f64;
            v.push(center + Vec3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()) * r);
        }
    }
    v.push(center + Vec3::new(0.0, 0.0, -r));
    let south = v.len() - 1;
    let at = |i: usize, j: usize| 1 + (i - 1) * segments + j % segments;
    let mut faces = Vec::new();
    for j in 0..segments {
        faces.push([0, at(1, j), at(1, j + 1)]);
        faces.push([south, at(rings - 1, j + 1), at(rings - 1, j)]);
    }
    for i in 1..rings - 1 {
        for j in 0..segments {
            faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    Mesh::new(v, faces).unwrap()
}

/// Concatenation of meshes (overlapping closed pieces form a solid union).
pub fn merge(parts: &[Mesh]) -> Mesh {
    let mut v = Vec::new();
    let mut f = Vec::new();
    for m in parts {
        let o = v.len();
        v.extend_from_slice(m.vertices());
        f.extend(m.faces().iter().map(|&[a, b, c]| [a + o, b + o, c + o]));
    }
    Mesh::new(v, f).unwrap()
}

/// Rotation by a uniform angle about a uniformly random axis.
pub fn random_rotation(rng: &mut impl Rng) -> Mat3 {
    use rand_distr::{Distribution, StandardNormal};
    let mut g = || -> f64 { StandardNormal.sample(rng) };
    let axis = Vec3::new(g(), g(), g()).normalized().unwrap_or(Vec3::new(0.0, 0.0, 1.0));
    Mat3::from_axis_angle(axis, rng.random_range(0.0..std::f64::consts::TAU))
}

/// Relaxes every edge of the solid 26-connected grid until nothing changes.
pub fn bellman_ford(grid: &VoxelGrid, mut d: Vec<f64>) -> Vec<f64> {
    let r = grid.resolution() as isize;
    let e = grid.edge();
    loop {
        let mut changed = false;
        for u in 0..grid.len() {
            if !grid.is_solid(u) || !d[u].is_finite() {
                continue;
            }
            let [i, j, k] = grid.coords(u).map(|c| c as isize);
            for di in -1..=1isize {
                for dj in -1..=1isize {
                    for dk in -1..=1isize {
                        let steps = di.abs() + dj.abs() + dk.abs();
                        let (a, b, c) = (i + di, j + dj, k + dk);
                        if steps == 0 || a < 0 || b < 0 || c < 0 || a >= r || b >= r || c >= r {
                            continue;
                        }
                        let v = grid.index(a as usize, b as usize, c as usize);
                        if !grid.is_solid(v) {
                            continue;
                        }
                        let nd = d[u] + e * (steps as f64).sqrt();
                        if nd < d[v] {
                            d[v] = nd;
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            return d;
        }
    }
}

/// Seeds from cells visible along straight solid segments, as the grid graph
/// is augmented with direct edges from the source.
pub fn oracle_field(grid: &VoxelGrid, joint: Vec3) -> Vec<f64> {
    let start = grid.locate(joint);
    assert!(grid.is_solid(start));
    let d = (0..grid.len())
        .map(|c| if grid.is_solid(c) && grid.line_of_sight(start, c) { joint.distance(grid.center(c)) } else { f64::INFINITY })
        .collect();
    bellman_ford(grid, d)
}

pub fn random_shape(rng: &mut impl Rng, i: u64) -> Mesh {
    if i % 2 == 0 {
        generate(&SynthSpec::varied(i, 12 + (i as usize % 8))).unwrap().mesh
    } else {
        let parts: Vec<Mesh> = (0..rng.random_range(1..=3))
            .map(|_| {
                let c = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
                let h = Vec3::new(rng.random_range(0.08..0.25), rng.random_range(0.08..0.25), rng.random_range(0.08..0.25));
                box_mesh(c, h, &random_rotation(rng))
            })
            .collect();
        merge(&parts)
    }
}
