//! Skeleton ⇄ token sequence conversion.
//!
//! Joint coordinates in the normalized cube are quantized to a 128³ grid.
//! Each bone becomes six coordinate tokens, `z y x` of its first joint then
//! `z y x` of its second, and the whole stream is framed by [`BOS`] and
//! [`EOS`]. Two canonical bone orderings are supported:
//!
//! * [`Ordering::Spatial`]: joints sorted by `(z, y, x)`; each bone written
//!   lower index first; bones sorted by `(lower, higher)`.
//! * [`Ordering::Hierarchical`]: joints sorted the same way, then bones
//!   emitted breadth-first from the root, grouped by parent (ascending
//!   parent index) with children ascending inside each group. Bones are
//!   written `(parent, child)`.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Skeleton;
use crate::math::Vec3;

pub type Token = u16;

/// Number of quantization bins per axis; coordinate tokens are `0..128`.
pub const COORD_BINS: u16 = 128;
pub const BOS: Token = 128;
pub const EOS: Token = 129;
pub const PAD: Token = 130;
pub const VOCAB_SIZE: usize = 131;
pub const TOKENS_PER_BONE: usize = 6;

/// Slack allowed outside `[-0.5, 0.5]` before quantization refuses a value.
const CLAMP_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    #[default]
    Spatial,
    Hierarchical,
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ordering::Spatial => "spatial",
            Ordering::Hierarchical => "hierarchical",
        })
    }
}

impl FromStr for Ordering {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(Ordering::Spatial),
            "hierarchical" => Ok(Ordering::Hierarchical),
            other => Err(Error::arg(format!("unknown ordering `{other}`"))),
        }
    }
}

/// `min(127, floor((c + 0.5) · 128))`.
pub fn quantize(c: f64) -> Result<u8> {
    if c.is_nan() {
        return Err(Error::NonFinite("quantize"));
    }
    if !(-0.5 - CLAMP_SLACK..=0.5 + CLAMP_SLACK).contains(&c) {
        return Err(Error::arg(format!("coordinate {c} outside the unit cube")));
    }
    let c = c.clamp(-0.5, 0.5);
    let bin = ((c + 0.5) * f64::from(COORD_BINS)).floor() as i64;
    Ok(bin.clamp(0, i64::from(COORD_BINS) - 1) as u8)
}

/// Centre of `bin`: `(bin + 0.5) / 128 − 0.5`.
pub fn dequantize(bin: u16) -> Result<f64> {
    if bin >= COORD_BINS {
        return Err(Error::arg(format!("bin {bin} out of range")));
    }
    Ok((f64::from(bin) + 0.5) / f64::from(COORD_BINS) - 0.5)
}

pub fn quantize_point(p: Vec3) -> Result<[u8; 3]> {
    Ok([quantize(p.x)?, quantize(p.y)?, quantize(p.z)?])
}

fn dequantize_point(q: [u8; 3]) -> Vec3 {
    let d = |b: u8| (f64::from(b) + 0.5) / f64::from(COORD_BINS) - 0.5;
    Vec3::new(d(q[0]), d(q[1]), d(q[2]))
}

fn zyx_key(q: &[u8; 3]) -> (u8, u8, u8) {
    (q[2], q[1], q[0])
}

/// Skeleton on the integer grid. Joints are `[x, y, z]` bins and are unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedSkeleton {
    pub joints: Vec<[u8; 3]>,
    pub bones: Vec<[usize; 2]>,
    pub root: Option<usize>,
}

impl QuantizedSkeleton {
    /// Quantizes every joint and merges joints that land in the same cell.
    /// Bones are remapped; self-loops and duplicate bones created by the
    /// merge are dropped.
    pub fn from_skeleton(skeleton: &Skeleton) -> Result<Self> {
        let mut cells: BTreeMap<[u8; 3], usize> = BTreeMap::new();
        let mut joints = Vec::new();
        let mut remap = Vec::with_capacity(skeleton.joint_count());
        for &j in skeleton.joints() {
            let q = quantize_point(j)?;
            let idx = *cells.entry(q).or_insert_with(|| {
                joints.push(q);
                joints.len() - 1
            });
            remap.push(idx);
        }
        let mut bones: Vec<[usize; 2]> = Vec::new();
        for &[a, b] in skeleton.bones() {
            let (a, b) = (remap[a], remap[b]);
            if a == b {
                continue;
            }
            if bones.iter().any(|&[x, y]| (x == a && y == b) || (x == b && y == a)) {
                continue;
            }
            bones.push([a, b]);
        }
        if bones.is_empty() {
            return Err(Error::InvalidSkeleton("no bones left after merging quantized joints".into()));
        }
        Ok(Self { joints, bones, root: skeleton.root().map(|r| remap[r]) })
    }

    /// Sorts joints ascending by `(z, y, x)` and remaps bone indices.
    fn sorted(&self) -> QuantizedSkeleton {
        let mut order: Vec<usize> = (0..self.joints.len()).collect();
        order.sort_by_key(|&i| zyx_key(&self.joints[i]));
        let mut new_index = vec![0usize; order.len()];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }
        QuantizedSkeleton {
            joints: order.iter().map(|&i| self.joints[i]).collect(),
            bones: self.bones.iter().map(|&[a, b]| [new_index[a], new_index[b]]).collect(),
            root: self.root.map(|r| new_index[r]),
        }
    }
}

/// Joints in canonical order with bones in emission order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderedBones {
    pub joints: Vec<[u8; 3]>,
    pub bones: Vec<[usize; 2]>,
}

pub fn order_spatial(skeleton: &QuantizedSkeleton) -> OrderedBones {
    let sorted = skeleton.sorted();
    let mut bones: Vec<[usize; 2]> =
        sorted.bones.iter().map(|&[a, b]| [a.min(b), a.max(b)]).collect();
    bones.sort_unstable();
    OrderedBones { joints: sorted.joints, bones }
}

pub fn order_hierarchical(skeleton: &QuantizedSkeleton) -> Result<OrderedBones> {
    let sorted = skeleton.sorted();
    let root = sorted
        .root
        .ok_or_else(|| Error::arg("hierarchical ordering needs a root joint"))?;
    let n = sorted.joints.len();
    let mut adj = vec![Vec::new(); n];
    for &[a, b] in &sorted.bones {
        adj[a].push(b);
        adj[b].push(a);
    }
    if adj[root].is_empty() {
        return Err(Error::NotATree("root joint has no bones".into()));
    }
    let mut children = vec![Vec::new(); n];
    let mut visited = vec![false; n];
    visited[root] = true;
    let mut queue = VecDeque::from([root]);
    let mut tree_edges = 0;
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if !visited[w] {
                visited[w] = true;
                children[u].push(w);
                tree_edges += 1;
                queue.push_back(w);
            }
        }
    }
    if let Some(j) = visited.iter().position(|&v| !v) {
        return Err(Error::NotATree(format!("joint {j} is not connected to the root")));
    }
    if tree_edges != sorted.bones.len() {
        return Err(Error::NotATree("bone graph contains a cycle".into()));
    }
    for c in &mut children {
        c.sort_unstable();
    }

    let mut bones = Vec::with_capacity(sorted.bones.len());
    let mut layer = vec![root];
    while !layer.is_empty() {
        layer.sort_unstable();
        let mut next = Vec::new();
        for &p in &layer {
            for &c in &children[p] {
                bones.push([p, c]);
                next.push(c);
            }
        }
        layer = next;
    }
    Ok(OrderedBones { joints: sorted.joints, bones })
}

/// Framed token stream for one skeleton.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    pub ordering: Ordering,
}

impl TokenSequence {
    /// Coordinate tokens between the framing tokens.
    pub fn interior(&self) -> &[Token] {
        let start = usize::from(self.tokens.first() == Some(&BOS));
        let end = self.tokens.iter().position(|&t| t == EOS).unwrap_or(self.tokens.len());
        &self.tokens[start..end.max(start)]
    }

    pub fn bone_count(&self) -> usize {
        self.interior().len() / TOKENS_PER_BONE
    }

    pub fn is_complete(&self) -> bool {
        self.tokens.first() == Some(&BOS) && self.tokens.last() == Some(&EOS)
    }

    /// Corpus line: whitespace-separated ids with literal `BOS`/`EOS`/`PAD`.
    pub fn to_line(&self) -> String {
        let mut out = String::new();
        for (i, &t) in self.tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            match t {
                BOS => out.push_str("BOS"),
                EOS => out.push_str("EOS"),
                PAD => out.push_str("PAD"),
                t => out.push_str(&t.to_string()),
            }
        }
        out
    }

    pub fn parse_line(line: &str, ordering: Ordering) -> Result<Self> {
        let mut tokens = Vec::new();
        for (position, word) in line.split_whitespace().enumerate() {
            let t = match word {
                "BOS" => BOS,
                "EOS" => EOS,
                "PAD" => PAD,
                w => match w.parse::<u16>() {
                    Ok(v) if v < COORD_BINS => v,
                    Ok(v) => return Err(Error::InvalidToken { token: v, position }),
                    Err(_) => return Err(Error::arg(format!("bad token `{w}` at position {position}"))),
                },
            };
            tokens.push(t);
        }
        Ok(Self { tokens, ordering })
    }
}

fn emit(ordered: &OrderedBones, ordering: Ordering) -> TokenSequence {
    let mut tokens = Vec::with_capacity(ordered.bones.len() * TOKENS_PER_BONE + 2);
    tokens.push(BOS);
    for &[a, b] in &ordered.bones {
        for j in [a, b] {
            let [x, y, z] = ordered.joints[j];
            tokens.extend([Token::from(z), Token::from(y), Token::from(x)]);
        }
    }
    tokens.push(EOS);
    TokenSequence { tokens, ordering }
}

/// Quantize, merge, order and frame a normalized skeleton.
pub fn tokenize(skeleton: &Skeleton, ordering: Ordering) -> Result<TokenSequence> {
    let q = QuantizedSkeleton::from_skeleton(skeleton)?;
    let ordered = match ordering {
        Ordering::Spatial => order_spatial(&q),
        Ordering::Hierarchical => order_hierarchical(&q)?,
    };
    Ok(emit(&ordered, ordering))
}

/// Result of decoding a token stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub skeleton: Skeleton,
    /// Trailing coordinate tokens that did not complete a bone.
    pub dangling_tokens: usize,
    /// Whether an [`EOS`] token closed the stream.
    pub terminated: bool,
    /// Set when bones had to be dropped or re-oriented to get a valid skeleton.
    pub repaired: bool,
}

impl Decoded {
    /// Decoded without truncation, dangling tokens or repairs.
    pub fn is_clean(&self) -> bool {
        self.terminated && self.dangling_tokens == 0 && !self.repaired
    }
}

pub fn detokenize(tokens: &[Token], ordering: Ordering) -> Result<Decoded> {
    let start = usize::from(tokens.first() == Some(&BOS));
    let mut coords = Vec::new();
    let mut terminated = false;
    for (position, &t) in tokens.iter().enumerate().skip(start) {
        match t {
            EOS => {
                terminated = true;
                break;
            }
            t if t < COORD_BINS => coords.push(t as u8),
            t => return Err(Error::InvalidToken { token: t, position }),
        }
    }
    let dangling_tokens = coords.len() % TOKENS_PER_BONE;
    let mut repaired = false;

    let mut cells: BTreeMap<[u8; 3], usize> = BTreeMap::new();
    let mut joints: Vec<[u8; 3]> = Vec::new();
    let mut intern = |q: [u8; 3]| {
        *cells.entry(q).or_insert_with(|| {
            joints.push(q);
            joints.len() - 1
        })
    };
    let mut raw_bones: Vec<[usize; 2]> = Vec::new();
    for group in coords.chunks_exact(TOKENS_PER_BONE) {
        let a = intern([group[2], group[1], group[0]]);
        let b = intern([group[5], group[4], group[3]]);
        if a == b || raw_bones.iter().any(|&[x, y]| (x == a && y == b) || (x == b && y == a)) {
            repaired = true;
            continue;
        }
        raw_bones.push([a, b]);
    }
    if raw_bones.is_empty() {
        return Err(Error::EmptySequence);
    }
    let positions: Vec<Vec3> = joints.iter().map(|&q| dequantize_point(q)).collect();

    let skeleton = match ordering {
        Ordering::Spatial => {
            // relabel joints in (z, y, x) order and sort the (lower, higher) bone pairs
            let mut order: Vec<usize> = (0..joints.len()).collect();
            order.sort_by_key(|&i| {
                let [x, y, z] = joints[i];
                [z, y, x]
            });
            let mut rank = vec![0; joints.len()];
            for (r, &i) in order.iter().enumerate() {
                rank[i] = r;
            }
            let mut bones: Vec<[usize; 2]> = raw_bones
                .iter()
                .map(|&[a, b]| [rank[a].min(rank[b]), rank[a].max(rank[b])])
                .collect();
            bones.sort_unstable();
            Skeleton::new(order.iter().map(|&i| positions[i]).collect(), bones, None, None)?
        }
        Ordering::Hierarchical => {
            let root = raw_bones[0][0];
            let mut seen = vec![false; joints.len()];
            let mut parent = vec![None; joints.len()];
            seen[root] = true;
            let mut bones = Vec::with_capacity(raw_bones.len());
            for [p, c] in raw_bones {
                match (seen[p], seen[c]) {
                    (true, false) => {
                        parent[c] = Some(p);
                        bones.push([p, c]);
                    }
                    (false, true) => {
                        parent[p] = Some(c);
                        bones.push([c, p]);
                        repaired = true;
                    }
                    (true, true) => {
                        repaired = true;
                        continue;
                    }
                    (false, false) => {
                        // Starts a separate tree; `p` becomes its root.
                        parent[c] = Some(p);
                        bones.push([p, c]);
                        repaired = true;
                    }
                }
                seen[p] = true;
                seen[c] = true;
            }
            Skeleton::new(positions, bones, Some(root), Some(parent))?
        }
    };
    Ok(Decoded { skeleton, dangling_tokens, terminated, repaired })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bin_center(b: u8) -> f64 {
        dequantize(u16::from(b)).unwrap()
    }

    fn skel(joints: &[[u8; 3]], bones: &[[usize; 2]], root: Option<usize>) -> Skeleton {
        let pts = joints
            .iter()
            .map(|q| Vec3::new(bin_center(q[0]), bin_center(q[1]), bin_center(q[2])))
            .collect();
        Skeleton::new(pts, bones.to_vec(), root, None).unwrap()
    }

    #[test]
    fn quantize_boundaries() {
        assert_eq!(quantize(-0.5).unwrap(), 0);
        assert_eq!(quantize(0.5).unwrap(), 127);
        assert_eq!(quantize(0.0).unwrap(), 64);
        assert_eq!(quantize(0.5 + 5e-10).unwrap(), 127);
        assert!(quantize(f64::NAN).is_err());
        assert!(quantize(0.6).is_err());
    }

    #[test]
    fn dequantize_values() {
        assert_eq!(dequantize(0).unwrap(), -0.49609375);
        assert_eq!(dequantize(64).unwrap(), 0.00390625);
        assert!(dequantize(128).is_err());
    }

    #[test]
    fn quantize_round_trip_half_bin() {
        for i in 0..=10_000 {
            let c = -0.5 + i as f64 / 10_000.0;
            let back = dequantize(u16::from(quantize(c).unwrap())).unwrap();
            assert!((back - c).abs() <= 1.0 / 256.0 + 1e-15, "{c}");
        }
    }

    #[test]
    fn spatial_single_bone() {
        let s = skel(&[[64, 64, 127], [64, 64, 0]], &[[0, 1]], None);
        let q = QuantizedSkeleton::from_skeleton(&s).unwrap();
        let o = order_spatial(&q);
        assert_eq!(o.joints, vec![[64, 64, 0], [64, 64, 127]]);
        assert_eq!(o.bones, vec![[0, 1]]);
    }

    #[test]
    fn tokenize_single_bone_example() {
        // joints at (z,y,x) bins (64,64,64) and (127,64,64)
        let s = skel(&[[64, 64, 127], [64, 64, 64]], &[[0, 1]], None);
        let t = tokenize(&s, Ordering::Spatial).unwrap();
        assert_eq!(t.tokens, vec![BOS, 64, 64, 64, 127, 64, 64, EOS]);
    }

    #[test]
    fn spatial_chain_order_independent() {
        let a = skel(&[[0, 0, 10], [0, 0, 20], [0, 0, 30]], &[[0, 1], [1, 2]], Some(0));
        let b = skel(&[[0, 0, 30], [0, 0, 20], [0, 0, 10]], &[[2, 1], [1, 0]], Some(2));
        assert_eq!(tokenize(&a, Ordering::Spatial).unwrap(), tokenize(&b, Ordering::Spatial).unwrap());
        assert_eq!(
            tokenize(&a, Ordering::Hierarchical).unwrap(),
            tokenize(&b, Ordering::Hierarchical).unwrap()
        );
    }

    #[test]
    fn hierarchical_two_children() {
        // After sorting, root sits at index 0 and children at 2 and 5.
        let joints = [[0, 0, 0], [0, 0, 10], [0, 0, 20], [0, 0, 30], [0, 0, 40], [0, 0, 50]];
        let bones = [[0, 5], [0, 2], [2, 1], [5, 3], [5, 4]];
        let s = skel(&joints, &bones, Some(0));
        let o = order_hierarchical(&QuantizedSkeleton::from_skeleton(&s).unwrap()).unwrap();
        assert_eq!(&o.bones[..2], &[[0, 2], [0, 5]]);
    }

    #[test]
    fn hierarchical_chain() {
        let s = skel(&[[0, 0, 5], [0, 0, 9], [0, 0, 70]], &[[1, 0], [1, 2]], Some(0));
        let o = order_hierarchical(&QuantizedSkeleton::from_skeleton(&s).unwrap()).unwrap();
        assert_eq!(o.bones, vec![[0, 1], [1, 2]]);
    }

    #[test]
    fn hierarchical_two_layer_example() {
        // Joint storage is already z-sorted, so indices survive sorting:
        // root 0, children {1, 4}; 4 → {2, 3}; 1 → {5}.
        let joints = [[0, 0, 0], [0, 0, 10], [0, 0, 20], [0, 0, 30], [0, 0, 40], [0, 0, 50]];
        let bones = [[4, 3], [0, 4], [1, 5], [4, 2], [0, 1]];
        let s = skel(&joints, &bones, Some(0));
        let o = order_hierarchical(&QuantizedSkeleton::from_skeleton(&s).unwrap()).unwrap();
        assert_eq!(o.bones, vec![[0, 1], [0, 4], [1, 5], [4, 2], [4, 3]]);
    }

    #[test]
    fn hierarchical_rejects_cycles_and_islands() {
        let tri = skel(&[[0, 0, 0], [0, 0, 10], [0, 10, 0]], &[[0, 1], [1, 2], [2, 0]], Some(0));
        assert!(matches!(tokenize(&tri, Ordering::Hierarchical), Err(Error::NotATree(_))));
        let split = skel(&[[0, 0, 0], [0, 0, 10], [0, 10, 0], [10, 0, 0]], &[[0, 1], [2, 3]], Some(0));
        assert!(matches!(tokenize(&split, Ordering::Hierarchical), Err(Error::NotATree(_))));
        let no_root = skel(&[[0, 0, 0], [0, 0, 10]], &[[0, 1]], None);
        assert!(tokenize(&no_root, Ordering::Hierarchical).is_err());
    }

    #[test]
    fn merge_collapses_duplicate_cells() {
        let eps = 1e-4;
        let base = bin_center(10);
        let pts = vec![
            Vec3::new(base, 0.0, 0.0),
            Vec3::new(base + eps, 0.0, 0.0),
            Vec3::new(0.3, 0.0, 0.0),
        ];
        let s = Skeleton::new(pts, vec![[0, 1], [1, 2], [0, 2]], None, None).unwrap();
        let q = QuantizedSkeleton::from_skeleton(&s).unwrap();
        assert_eq!(q.joints.len(), 2);
        assert_eq!(q.bones, vec![[0, 1]]);
    }

    #[test]
    fn dangling_tokens_dropped() {
        let d = detokenize(&[BOS, 1, 2, 3, 4, 5, 6, 7, EOS], Ordering::Spatial).unwrap();
        assert_eq!(d.skeleton.bone_count(), 1);
        assert_eq!(d.dangling_tokens, 1);
        assert!(!d.is_clean());
    }

    #[test]
    fn eos_before_bone_is_error() {
        assert_eq!(detokenize(&[BOS, 1, 2, EOS], Ordering::Spatial).unwrap_err(), Error::EmptySequence);
        assert_eq!(detokenize(&[BOS, EOS], Ordering::Hierarchical).unwrap_err(), Error::EmptySequence);
    }

    #[test]
    fn invalid_interior_token() {
        let err = detokenize(&[BOS, 1, 2, PAD, 4, 5, 6, EOS], Ordering::Spatial).unwrap_err();
        assert_eq!(err, Error::InvalidToken { token: PAD, position: 3 });
    }

    #[test]
    fn hierarchical_repair_reorients() {
        // second bone names its child first: (c, a) where a is already known
        let d = detokenize(&[BOS, 0, 0, 0, 9, 0, 0, 20, 0, 0, 9, 0, 0, EOS], Ordering::Hierarchical).unwrap();
        assert!(d.repaired);
        let p = d.skeleton.parent_map().unwrap();
        assert_eq!(p, &[None, Some(0), Some(1)]);
    }

    #[test]
    fn line_format_round_trip() {
        let t = TokenSequence { tokens: vec![BOS, 1, 2, 3, 4, 5, 6, EOS], ordering: Ordering::Spatial };
        assert_eq!(t.to_line(), "BOS 1 2 3 4 5 6 EOS");
        assert_eq!(TokenSequence::parse_line(&t.to_line(), Ordering::Spatial).unwrap(), t);
        assert!(TokenSequence::parse_line("BOS 300 EOS", Ordering::Spatial).is_err());
    }
}
