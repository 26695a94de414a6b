//! Shape-conditioned autoregressive skeleton model.
//!
//! A point cloud is reduced to a fixed number of shape tokens: farthest
//! point sampling picks group centres, every point joins its nearest centre,
//! a per-point MLP is mean-pooled per group and one extra global token pools
//! all groups. The shape tokens are prepended to the embedded skeleton
//! tokens of a small decoder-only transformer (pre-norm blocks, learned
//! positions, causal attention) trained with next-token cross-entropy.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Skeleton};
use crate::math::{Mat3, Matrix, Vec3};
use crate::nn::{Adam, Gradients, ParamId, ParamStore, Tape, Var};
use crate::sequencer::{self, Ordering, Token, TokenSequence, BOS, COORD_BINS, EOS, PAD, TOKENS_PER_BONE, VOCAB_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeqModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub mlp_ratio: usize,
    /// Group tokens plus one global token.
    pub shape_tokens: usize,
    /// Points expected by the shape encoder.
    pub point_count: usize,
    /// Longest skeleton (in bones) the context has room for.
    pub max_bones: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for SeqModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            width: 128,
            mlp_ratio: 4,
            shape_tokens: 257,
            point_count: 8192,
            max_bones: 100,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl SeqModelConfig {
    pub fn context_len(&self) -> usize {
        self.shape_tokens + TOKENS_PER_BONE * self.max_bones + 2
    }

    pub fn groups(&self) -> usize {
        self.shape_tokens - 1
    }

    fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.width == 0 || self.mlp_ratio == 0 {
            return Err(Error::arg("model dimensions must be positive"));
        }
        if self.width % self.heads != 0 {
            return Err(Error::arg("width must be divisible by heads"));
        }
        if self.shape_tokens < 2 {
            return Err(Error::arg("need at least one group token plus the global token"));
        }
        if self.point_count < self.groups() {
            return Err(Error::arg("fewer points than encoder groups"));
        }
        if self.max_bones == 0 {
            return Err(Error::arg("max_bones must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Block {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w_fc: ParamId,
    b_fc: ParamId,
    w_proj: ParamId,
    b_proj: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    enc_w1: ParamId,
    enc_b1: ParamId,
    enc_w2: ParamId,
    enc_wc: ParamId,
    enc_b2: ParamId,
    enc_wg: ParamId,
    enc_bg: ParamId,
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<Block>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    w_out: ParamId,
    b_out: ParamId,
}

fn build(config: &SeqModelConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Layout {
    let w = config.width;
    let std = config.init_std;
    let fan = |n: usize| 1.0 / (n as f64).sqrt();
    let enc_w1 = store.add_normal("enc.w1", 6, w, fan(6), rng);
    let enc_b1 = store.add_filled("enc.b1", 1, w, 0.0);
    let enc_w2 = store.add_normal("enc.w2", w, w, fan(w), rng);
    let enc_wc = store.add_normal("enc.wc", 3, w, fan(3), rng);
    let enc_b2 = store.add_filled("enc.b2", 1, w, 0.0);
    let enc_wg = store.add_normal("enc.wg", w, w, fan(w), rng);
    let enc_bg = store.add_filled("enc.bg", 1, w, 0.0);
    let tok_emb = store.add_normal("tok_emb", VOCAB_SIZE, w, std, rng);
    let pos_emb = store.add_normal("pos_emb", config.context_len(), w, std, rng);
    let hidden = w * config.mlp_ratio;
    let blocks = (0..config.layers)
        .map(|l| Block {
            ln1_g: store.add_filled(format!("h{l}.ln1.g"), 1, w, 1.0),
            ln1_b: store.add_filled(format!("h{l}.ln1.b"), 1, w, 0.0),
            wq: store.add_normal(format!("h{l}.attn.wq"), w, w, std, rng),
            bq: store.add_filled(format!("h{l}.attn.bq"), 1, w, 0.0),
            wk: store.add_normal(format!("h{l}.attn.wk"), w, w, std, rng),
            bk: store.add_filled(format!("h{l}.attn.bk"), 1, w, 0.0),
            wv: store.add_normal(format!("h{l}.attn.wv"), w, w, std, rng),
            bv: store.add_filled(format!("h{l}.attn.bv"), 1, w, 0.0),
            wo: store.add_normal(format!("h{l}.attn.wo"), w, w, std, rng),
            bo: store.add_filled(format!("h{l}.attn.bo"), 1, w, 0.0),
            ln2_g: store.add_filled(format!("h{l}.ln2.g"), 1, w, 1.0),
            ln2_b: store.add_filled(format!("h{l}.ln2.b"), 1, w, 0.0),
            w_fc: store.add_normal(format!("h{l}.mlp.w_fc"), w, hidden, std, rng),
            b_fc: store.add_filled(format!("h{l}.mlp.b_fc"), 1, hidden, 0.0),
            w_proj: store.add_normal(format!("h{l}.mlp.w_proj"), hidden, w, std, rng),
            b_proj: store.add_filled(format!("h{l}.mlp.b_proj"), 1, w, 0.0),
        })
        .collect();
    Layout {
        enc_w1,
        enc_b1,
        enc_w2,
        enc_wc,
        enc_b2,
        enc_wg,
        enc_bg,
        tok_emb,
        pos_emb,
        blocks,
        lnf_g: store.add_filled("lnf.g", 1, w, 1.0),
        lnf_b: store.add_filled("lnf.b", 1, w, 0.0),
        w_out: store.add_normal("w_out", w, VOCAB_SIZE, std, rng),
        b_out: store.add_filled("b_out", 1, VOCAB_SIZE, 0.0),
    }
}

/// Encoder and transformer weights together with their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: SeqModelConfig,
    store: ParamStore,
    layout: Layout,
}

impl ModelParams {
    /// Random initialization, deterministic in `config.seed`.
    pub fn init(config: SeqModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let layout = build(&config, &mut store, &mut rng);
        Ok(Self { config, store, layout })
    }

    /// Rebuilds from a stored parameter set, checking names and shapes.
    pub fn from_store(config: SeqModelConfig, store: ParamStore) -> Result<Self> {
        let reference = Self::init(config)?;
        check_same_layout(&reference.store, &store)?;
        Ok(Self { config: reference.config, store, layout: reference.layout })
    }

    pub fn config(&self) -> &SeqModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Every tensor set to zero.
    pub fn zeroed(&self) -> Self {
        let mut p = self.clone();
        for id in p.store.ids().collect::<Vec<_>>() {
            p.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        p
    }
}

pub(crate) fn check_same_layout(reference: &ParamStore, store: &ParamStore) -> Result<()> {
    if reference.len() != store.len() {
        return Err(Error::DimensionMismatch { expected: reference.len(), found: store.len() });
    }
    for ((rn, rm), (n, m)) in reference.iter().zip(store.iter()) {
        if rn != n || rm.shape() != m.shape() {
            return Err(Error::arg(format!("parameter `{n}` does not match expected `{rn}` {:?}", rm.shape())));
        }
        if !m.is_finite() {
            return Err(Error::NonFinite("parameters"));
        }
    }
    Ok(())
}

/// Points with precomputed farthest-point groups.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeInput {
    pub points: Vec<Vec3>,
    pub centers: Vec<Vec3>,
    pub assignment: Vec<usize>,
}

impl ShapeInput {
    pub fn new(points: &[Vec3], groups: usize) -> Result<Self> {
        if groups == 0 || points.len() < groups {
            return Err(Error::arg(format!("cannot form {groups} groups from {} points", points.len())));
        }
        let center_idx = farthest_point_sampling(points, groups);
        let centers: Vec<Vec3> = center_idx.iter().map(|&i| points[i]).collect();
        let assignment = points
            .iter()
            .map(|&p| {
                let mut best = (f64::INFINITY, 0);
                for (g, &c) in centers.iter().enumerate() {
                    let d = p.distance_squared(c);
                    if d < best.0 {
                        best = (d, g);
                    }
                }
                best.1
            })
            .collect();
        Ok(Self { points: points.to_vec(), centers, assignment })
    }

    pub fn from_cloud(cloud: &PointCloud, config: &SeqModelConfig) -> Result<Self> {
        if cloud.len() != config.point_count {
            return Err(Error::DimensionMismatch { expected: config.point_count, found: cloud.len() });
        }
        Self::new(&cloud.points, config.groups())
    }

    /// Applies a similarity transform to points and centres. Groups are
    /// unchanged since nearest-centre assignment is similarity invariant.
    pub fn transformed(&self, f: impl Fn(Vec3) -> Vec3) -> Self {
        Self {
            points: self.points.iter().map(|&p| f(p)).collect(),
            centers: self.centers.iter().map(|&p| f(p)).collect(),
            assignment: self.assignment.clone(),
        }
    }
}

/// Indices of `k` points chosen by farthest point sampling from point 0.
pub fn farthest_point_sampling(points: &[Vec3], k: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(k);
    if points.is_empty() || k == 0 {
        return chosen;
    }
    let mut dist = vec![f64::INFINITY; points.len()];
    let mut current = 0;
    for _ in 0..k.min(points.len()) {
        chosen.push(current);
        let c = points[current];
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in points.iter().enumerate() {
            let d = p.distance_squared(c);
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best.0 {
                best = (dist[i], i);
            }
        }
        current = best.1;
    }
    chosen
}

/// Fixed-length continuous shape features, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTokens(pub Matrix);

fn encode_on_tape(tape: &mut Tape, lay: &Layout, input: &ShapeInput) -> Var {
    let n = input.points.len();
    let mut x = Matrix::zeros(n, 6);
    for (i, (&p, &g)) in input.points.iter().zip(&input.assignment).enumerate() {
        let c = input.centers[g];
        x.row_mut(i).copy_from_slice(&[p.x - c.x, p.y - c.y, p.z - c.z, p.x, p.y, p.z]);
    }
    let mut centers = Matrix::zeros(input.centers.len(), 3);
    for (i, c) in input.centers.iter().enumerate() {
        centers.row_mut(i).copy_from_slice(&c.to_array());
    }
    let x = tape.input(x);
    let h = tape.linear(x, lay.enc_w1, lay.enc_b1);
    let h = tape.silu(h);
    let pooled = tape.segment_mean(h, &input.assignment, input.centers.len());
    let w2 = tape.param(lay.enc_w2);
    let t = tape.matmul(pooled, w2);
    let c = tape.input(centers);
    let wc = tape.param(lay.enc_wc);
    let ct = tape.matmul(c, wc);
    let t = tape.add(t, ct);
    let b2 = tape.param(lay.enc_b2);
    let groups = tape.add_row(t, b2);
    let mean = tape.mean_rows(groups);
    let global = tape.linear(mean, lay.enc_wg, lay.enc_bg);
    tape.concat_rows(&[groups, global])
}

/// Runs the shape encoder.
pub fn encode_shape(points: &PointCloud, params: &ModelParams) -> Result<ShapeTokens> {
    let input = ShapeInput::from_cloud(points, &params.config)?;
    Ok(encode_input(&input, params))
}

pub fn encode_input(input: &ShapeInput, params: &ModelParams) -> ShapeTokens {
    let mut tape = Tape::new(&params.store);
    let v = encode_on_tape(&mut tape, &params.layout, input);
    ShapeTokens(tape.value(v).clone())
}

fn ln_affine(tape: &mut Tape, x: Var, g: ParamId, b: ParamId) -> Var {
    let h = tape.layer_norm(x);
    let g = tape.param(g);
    let h = tape.mul_row(h, g);
    let b = tape.param(b);
    tape.add_row(h, b)
}

/// Logit rows for `[BOS] ++ prefix`, one per skeleton position.
fn logits_on_tape(tape: &mut Tape, params: &ModelParams, shape: Var, prefix: &[Token]) -> Result<Var> {
    let cfg = &params.config;
    let lay = &params.layout;
    let s = tape.value(shape).rows();
    let len = s + prefix.len() + 1;
    if len > cfg.context_len() {
        return Err(Error::ContextOverflow { len, context: cfg.context_len() });
    }
    let mut ids = Vec::with_capacity(prefix.len() + 1);
    ids.push(usize::from(BOS));
    for (position, &t) in prefix.iter().enumerate() {
        if usize::from(t) >= VOCAB_SIZE {
            return Err(Error::InvalidToken { token: t, position });
        }
        ids.push(usize::from(t));
    }
    let tok = tape.param(lay.tok_emb);
    let emb = tape.gather(tok, &ids);
    let mut x = tape.concat_rows(&[shape, emb]);
    let pos = tape.param(lay.pos_emb);
    let positions: Vec<usize> = (0..len).collect();
    let pos = tape.gather(pos, &positions);
    x = tape.add(x, pos);
    for b in &lay.blocks {
        let h = ln_affine(tape, x, b.ln1_g, b.ln1_b);
        let q = tape.linear(h, b.wq, b.bq);
        let k = tape.linear(h, b.wk, b.bk);
        let v = tape.linear(h, b.wv, b.bv);
        let a = tape.attention(q, k, v, cfg.heads, true);
        let a = tape.linear(a, b.wo, b.bo);
        x = tape.add(x, a);
        let h = ln_affine(tape, x, b.ln2_g, b.ln2_b);
        let m = tape.linear(h, b.w_fc, b.b_fc);
        let m = tape.gelu(m);
        let m = tape.linear(m, b.w_proj, b.b_proj);
        x = tape.add(x, m);
    }
    let x = tape.slice_rows(x, s, len);
    let x = ln_affine(tape, x, lay.lnf_g, lay.lnf_b);
    Ok(tape.linear(x, lay.w_out, lay.b_out))
}

/// Next-token logits after `BOS` and each token of `prefix`
/// (`prefix.len() + 1` rows of [`VOCAB_SIZE`] columns).
pub fn forward_logits(shape: &ShapeTokens, prefix: &[Token], params: &ModelParams) -> Result<Matrix> {
    check_shape(shape, params)?;
    let mut tape = Tape::new(&params.store);
    let s = tape.input(shape.0.clone());
    let out = logits_on_tape(&mut tape, params, s, prefix)?;
    Ok(tape.value(out).clone())
}

fn check_shape(shape: &ShapeTokens, params: &ModelParams) -> Result<()> {
    let cfg = &params.config;
    if shape.0.shape() != (cfg.shape_tokens, cfg.width) {
        return Err(Error::DimensionMismatch { expected: cfg.shape_tokens * cfg.width, found: shape.0.data().len() });
    }
    if !shape.0.is_finite() {
        return Err(Error::NonFinite("shape tokens"));
    }
    Ok(())
}

/// One training pair: grouped points and a framed (possibly PAD-padded) sequence.
#[derive(Debug, Clone, Copy)]
pub struct SeqExample<'a> {
    pub shape: &'a ShapeInput,
    pub tokens: &'a [Token],
}

/// Splits a framed sequence into model input (after BOS) and targets.
fn split_sequence(tokens: &[Token]) -> Result<(&[Token], Vec<Option<usize>>)> {
    if tokens.first() != Some(&BOS) {
        return Err(Error::arg("training sequence must start with BOS"));
    }
    let end = tokens.iter().rposition(|&t| t != PAD).map_or(0, |i| i + 1);
    let body = &tokens[1..end.max(1)];
    let targets = body.iter().map(|&t| (t != PAD).then_some(usize::from(t))).collect();
    // the last target has no successor input
    let inputs = &body[..body.len().saturating_sub(1)];
    Ok((inputs, targets))
}

/// Mean next-token cross-entropy over all supervised positions of the batch,
/// with gradients when `grads` is given.
fn batch_objective(params: &ModelParams, batch: &[SeqExample], mut grads: Option<&mut Gradients>) -> Result<f64> {
    let mut split = Vec::with_capacity(batch.len());
    let mut supervised = 0usize;
    for ex in batch {
        let (inputs, targets) = split_sequence(ex.tokens)?;
        supervised += targets.iter().filter(|t| t.is_some()).count();
        split.push((inputs, targets));
    }
    if supervised == 0 {
        return Err(Error::arg("batch has no supervised positions"));
    }
    let scale = 1.0 / supervised as f64;
    let mut total = 0.0;
    for (ex, (inputs, targets)) in batch.iter().zip(split) {
        if targets.iter().all(Option::is_none) {
            continue;
        }
        let mut tape = Tape::new(&params.store);
        let shape = encode_on_tape(&mut tape, &params.layout, ex.shape);
        let logits = logits_on_tape(&mut tape, params, shape, inputs)?;
        let loss = tape.cross_entropy(logits, &targets, scale);
        total += tape.value(loss).data()[0];
        if let Some(g) = grads.as_deref_mut() {
            tape.backward(loss, g);
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok(total)
}

pub fn batch_loss(params: &ModelParams, batch: &[SeqExample]) -> Result<f64> {
    batch_objective(params, batch, None)
}

pub fn batch_loss_and_grads(params: &ModelParams, batch: &[SeqExample]) -> Result<(f64, Gradients)> {
    let mut g = Gradients::zeros_like(&params.store);
    let loss = batch_objective(params, batch, Some(&mut g))?;
    Ok((loss, g))
}

/// Random similarity transforms applied to training pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Augmentation {
    pub scale: bool,
    pub shift: bool,
    pub rotate: bool,
    pub scale_range: (f64, f64),
    pub max_shift: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self { scale: false, shift: false, rotate: false, scale_range: (0.8, 1.0), max_shift: 0.05 }
    }
}

impl Augmentation {
    pub fn any(&self) -> bool {
        self.scale || self.shift || self.rotate
    }

    /// Yaw about the vertical axis, refit to the unit cube, then scale and
    /// shift while keeping the bounding box inside `[-0.5, 0.5]³`.
    pub fn sample_transform(&self, points: &[Vec3], rng: &mut impl Rng) -> impl Fn(Vec3) -> Vec3 {
        let rot = if self.rotate {
            Mat3::rotation_z(rng.random::<f64>() * core::f64::consts::TAU)
        } else {
            Mat3::IDENTITY
        };
        let rotated: Vec<Vec3> = points.iter().map(|&p| rot.mul_vec(p)).collect();
        let (lo, hi) = crate::geometry::bounds(&rotated);
        let extent = hi - lo;
        let longest = extent.x.max(extent.y).max(extent.z).max(1e-12);
        let center = (lo + hi) * 0.5;
        let s = if self.scale {
            let (a, b) = self.scale_range;
            a + (b - a) * rng.random::<f64>()
        } else {
            1.0
        } / longest;
        let mut shift = Vec3::ZERO;
        if self.shift {
            for a in 0..3 {
                let half = extent[a] * s * 0.5;
                let room = (0.5 - half).max(0.0).min(self.max_shift);
                shift[a] = (rng.random::<f64>() * 2.0 - 1.0) * room;
            }
        }
        move |p: Vec3| (rot.mul_vec(p) - center) * s + shift
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub augmentation: Augmentation,
    pub grad_clip: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 4,
            steps: 2000,
            seed: 0,
            augmentation: Augmentation::default(),
            grad_clip: Some(1.0),
        }
    }
}

impl TrainingConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.steps == 0 || self.batch_size == 0 {
            return Err(Error::arg("learning rate, step count and batch size must be positive"));
        }
        Ok(())
    }
}

/// Training sample before tokenization: normalized points and skeleton.
#[derive(Debug, Clone)]
pub struct SkeletonExample {
    pub shape: ShapeInput,
    pub skeleton: Skeleton,
}

/// Owns parameters and optimizer state across steps.
#[derive(Debug, Clone)]
pub struct SeqTrainer {
    pub params: ModelParams,
    pub config: TrainingConfig,
    optimizer: Adam,
    rng: ChaCha8Rng,
}

impl SeqTrainer {
    pub fn new(params: ModelParams, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let mut optimizer = Adam::new(config.learning_rate);
        optimizer.clip_norm = config.grad_clip;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { params, config, optimizer, rng })
    }

    /// One optimizer update on `batch`; returns the pre-update loss.
    pub fn step(&mut self, batch: &[SeqExample]) -> Result<f64> {
        let (loss, grads) = batch_loss_and_grads(&self.params, batch)?;
        self.optimizer.step(&mut self.params.store, &grads);
        if !self.params.store.is_finite() {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(loss)
    }

    /// Draws a batch from `data` (with augmentation when configured),
    /// tokenizes it with `ordering` and takes one step.
    pub fn step_on(&mut self, data: &[SkeletonExample], ordering: Ordering) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::arg("empty training set"));
        }
        let mut shapes = Vec::with_capacity(self.config.batch_size);
        let mut seqs = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let ex = &data[self.rng.random_range(0..data.len())];
            if self.config.augmentation.any() {
                let f = self.config.augmentation.sample_transform(&ex.shape.points, &mut self.rng);
                let skel = ex.skeleton.map_joints(|j| clamp_unit(f(j)));
                shapes.push(ex.shape.transformed(&f));
                seqs.push(sequencer::tokenize(&skel, ordering)?.tokens);
            } else {
                shapes.push(ex.shape.clone());
                seqs.push(sequencer::tokenize(&ex.skeleton, ordering)?.tokens);
            }
        }
        let batch: Vec<SeqExample> =
            shapes.iter().zip(&seqs).map(|(s, t)| SeqExample { shape: s, tokens: t }).collect();
        self.step(&batch)
    }
}

fn clamp_unit(p: Vec3) -> Vec3 {
    let c = |v: f64| v.clamp(-0.5, 0.5);
    Vec3::new(c(p.x), c(p.y), c(p.z))
}

/// Teacher-forced next-token accuracy over the supervised positions.
pub fn teacher_forced_accuracy(params: &ModelParams, batch: &[SeqExample]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for ex in batch {
        let (inputs, targets) = split_sequence(ex.tokens)?;
        let shape = encode_input(ex.shape, params);
        let logits = forward_logits(&shape, inputs, params)?;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            total += 1;
            if argmax(logits.row(r)) == t {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::arg("no supervised positions"));
    }
    Ok(correct as f64 / total as f64)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// `0` selects greedy decoding.
    pub temperature: f64,
    pub seed: u64,
    /// Budget in tokens, framing included.
    pub max_tokens: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { temperature: 0.0, seed: 0, max_tokens: 6 * 100 + 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub sequence: TokenSequence,
    /// The budget or context ran out before `EOS`.
    pub truncated: bool,
}

/// Autoregressive decoding from `BOS` until `EOS`. Tokens that would break
/// the sequence grammar (framing tokens mid-stream, `EOS` mid-bone) are
/// excluded at every step.
pub fn sample_skeleton(
    shape: &ShapeTokens,
    params: &ModelParams,
    sampling: &SamplingConfig,
    ordering: Ordering,
) -> Result<SampleOutput> {
    check_shape(shape, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let budget = sampling.max_tokens.min(params.config.context_len() - params.config.shape_tokens);
    let mut tokens: Vec<Token> = vec![BOS];
    let mut truncated = true;
    while tokens.len() < budget {
        let logits = forward_logits(shape, &tokens[1..], params)?;
        let row = logits.row(logits.rows() - 1);
        let interior = tokens.len() - 1;
        let allow_eos = interior > 0 && interior % TOKENS_PER_BONE == 0;
        let allowed = |t: usize| t < usize::from(COORD_BINS) || (allow_eos && t == usize::from(EOS));
        let next = if sampling.temperature <= 0.0 {
            (0..VOCAB_SIZE).filter(|&t| allowed(t)).fold(None, |best: Option<usize>, t| match best {
                Some(b) if row[b] >= row[t] => Some(b),
                _ => Some(t),
            })
        } else {
            let max = (0..VOCAB_SIZE).filter(|&t| allowed(t)).map(|t| row[t]).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = (0..VOCAB_SIZE)
                .map(|t| if allowed(t) { ((row[t] - max) / sampling.temperature).exp() } else { 0.0 })
                .collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (t, w) in weights.iter().enumerate() {
                if *w > 0.0 {
                    pick = Some(t);
                    if u < *w {
                        break;
                    }
                    u -= w;
                }
            }
            pick
        }
        .expect("at least one coordinate token is always allowed") as Token;
        tokens.push(next);
        if next == EOS {
            truncated = false;
            break;
        }
    }
    Ok(SampleOutput { sequence: TokenSequence { tokens, ordering }, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SeqModelConfig {
        SeqModelConfig {
            layers: 1,
            heads: 2,
            width: 8,
            mlp_ratio: 2,
            shape_tokens: 3,
            point_count: 10,
            max_bones: 2,
            init_std: 0.3,
            seed: 7,
        }
    }

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Vec3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect()
    }

    #[test]
    fn fps_picks_spread_points() {
        let pts = vec![Vec3::ZERO, Vec3::new(0.1, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.5, 0.0, 0.0)];
        assert_eq!(farthest_point_sampling(&pts, 3), vec![0, 2, 3]);
    }

    #[test]
    fn zero_params_give_zero_tokens() {
        let p = ModelParams::init(tiny()).unwrap().zeroed();
        let input = ShapeInput::new(&cloud(10, 1), 2).unwrap();
        let t = encode_input(&input, &p);
        assert_eq!(t.0.shape(), (3, 8));
        assert!(t.0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn point_count_checked() {
        let p = ModelParams::init(tiny()).unwrap();
        let pc = PointCloud { points: cloud(9, 1), normals: None, source_vertex: vec![0; 9] };
        assert!(encode_shape(&pc, &p).is_err());
    }

    #[test]
    fn context_overflow_detected() {
        let p = ModelParams::init(tiny()).unwrap();
        let shape = encode_input(&ShapeInput::new(&cloud(10, 2), 2).unwrap(), &p);
        // context 3 + 12 + 2 = 17: shape tokens, BOS and at most 13 more
        assert!(forward_logits(&shape, &[1; 13], &p).is_ok());
        assert!(matches!(forward_logits(&shape, &[1; 14], &p), Err(Error::ContextOverflow { .. })));
    }

    #[test]
    fn all_pad_batch_is_error() {
        let p = ModelParams::init(tiny()).unwrap();
        let input = ShapeInput::new(&cloud(10, 2), 2).unwrap();
        let toks = [BOS, PAD, PAD];
        assert!(batch_loss(&p, &[SeqExample { shape: &input, tokens: &toks }]).is_err());
    }

    #[test]
    fn sampling_budget_respected() {
        let p = ModelParams::init(tiny()).unwrap();
        let shape = encode_input(&ShapeInput::new(&cloud(10, 2), 2).unwrap(), &p);
        let cfg = SamplingConfig { temperature: 1.0, seed: 3, max_tokens: 8 };
        let out = sample_skeleton(&shape, &p, &cfg, Ordering::Spatial).unwrap();
        assert!(out.sequence.tokens.len() <= 8);
        assert!(out.sequence.bone_count() <= 1);
        let again = sample_skeleton(&shape, &p, &cfg, Ordering::Spatial).unwrap();
        assert_eq!(out, again);
    }
}
