//! Diffusion over skinning-weight functions.
//!
//! The diffused quantity is the residual between the weights and the
//! geodesic prior, both mapped to `[-1, 1]`, evaluated at surface points.
//! The denoiser treats every point independently given the condition
//! tokens (joints and shape features), so it is exactly equivariant to
//! point permutations and can be evaluated on any number of points.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mesh, PointCloud, VertexLocator};
use crate::math::{Matrix, Vec3};
use crate::nn::{sinusoidal_embedding, Adam, Gradients, ParamId, ParamStore, Tape, Var};
use crate::skin::SkinMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { timesteps: 1000, beta_start: 1e-4, beta_end: 0.02 }
    }
}

/// Linear-β DDPM schedule. Index 0 is the clean limit (`ᾱ = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(cfg: &ScheduleConfig) -> Result<Self> {
        let t = cfg.timesteps;
        if t < 2 {
            return Err(Error::arg("need at least two timesteps"));
        }
        if !(0.0 < cfg.beta_start && cfg.beta_start < cfg.beta_end && cfg.beta_end < 1.0) {
            return Err(Error::arg("betas must satisfy 0 < start < end < 1"));
        }
        let mut betas = vec![0.0];
        let mut alpha_bar = vec![1.0];
        for s in 0..t {
            let b = cfg.beta_start + (cfg.beta_end - cfg.beta_start) * s as f64 / (t - 1) as f64;
            betas.push(b);
            alpha_bar.push(alpha_bar[s] * (1.0 - b));
        }
        Ok(Self { betas, alpha_bar })
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// `sqrt(ᾱ_t)`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    /// `sqrt(1 − ᾱ_t)`.
    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.timesteps() {
            return Err(Error::TimestepOutOfRange { t, max: self.timesteps() });
        }
        Ok(())
    }

    /// `steps` timesteps spread uniformly over `[1, T]`, descending.
    pub fn inference_timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        let t = self.timesteps();
        if steps == 0 || steps > t {
            return Err(Error::arg("inference steps must lie in [1, T]"));
        }
        if steps == 1 {
            return Ok(vec![t]);
        }
        let mut out: Vec<usize> =
            (0..steps).map(|i| 1 + ((i * (t - 1)) as f64 / (steps - 1) as f64).round() as usize).collect();
        out.reverse();
        Ok(out)
    }
}

/// `2w − 1`.
pub fn to_range(w: f64) -> f64 {
    2.0 * w - 1.0
}

/// `(f + 1) / 2`.
pub fn from_range(f: f64) -> f64 {
    0.5 * (f + 1.0)
}

/// `to_range(W) − to_range(G)`, masked columns zero.
pub fn residual(weights: &Matrix, prior: &Matrix, mask: &[bool]) -> Result<Matrix> {
    if weights.shape() != prior.shape() {
        return Err(Error::DimensionMismatch { expected: prior.data().len(), found: weights.data().len() });
    }
    if mask.len() != weights.cols() {
        return Err(Error::DimensionMismatch { expected: weights.cols(), found: mask.len() });
    }
    let mut out = Matrix::zeros(weights.rows(), weights.cols());
    for r in 0..weights.rows() {
        for c in 0..weights.cols() {
            if mask[c] {
                out[(r, c)] = to_range(weights[(r, c)]) - to_range(prior[(r, c)]);
            } else if weights[(r, c)] != 0.0 || prior[(r, c)] != 0.0 {
                return Err(Error::InvalidSkin("weight on a masked joint".into()));
            }
        }
    }
    Ok(out)
}

/// Inverse of [`residual`] without any clamping.
pub fn weights_from_residual_raw(f: &Matrix, prior: &Matrix, mask: &[bool]) -> Matrix {
    let mut out = Matrix::zeros(f.rows(), f.cols());
    for r in 0..f.rows() {
        for c in 0..f.cols() {
            if mask[c] {
                out[(r, c)] = from_range(f[(r, c)] + to_range(prior[(r, c)]));
            }
        }
    }
    out
}

/// Converts a predicted residual to weights: clamp to `[0, 1]`, zero
/// masked columns and renormalize rows; empty rows take the prior's row.
pub fn weights_from_residual(f: &Matrix, prior: &Matrix, mask: &[bool]) -> Result<SkinMatrix> {
    SkinMatrix::from_unnormalized(weights_from_residual_raw(f, prior, mask), mask, Some(prior))
}

/// `α_t f₀ + σ_t g`, masked columns zero.
pub fn forward_noise(f0: &Matrix, mask: &[bool], t: usize, noise: &Matrix, schedule: &NoiseSchedule) -> Result<Matrix> {
    schedule.check(t)?;
    if noise.shape() != f0.shape() {
        return Err(Error::DimensionMismatch { expected: f0.data().len(), found: noise.data().len() });
    }
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    let mut out = Matrix::zeros(f0.rows(), f0.cols());
    for r in 0..f0.rows() {
        for c in 0..f0.cols() {
            if mask[c] {
                out[(r, c)] = a * f0[(r, c)] + s * noise[(r, c)];
            }
        }
    }
    Ok(out)
}

/// Standard normal noise on unmasked columns.
pub fn white_noise(rows: usize, mask: &[bool], rng: &mut impl Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, mask.len());
    for r in 0..rows {
        for (c, &ok) in mask.iter().enumerate() {
            if ok {
                m[(r, c)] = rng.sample(StandardNormal);
            }
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub width: usize,
    pub stages: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub fourier_freqs: usize,
    /// Output columns (joint slots).
    pub max_joints: usize,
    /// Width of the shape tokens used as extra conditioning; 0 disables them.
    pub shape_width: usize,
    /// Points per forward chunk at inference and per item during training.
    pub chunk: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            width: 128,
            stages: 2,
            heads: 4,
            mlp_ratio: 2,
            fourier_freqs: 6,
            max_joints: 55,
            shape_width: 128,
            chunk: 512,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.stages == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return Err(Error::arg("denoiser dimensions must be positive"));
        }
        if self.width % self.heads != 0 {
            return Err(Error::arg("width must be divisible by heads"));
        }
        if self.max_joints == 0 || self.chunk == 0 {
            return Err(Error::arg("max_joints and chunk must be positive"));
        }
        Ok(())
    }

    fn coord_features(&self) -> usize {
        3 + 6 * self.fourier_freqs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Stage {
    mod_scale1: (ParamId, ParamId),
    mod_shift1: (ParamId, ParamId),
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: (ParamId, ParamId),
    mod_scale2: (ParamId, ParamId),
    mod_shift2: (ParamId, ParamId),
    fc: (ParamId, ParamId),
    proj: (ParamId, ParamId),
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    point_in: (ParamId, ParamId),
    time1: (ParamId, ParamId),
    time2: (ParamId, ParamId),
    joint1: (ParamId, ParamId),
    joint2: (ParamId, ParamId),
    joint_slot: ParamId,
    shape_in: Option<(ParamId, ParamId)>,
    stages: Vec<Stage>,
    out_scale: (ParamId, ParamId),
    out_shift: (ParamId, ParamId),
    head: ParamId,
}

fn lin_params<R: Rng>(s: &mut ParamStore, name: &str, i: usize, o: usize, std: f64, rng: &mut R) -> (ParamId, ParamId) {
    let w = if std == 0.0 {
        s.add_filled(alloc::format!("{name}.w"), i, o, 0.0)
    } else {
        s.add_normal(alloc::format!("{name}.w"), i, o, std, rng)
    };
    (w, s.add_filled(alloc::format!("{name}.b"), 1, o, 0.0))
}

fn build(cfg: &DenoiserConfig, s: &mut ParamStore, rng: &mut impl Rng) -> Layout {
    let w = cfg.width;
    let fan = |n: usize| 1.0 / (n as f64).sqrt();
    let lin = lin_params;
    let point_in = lin(s, "point_in", cfg.coord_features() + 2 * cfg.max_joints, w, fan(cfg.coord_features()), rng);
    let time1 = lin(s, "time1", w, w, fan(w), rng);
    let time2 = lin(s, "time2", w, w, fan(w), rng);
    let joint1 = lin(s, "joint1", cfg.coord_features(), w, fan(cfg.coord_features()), rng);
    let joint2 = lin(s, "joint2", w, w, fan(w), rng);
    let joint_slot = s.add_normal("joint_slot", cfg.max_joints, w, cfg.init_std, rng);
    let shape_in = (cfg.shape_width > 0).then(|| lin(s, "shape_in", cfg.shape_width, w, fan(cfg.shape_width), rng));
    let hidden = w * cfg.mlp_ratio;
    let stages = (0..cfg.stages)
        .map(|i| {
            let n = |k: &str| alloc::format!("stage{i}.{k}");
            Stage {
                mod_scale1: lin(s, &n("mod_scale1"), w, w, 0.0, rng),
                mod_shift1: lin(s, &n("mod_shift1"), w, w, 0.0, rng),
                wq: s.add_normal(n("wq"), w, w, fan(w), rng),
                wk: s.add_normal(n("wk"), w, w, fan(w), rng),
                wv: s.add_normal(n("wv"), w, w, fan(w), rng),
                wo: lin(s, &n("wo"), w, w, cfg.init_std, rng),
                mod_scale2: lin(s, &n("mod_scale2"), w, w, 0.0, rng),
                mod_shift2: lin(s, &n("mod_shift2"), w, w, 0.0, rng),
                fc: lin(s, &n("fc"), w, hidden, fan(w), rng),
                proj: lin(s, &n("proj"), hidden, w, cfg.init_std, rng),
            }
        })
        .collect();
    let out_scale = lin(s, "out_scale", w, w, 0.0, rng);
    let out_shift = lin(s, "out_shift", w, w, 0.0, rng);
    let head = s.add_filled("head", w, w, 0.0);
    Layout { point_in, time1, time2, joint1, joint2, joint_slot, shape_in, stages, out_scale, out_shift, head }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    config: DenoiserConfig,
    store: ParamStore,
    layout: Layout,
}

impl DenoiserParams {
    pub fn init(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let layout = build(&config, &mut store, &mut rng);
        Ok(Self { config, store, layout })
    }

    pub fn from_store(config: DenoiserConfig, store: ParamStore) -> Result<Self> {
        let reference = Self::init(config)?;
        crate::seqmodel::check_same_layout(&reference.store, &store)?;
        Ok(Self { config: reference.config, store, layout: reference.layout })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Parameter names of the final projection.
    pub fn head_names(&self) -> Vec<&str> {
        vec![self.store.name(self.layout.head)]
    }
}

/// Joint positions (one per valid column, in column order) and optional
/// shape tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub joints: Vec<Vec3>,
    pub mask: Vec<bool>,
    pub shape: Option<Matrix>,
}

impl Condition {
    /// The first `joints.len()` columns of `max_joints` are valid.
    pub fn new(joints: Vec<Vec3>, max_joints: usize, shape: Option<Matrix>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::arg("no valid joints"));
        }
        if joints.len() > max_joints {
            return Err(Error::arg(alloc::format!("{} joints exceed the limit of {max_joints}", joints.len())));
        }
        let mask = (0..max_joints).map(|c| c < joints.len()).collect();
        Ok(Self { joints, mask, shape })
    }

    fn valid_columns(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(c, _)| c).collect()
    }

    fn validate(&self, cfg: &DenoiserConfig) -> Result<()> {
        if self.mask.len() != cfg.max_joints {
            return Err(Error::DimensionMismatch { expected: cfg.max_joints, found: self.mask.len() });
        }
        if self.valid_columns().len() != self.joints.len() || self.joints.is_empty() {
            return Err(Error::arg("joint list does not match the joint mask"));
        }
        match (&self.shape, cfg.shape_width) {
            (Some(s), w) if s.cols() != w => Err(Error::DimensionMismatch { expected: w, found: s.cols() }),
            (None, w) if w > 0 => Err(Error::arg("denoiser expects shape tokens")),
            _ => Ok(()),
        }
    }
}

fn coord_row(p: Vec3, freqs: usize, out: &mut [f64]) {
    out[..3].copy_from_slice(&p.to_array());
    let mut k = 3;
    for f in 0..freqs {
        let scale = core::f64::consts::PI * (1u64 << f) as f64;
        for a in 0..3 {
            let (s, c) = (p[a] * scale).sin_cos();
            out[k] = s;
            out[k + 1] = c;
            k += 2;
        }
    }
}

fn ln_mod(tape: &mut Tape, x: Var, scale: Var, shift: Var) -> Var {
    let h = tape.layer_norm(x);
    tape.modulate(h, scale, shift)
}

fn lin(tape: &mut Tape, x: Var, p: (ParamId, ParamId)) -> Var {
    tape.linear(x, p.0, p.1)
}

/// Builds the denoiser graph for one set of points. Returns the `v × n`
/// estimate of the clean residual.
fn denoise_on_tape(
    tape: &mut Tape,
    params: &DenoiserParams,
    points: &[Vec3],
    noised: &Matrix,
    prior: &Matrix,
    t: usize,
    cond: &Condition,
) -> Var {
    let cfg = &params.config;
    let lay = &params.layout;
    let n = cfg.max_joints;
    let cf = cfg.coord_features();
    let mut x = Matrix::zeros(points.len(), cf + 2 * n);
    for (i, &p) in points.iter().enumerate() {
        let row = x.row_mut(i);
        coord_row(p, cfg.fourier_freqs, &mut row[..cf]);
        row[cf..cf + n].copy_from_slice(noised.row(i));
        for c in 0..n {
            if cond.mask[c] {
                row[cf + n + c] = prior[(i, c)];
            }
        }
    }
    let x = tape.input(x);
    let mut h = lin(tape, x, lay.point_in);

    let temb = tape.input(sinusoidal_embedding(t as f64, cfg.width));
    let temb = lin(tape, temb, lay.time1);
    let temb = tape.silu(temb);
    let temb = lin(tape, temb, lay.time2);
    let tact = tape.silu(temb);

    let cols = cond.valid_columns();
    let mut jf = Matrix::zeros(cond.joints.len(), cf);
    for (i, &j) in cond.joints.iter().enumerate() {
        coord_row(j, cfg.fourier_freqs, jf.row_mut(i));
    }
    let jf = tape.input(jf);
    let j = lin(tape, jf, lay.joint1);
    let j = tape.silu(j);
    let j = lin(tape, j, lay.joint2);
    let slot_table = tape.param(lay.joint_slot);
    let slots = tape.gather(slot_table, &cols);
    let joints = tape.add(j, slots);
    let tokens = match (&cond.shape, lay.shape_in) {
        (Some(s), Some(p)) => {
            let s = tape.input(s.clone());
            let s = lin(tape, s, p);
            tape.concat_rows(&[joints, s])
        }
        _ => joints,
    };
    let tokens_n = tape.layer_norm(tokens);

    for st in &lay.stages {
        let sc = lin(tape, tact, st.mod_scale1);
        let sh = lin(tape, tact, st.mod_shift1);
        let a = ln_mod(tape, h, sc, sh);
        let wq = tape.param(st.wq);
        let q = tape.matmul(a, wq);
        let wk = tape.param(st.wk);
        let k = tape.matmul(tokens_n, wk);
        let wv = tape.param(st.wv);
        let v = tape.matmul(tokens_n, wv);
        let att = tape.attention(q, k, v, cfg.heads, false);
        let att = lin(tape, att, st.wo);
        h = tape.add(h, att);
        let sc = lin(tape, tact, st.mod_scale2);
        let sh = lin(tape, tact, st.mod_shift2);
        let m = ln_mod(tape, h, sc, sh);
        let m = lin(tape, m, st.fc);
        let m = tape.gelu(m);
        let m = lin(tape, m, st.proj);
        h = tape.add(h, m);
    }
    let sc = lin(tape, tact, lay.out_scale);
    let sh = lin(tape, tact, lay.out_shift);
    let h = ln_mod(tape, h, sc, sh);
    let head = tape.param(lay.head);
    let keys = tape.matmul(joints, head);
    let per_joint = tape.matmul_nt(h, keys);
    let mut scatter = Matrix::zeros(cols.len(), n);
    for (i, &c) in cols.iter().enumerate() {
        scatter[(i, c)] = 1.0;
    }
    let scatter = tape.input(scatter);
    tape.matmul(per_joint, scatter)
}

fn check_inputs(params: &DenoiserParams, points: &[Vec3], noised: &Matrix, prior: &Matrix, cond: &Condition) -> Result<()> {
    cond.validate(&params.config)?;
    if points.is_empty() {
        return Err(Error::arg("no domain points"));
    }
    let shape = (points.len(), params.config.max_joints);
    if noised.shape() != shape || prior.shape() != shape {
        return Err(Error::DimensionMismatch { expected: shape.0 * shape.1, found: noised.data().len() });
    }
    if !noised.is_finite() {
        return Err(Error::NonFinite("noised function"));
    }
    Ok(())
}

/// Estimate of the clean residual at every point, evaluated in chunks.
pub fn denoise(
    params: &DenoiserParams,
    points: &[Vec3],
    noised: &Matrix,
    prior: &Matrix,
    t: usize,
    cond: &Condition,
) -> Result<Matrix> {
    check_inputs(params, points, noised, prior, cond)?;
    let n = params.config.max_joints;
    let mut out = Matrix::zeros(points.len(), n);
    let chunk = params.config.chunk;
    for start in (0..points.len()).step_by(chunk) {
        let end = (start + chunk).min(points.len());
        let rows: Vec<usize> = (start..end).collect();
        let mut tape = Tape::new(&params.store);
        let v = denoise_on_tape(
            &mut tape,
            params,
            &points[start..end],
            &noised.select_rows(&rows),
            &prior.select_rows(&rows),
            t,
            cond,
        );
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(*r).copy_from_slice(tape.value(v).row(i));
        }
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("denoiser output"));
    }
    Ok(out)
}

/// One shape's training data: points with clean residual, prior and condition.
#[derive(Debug, Clone)]
pub struct SkinExample {
    pub points: Vec<Vec3>,
    pub f0: Matrix,
    pub prior: Matrix,
    pub condition: Condition,
}

impl SkinExample {
    /// Builds the residual target from per-point weights and prior, both
    /// `points × max_joints`.
    pub fn new(points: Vec<Vec3>, weights: &Matrix, prior: &Matrix, condition: Condition) -> Result<Self> {
        if weights.rows() != points.len() {
            return Err(Error::DimensionMismatch { expected: points.len(), found: weights.rows() });
        }
        let f0 = residual(weights, prior, &condition.mask)?;
        Ok(Self { points, f0, prior: prior.clone(), condition })
    }
}

/// A fully specified training term: fixed point subset, timestep and noise.
#[derive(Debug, Clone)]
pub struct NoisedItem<'a> {
    pub example: &'a SkinExample,
    pub rows: Vec<usize>,
    pub t: usize,
    pub noise: Matrix,
}

impl<'a> NoisedItem<'a> {
    pub fn draw(example: &'a SkinExample, subset: usize, schedule: &NoiseSchedule, rng: &mut impl Rng) -> Self {
        let n = example.points.len();
        let rows = if subset >= n {
            (0..n).collect()
        } else {
            rand::seq::index::sample(rng, n, subset).into_vec()
        };
        let t = rng.random_range(1..=schedule.timesteps());
        let noise = white_noise(rows.len(), &example.condition.mask, rng);
        Self { example, rows, t, noise }
    }
}

/// Mean squared error over unmasked entries of all items.
fn objective(
    params: &DenoiserParams,
    items: &[NoisedItem],
    schedule: &NoiseSchedule,
    mut grads: Option<&mut Gradients>,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    let mut count = 0usize;
    for it in items {
        let valid = it.example.condition.mask.iter().filter(|&&m| m).count();
        count += valid * it.rows.len();
    }
    if count == 0 {
        return Err(Error::arg("batch has no supervised entries"));
    }
    let scale = 1.0 / count as f64;
    let mut total = 0.0;
    for it in items {
        let ex = it.example;
        let f0 = ex.f0.select_rows(&it.rows);
        let prior = ex.prior.select_rows(&it.rows);
        let pts: Vec<Vec3> = it.rows.iter().map(|&r| ex.points[r]).collect();
        let ft = forward_noise(&f0, &ex.condition.mask, it.t, &it.noise, schedule)?;
        check_inputs(params, &pts, &ft, &prior, &ex.condition)?;
        let mut tape = Tape::new(&params.store);
        let pred = denoise_on_tape(&mut tape, params, &pts, &ft, &prior, it.t, &ex.condition);
        let loss = tape.mse(pred, &f0, &ex.condition.mask, scale);
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

pub fn skin_loss(params: &DenoiserParams, items: &[NoisedItem], schedule: &NoiseSchedule) -> Result<f64> {
    objective(params, items, schedule, None)
}

pub fn skin_loss_and_grads(
    params: &DenoiserParams,
    items: &[NoisedItem],
    schedule: &NoiseSchedule,
) -> Result<(f64, Gradients)> {
    let mut g = Gradients::zeros_like(&params.store);
    let loss = objective(params, items, schedule, Some(&mut g))?;
    Ok((loss, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkinTrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Points drawn per item per step.
    pub points_per_item: usize,
    pub seed: u64,
    pub grad_clip: Option<f64>,
}

impl Default for SkinTrainingConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, batch_size: 4, steps: 2000, points_per_item: 512, seed: 0, grad_clip: Some(1.0) }
    }
}

#[derive(Debug, Clone)]
pub struct SkinTrainer {
    pub params: DenoiserParams,
    pub config: SkinTrainingConfig,
    schedule: NoiseSchedule,
    optimizer: Adam,
    rng: ChaCha8Rng,
}

impl SkinTrainer {
    pub fn new(params: DenoiserParams, schedule: NoiseSchedule, config: SkinTrainingConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0) || config.batch_size == 0 || config.points_per_item == 0 {
            return Err(Error::arg("learning rate, batch size and points per item must be positive"));
        }
        let mut optimizer = Adam::new(config.learning_rate);
        optimizer.clip_norm = config.grad_clip;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { params, config, schedule, optimizer, rng })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// One update on a batch drawn from `data`; returns the pre-update loss.
    pub fn step(&mut self, data: &[SkinExample]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::arg("empty training set"));
        }
        let items: Vec<NoisedItem> = (0..self.config.batch_size)
            .map(|_| {
                let ex = &data[self.rng.random_range(0..data.len())];
                NoisedItem::draw(ex, self.config.points_per_item, &self.schedule, &mut self.rng)
            })
            .collect();
        let (loss, grads) = skin_loss_and_grads(&self.params, &items, &self.schedule)?;
        self.optimizer.step(&mut self.params.store, &grads);
        if !self.params.store.is_finite() {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkinSamplingConfig {
    pub steps: usize,
    pub seed: u64,
}

impl Default for SkinSamplingConfig {
    fn default() -> Self {
        Self { steps: 25, seed: 0 }
    }
}

/// Ancestral sampling on a uniform timestep sub-grid. Each step predicts
/// the clean residual (clipped to `[-2, 2]`) and draws the next state from
/// the Gaussian posterior between consecutive sub-grid timesteps.
pub fn sample_residual(
    params: &DenoiserParams,
    points: &[Vec3],
    prior: &Matrix,
    cond: &Condition,
    schedule: &NoiseSchedule,
    sampling: &SkinSamplingConfig,
) -> Result<Matrix> {
    let mask = &cond.mask;
    if !mask.iter().any(|&m| m) {
        return Err(Error::arg("no valid joints"));
    }
    let ts = schedule.inference_timesteps(sampling.steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut f = white_noise(points.len(), mask, &mut rng);
    for (i, &t) in ts.iter().enumerate() {
        let mut x0 = denoise(params, points, &f, prior, t, cond)?;
        x0.data_mut().iter_mut().for_each(|v| *v = v.clamp(-2.0, 2.0));
        let Some(&s) = ts.get(i + 1) else {
            return Ok(x0);
        };
        let (ab_t, ab_s) = (schedule.alpha_bar(t), schedule.alpha_bar(s));
        let a_ts = ab_t / ab_s;
        let b_ts = 1.0 - a_ts;
        let c0 = ab_s.sqrt() * b_ts / (1.0 - ab_t);
        let ct = a_ts.sqrt() * (1.0 - ab_s) / (1.0 - ab_t);
        let std = (b_ts * (1.0 - ab_s) / (1.0 - ab_t)).sqrt();
        let z = white_noise(points.len(), mask, &mut rng);
        for r in 0..f.rows() {
            for c in 0..f.cols() {
                if mask[c] {
                    f[(r, c)] = c0 * x0[(r, c)] + ct * f[(r, c)] + std * z[(r, c)];
                }
            }
        }
    }
    unreachable!("inference timesteps are never empty")
}

/// Samples a residual and converts it to simplex weights over `max_joints` columns.
pub fn sample_skin(
    params: &DenoiserParams,
    points: &[Vec3],
    prior: &Matrix,
    cond: &Condition,
    schedule: &NoiseSchedule,
    sampling: &SkinSamplingConfig,
) -> Result<SkinMatrix> {
    check_inputs(params, points, &Matrix::zeros(points.len(), params.config.max_joints), prior, cond)?;
    let f = sample_residual(params, points, prior, cond, schedule, sampling)?;
    weights_from_residual(&f, prior, &cond.mask)
}

/// Averages point weights onto their source vertices. Vertices without
/// points copy the nearest vertex that has some.
pub fn vertex_weights_from_points(weights: &SkinMatrix, cloud: &PointCloud, mesh: &Mesh) -> Result<SkinMatrix> {
    if cloud.is_empty() {
        return Err(Error::arg("no points"));
    }
    if weights.rows() != cloud.len() || cloud.source_vertex.len() != cloud.len() {
        return Err(Error::DimensionMismatch { expected: cloud.len(), found: weights.rows() });
    }
    let nv = mesh.vertex_count();
    let mut sum = Matrix::zeros(nv, weights.joints());
    let mut count = vec![0usize; nv];
    for (i, &v) in cloud.source_vertex.iter().enumerate() {
        if v >= nv {
            return Err(Error::arg("point refers to a missing vertex"));
        }
        count[v] += 1;
        for (o, w) in sum.row_mut(v).iter_mut().zip(weights.row(i)) {
            *o += w;
        }
    }
    let assigned: Vec<usize> = (0..nv).filter(|&v| count[v] > 0).collect();
    let positions: Vec<Vec3> = assigned.iter().map(|&v| mesh.vertices()[v]).collect();
    let locator = VertexLocator::new(&positions);
    let mut out = Matrix::zeros(nv, weights.joints());
    for v in 0..nv {
        let src = if count[v] > 0 { v } else { assigned[locator.nearest(mesh.vertices()[v])] };
        let inv = 1.0 / count[src] as f64;
        for (o, s) in out.row_mut(v).iter_mut().zip(sum.row(src)) {
            *o = s * inv;
        }
    }
    SkinMatrix::from_unnormalized(out, &vec![true; weights.joints()], None)
}
