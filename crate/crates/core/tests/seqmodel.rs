mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rigforge_core::sequencer::{tokenize, Ordering, Token, BOS, EOS, PAD, VOCAB_SIZE};
use rigforge_core::seqmodel::{
    batch_loss, batch_loss_and_grads, encode_input, forward_logits, sample_skeleton, teacher_forced_accuracy,
    ModelParams, SamplingConfig, SeqExample, SeqModelConfig, SeqTrainer, ShapeInput, TrainingConfig,
};
use rigforge_core::{Skeleton, Vec3};

fn small(seed: u64) -> SeqModelConfig {
    SeqModelConfig {
        layers: 2,
        heads: 2,
        width: 16,
        mlp_ratio: 2,
        shape_tokens: 5,
        point_count: 64,
        max_bones: 6,
        init_std: 0.02,
        seed,
    }
}

fn cloud(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
        .collect()
}

fn shape(rng: &mut impl Rng, cfg: &SeqModelConfig) -> ShapeInput {
    ShapeInput::new(&cloud(rng, cfg.point_count), cfg.groups()).unwrap()
}

fn chain() -> Skeleton {
    Skeleton::from_parents(
        vec![Vec3::new(0.0, -0.4, 0.0), Vec3::new(0.0, 0.0, 0.1), Vec3::new(0.2, 0.3, 0.0), Vec3::new(-0.3, 0.1, -0.2)],
        vec![None, Some(0), Some(1), Some(1)],
    )
    .unwrap()
}

fn log_softmax_sum(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m
}

#[test]
fn logits_are_causal() {
    let cfg = small(1);
    let p = ModelParams::init(SeqModelConfig { init_std: 0.3, ..cfg.clone() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = encode_input(&shape(&mut rng, &cfg), &p);
    for _ in 0..20 {
        let a: Vec<Token> = (0..12).map(|_| rng.random_range(0..128)).collect();
        let cut = rng.random_range(0..12);
        let mut b = a.clone();
        for t in &mut b[cut..] {
            *t = rng.random_range(0..128);
        }
        let la = forward_logits(&s, &a, &p).unwrap();
        let lb = forward_logits(&s, &b, &p).unwrap();
        // row r predicts after BOS and a[..r]; rows up to `cut` see only the shared prefix
        for r in 0..=cut {
            assert_eq!(la.row(r), lb.row(r), "row {r} saw a later token");
        }
    }
}

#[test]
fn output_distributions_normalize() {
    let cfg = small(3);
    let p = ModelParams::init(SeqModelConfig { init_std: 0.5, ..cfg.clone() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = encode_input(&shape(&mut rng, &cfg), &p);
    let prefix: Vec<Token> = (0..18).map(|_| rng.random_range(0..128)).collect();
    let logits = forward_logits(&s, &prefix, &p).unwrap();
    assert_eq!(logits.shape(), (19, VOCAB_SIZE));
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let lse = log_softmax_sum(row);
        let total: f64 = row.iter().map(|v| (v - lse).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12, "row {r} sums to {total}");
    }
}

#[test]
fn trailing_pad_leaves_loss_unchanged() {
    let cfg = small(5);
    let p = ModelParams::init(SeqModelConfig { init_std: 0.2, ..cfg.clone() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let shapes: Vec<ShapeInput> = (0..3).map(|_| shape(&mut rng, &cfg)).collect();
    let seqs: Vec<Vec<Token>> = (0..3)
        .map(|i| tokenize(&common::random_tree(&mut rng, 2 + i), Ordering::Hierarchical).unwrap().tokens)
        .collect();
    let batch: Vec<SeqExample> = shapes.iter().zip(&seqs).map(|(s, t)| SeqExample { shape: s, tokens: t }).collect();
    let base = batch_loss(&p, &batch).unwrap();
    let longest = seqs.iter().map(Vec::len).max().unwrap();
    let padded: Vec<Vec<Token>> = seqs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.resize(longest + 4, PAD);
            t
        })
        .collect();
    let batch: Vec<SeqExample> = shapes.iter().zip(&padded).map(|(s, t)| SeqExample { shape: s, tokens: t }).collect();
    assert_eq!(batch_loss(&p, &batch).unwrap(), base);
}

#[test]
fn initial_loss_is_near_uniform() {
    let cfg = small(7);
    let p = ModelParams::init(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let shapes: Vec<ShapeInput> = (0..4).map(|_| shape(&mut rng, &cfg)).collect();
    let seqs: Vec<Vec<Token>> =
        (0..4).map(|_| tokenize(&common::random_tree(&mut rng, 5), Ordering::Spatial).unwrap().tokens).collect();
    let batch: Vec<SeqExample> = shapes.iter().zip(&seqs).map(|(s, t)| SeqExample { shape: s, tokens: t }).collect();
    let loss = batch_loss(&p, &batch).unwrap();
    let uniform = (VOCAB_SIZE as f64).ln();
    assert!((loss - uniform).abs() <= 0.2, "initial loss {loss} vs ln V = {uniform}");
}

#[test]
fn gradients_match_finite_differences() {
    let cfg = SeqModelConfig { width: 8, shape_tokens: 3, point_count: 12, max_bones: 2, ..small(9) };
    let mut p = ModelParams::init(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    common::randomize(p.store_mut(), 0.4, &mut rng);
    let shapes: Vec<ShapeInput> = (0..2).map(|_| shape(&mut rng, &cfg)).collect();
    let seqs: Vec<Vec<Token>> =
        (0..2).map(|_| tokenize(&common::random_tree(&mut rng, 3), Ordering::Hierarchical).unwrap().tokens).collect();
    let batch: Vec<SeqExample> = shapes.iter().zip(&seqs).map(|(s, t)| SeqExample { shape: s, tokens: t }).collect();
    let (_, grads) = batch_loss_and_grads(&p, &batch).unwrap();
    let mut store = p.store().clone();
    let (worst, probes) = common::finite_difference_check(&mut store, &grads, 150, &mut rng, |s| {
        let q = ModelParams::from_store(cfg.clone(), s.clone()).unwrap();
        batch_loss(&q, &batch).unwrap()
    });
    assert!(probes >= 100);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn single_sequence_is_memorized() {
    let cfg = SeqModelConfig { width: 32, ..small(11) };
    let p = ModelParams::init(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let input = shape(&mut rng, &cfg);
    let tokens = tokenize(&chain(), Ordering::Hierarchical).unwrap().tokens;
    let train = TrainingConfig { learning_rate: 3e-3, batch_size: 1, steps: 500, ..TrainingConfig::default() };
    let mut trainer = SeqTrainer::new(p, train).unwrap();
    let batch = [SeqExample { shape: &input, tokens: &tokens }];
    for _ in 0..500 {
        trainer.step(&batch).unwrap();
    }
    assert_eq!(teacher_forced_accuracy(&trainer.params, &batch).unwrap(), 1.0);
    let s = encode_input(&input, &trainer.params);
    let out = sample_skeleton(&s, &trainer.params, &SamplingConfig::default(), Ordering::Hierarchical).unwrap();
    assert!(!out.truncated);
    assert_eq!(out.sequence.tokens, tokens);
}

#[test]
fn budget_of_eight_tokens_yields_at_most_one_bone() {
    let cfg = small(13);
    let p = ModelParams::init(SeqModelConfig { init_std: 1.0, ..cfg.clone() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for seed in 0..10 {
        let s = encode_input(&shape(&mut rng, &cfg), &p);
        let sampling = SamplingConfig { temperature: 1.0, seed, max_tokens: 8 };
        let out = sample_skeleton(&s, &p, &sampling, Ordering::Spatial).unwrap();
        assert!(out.sequence.tokens.len() <= 8);
        assert!(out.sequence.bone_count() <= 1);
        assert_eq!(out.sequence.tokens[0], BOS);
    }
}

#[test]
fn sampling_is_deterministic_and_grammatical() {
    let cfg = small(15);
    let p = ModelParams::init(SeqModelConfig { init_std: 0.5, ..cfg.clone() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let s = encode_input(&shape(&mut rng, &cfg), &p);
    for seed in 0..5 {
        let sampling = SamplingConfig { temperature: 1.0, seed, max_tokens: 38 };
        let a = sample_skeleton(&s, &p, &sampling, Ordering::Spatial).unwrap();
        let b = sample_skeleton(&s, &p, &sampling, Ordering::Spatial).unwrap();
        assert_eq!(a, b);
        let t = &a.sequence.tokens;
        let interior = if a.truncated { &t[1..] } else { &t[1..t.len() - 1] };
        assert!(interior.iter().all(|&x| x < 128));
        if !a.truncated {
            assert_eq!(*t.last().unwrap(), EOS);
            assert_eq!(interior.len() % 6, 0);
        }
    }
}

#[test]
fn distinct_shapes_encode_differently() {
    let cfg = small(17);
    let p = ModelParams::init(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let a = encode_input(&shape(&mut rng, &cfg), &p);
    let b = encode_input(&shape(&mut rng, &cfg), &p);
    assert_ne!(a, b);
    assert_eq!(a.0.shape(), (cfg.shape_tokens, cfg.width));
}

#[test]
fn zero_parameters_give_zero_shape_tokens() {
    let cfg = small(19);
    let p = ModelParams::init(cfg.clone()).unwrap().zeroed();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let s = encode_input(&shape(&mut rng, &cfg), &p);
    assert!(s.0.data().iter().all(|&v| v == 0.0));
}

#[test]
fn initialization_is_seeded() {
    assert_eq!(ModelParams::init(small(21)).unwrap(), ModelParams::init(small(21)).unwrap());
    assert_ne!(ModelParams::init(small(21)).unwrap(), ModelParams::init(small(22)).unwrap());
}
