mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rigforge_core::animation::{random_poses, Pose, RiggedAsset, Rigid};
use rigforge_core::geometry::NormalizationTransform;
use rigforge_core::metrics::{
    bone_samples, cd_b2b, cd_j2b, cd_j2j, chamfer, deformation_error, skin_avg_l1, skin_precision_recall,
    SkeletonReport, DEFAULT_INFLUENCE_THRESHOLD, DEFAULT_SAMPLES_PER_BONE,
};
use rigforge_core::synthgen::{generate, SynthSpec};
use rigforge_core::{Mat3, Matrix, Mesh, SkinMatrix, Skeleton, Vec3};

const K: usize = DEFAULT_SAMPLES_PER_BONE;

fn skel(joints: Vec<Vec3>, bones: Vec<[usize; 2]>) -> Skeleton {
    Skeleton::new(joints, bones, None, None).unwrap()
}

fn skin(rows: &[Vec<f64>]) -> SkinMatrix {
    SkinMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap()
}

fn random_skin(rng: &mut impl Rng, rows: usize, cols: usize, sparsity: f64) -> SkinMatrix {
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let keep = rng.random_range(0..cols);
        for c in 0..cols {
            if c == keep || rng.random::<f64>() > sparsity {
                m[(r, c)] = rng.random::<f64>() + 1e-6;
            }
        }
        let s: f64 = m.row(r).iter().sum();
        m.row_mut(r).iter_mut().for_each(|v| *v /= s);
    }
    SkinMatrix::new(m).unwrap()
}

#[test]
fn joint_chamfer_examples() {
    let a = skel(vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)], vec![[0, 1]]);
    assert_eq!(cd_j2j(&a, &a).unwrap(), 0.0);
    assert_eq!(chamfer(a.joints(), &[Vec3::ZERO]).unwrap(), 0.25);
    let d = 0.37;
    assert!((chamfer(&[Vec3::ZERO], &[Vec3::new(0.0, d, 0.0)]).unwrap() - d).abs() < 1e-15);
    assert!(chamfer(&[], &[Vec3::ZERO]).is_err());
}

fn nearest(p: Vec3, set: &[Vec3]) -> f64 {
    set.iter().map(|q| q.distance(p)).fold(f64::INFINITY, f64::min)
}

#[test]
fn joint_to_bone_examples() {
    let a = skel(vec![Vec3::new(-0.4, 0.0, 0.0), Vec3::new(0.4, 0.0, 0.0)], vec![[0, 1]]);
    assert_eq!(cd_j2b(&a, &a, K).unwrap(), 0.0);
    let h = 0.05;
    let len = 0.8;
    for k in [4, 16, K, 128] {
        let d = nearest(Vec3::new(0.0123, h, 0.0), &bone_samples(&a, k).unwrap());
        assert!(d >= h && d <= h + len / (2.0 * k as f64), "k = {k}: {d}");
    }
    let no_bones = Skeleton::new(vec![Vec3::ZERO, Vec3::new(0.1, 0.0, 0.0)], vec![], None, None);
    if let Ok(s) = no_bones {
        assert!(cd_j2b(&s, &a, K).is_err());
    }
}

#[test]
fn joint_on_bone_term_is_zero() {
    let a = skel(vec![Vec3::new(-0.4, 0.0, 0.0), Vec3::new(0.4, 0.0, 0.0)], vec![[0, 1]]);
    let b = skel(vec![Vec3::ZERO, Vec3::new(0.0, 0.3, 0.0)], vec![[0, 1]]);
    // odd, endpoint-inclusive sampling puts a sample at the midpoint
    assert_eq!(nearest(b.joints()[0], &bone_samples(&a, 5).unwrap()), 0.0);
    assert_eq!(nearest(a.joints()[1], &bone_samples(&a, 5).unwrap()), 0.0);
}

#[test]
fn bone_chamfer_examples() {
    let a = skel(vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)], vec![[0, 1]]);
    assert_eq!(cd_b2b(&a, &a, K).unwrap(), 0.0);
    for d in [0.01, 0.1, 0.3, 0.7] {
        let b = a.map_joints(|p| p + Vec3::new(0.0, 0.0, d));
        assert!((cd_b2b(&a, &b, K).unwrap() - d).abs() <= 1e-12);
        assert_eq!(cd_b2b(&a, &b, K).unwrap(), cd_b2b(&b, &a, K).unwrap());
    }
    assert!(bone_samples(&a, 1).is_err());
}

#[test]
fn chamfer_metrics_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let (na, nb) = (rng.random_range(2..20), rng.random_range(2..20));
        let a = common::random_tree(&mut rng, na);
        let b = common::random_tree(&mut rng, nb);
        let ra = SkeletonReport::compute(&a, &b, K).unwrap();
        let rb = SkeletonReport::compute(&b, &a, K).unwrap();
        for (x, y) in [(ra.cd_j2j, rb.cd_j2j), (ra.cd_j2b, rb.cd_j2b), (ra.cd_b2b, rb.cd_b2b)] {
            assert!(x >= 0.0);
            assert!((x - y).abs() <= 1e-9);
        }
        let shift = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let rt = SkeletonReport::compute(&a.map_joints(|p| p + shift), &b.map_joints(|p| p + shift), K).unwrap();
        assert!((rt.cd_j2j - ra.cd_j2j).abs() <= 1e-9);
        assert!((rt.cd_j2b - ra.cd_j2b).abs() <= 1e-9);
        assert!((rt.cd_b2b - ra.cd_b2b).abs() <= 1e-9);
        let same = SkeletonReport::compute(&a, &a, K).unwrap();
        assert_eq!((same.cd_j2j, same.cd_j2b, same.cd_b2b), (0.0, 0.0, 0.0));
    }
}

#[test]
fn reports_scale_to_hundredths() {
    let a = skel(vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)], vec![[0, 1]]);
    let b = a.map_joints(|p| p + Vec3::new(0.0, 0.02, 0.0));
    let r = SkeletonReport::compute(&a, &b, K).unwrap().scaled();
    assert!((r.cd_j2j - 2.0).abs() < 1e-9 && (r.cd_b2b - 2.0).abs() < 1e-9);
}

#[test]
fn precision_recall_examples() {
    let truth = skin(&[vec![0.7, 0.3, 0.0]]);
    let pr = skin_precision_recall(&truth, &truth, DEFAULT_INFLUENCE_THRESHOLD).unwrap();
    assert_eq!((pr.precision, pr.recall), (1.0, 1.0));
    let pred = skin(&[vec![1.0, 0.0, 0.0]]);
    let pr = skin_precision_recall(&pred, &truth, DEFAULT_INFLUENCE_THRESHOLD).unwrap();
    assert_eq!((pr.precision, pr.recall), (1.0, 0.5));
    let extra = skin(&[vec![0.5, 0.3, 0.2]]);
    let pr = skin_precision_recall(&extra, &truth, DEFAULT_INFLUENCE_THRESHOLD).unwrap();
    assert_eq!(pr.recall, 1.0);
    assert!(pr.precision < 1.0);
    // nothing above the threshold on the prediction side
    let pr = skin_precision_recall(&pred, &truth, 1.0).unwrap();
    assert!(pr.precision_undefined && pr.recall_undefined);
    assert_eq!((pr.precision, pr.recall), (0.0, 0.0));
    assert!(skin_precision_recall(&skin(&[vec![1.0, 0.0]]), &truth, 1e-4).is_err());
}

#[test]
fn influence_sets_shrink_with_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let pred = random_skin(&mut rng, 30, 6, 0.5);
        let truth = random_skin(&mut rng, 30, 6, 0.5);
        let size = |m: &SkinMatrix, th: f64| m.matrix().data().iter().filter(|&&w| w > th).count();
        let mut last = (usize::MAX, usize::MAX);
        for th in [0.0, 1e-4, 0.01, 0.1, 0.3, 0.6] {
            let pr = skin_precision_recall(&pred, &truth, th).unwrap();
            assert!((0.0..=1.0).contains(&pr.precision) && (0.0..=1.0).contains(&pr.recall));
            let now = (size(&pred, th), size(&truth, th));
            assert!(now.0 <= last.0 && now.1 <= last.1);
            last = now;
        }
    }
}

#[test]
fn l1_examples() {
    let a = skin(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
    let b = skin(&[vec![0.0, 1.0], vec![0.0, 1.0]]);
    let c = skin(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
    assert_eq!(skin_avg_l1(&a, &a).unwrap(), 0.0);
    assert_eq!(skin_avg_l1(&a, &b).unwrap(), 2.0);
    assert_eq!(skin_avg_l1(&c, &a).unwrap(), 1.0);
    assert!(skin_avg_l1(&a, &skin(&[vec![1.0, 0.0]])).is_err());
}

fn bar_assets(delta: f64) -> (RiggedAsset, RiggedAsset) {
    let mesh = Mesh::new(vec![Vec3::new(-0.4, 0.0, 0.0), Vec3::new(0.0, 0.05, 0.0), Vec3::new(0.4, 0.0, 0.0)], vec![[0, 1, 2]])
        .unwrap();
    let s = Skeleton::from_parents(vec![Vec3::new(-0.4, 0.0, 0.0), Vec3::new(0.4, 0.0, 0.0)], vec![None, Some(0)]).unwrap();
    let truth = skin(&[vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]]);
    let pred = skin(&[vec![1.0, 0.0], vec![0.5 + delta, 0.5 - delta], vec![0.0, 1.0]]);
    let t = NormalizationTransform { scale: 1.0, translation: Vec3::ZERO };
    (
        RiggedAsset::new(mesh.clone(), s.clone(), pred, t).unwrap(),
        RiggedAsset::new(mesh, s, truth, t).unwrap(),
    )
}

#[test]
fn deformation_error_examples() {
    let (pred, truth) = bar_assets(0.5);
    let shift = Pose { transforms: vec![Rigid::IDENTITY, Rigid { rotation: Mat3::IDENTITY, translation: Vec3::new(1.0, 0.0, 0.0) }] };
    // only the middle vertex differs, by 0.5
    let e = deformation_error(&pred, &truth, &[shift.clone(), shift]).unwrap();
    assert!((e - 0.5 / 3.0).abs() < 1e-12);
    assert_eq!(deformation_error(&pred, &truth, &[Pose::identity(2)]).unwrap(), 0.0);
    assert!(deformation_error(&pred, &truth, &[]).is_err());

    let a = generate(&SynthSpec::varied(4, 12)).unwrap();
    let poses = random_poses(&a.skeleton, 10, 30.0, 1);
    assert_eq!(deformation_error(&a, &a, &poses).unwrap(), 0.0);
}
