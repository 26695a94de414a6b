#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rigforge::corpus::read_manifest;
use rigforge::fsio::sha256_hex;
use rigforge::obj::read_obj;
use rigforge::Rig;
use rigforge_core::sequencer::Ordering;

const TOY_CONFIG: &str = r#"{
  "sample_count": 256,
  "seqmodel": {"layers": 2, "heads": 2, "width": 32, "mlp_ratio": 2, "shape_tokens": 9, "point_count": 256, "max_bones": 16},
  "seq_training": {"learning_rate": 0.003, "batch_size": 2, "steps": 300},
  "seq_sampling": {"max_tokens": 98},
  "denoiser": {"width": 16, "stages": 1, "heads": 2, "fourier_freqs": 2, "max_joints": 8, "shape_width": 0, "chunk": 256},
  "skin_training": {"steps": 200, "points_per_item": 128, "batch_size": 2},
  "geodesic": {"resolution": 32}
}"#;

fn rigforge<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rigforge")).args(args).output().expect("binary runs")
}

fn ok<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    let out = rigforge(args);
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn corpus(dir: &Path, count: usize, extra: &[&str]) -> PathBuf {
    let c = dir.join("corpus");
    let n = count.to_string();
    let mut args = vec!["synth-gen", "--count", &n, "--points", "256", "--out", p(&c)];
    args.extend_from_slice(extra);
    ok(&args);
    c
}

fn all_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).map(|r| r.map(|e| e.unwrap().path()).collect()).unwrap_or_default();
    v.sort();
    v
}

#[test]
fn tokens_round_trip_through_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path(), 8, &[]);
    for entry in read_manifest(&c).unwrap().assets {
        let rig_path = c.join(&entry.files["rig"].path);
        let original = Rig::read(&rig_path).unwrap();
        for (ordering, flag) in [(Ordering::Spatial, "spatial"), (Ordering::Hierarchical, "hierarchical")] {
            let tok = tmp.path().join(format!("{}.{flag}.tok", entry.id));
            let back = tmp.path().join(format!("{}.{flag}.json", entry.id));
            ok(&["tokenize", p(&rig_path), "--ordering", flag, "--out", p(&tok)]);
            let role = format!("tokens_{flag}");
            assert_eq!(std::fs::read(&tok).unwrap(), std::fs::read(c.join(&entry.files[&role].path)).unwrap());
            ok(&["detokenize", p(&tok), "--out", p(&back)]);
            let decoded = Rig::read(&back).unwrap();
            common::check_round_trip(&original.skeleton, &decoded.skeleton, ordering)
                .unwrap_or_else(|e| panic!("{} {flag}: {e}", entry.id));
        }
    }
}

#[test]
fn self_comparison_reports_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path(), 1, &[]);
    let rig = c.join("asset_0000.rig.json");
    let report = tmp.path().join("report.json");
    let out = ok(&["eval-skeleton", p(&rig), p(&rig), "--out", p(&report)]);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["CD-J2J", "CD-J2B", "CD-B2B"] {
        let line = text.lines().find(|l| l.contains(name)).unwrap();
        assert!(line.trim_end().ends_with("0.000"), "{line}");
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json.to_string().contains("cd_j2j"));

    let mesh = c.join("asset_0000.obj");
    let out = ok(&["eval-skin", p(&rig), p(&rig), "--mesh", p(&mesh)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.contains("avg L1") && l.trim_end().ends_with("0.0000")), "{text}");
    assert!(text.lines().any(|l| l.contains("avg dist") && l.trim_end().ends_with("0.000000")), "{text}");
}

#[test]
fn usage_errors_exit_two() {
    let out = rigforge(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert!(out.stdout.is_empty());
    let out = rigforge(&["tokenize", "x.json", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = rigforge(&["synth-gen", "--count", "2"]);
    assert_eq!(out.status.code(), Some(2), "missing --out");
    assert_eq!(rigforge(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_three_and_leave_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.json");
    let target = tmp.path().join("out.tok");
    let out = rigforge(&["tokenize", p(&missing), "--out", p(&target)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!target.exists());

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"version": 1, "joints": [], "bones": [[0, 1]]}"#).unwrap();
    let out = rigforge(&["tokenize", p(&bad), "--json-errors", "--out", p(&target)]);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], 3);
    assert_eq!(err["error"]["kind"], "data");
    assert!(err["error"]["message"].as_str().is_some_and(|m| !m.is_empty()));
    assert!(all_files(tmp.path()).iter().all(|f| f == &bad));

    let out = rigforge(&["frobnicate", "--json-errors"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "usage");
}

#[test]
fn corpus_generation_is_checksummed_and_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    ok(&["synth-gen", "--count", "0", "--out", p(&empty)]);
    assert!(all_files(&empty).is_empty());

    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["synth-gen", "--count", "20", "--points", "128", "--out", p(&a)]);
    ok(&["synth-gen", "--count", "20", "--points", "128", "--out", p(&b)]);
    let manifest = read_manifest(&a).unwrap();
    assert_eq!(manifest.assets.len(), 20);
    for e in &manifest.assets {
        assert_eq!(e.files.len(), 5);
        for rec in e.files.values() {
            assert_eq!(sha256_hex(&std::fs::read(a.join(&rec.path)).unwrap()), rec.sha256);
        }
    }
    let names = |d: &Path| all_files(d).iter().map(|f| f.file_name().unwrap().to_owned()).collect::<Vec<_>>();
    assert_eq!(names(&a), names(&b));
    for f in all_files(&a) {
        assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(b.join(f.file_name().unwrap())).unwrap());
    }
    assert_eq!(rigforge::corpus::load_corpus(&a).unwrap().len(), 20);
}

#[test]
fn geometry_commands_produce_valid_output() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path(), 2, &["--template", "quadruped"]);
    let (mesh, rig) = (c.join("asset_0001.obj"), c.join("asset_0001.rig.json"));

    let moved = tmp.path().join("moved.obj");
    let original = read_obj(&mesh).unwrap();
    let text: String = original
        .vertices()
        .iter()
        .map(|v| format!("v {} {} {}\n", 3.0 * v.x + 1.0, 3.0 * v.y - 2.0, 3.0 * v.z))
        .chain(original.faces().iter().map(|f| format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1)))
        .collect();
    std::fs::write(&moved, text).unwrap();
    let normalized = tmp.path().join("normalized.obj");
    ok(&["normalize", p(&moved), "--out", p(&normalized)]);
    let back = read_obj(&normalized).unwrap();
    for (u, v) in back.vertices().iter().zip(original.vertices()) {
        assert!(u.distance(*v) < 1e-6);
    }

    let gvb = tmp.path().join("gvb.json");
    ok(&["gvb", p(&mesh), p(&rig), "--k", "2", "--out", p(&gvb)]);
    let skin = Rig::read(&gvb).unwrap().skin.unwrap();
    assert_eq!(skin.rows(), original.vertex_count());
    for r in 0..skin.rows() {
        assert!((skin.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(skin.row(r).iter().filter(|&&w| w > 0.0).count() <= 2);
    }
    let prior = ok(&["geodesic", p(&mesh), p(&rig)]);
    let json: serde_json::Value = serde_json::from_slice(&prior.stdout).unwrap();
    assert_eq!(json["prior"], true);

    let poses = tmp.path().join("poses");
    ok(&["deform", p(&rig), p(&mesh), "--count", "3", "--out", p(&poses)]);
    let files = all_files(&poses);
    assert_eq!(files.len(), 3);
    assert_eq!(read_obj(&files[0]).unwrap().vertex_count(), original.vertex_count());
}

#[test]
fn hierarchical_pipeline_on_an_overfit_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("config.json");
    std::fs::write(&cfg, TOY_CONFIG).unwrap();
    let c = corpus(tmp.path(), 2, &["--template", "chain", "--min-joints", "4", "--max-joints", "6"]);
    let (seq, full) = (tmp.path().join("seq.json"), tmp.path().join("full.json"));
    ok(&["train-skeleton", p(&c), "--ordering", "hierarchical", "--config", p(&cfg), "--out", p(&seq)]);
    ok(&["train-skin", p(&c), "--checkpoint", p(&seq), "--config", p(&cfg), "--out", p(&full)]);

    let mesh = c.join("asset_0000.obj");
    let run = |name: &str| {
        let out = tmp.path().join(name);
        ok(&["pipeline", p(&mesh), "--checkpoint", p(&full), "--ordering", "hierarchical", "--config", p(&cfg), "--out", p(&out)]);
        out
    };
    let first = run("rig1.json");
    let rig = Rig::read(&first).unwrap();
    let skin = rig.skin.as_ref().unwrap();
    assert_eq!(skin.rows(), read_obj(&mesh).unwrap().vertex_count());
    assert_eq!(skin.joints(), rig.skeleton.joint_count());
    for r in 0..skin.rows() {
        assert!((skin.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
    assert!(rig.skeleton.root().is_some() && rig.skeleton.parents().is_some());
    let truth = Rig::read(&c.join("asset_0000.rig.json")).unwrap();
    assert_eq!(rig.skeleton.joint_count(), truth.skeleton.joint_count());
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(run("rig2.json")).unwrap());

    let gen = ok(&["gen-skeleton", p(&mesh), "--checkpoint", p(&seq), "--config", p(&cfg)]);
    assert!(Rig::from_json(std::str::from_utf8(&gen.stdout).unwrap(), "stdout").is_ok());
    let predicted = tmp.path().join("predicted.json");
    ok(&["predict-skin", p(&mesh), p(&c.join("asset_0000.rig.json")), "--checkpoint", p(&full), "--config", p(&cfg), "--out", p(&predicted)]);
    assert!(Rig::read(&predicted).unwrap().skin.is_some());
}
