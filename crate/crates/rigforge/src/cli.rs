//! The `rigforge` command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use rigforge_core::animation::{lbs_deform, random_poses, RiggedAsset};
use rigforge_core::config::PipelineConfig;
use rigforge_core::geodesic::{geodesic_prior, gvb_baseline};
use rigforge_core::geometry::normalize_to_unit_cube;
use rigforge_core::metrics::{deformation_error, SkeletonReport, SkinReport};
use rigforge_core::sequencer::{detokenize, tokenize, Ordering};
use rigforge_core::synthgen::{SynthSpec, Template};
use rigforge_core::{Mesh, NormalizationTransform, Skeleton};

use crate::checkpoint::Checkpoint;
use crate::corpus::{build_corpus, load_corpus};
use crate::error::Error;
use crate::fsio::{read_string, write_atomic};
use crate::obj::{emit_obj, read_obj, skin_colors, write_obj};
use crate::pipeline::{self, Prepared, Rigger};
use crate::report::{report_json, table};
use crate::rigfile::Rig;
use crate::skinfile::SkinFile;
use crate::tokfile::{emit_tokens, read_tokens};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "rigforge", version, about = "Skeleton generation and skinning-weight prediction for triangle meshes")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// Pipeline configuration (JSON); missing fields take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Bone ordering used for tokens and skeleton generation.
    #[arg(long, global = true, value_enum)]
    pub ordering: Option<OrderingArg>,
    /// Output file or directory; most commands print to stdout without it.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Report failures as a JSON object on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderingArg {
    Spatial,
    Hierarchical,
}

impl From<OrderingArg> for Ordering {
    fn from(o: OrderingArg) -> Self {
        match o {
            OrderingArg::Spatial => Ordering::Spatial,
            OrderingArg::Hierarchical => Ordering::Hierarchical,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic rigged corpus into the `--out` directory.
    SynthGen {
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// Use one template for every asset instead of cycling through all four.
        #[arg(long)]
        template: Option<String>,
        #[arg(long, default_value_t = 3)]
        min_joints: usize,
        #[arg(long, default_value_t = 12)]
        max_joints: usize,
        /// Surface samples per asset; defaults to the configured sample count.
        #[arg(long)]
        points: Option<usize>,
    },
    /// Move a mesh (and optionally its rig) into the unit cube.
    Normalize {
        mesh: PathBuf,
        #[arg(long)]
        rig: Option<PathBuf>,
    },
    /// Rig JSON to a token file.
    Tokenize { rig: PathBuf },
    /// Token file to rig JSON.
    Detokenize { tokens: PathBuf },
    /// Train the skeleton model on a corpus and write a checkpoint.
    TrainSkeleton {
        corpus: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Generate a skeleton for a mesh.
    GenSkeleton {
        mesh: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Geodesic prior matrix for a mesh and rig.
    Geodesic { mesh: PathBuf, rig: PathBuf },
    /// Geodesic-voxel-binding baseline skinning.
    Gvb {
        mesh: PathBuf,
        rig: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
    },
    /// Train the skinning model on a corpus; adds a skin section to the checkpoint.
    TrainSkin {
        corpus: PathBuf,
        /// Existing checkpoint to extend (needed when skinning uses shape tokens).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Predict skinning weights for a mesh and rig.
    PredictSkin {
        mesh: PathBuf,
        rig: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Pose a skinned rig randomly and write the deformed meshes to `--out`.
    Deform {
        rig: PathBuf,
        mesh: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        max_angle: Option<f64>,
    },
    /// Chamfer metrics between two rigs.
    EvalSkeleton { pred: PathBuf, truth: PathBuf },
    /// Skinning metrics between two skinned rigs; `--mesh` adds deformation error.
    EvalSkin {
        pred: PathBuf,
        truth: PathBuf,
        #[arg(long)]
        mesh: Option<PathBuf>,
    },
    /// Mesh in, rig JSON out: both stages.
    Pipeline {
        mesh: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Numeric(_) => EXIT_NUMERIC,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Data(_) => "data",
            Failure::Numeric(_) => "numeric",
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": { "code": self.code(), "kind": self.kind(), "message": self.message() } }).to_string()
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

impl From<rigforge_core::Error> for Failure {
    fn from(e: rigforge_core::Error) -> Self {
        Error::from(e).into()
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let json_errors = args.iter().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            if code == EXIT_USAGE && json_errors {
                eprintln!("{}", Failure::Usage(e.to_string()).to_json());
            } else {
                let _ = e.print();
            }
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            if cli.global.json_errors {
                eprintln!("{}", f.to_json());
            } else {
                eprintln!("rigforge: {} error: {}", f.kind(), f.message());
            }
            f.code()
        }
    }
}

fn load_config(g: &GlobalArgs) -> Outcome<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => serde_json::from_str(&read_string(p)?)
            .map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = g.ordering {
        cfg.ordering = o.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes to `--out` atomically, or to stdout.
fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Failure::Data(format!("stdout: {e}")))
        }
    }
}

fn require_out(g: &GlobalArgs, what: &str) -> Outcome<PathBuf> {
    g.out.clone().ok_or_else(|| Failure::Usage(format!("{what} needs --out")))
}

/// The rig's transform into the unit cube: its own record, or identity.
fn rig_transform(rig: &Rig) -> NormalizationTransform {
    rig.normalization.unwrap_or_default()
}

/// Normalizes a mesh and maps the rig's joints with the same transform.
fn normalized_pair(mesh: &Mesh, rig: &Rig) -> Outcome<(Mesh, Skeleton, NormalizationTransform)> {
    if rig.skin.as_ref().is_some_and(|s| s.rows() != mesh.vertex_count()) {
        return Err(Failure::Data("rig skin rows do not match the mesh vertex count".into()));
    }
    let (m, s, t) = normalize_to_unit_cube(mesh, Some(&rig.skeleton))?;
    Ok((m, s.expect("skeleton was passed in"), t))
}

fn progress(label: &'static str, total: usize) -> impl FnMut(usize, f64) {
    move |step, loss| {
        if step % 100 == 0 || step + 1 == total {
            eprintln!("{label} step {}/{total} loss {loss:.6}", step + 1);
        }
    }
}

pub fn execute(cli: &Cli) -> Outcome {
    let g = &cli.global;
    let out = g.out.as_deref();
    match &cli.command {
        Command::SynthGen { count, template, min_joints, max_joints, points } => {
            let cfg = load_config(g)?;
            let dir = require_out(g, "synth-gen")?;
            let template: Option<Template> = template.as_deref().map(str::parse).transpose()?;
            let base = g.seed.unwrap_or(0);
            let specs: Vec<SynthSpec> = (0..*count as u64)
                .map(|i| SynthSpec {
                    template: template.unwrap_or(Template::ALL[(i % 4) as usize]),
                    joints: (*min_joints, *max_joints),
                    seed: base.wrapping_add(i),
                    ..SynthSpec::default()
                })
                .collect();
            let manifest = build_corpus(&specs, &dir, points.unwrap_or(cfg.sample_count))?;
            eprintln!("wrote {} assets to {}", manifest.assets.len(), dir.display());
            Ok(())
        }
        Command::Normalize { mesh, rig } => {
            let m = read_obj(mesh)?;
            match rig {
                None => {
                    let (nm, _, _) = normalize_to_unit_cube(&m, None)?;
                    emit(out, &emit_obj(&nm, None)?)
                }
                Some(r) => {
                    let dir = require_out(g, "normalize --rig")?;
                    let rig = Rig::read(r)?;
                    let (nm, skel, t) = normalized_pair(&m, &rig)?;
                    let rig = Rig { skeleton: skel, normalization: Some(t), ..rig };
                    write_obj(&dir.join("mesh.obj"), &nm, None)?;
                    Ok(rig.write(&dir.join("rig.json"))?)
                }
            }
        }
        Command::Tokenize { rig } => {
            let rig = Rig::read(rig)?;
            let t = rig_transform(&rig);
            let skel = rig.skeleton.map_joints(|p| t.apply(p));
            let ordering = g.ordering.map(Ordering::from).unwrap_or_default();
            emit(out, &emit_tokens(&tokenize(&skel, ordering)?))
        }
        Command::Detokenize { tokens } => {
            let seq = read_tokens(tokens, g.ordering.map(Ordering::from).unwrap_or_default())?;
            let decoded = detokenize(&seq.tokens, seq.ordering)?;
            if !decoded.is_clean() {
                eprintln!("warning: token stream was truncated or needed repair");
            }
            emit(out, &Rig::new(decoded.skeleton).to_json())
        }
        Command::TrainSkeleton { corpus, steps } => {
            let mut cfg = load_config(g)?;
            if let Some(s) = steps {
                cfg.seq_training.steps = *s;
            }
            let path = require_out(g, "train-skeleton")?;
            let assets = pipeline::normalize_assets(&load_corpus(corpus)?, &cfg)?;
            let examples = pipeline::skeleton_examples(&assets, &cfg)?;
            let params = pipeline::train_skeleton(&examples, &cfg, progress("skeleton", cfg.seq_training.steps))?;
            let mut ck = Checkpoint::default();
            ck.set_skeleton(&params, cfg.ordering);
            Ok(ck.write(&path)?)
        }
        Command::GenSkeleton { mesh, checkpoint } => {
            let rigger = Rigger::from_checkpoint(&Checkpoint::read(checkpoint)?, load_config(g)?)?;
            let prepared = rigger.prepare(&read_obj(mesh)?)?;
            let generated = rigger.generate_skeleton(&prepared, g.ordering.map(Ordering::from))?;
            if generated.truncated {
                eprintln!("warning: sampling stopped at the token budget");
            }
            let rig = pipeline::to_mesh_space(Rig::new(generated.skeleton), prepared.transform)?;
            emit(out, &rig.to_json())
        }
        Command::Geodesic { mesh, rig } => {
            let cfg = load_config(g)?;
            let (m, skel, _) = normalized_pair(&read_obj(mesh)?, &Rig::read(rig)?)?;
            let prior = geodesic_prior(&m, &skel, &cfg.geodesic)?;
            if prior.used_fallback() {
                eprintln!("warning: {} vertices fell back to Euclidean distances", prior.fallback_rows.len());
            }
            let file = SkinFile { weights: prior.matrix, prior: true, fallback_rows: prior.fallback_rows };
            emit(out, &file.to_json())
        }
        Command::Gvb { mesh, rig, k } => {
            let cfg = load_config(g)?;
            let rig = Rig::read(rig)?;
            let (m, skel, _) = normalized_pair(&read_obj(mesh)?, &rig)?;
            let prior = geodesic_prior(&m, &skel, &cfg.geodesic)?;
            let skin = gvb_baseline(&prior, *k)?;
            emit(out, &rig.with_skin(skin)?.to_json())
        }
        Command::TrainSkin { corpus, checkpoint, steps } => {
            let mut cfg = load_config(g)?;
            if let Some(s) = steps {
                cfg.skin_training.steps = *s;
            }
            let path = require_out(g, "train-skin")?;
            let mut ck = match checkpoint {
                Some(p) => Checkpoint::read(p)?,
                None => Checkpoint::default(),
            };
            let seq = ck.skeleton.is_some().then(|| ck.skeleton_model()).transpose()?.map(|(p, _)| p);
            if let Some(p) = &seq {
                cfg.seqmodel = p.config().clone();
                cfg.sample_count = p.config().point_count;
            }
            let assets = pipeline::normalize_assets(&load_corpus(corpus)?, &cfg)?;
            let examples = pipeline::skin_examples(&assets, seq.as_ref(), &cfg)?;
            let params = pipeline::train_skin(&examples, &cfg, progress("skin", cfg.skin_training.steps))?;
            ck.set_skin(&params, cfg.schedule);
            Ok(ck.write(&path)?)
        }
        Command::PredictSkin { mesh, rig, checkpoint } => {
            let rigger = Rigger::from_checkpoint(&Checkpoint::read(checkpoint)?, load_config(g)?)?;
            let rig = Rig::read(rig)?;
            let m = read_obj(mesh)?;
            let (nm, skel, transform) = normalized_pair(&m, &rig)?;
            let cloud = rigforge_core::geometry::sample_surface(&nm, rigger.config.sample_count, rigger.config.seq_sampling.seed)?;
            let prepared = Prepared { mesh: nm, transform, cloud };
            let (skin, _) = rigger.predict_skin(&prepared, &skel)?;
            emit(out, &rig.with_skin(skin)?.to_json())
        }
        Command::Deform { rig, mesh, count, max_angle } => {
            let cfg = load_config(g)?;
            let dir = require_out(g, "deform")?;
            let rig = Rig::read(rig)?;
            let skin = rig.skin.clone().ok_or_else(|| Failure::Data("rig has no skin".into()))?;
            let m = read_obj(mesh)?;
            let asset = RiggedAsset::new(m, rig.skeleton.clone(), skin, rig_transform(&rig))?;
            let poses = random_poses(
                &asset.skeleton,
                count.unwrap_or(cfg.poses.count),
                max_angle.unwrap_or(cfg.poses.max_angle_deg),
                cfg.poses.seed,
            );
            let colors = skin_colors(&asset.skin);
            for (i, pose) in poses.iter().enumerate() {
                let deformed = lbs_deform(&asset, pose)?;
                if deformed.vertices().iter().any(|v| !v.is_finite()) {
                    return Err(Failure::Numeric("deformed vertex is not finite".into()));
                }
                write_obj(&dir.join(format!("pose_{i:03}.obj")), &deformed, Some(&colors))?;
            }
            Ok(())
        }
        Command::EvalSkeleton { pred, truth } => {
            let cfg = load_config(g)?;
            let (p, t) = (Rig::read(pred)?, Rig::read(truth)?);
            let tf = rig_transform(&t);
            let pa = p.skeleton.map_joints(|v| tf.apply(v));
            let ta = t.skeleton.map_joints(|v| tf.apply(v));
            let r = SkeletonReport::compute(&pa, &ta, cfg.metrics.samples_per_bone)?;
            let s = r.scaled();
            print!(
                "{}",
                table(
                    "skeleton metrics (x1e-2, normalized units)",
                    &[
                        ("CD-J2J", format!("{:.3}", s.cd_j2j)),
                        ("CD-J2B", format!("{:.3}", s.cd_j2b)),
                        ("CD-B2B", format!("{:.3}", s.cd_b2b)),
                    ]
                )
            );
            if let Some(o) = out {
                write_atomic(o, report_json("skeleton", &r).as_bytes())?;
            }
            Ok(())
        }
        Command::EvalSkin { pred, truth, mesh } => {
            let cfg = load_config(g)?;
            let (p, t) = (Rig::read(pred)?, Rig::read(truth)?);
            let ps = p.skin.clone().ok_or_else(|| Failure::Data("predicted rig has no skin".into()))?;
            let ts = t.skin.clone().ok_or_else(|| Failure::Data("reference rig has no skin".into()))?;
            let mut r = SkinReport::compute(&ps, &ts, cfg.metrics.influence_threshold)?;
            if let Some(mp) = mesh {
                let m = read_obj(mp)?;
                let tf = rig_transform(&t);
                let nm = m.map_vertices(|v| tf.apply(v));
                let truth_asset = RiggedAsset::new(nm, t.skeleton.map_joints(|v| tf.apply(v)), ts, tf)?;
                let pred_asset = truth_asset.with_skin(ps)?;
                let poses = random_poses(&truth_asset.skeleton, cfg.poses.count, cfg.poses.max_angle_deg, cfg.poses.seed);
                r.avg_dist = Some(deformation_error(&pred_asset, &truth_asset, &poses)?);
            }
            let undefined = |flag: bool, v: f64| if flag { "undefined".to_string() } else { format!("{v:.4}") };
            let mut rows = vec![
                ("precision", undefined(r.precision_undefined, r.precision)),
                ("recall", undefined(r.recall_undefined, r.recall)),
                ("avg L1", format!("{:.4}", r.avg_l1)),
            ];
            if let Some(d) = r.avg_dist {
                rows.push(("avg dist", format!("{d:.6}")));
            }
            print!("{}", table("skinning metrics", &rows));
            if let Some(o) = out {
                write_atomic(o, report_json("skin", &r).as_bytes())?;
            }
            Ok(())
        }
        Command::Pipeline { mesh, checkpoint } => {
            let rigger = Rigger::from_checkpoint(&Checkpoint::read(checkpoint)?, load_config(g)?)?;
            let rig = rigger.rig(&read_obj(mesh)?, g.ordering.map(Ordering::from))?;
            emit(out, &rig.to_json())
        }
    }
}
