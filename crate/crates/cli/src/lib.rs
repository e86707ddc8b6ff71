//! The `monokp` command-line tool.
//!
//! Subcommands generate synthetic KITTI-style frames with ground truth, solve
//! translations from keypoint files, fit the deformable template to frames,
//! score fits, render silhouettes and measure how the solver reacts to pixel
//! noise. Every command is deterministic for a fixed `--seed`, whatever the
//! value of `--jobs`.
//!
//! Settings resolve as flags, then the `--config` file, then defaults. The
//! config file holds `key = value` lines (`#` starts a comment); keys a
//! command does not use are ignored, keys no command knows are an error.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use monokp::autolabel::{export_keypoint_labels, fit, prepare_points, AutolabelConfig, FitResult, Observation};
use monokp::boxes::{iou_3d, labeling_quality, Box3D};
use monokp::geometry::{Pose, Pt3, Vec3};
use monokp::kitti::{
    encode_pgm, encode_velodyne, format_calib, format_labels, intrinsics_from_p2, read_calib, read_labels, read_mask,
    read_velodyne, velo_to_camera, CalibSet, KittiLabel, PointCloud,
};
use monokp::kpfile::{format_keypoint_records, read_keypoint_records, KeypointRecord};
use monokp::orientation::yaw_to_alpha;
use monokp::raster::{render_silhouette, MaskImage};
use monokp::shape::{deform, format_basis, synthetic_car_basis, ShapeBasis, ShapeCoeff};
use monokp::synth::{generate_object, object_rng, SynthConfig, SynthObject};
use monokp::CameraIntrinsics;

/// Process exit codes, one per failure class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    /// Bad command line, e.g. a missing required output path.
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    /// Malformed or invalid input files and config values.
    pub const INPUT: i32 = 4;
    /// Projection failures: points or meshes behind the camera.
    pub const GEOMETRY: i32 = 5;
    /// Solver or fit failures: rank deficiency, too few points, divergence.
    pub const SOLVE: i32 = 6;
}

pub fn error_class(e: &monokp::Error) -> i32 {
    use monokp::Error::*;
    match e {
        Io(_) => exit::IO,
        PointBehindCamera { .. } | DegenerateRay | AllVerticesClipped | ProjectionFailure(_) => exit::GEOMETRY,
        TooFewKeypoints(_)
        | RankDeficient { .. }
        | AllWeightsZero
        | SingularNormalMatrix
        | TooFewPoints(_)
        | InsufficientPoints { .. }
        | DivergedLoss(_) => exit::SOLVE,
        _ => exit::INPUT,
    }
}

/// Exit code for an error chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<monokp::Error>() {
            return error_class(e);
        }
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return e.code;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return exit::INPUT;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return exit::IO;
        }
    }
    exit::INTERNAL
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError {
            code: exit::USAGE,
            msg: msg.into(),
        }
    }

    fn input(msg: impl Into<String>) -> Self {
        CliError {
            code: exit::INPUT,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CliError {}

#[derive(Parser, Debug)]
#[command(
    name = "monokp",
    version,
    about = "Keypoint pose solving and shape auto-labeling for monocular 3D vehicles"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// Seed for every random choice (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `key = value` settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (a file for `render` and `basis`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Objects processed in parallel (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Report format on stdout.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Text,
    Jsonl,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate seeded synthetic frames, ground truth and keypoint records.
    #[command(allow_negative_numbers = true)]
    Synth(SynthArgs),
    /// Solve object translations from a keypoint file.
    Solve(SolveArgs),
    /// Fit the deformable template to frames and export keypoint labels.
    #[command(allow_negative_numbers = true)]
    Autolabel(AutolabelArgs),
    /// Score auto-label fits against synthetic ground truth.
    Eval(EvalArgs),
    /// Render the silhouette of a posed template to a PGM mask.
    #[command(allow_negative_numbers = true)]
    Render(RenderArgs),
    /// Translation error of the solver under 2D keypoint noise.
    #[command(allow_negative_numbers = true)]
    NoiseSweep(SweepArgs),
    /// Write the built-in synthetic car shape basis.
    Basis,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SynthArgs {
    /// Number of objects.
    #[arg(long)]
    pub n: Option<usize>,
    /// Gaussian noise on the exported 2D keypoints, pixels.
    #[arg(long)]
    pub noise_px: Option<f64>,
    /// Ground tilt, degrees.
    #[arg(long)]
    pub tilt_deg: Option<f64>,
    /// Keypoint indices displaced as outliers in every object.
    #[arg(long, value_delimiter = ',')]
    pub outliers: Option<Vec<usize>>,
    /// Shape basis file (default: built-in synthetic car).
    #[arg(long)]
    pub basis: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SolveArgs {
    /// Keypoint record file.
    pub keypoints: PathBuf,
    /// Keypoint indices whose constraint weights are set to zero.
    #[arg(long, value_delimiter = ',')]
    pub zero_weights: Vec<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct AutolabelArgs {
    /// A frame directory, a directory of frame directories, or a `synth`
    /// output directory.
    pub input: PathBuf,
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub softness: Option<f64>,
    /// Optimize yaw only; pitch and roll stay zero.
    #[arg(long)]
    pub yaw_only: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct EvalArgs {
    /// `autolabel` output directory.
    #[arg(long)]
    pub fits: PathBuf,
    /// `synth` output directory.
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Args, Debug, Clone, Default)]
pub struct RenderArgs {
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Shape coefficients (default: all zero).
    #[arg(long, value_delimiter = ',')]
    pub coeffs: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0)]
    pub yaw: f64,
    #[arg(long, default_value_t = 0.0)]
    pub pitch: f64,
    #[arg(long, default_value_t = 0.0)]
    pub roll: f64,
    /// Translation `x,y,z`, meters.
    #[arg(long, value_delimiter = ',', required = true)]
    pub t: Vec<f64>,
    /// KITTI calib file; intrinsics come from P2 (default: the synthetic
    /// camera).
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Image size `WIDTHxHEIGHT`.
    #[arg(long, default_value = "256x256")]
    pub size: String,
    #[arg(long, default_value_t = 0.0)]
    pub softness: f64,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SweepArgs {
    pub keypoints: PathBuf,
    /// Pixel noise levels (default 0,0.5,1,2,4).
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    /// Trials per record and noise level (default 100).
    #[arg(long)]
    pub trials: Option<usize>,
}

/// Parsed `--config` file.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    pub path: Option<PathBuf>,
    entries: Vec<(usize, String, String)>,
}

const GENERAL_KEYS: &[&str] = &["seed", "jobs", "format"];
const SYNTH_KEYS: &[&str] = &[
    "n",
    "noise_px",
    "tilt_deg",
    "outliers",
    "outlier_px",
    "point_noise",
    "surface_points",
    "ground_points",
    "clutter_points",
    "box_center_sigma",
    "box_height_sigma",
    "box_yaw_sigma_deg",
];
const SWEEP_KEYS: &[&str] = &["sigmas", "trials"];

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::input(format!("config line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            let known = GENERAL_KEYS
                .iter()
                .chain(SYNTH_KEYS)
                .chain(SWEEP_KEYS)
                .chain(AutolabelConfig::keys())
                .any(|x| *x == k);
            if !known {
                return Err(CliError::input(format!("config line {}: unknown key {k:?}", i + 1)).into());
            }
            entries.push((i + 1, k.to_string(), v.trim().to_string()));
        }
        Ok(ConfigFile { path: None, entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text)?;
        cfg.path = Some(path.to_path_buf());
        Ok(cfg)
    }

    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.entries
            .iter()
            .rev()
            .find(|(_, k, _)| k == key)
            .map(|(n, _, v)| (*n, v.as_str()))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((n, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::input(format!("config line {n}: bad value {v:?} for {key}")).into()),
        }
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some((n, v)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse())
                .collect::<std::result::Result<Vec<T>, _>>()
                .map(Some)
                .map_err(|_| CliError::input(format!("config line {n}: bad list {v:?} for {key}")).into()),
        }
    }

    /// Apply every auto-label key present in the file.
    pub fn apply_autolabel(&self, cfg: &mut AutolabelConfig) -> Result<()> {
        for (n, k, v) in &self.entries {
            if AutolabelConfig::keys().contains(&k.as_str()) {
                cfg.set(k, v)
                    .map_err(|e| CliError::input(format!("config line {n}: {e}")))?;
            }
        }
        Ok(())
    }
}

/// Settings shared by every command after flag/file/default resolution.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub seed: u64,
    pub jobs: usize,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub config: ConfigFile,
}

impl RunContext {
    pub fn resolve(g: &GlobalArgs) -> Result<Self> {
        let config = match &g.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let jobs = match g.jobs {
            Some(j) => j,
            None => config
                .get("jobs")?
                .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
        };
        let format = match g.format {
            Some(f) => f,
            None => match config.raw("format") {
                None => Format::Text,
                Some((n, v)) => Format::from_str(v, true)
                    .map_err(|_| CliError::input(format!("config line {n}: bad format {v:?}")))?,
            },
        };
        Ok(RunContext {
            seed: match g.seed {
                Some(s) => s,
                None => config.get("seed")?.unwrap_or(0),
            },
            jobs: jobs.max(1),
            format,
            out: g.out.clone(),
            config,
        })
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::usage("this command needs --out").into())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        Ok(rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build()?)
    }

    fn manifest(&self, command: &str, inputs: Vec<String>, seeded: bool) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            inputs,
            config: self.config.path.as_ref().map(|p| p.display().to_string()),
            seed: seeded.then_some(self.seed),
            out: self.out.as_ref().map(|p| p.display().to_string()),
            objects: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub config: Option<String>,
    /// Present for every command that draws random numbers.
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub objects: Vec<ObjectStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectStatus {
    pub id: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    /// Exit code class of the failure, 0 when ok.
    pub class: i32,
}

impl ObjectStatus {
    fn from_result<T>(id: &str, r: &Result<T>) -> Self {
        match r {
            Ok(_) => ObjectStatus {
                id: id.to_string(),
                ok: true,
                error: None,
                class: exit::OK,
            },
            Err(e) => ObjectStatus {
                id: id.to_string(),
                ok: false,
                error: Some(format!("{e:#}")),
                class: exit_code(e),
            },
        }
    }
}

impl RunManifest {
    /// Highest failure class over all objects, 0 when all succeeded.
    pub fn exit_code(&self) -> i32 {
        self.objects.iter().map(|o| o.class).max().unwrap_or(exit::OK)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(
            &dir.join("manifest.json"),
            serde_json::to_string_pretty(self)?.as_bytes(),
        )
    }
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| anyhow!("no file name in {}", path.display()))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<String> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(&it)?);
        s.push('\n');
    }
    Ok(s)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

pub fn load_basis(path: Option<&Path>) -> Result<ShapeBasis> {
    match path {
        Some(p) => ShapeBasis::read(p).with_context(|| format!("reading basis {}", p.display())),
        None => Ok(synthetic_car_basis()),
    }
}

fn status_lines(w: &mut dyn Write, format: Format, objects: &[ObjectStatus]) -> Result<()> {
    for o in objects {
        match format {
            Format::Jsonl => writeln!(w, "{}", serde_json::to_string(o)?)?,
            Format::Text => match &o.error {
                None => writeln!(w, "{} ok", o.id)?,
                Some(e) => writeln!(w, "{} error (class {}): {e}", o.id, o.class)?,
            },
        }
    }
    Ok(())
}

/// Run a parsed command line, writing the report to `w`. Returns the exit
/// code for per-object failures; fatal errors come back as `Err`.
pub fn run(cli: Cli, w: &mut dyn Write) -> Result<i32> {
    let ctx = RunContext::resolve(&cli.global)?;
    let manifest = match &cli.command {
        Command::Synth(a) => cmd_synth(&ctx, a, w)?,
        Command::Solve(a) => cmd_solve(&ctx, a, w)?,
        Command::Autolabel(a) => cmd_autolabel(&ctx, a, w)?,
        Command::Eval(a) => cmd_eval(&ctx, a, w)?,
        Command::Render(a) => cmd_render(&ctx, a, w)?,
        Command::NoiseSweep(a) => cmd_noise_sweep(&ctx, a, w)?,
        Command::Basis => cmd_basis(&ctx, w)?,
    };
    Ok(manifest.exit_code())
}

// ---------------------------------------------------------------- synth

/// Ground truth for one synthetic object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    pub s: Vec<f64>,
    pub pose: Pose,
    pub true_box: Box3D,
    pub annotated_box: Box3D,
}

impl From<&SynthObject> for TruthRecord {
    fn from(o: &SynthObject) -> Self {
        TruthRecord {
            id: o.id.clone(),
            s: o.s.0.clone(),
            pose: o.pose,
            true_box: o.true_box,
            annotated_box: o.annotated_box,
        }
    }
}

/// KITTI-style LiDAR extrinsics: LiDAR x forward, y left, z up.
pub fn synthetic_calib(k: &CameraIntrinsics) -> CalibSet {
    let mut c = CalibSet::from_intrinsics(k);
    c.tr_velo_to_cam = [[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0]];
    c
}

fn camera_to_velo(p: &Pt3) -> [f32; 4] {
    [p.z as f32, -p.x as f32, -p.y as f32, 1.0]
}

pub fn synth_config(args: &SynthArgs, cfg: &ConfigFile) -> Result<(SynthConfig, usize)> {
    let mut s = SynthConfig::default();
    let n = args.n.or(cfg.get("n")?).unwrap_or(10);
    s.keypoint_noise_px = args.noise_px.or(cfg.get("noise_px")?).unwrap_or(0.0);
    s.tilt_deg = args.tilt_deg.or(cfg.get("tilt_deg")?).unwrap_or(0.0);
    s.outlier_indices = match &args.outliers {
        Some(o) => o.clone(),
        None => cfg.get_list("outliers")?.unwrap_or_default(),
    };
    macro_rules! from_file {
        ($($key:literal => $field:ident),*) => {
            $(if let Some(v) = cfg.get($key)? { s.$field = v; })*
        };
    }
    from_file!(
        "outlier_px" => outlier_px,
        "point_noise" => point_noise,
        "surface_points" => surface_points,
        "ground_points" => ground_points,
        "clutter_points" => clutter_points,
        "box_center_sigma" => box_center_sigma,
        "box_height_sigma" => box_height_sigma,
        "box_yaw_sigma_deg" => box_yaw_sigma_deg
    );
    let nonneg = [
        s.keypoint_noise_px,
        s.tilt_deg,
        s.outlier_px,
        s.point_noise,
        s.box_center_sigma,
        s.box_height_sigma,
        s.box_yaw_sigma_deg,
    ];
    if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(CliError::input("synth noise and tilt settings must be finite and nonnegative").into());
    }
    Ok((s, n))
}

fn write_frame(dir: &Path, obj: &SynthObject, cfg: &SynthConfig) -> Result<()> {
    let tmp = dir.with_file_name(format!(".{}.tmp", obj.id));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    create_dir(&tmp)?;
    let calib = synthetic_calib(&cfg.intrinsics);
    let b = &obj.annotated_box;
    let bbox = match obj.mask.on_bounds() {
        Some((x0, y0, x1, y1)) => [x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64],
        None => [0.0; 4],
    };
    let label = KittiLabel::from_box("Car", b, yaw_to_alpha(b.yaw, &b.center.coords)?, bbox);
    let cloud = PointCloud {
        points: obj.cloud.iter().map(camera_to_velo).collect(),
    };
    fs::write(tmp.join("calib.txt"), format_calib(&calib))?;
    fs::write(tmp.join("label.txt"), format_labels(&[label]))?;
    fs::write(tmp.join("velodyne.bin"), encode_velodyne(&cloud))?;
    fs::write(tmp.join("mask.pgm"), encode_pgm(&obj.mask))?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir).with_context(|| format!("renaming to {}", dir.display()))?;
    Ok(())
}

/// Generate `n` synthetic objects. Each becomes a frame directory under
/// `objects/` holding `calib.txt`, `label.txt` (the noisy annotation box),
/// `velodyne.bin` and `mask.pgm`; `truth.jsonl` and `keypoints.txt` collect
/// ground truth and exact keypoint records.
pub fn cmd_synth(ctx: &RunContext, args: &SynthArgs, w: &mut dyn Write) -> Result<RunManifest> {
    let out = ctx.out_dir()?;
    let (cfg, n) = synth_config(args, &ctx.config)?;
    let basis = load_basis(args.basis.as_deref())?;
    let objects_dir = out.join("objects");
    create_dir(&objects_dir)?;
    let results: Vec<Result<SynthObject>> = ctx.pool()?.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let obj = generate_object(&basis, &cfg, ctx.seed, i)?;
                write_frame(&objects_dir.join(&obj.id), &obj, &cfg)?;
                Ok(obj)
            })
            .collect()
    });
    let mut manifest = ctx.manifest(
        "synth",
        args.basis.iter().map(|p| p.display().to_string()).collect(),
        true,
    );
    manifest.objects = results
        .iter()
        .enumerate()
        .map(|(i, r)| ObjectStatus::from_result(&format!("{i:06}"), r))
        .collect();
    let ok: Vec<&SynthObject> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    write_atomic(
        &out.join("truth.jsonl"),
        jsonl(ok.iter().map(|o| TruthRecord::from(*o)))?.as_bytes(),
    )?;
    let records: Vec<KeypointRecord> = ok.iter().map(|o| o.keypoints.clone()).collect();
    write_atomic(&out.join("keypoints.txt"), format_keypoint_records(&records).as_bytes())?;
    manifest.write(out)?;
    status_lines(w, ctx.format, &manifest.objects)?;
    if ctx.format == Format::Text {
        writeln!(w, "wrote {} of {n} objects to {}", ok.len(), out.display())?;
    }
    Ok(manifest)
}

// ---------------------------------------------------------------- solve

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weighted_rms_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub effective_rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

fn solve_record(rec: &KeypointRecord, zero: &[usize]) -> Result<SolveRecord> {
    let mut rec = rec.clone();
    rec.keypoints.zero_weights(zero)?;
    let sol = rec.solve()?;
    Ok(SolveRecord {
        id: rec.id.clone(),
        t: Some([sol.t.x, sol.t.y, sol.t.z]),
        weighted_rms_residual: Some(sol.weighted_rms_residual),
        effective_rank: Some(sol.effective_rank),
        error: None,
    })
}

fn solve_text(r: &SolveRecord) -> String {
    match (&r.t, &r.error) {
        (Some(t), _) => format!(
            "{} {:.9} {:.9} {:.9} rms {:.3e} rank {}",
            r.id,
            t[0],
            t[1],
            t[2],
            r.weighted_rms_residual.unwrap_or(f64::NAN),
            r.effective_rank.unwrap_or(0)
        ),
        (None, Some(e)) => format!("{} error: {e}", r.id),
        (None, None) => format!("{} error", r.id),
    }
}

/// Solve every record of a keypoint file. With `--out`, writes
/// `solutions.txt`, `solutions.jsonl` and `manifest.json`.
pub fn cmd_solve(ctx: &RunContext, args: &SolveArgs, w: &mut dyn Write) -> Result<RunManifest> {
    let records =
        read_keypoint_records(&args.keypoints).with_context(|| format!("reading {}", args.keypoints.display()))?;
    let results: Vec<Result<SolveRecord>> = ctx.pool()?.install(|| {
        records
            .par_iter()
            .map(|r| solve_record(r, &args.zero_weights))
            .collect()
    });
    let mut manifest = ctx.manifest("solve", vec![args.keypoints.display().to_string()], false);
    let mut rows = Vec::with_capacity(records.len());
    for (rec, r) in records.iter().zip(&results) {
        manifest.objects.push(ObjectStatus::from_result(&rec.id, r));
        rows.push(match r {
            Ok(s) => s.clone(),
            Err(e) => SolveRecord {
                id: rec.id.clone(),
                t: None,
                weighted_rms_residual: None,
                effective_rank: None,
                error: Some(format!("{e:#}")),
            },
        });
    }
    let text: String = rows.iter().map(|r| solve_text(r) + "\n").collect();
    let lines = jsonl(&rows)?;
    match ctx.format {
        Format::Text => w.write_all(text.as_bytes())?,
        Format::Jsonl => w.write_all(lines.as_bytes())?,
    }
    if let Some(out) = &ctx.out {
        create_dir(out)?;
        write_atomic(&out.join("solutions.txt"), text.as_bytes())?;
        write_atomic(&out.join("solutions.jsonl"), lines.as_bytes())?;
        manifest.write(out)?;
    }
    Ok(manifest)
}

// ------------------------------------------------------------ autolabel

/// One object to label: a KITTI label with its frame's calibration, mask
/// and camera-frame LiDAR points.
#[derive(Debug, Clone)]
pub struct FrameObject {
    pub id: String,
    pub k: CameraIntrinsics,
    pub label: KittiLabel,
    pub mask: MaskImage,
    pub cloud: Vec<Pt3>,
}

/// Frame directories under `input`: `input` itself if it holds a
/// `label.txt`, else the subdirectories of `input/objects` or of `input`
/// that do, sorted by name.
pub fn discover_frames(input: &Path) -> Result<Vec<PathBuf>> {
    if input.join("label.txt").is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let root = if input.join("objects").is_dir() {
        input.join("objects")
    } else {
        input.to_path_buf()
    };
    let mut dirs = Vec::new();
    for entry in fs::read_dir(&root).with_context(|| format!("listing {}", root.display()))? {
        let p = entry?.path();
        let hidden = p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'));
        if !hidden && p.join("label.txt").is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Objects of one frame. A single label uses `mask.pgm`; with several,
/// label `i` uses `mask_i.pgm`. `DontCare` labels are skipped.
pub fn load_frame(dir: &Path) -> Result<Vec<FrameObject>> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "frame".into());
    let calib = read_calib(dir.join("calib.txt")).context("calib.txt")?;
    calib.validate()?;
    let k = intrinsics_from_p2(&calib)?;
    let labels: Vec<KittiLabel> = read_labels(dir.join("label.txt"))
        .context("label.txt")?
        .into_iter()
        .filter(|l| l.class != "DontCare")
        .collect();
    let cloud = velo_to_camera(
        &read_velodyne(dir.join("velodyne.bin")).context("velodyne.bin")?,
        &calib,
    );
    let single = labels.len() == 1;
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let (id, mask_name) = if single {
                (name.clone(), "mask.pgm".to_string())
            } else {
                (format!("{name}_{i}"), format!("mask_{i}.pgm"))
            };
            Ok(FrameObject {
                id,
                k,
                label,
                mask: read_mask(dir.join(&mask_name)).with_context(|| mask_name.clone())?,
                cloud: cloud.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Labeled {
    pub fit: FitResult,
    pub record: KeypointRecord,
    pub mask: MaskImage,
}

/// Segment, fit and export one object. `seed` drives ground removal.
pub fn label_object(obj: &FrameObject, basis: &ShapeBasis, cfg: &AutolabelConfig, seed: u64) -> Result<Labeled> {
    let b = obj.label.to_box();
    let obs = Observation {
        instance_mask: obj.mask.clone(),
        gt_box: b,
        points: prepare_points(&obj.cloud, &b, cfg, seed)?,
    };
    let fit = fit(&obs, basis, &obj.k, cfg)?;
    let record = export_keypoint_labels(&obj.id, &fit, basis, &obj.k)?;
    let mesh = deform(basis, &fit.s)?;
    let mask = render_silhouette(&mesh, &fit.pose, &obj.k, (obj.mask.width(), obj.mask.height()), 0.0)?;
    Ok(Labeled { fit, record, mask })
}

pub fn autolabel_config(args: &AutolabelArgs, file: &ConfigFile) -> Result<AutolabelConfig> {
    let mut cfg = AutolabelConfig::default();
    file.apply_autolabel(&mut cfg)?;
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.beta {
        cfg.beta = v;
    }
    if let Some(v) = args.steps {
        cfg.max_steps = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.softness {
        cfg.softness = v;
    }
    if args.yaw_only {
        cfg.optimize_pitch_roll = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub id: String,
    #[serde(flatten)]
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub id: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask_iou: Option<f64>,
    /// Fitted box against the label box.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub box_iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub converged: Option<bool>,
}

/// Fit every object under `input`. Writes `fits.jsonl`, `metrics.jsonl`,
/// `keypoints.txt`, `masks/<id>.pgm`, the resolved `config.txt` and
/// `manifest.json`. Object `i` (in frame order) uses ground-removal seed
/// `seed + i`.
pub fn cmd_autolabel(ctx: &RunContext, args: &AutolabelArgs, w: &mut dyn Write) -> Result<RunManifest> {
    let out = ctx.out_dir()?;
    let cfg = autolabel_config(args, &ctx.config)?;
    let basis = load_basis(args.basis.as_deref())?;
    let mut manifest = ctx.manifest("autolabel", vec![args.input.display().to_string()], true);

    let mut objects = Vec::new();
    for dir in discover_frames(&args.input)? {
        match load_frame(&dir) {
            Ok(objs) => objects.extend(objs),
            Err(e) => {
                let id = dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                manifest.objects.push(ObjectStatus::from_result::<()>(&id, &Err(e)));
            }
        }
    }
    let masks_dir = out.join("masks");
    create_dir(&masks_dir)?;
    let results: Vec<Result<Labeled>> = ctx.pool()?.install(|| {
        objects
            .par_iter()
            .enumerate()
            .map(|(i, obj)| {
                let l = label_object(obj, &basis, &cfg, ctx.seed.wrapping_add(i as u64))?;
                write_atomic(&masks_dir.join(format!("{}.pgm", obj.id)), &encode_pgm(&l.mask))?;
                Ok(l)
            })
            .collect()
    });

    let mut fits = Vec::new();
    let mut metrics = Vec::new();
    let mut records = Vec::new();
    for (obj, r) in objects.iter().zip(&results) {
        manifest.objects.push(ObjectStatus::from_result(&obj.id, r));
        match r {
            Ok(l) => {
                metrics.push(MetricsRecord {
                    id: obj.id.clone(),
                    ok: true,
                    error: None,
                    mask_iou: Some(l.fit.mask_iou),
                    box_iou: Some(l.fit.box_iou),
                    final_loss: Some(l.fit.final_loss),
                    steps: Some(l.fit.steps),
                    converged: Some(l.fit.converged),
                });
                fits.push(FitRecord {
                    id: obj.id.clone(),
                    fit: l.fit.clone(),
                });
                records.push(l.record.clone());
            }
            Err(e) => metrics.push(MetricsRecord {
                id: obj.id.clone(),
                ok: false,
                error: Some(format!("{e:#}")),
                mask_iou: None,
                box_iou: None,
                final_loss: None,
                steps: None,
                converged: None,
            }),
        }
    }
    write_atomic(&out.join("fits.jsonl"), jsonl(&fits)?.as_bytes())?;
    write_atomic(&out.join("metrics.jsonl"), jsonl(&metrics)?.as_bytes())?;
    write_atomic(&out.join("keypoints.txt"), format_keypoint_records(&records).as_bytes())?;
    write_atomic(&out.join("config.txt"), cfg.to_text().as_bytes())?;
    manifest.write(out)?;

    match ctx.format {
        Format::Jsonl => w.write_all(jsonl(&metrics)?.as_bytes())?,
        Format::Text => {
            for m in &metrics {
                match (&m.error, m.mask_iou, m.box_iou) {
                    (None, Some(mi), Some(bi)) => writeln!(
                        w,
                        "{} mask_iou {mi:.4} box_iou {bi:.4} loss {:.3} steps {}",
                        m.id,
                        m.final_loss.unwrap_or(f64::NAN),
                        m.steps.unwrap_or(0)
                    )?,
                    (e, _, _) => writeln!(w, "{} error: {}", m.id, e.as_deref().unwrap_or("unknown"))?,
                }
            }
            if !fits.is_empty() {
                let n = fits.len() as f64;
                writeln!(
                    w,
                    "mean mask_iou {:.4} box_iou {:.4} over {} of {} objects",
                    fits.iter().map(|f| f.fit.mask_iou).sum::<f64>() / n,
                    fits.iter().map(|f| f.fit.box_iou).sum::<f64>() / n,
                    fits.len(),
                    metrics.len()
                )?;
            }
        }
    }
    Ok(manifest)
}

// ----------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub mask_iou: f64,
    pub box_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub objects: usize,
    pub missing: Vec<String>,
    pub mean_mask_iou: f64,
    pub mean_box_iou: f64,
}

/// Score fits against ground truth: fitted silhouettes (`masks/`) against
/// the true masks and fitted boxes against the true boxes. Truth objects
/// without a fit are listed as missing and fail the run.
pub fn cmd_eval(ctx: &RunContext, args: &EvalArgs, w: &mut dyn Write) -> Result<RunManifest> {
    let fits: Vec<FitRecord> = read_jsonl(&args.fits.join("fits.jsonl"))?;
    let truth: Vec<TruthRecord> = read_jsonl(&args.truth.join("truth.jsonl"))?;
    let mut manifest = ctx.manifest(
        "eval",
        vec![args.fits.display().to_string(), args.truth.display().to_string()],
        false,
    );
    let mut pairs_fit = Vec::new();
    let mut pairs_gt = Vec::new();
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for t in &truth {
        let Some(f) = fits.iter().find(|f| f.id == t.id) else {
            missing.push(t.id.clone());
            manifest.objects.push(ObjectStatus {
                id: t.id.clone(),
                ok: false,
                error: Some("no fit for this object".into()),
                class: exit::SOLVE,
            });
            continue;
        };
        let fm = read_mask(args.fits.join("masks").join(format!("{}.pgm", f.id)))?;
        let gm = read_mask(args.truth.join("objects").join(&t.id).join("mask.pgm"))?;
        let (mi, _) = labeling_quality(&[(f.fit.fitted_box, fm.clone())], &[(t.true_box, gm.clone())])?;
        rows.push(EvalRow {
            id: t.id.clone(),
            mask_iou: mi,
            box_iou: iou_3d(&f.fit.fitted_box, &t.true_box),
        });
        pairs_fit.push((f.fit.fitted_box, fm));
        pairs_gt.push((t.true_box, gm));
        manifest.objects.push(ObjectStatus::from_result(&t.id, &Ok(())));
    }
    let (mean_mask_iou, mean_box_iou) = labeling_quality(&pairs_fit, &pairs_gt)?;
    let summary = EvalSummary {
        objects: rows.len(),
        missing,
        mean_mask_iou,
        mean_box_iou,
    };
    match ctx.format {
        Format::Jsonl => {
            w.write_all(jsonl(&rows)?.as_bytes())?;
            writeln!(w, "{}", serde_json::to_string(&summary)?)?;
        }
        Format::Text => {
            for r in &rows {
                writeln!(w, "{} mask_iou {:.4} box_iou {:.4}", r.id, r.mask_iou, r.box_iou)?;
            }
            writeln!(
                w,
                "mean mask_iou {:.4} box_iou {:.4} over {} objects ({} missing)",
                summary.mean_mask_iou,
                summary.mean_box_iou,
                summary.objects,
                summary.missing.len()
            )?;
        }
    }
    if let Some(out) = &ctx.out {
        create_dir(out)?;
        write_atomic(&out.join("eval.jsonl"), jsonl(&rows)?.as_bytes())?;
        write_atomic(
            &out.join("eval_summary.json"),
            serde_json::to_string_pretty(&summary)?.as_bytes(),
        )?;
        manifest.write(out)?;
    }
    Ok(manifest)
}

// --------------------------------------------------------------- render

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || CliError::usage(format!("bad --size {s:?}, expected WIDTHxHEIGHT"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad().into());
    }
    Ok((w, h))
}

/// Render the posed template (mean shape deformed by `--coeffs`) and write
/// it as a binary PGM to `--out`.
pub fn cmd_render(ctx: &RunContext, args: &RenderArgs, w: &mut dyn Write) -> Result<RunManifest> {
    let out = ctx.out_dir()?;
    let basis = load_basis(args.basis.as_deref())?;
    let s = ShapeCoeff(args.coeffs.clone().unwrap_or_else(|| vec![0.0; basis.rank()]));
    let mesh = deform(&basis, &s)?;
    let [tx, ty, tz] = args.t[..] else {
        return Err(CliError::usage("--t needs three values").into());
    };
    let pose = Pose::new(args.yaw, args.pitch, args.roll, Vec3::new(tx, ty, tz));
    let k = match &args.calib {
        Some(p) => intrinsics_from_p2(&read_calib(p)?)?,
        None => SynthConfig::default().intrinsics,
    };
    let size = parse_size(&args.size)?;
    let mask = render_silhouette(&mesh, &pose, &k, size, args.softness)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_atomic(out, &encode_pgm(&mask))?;
    match ctx.format {
        Format::Text => writeln!(w, "wrote {} ({} pixels on)", out.display(), mask.count_on())?,
        Format::Jsonl => writeln!(
            w,
            "{}",
            serde_json::json!({ "out": out.display().to_string(), "pixels_on": mask.count_on() })
        )?,
    }
    Ok(ctx.manifest("render", vec![], false))
}

// ---------------------------------------------------------- noise sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma_px: f64,
    pub trials: usize,
    /// Trials whose solve failed.
    pub failed: usize,
    pub mean_m: f64,
    pub median_m: f64,
    pub p90_m: f64,
    pub max_m: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

/// Translation errors for one record over every noise level, measured
/// against the record's noise-free solution.
/// Per noise level: errors of the successful trials and the failure count.
type SweepErrors = Vec<(Vec<f64>, usize)>;

fn sweep_record(rec: &KeypointRecord, sigmas: &[f64], trials: usize, seed: u64, index: usize) -> Result<SweepErrors> {
    let set = rec.metric_keypoints()?;
    let reference = rec.solve()?.t;
    let mut out = Vec::with_capacity(sigmas.len());
    for (j, &sigma) in sigmas.iter().enumerate() {
        let mut rng = object_rng(seed, ((index as u64) << 16) | j as u64);
        let noise = Normal::new(0.0, sigma).map_err(|e| CliError::input(format!("sigma {sigma}: {e}")))?;
        let mut errs = Vec::with_capacity(trials);
        let mut failed = 0;
        for _ in 0..trials {
            let mut noisy = set.clone();
            if sigma > 0.0 {
                for kp in &mut noisy.pairs {
                    kp.p2d.x += noise.sample(&mut rng);
                    kp.p2d.y += noise.sample(&mut rng);
                }
            }
            match monokp::pose_solver::solve_keypoints(&noisy, rec.yaw, &rec.intrinsics) {
                Ok(s) => errs.push((s.t - reference).norm()),
                Err(_) => failed += 1,
            }
        }
        out.push((errs, failed));
    }
    Ok(out)
}

/// Add Gaussian pixel noise to every 2D keypoint and report translation
/// error statistics per noise level, pooled over records and trials.
pub fn cmd_noise_sweep(ctx: &RunContext, args: &SweepArgs, w: &mut dyn Write) -> Result<RunManifest> {
    let records =
        read_keypoint_records(&args.keypoints).with_context(|| format!("reading {}", args.keypoints.display()))?;
    let sigmas = match &args.sigmas {
        Some(s) => s.clone(),
        None => ctx
            .config
            .get_list("sigmas")?
            .unwrap_or_else(|| vec![0.0, 0.5, 1.0, 2.0, 4.0]),
    };
    if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(CliError::input("sigmas must be finite and nonnegative").into());
    }
    let trials = match args.trials {
        Some(t) => t,
        None => ctx.config.get("trials")?.unwrap_or(100),
    };
    let results: Vec<Result<SweepErrors>> = ctx.pool()?.install(|| {
        records
            .par_iter()
            .enumerate()
            .map(|(i, r)| sweep_record(r, &sigmas, trials, ctx.seed, i))
            .collect()
    });
    let mut manifest = ctx.manifest("noise-sweep", vec![args.keypoints.display().to_string()], true);
    let mut rows = Vec::with_capacity(sigmas.len());
    for (j, &sigma) in sigmas.iter().enumerate() {
        let mut errs = Vec::new();
        let mut failed = 0;
        for r in results.iter().flatten() {
            errs.extend_from_slice(&r[j].0);
            failed += r[j].1;
        }
        errs.sort_by(f64::total_cmp);
        rows.push(SweepRow {
            sigma_px: sigma,
            trials: errs.len() + failed,
            failed,
            mean_m: if errs.is_empty() {
                f64::NAN
            } else {
                errs.iter().sum::<f64>() / errs.len() as f64
            },
            median_m: quantile(&errs, 0.5),
            p90_m: quantile(&errs, 0.9),
            max_m: errs.last().copied().unwrap_or(f64::NAN),
        });
    }
    for (rec, r) in records.iter().zip(&results) {
        manifest.objects.push(ObjectStatus::from_result(&rec.id, r));
    }
    let mut text = String::from("sigma_px trials failed mean_m median_m p90_m max_m\n");
    for r in &rows {
        text.push_str(&format!(
            "{} {} {} {:.6e} {:.6e} {:.6e} {:.6e}\n",
            r.sigma_px, r.trials, r.failed, r.mean_m, r.median_m, r.p90_m, r.max_m
        ));
    }
    let lines = jsonl(&rows)?;
    match ctx.format {
        Format::Text => w.write_all(text.as_bytes())?,
        Format::Jsonl => w.write_all(lines.as_bytes())?,
    }
    if let Some(out) = &ctx.out {
        create_dir(out)?;
        write_atomic(&out.join("sweep.txt"), text.as_bytes())?;
        write_atomic(&out.join("sweep.jsonl"), lines.as_bytes())?;
        manifest.write(out)?;
    }
    Ok(manifest)
}

// ---------------------------------------------------------------- basis

pub fn cmd_basis(ctx: &RunContext, w: &mut dyn Write) -> Result<RunManifest> {
    let out = ctx.out_dir()?;
    let basis = synthetic_car_basis();
    write_atomic(out, format_basis(&basis).as_bytes())?;
    writeln!(
        w,
        "wrote {} ({} vertices, rank {})",
        out.display(),
        basis.mean.vertices.len(),
        basis.rank()
    )?;
    Ok(ctx.manifest("basis", vec![], false))
}
