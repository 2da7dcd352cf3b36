//! Command-line front end and render service.

pub mod camera;
pub mod service;

use std::ffi::OsString;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use confies_core::eval::{
    decoupling_score, icc_protocol, interpolation_eval, training_view_quality, transfer_controls,
    transfer_expressions, FieldRenderer, SourceTrack, RAMP_POINTS,
};
use confies_core::facs::{preprocess, read_dataset_manifest, DatasetManifest, PreprocessConfig};
use confies_core::field::{load_checkpoint, CheckpointMeta, FieldConfig, QueryMode, SceneField};
use confies_core::render::{render_image, RenderOptions};
use confies_core::synthetic::{generate_dataset, BlobSceneSpec};
use confies_core::train::{Holdout, TrainConfig, Trainer, TrainingSet};
use confies_core::Error;
use log::info;
use serde::Serialize;

use crate::camera::CameraDefaults;
use crate::service::{ServiceState, DEFAULT_MAX_DIM, DEFAULT_WORKERS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

type Failure = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Parser)]
#[command(name = "confies", version, about = "Controllable masked hyper-space radiance fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a tracking CSV, frames and poses into a training dataset.
    Preprocess(PreprocessArgs),
    /// Generate the synthetic blob dataset.
    SynthGen(SynthArgs),
    /// Train a field on a dataset.
    Train(TrainArgs),
    /// Render one image from a checkpoint.
    Render(RenderArgs),
    /// Evaluation protocols.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Serve renders over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Tracking CSV with per-frame landmarks and AU intensities.
    #[arg(long)]
    pub tracking: PathBuf,
    /// Directory of frame images.
    #[arg(long)]
    pub images: PathBuf,
    /// JSON list of per-frame camera poses.
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of frames kept by balanced sampling.
    #[arg(long, default_value_t = PreprocessConfig::default().budget)]
    pub budget: usize,
    /// Normalization factor on the AU maximum.
    #[arg(long, default_value_t = PreprocessConfig::default().alpha)]
    pub alpha: f64,
    #[arg(long, default_value_t = PreprocessConfig::default().sg_window)]
    pub window: usize,
    #[arg(long, default_value_t = PreprocessConfig::default().sg_order)]
    pub order: usize,
    #[arg(long, default_value_t = PreprocessConfig::default().seed)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Frames on the orbit.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Square image size in pixels.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HoldoutArg {
    None,
    Odd,
}

impl From<HoldoutArg> for Holdout {
    fn from(h: HoldoutArg) -> Self {
        match h {
            HoldoutArg::None => Holdout::None,
            HoldoutArg::Odd => Holdout::Odd,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest or the directory holding `manifest.json`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// `key = value` training settings over the preset; flags below win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = HoldoutArg::None)]
    pub holdout: HoldoutArg,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LayerArg {
    Color,
    Mask,
    Depth,
}

#[derive(Debug, Args)]
pub struct ViewArgs {
    #[arg(long)]
    pub azimuth: Option<f64>,
    #[arg(long)]
    pub elevation: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Samples per ray.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated attribute values in model order.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub alpha: Vec<f64>,
    /// `name=value` pairs, applied after `--alpha`.
    #[arg(long = "set", value_parser = parse_assignment)]
    pub set: Vec<(String, f64)>,
    #[arg(long, value_enum, default_value_t = LayerArg::Color)]
    pub layer: LayerArg,
    #[command(flatten)]
    pub view: ViewArgs,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Attribute fidelity: ICC between commanded and measured ramps.
    Icc(ProtocolArgs),
    /// Leakage of each attribute outside its region.
    Decouple(ProtocolArgs),
    /// Reconstruction and held-out interpolation quality.
    Interp(InterpArgs),
    /// Drive the model with another subject's tracking CSV.
    Transfer(TransferArgs),
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    /// Checkpoint trained on a synthetic scene.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Orbit azimuth of the evaluation camera, radians.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub azimuth: f64,
    #[arg(long, default_value_t = RAMP_POINTS)]
    pub points: usize,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InterpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset the checkpoint was trained on with odd frames held out.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Source tracking CSV.
    #[arg(long)]
    pub source: PathBuf,
    /// Directory for the rendered frames.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = PreprocessConfig::default().sg_window)]
    pub window: usize,
    #[arg(long, default_value_t = PreprocessConfig::default().sg_order)]
    pub order: usize,
    #[command(flatten)]
    pub view: ViewArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CONFIES_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long, env = "CONFIES_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Largest accepted image side.
    #[arg(long, env = "CONFIES_MAX_DIM", default_value_t = DEFAULT_MAX_DIM)]
    pub max_dim: usize,
    /// Concurrent renders before requests are shed with 429.
    #[arg(long, env = "CONFIES_WORKERS", default_value_t = DEFAULT_WORKERS)]
    pub workers: usize,
}

fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let v = value.trim().parse::<f64>().map_err(|e| format!("`{value}`: {e}"))?;
    Ok((name.trim().to_string(), v))
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

pub fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Preprocess(a) => run_preprocess(a),
        Command::SynthGen(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Render(a) => run_render(a),
        Command::Eval(EvalCommand::Icc(a)) => run_icc(a),
        Command::Eval(EvalCommand::Decouple(a)) => run_decouple(a),
        Command::Eval(EvalCommand::Interp(a)) => run_interp(a),
        Command::Eval(EvalCommand::Transfer(a)) => run_transfer(a),
        Command::Serve(a) => run_serve(a),
    }
}

fn run_preprocess(a: PreprocessArgs) -> Result<(), Failure> {
    let config = PreprocessConfig {
        budget: a.budget,
        alpha: a.alpha,
        sg_window: a.window,
        sg_order: a.order,
        seed: a.seed,
        ..PreprocessConfig::default()
    };
    let manifest = preprocess(&a.tracking, &a.images, &a.poses, &config, &a.out)?;
    println!("{} frames written to {}", manifest.frames.len(), a.out.display());
    Ok(())
}

fn run_synth(a: SynthArgs) -> Result<(), Failure> {
    let mut spec = BlobSceneSpec::default();
    if let Some(f) = a.frames {
        spec.orbit.frames = f;
    }
    if let Some(s) = a.size {
        spec.orbit.width = s;
        spec.orbit.height = s;
    }
    let manifest = generate_dataset(&spec, &a.out, a.seed)?;
    println!("{} frames written to {}", manifest.frames.len(), a.out.display());
    Ok(())
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, Failure> {
    let file = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
    Ok(read_dataset_manifest(&file)?)
}

fn run_train(a: TrainArgs) -> Result<(), Failure> {
    let manifest = load_manifest(&a.data)?;
    let data = TrainingSet::load(&manifest, a.holdout.into())?;
    let (field, mut config) = match a.preset {
        Preset::Desk => (FieldConfig::desk(data.topology.clone(), data.latent_count), TrainConfig::desk()),
        Preset::Full => (FieldConfig::full(data.topology.clone(), data.latent_count), TrainConfig::full()),
    };
    if let Some(path) = &a.config {
        config = TrainConfig::from_file(path)?;
    }
    config.holdout = a.holdout.into();
    if let Some(n) = a.iterations {
        config.iterations = n;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(c) = a.checkpoint_every {
        config.checkpoint_every = c;
    }
    let mut trainer = Trainer::new(data, field, config)?;
    trainer.run(Some(&a.out), |_| {})?;
    println!("model written to {}", a.out.join("model.cnfs").display());
    Ok(())
}

/// Control vector from positional values and named overrides.
fn control_vector(meta: &CheckpointMeta, values: &[f64], named: &[(String, f64)]) -> Result<Vec<f64>, Failure> {
    let k = meta.attribute_names.len();
    if values.len() > k {
        return Err(format!("{} attribute values given, the model has {k}", values.len()).into());
    }
    let mut alpha = vec![0.0; k];
    alpha[..values.len()].copy_from_slice(values);
    for (name, v) in named {
        let a = meta
            .attribute_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| format!("unknown attribute `{name}`"))?;
        alpha[a] = *v;
    }
    if alpha.iter().any(|v| v.abs() > 1.0) {
        log::warn!("attribute values outside [-1, 1] are clamped");
    }
    Ok(alpha.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect())
}

fn view_options(view: &ViewArgs) -> RenderOptions {
    let mut options = RenderOptions::default();
    if let Some(s) = view.samples {
        options.samples = s;
    }
    options
}

fn view_camera(defaults: &CameraDefaults, view: &ViewArgs) -> Result<confies_core::render::CameraModel, Failure> {
    Ok(defaults.orbit(
        view.azimuth,
        view.elevation,
        view.radius,
        view.width.unwrap_or(defaults.width),
        view.height.unwrap_or(defaults.height),
    )?)
}

fn run_render(a: RenderArgs) -> Result<(), Failure> {
    let (field, meta) = load_checkpoint(&a.checkpoint)?;
    let alpha = control_vector(&meta, &a.alpha, &a.set)?;
    let defaults = CameraDefaults::from_meta(&meta)?;
    let camera = view_camera(&defaults, &a.view)?;
    let img = render_image(&field, &camera, &QueryMode::Control { alpha }, &view_options(&a.view))?;
    let png = match a.layer {
        LayerArg::Color => img.color_png([0.0; 3])?,
        LayerArg::Mask => img.mask_png()?,
        LayerArg::Depth => {
            let (png, range) = img.depth_png()?;
            info!("depth range {} .. {}", range.min, range.max);
            png
        }
    };
    fs::write(&a.out, png)?;
    Ok(())
}

fn synthetic_checkpoint(path: &Path) -> Result<(SceneField<f32>, CheckpointMeta, BlobSceneSpec), Failure> {
    let (field, meta) = load_checkpoint(path)?;
    let spec = meta
        .scene
        .clone()
        .ok_or_else(|| Error::Validation("this protocol needs a checkpoint trained on the synthetic scene".into()))?;
    Ok((field, meta, spec))
}

fn write_json(path: Option<&Path>, report: &impl Serialize) -> Result<(), Failure> {
    if let Some(p) = path {
        fs::write(p, serde_json::to_string_pretty(report)?)?;
    }
    Ok(())
}

fn run_icc(a: ProtocolArgs) -> Result<(), Failure> {
    let (field, _, spec) = synthetic_checkpoint(&a.checkpoint)?;
    let renderer = FieldRenderer { field: &field, options: RenderOptions::default() };
    let camera = spec.orbit.camera(a.azimuth)?;
    let report = icc_protocol(&renderer, &spec, &camera, a.points)?;
    print!("{}", report.table());
    write_json(a.json.as_deref(), &report)
}

fn run_decouple(a: ProtocolArgs) -> Result<(), Failure> {
    let (field, _, spec) = synthetic_checkpoint(&a.checkpoint)?;
    let renderer = FieldRenderer { field: &field, options: RenderOptions::default() };
    let camera = spec.orbit.camera(a.azimuth)?;
    let report = decoupling_score(&renderer, &spec, &camera)?;
    print!("{}", report.table());
    write_json(a.json.as_deref(), &report)
}

#[derive(Serialize)]
struct InterpReport {
    training: confies_core::eval::QualityReport,
    held_out: confies_core::eval::QualityReport,
}

fn run_interp(a: InterpArgs) -> Result<(), Failure> {
    let (field, _) = load_checkpoint(&a.checkpoint)?;
    let manifest = load_manifest(&a.data)?;
    let data = TrainingSet::load(&manifest, Holdout::Odd)?;
    let options = RenderOptions::default();
    let training = training_view_quality(&field, &data.train, &options)?;
    let held_out = interpolation_eval(&field, &data.train, &data.held_out, &options)?;
    println!("training views\n{}", training.table());
    println!("held-out interpolation\n{}", held_out.table());
    write_json(a.json.as_deref(), &InterpReport { training, held_out })
}

fn run_transfer(a: TransferArgs) -> Result<(), Failure> {
    let (field, meta) = load_checkpoint(&a.checkpoint)?;
    let source = SourceTrack::read_csv(&a.source)?;
    let controls = transfer_controls(&source, &meta.attribute_names, meta.normalization.as_ref(), a.window, a.order)?;
    let defaults = CameraDefaults::from_meta(&meta)?;
    let camera = view_camera(&defaults, &a.view)?;
    let renderer = FieldRenderer { field: &field, options: view_options(&a.view) };
    let frames = transfer_expressions(&renderer, &controls, &[camera])?;
    fs::create_dir_all(&a.out)?;
    for (i, img) in frames.iter().enumerate() {
        fs::write(a.out.join(format!("{i:04}.png")), img.color_png([0.0; 3])?)?;
    }
    fs::write(a.out.join("controls.json"), serde_json::to_string_pretty(&controls.controls)?)?;
    println!("{} frames written to {}", frames.len(), a.out.display());
    Ok(())
}

fn run_serve(a: ServeArgs) -> Result<(), Failure> {
    let (field, meta) = load_checkpoint(&a.checkpoint)?;
    let state = Arc::new(ServiceState::new(field, meta, a.max_dim, a.workers)?);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(service::serve(state, a.bind))?;
    Ok(())
}
