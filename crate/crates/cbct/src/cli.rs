//! Command-line interface. `main` only parses arguments and maps errors to
//! exit codes; every command lives here so tests can drive it in-process.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cbct_core::classical::{fdk_reconstruct, sart_reconstruct, FdkConfig, RampFilter, SartConfig, SartInit};
use cbct_core::metrics::MetricReport;
use cbct_core::model::{Aggregation, Model, ModelConfig};
use cbct_core::projector::forward_project;
use cbct_core::trainer::{train, EpochLog, StepLog, TrainConfig, TrainObserver, TrainSample};
use cbct_core::volume::{make_phantom, PhantomKind};
use cbct_core::{ScanGeometry, Volume, VolumeGrid};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint;
use crate::config::{resolve, section, FlagLayer};
use crate::dataset::load_dataset;
use crate::error::{CliError, CliResult};
use crate::formats::{self, read_json, read_projections, read_volume, write_projections, write_volume, Location};
use crate::manifest::RunManifest;
use crate::report::{self, SliceAxis, StepCsv};
use crate::robust::{self, SweepSpec};

#[derive(Debug, Parser)]
#[command(name = "cbct", version, about = "Sparse-view cone-beam CT simulation, reconstruction and evaluation")]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Where to write the run manifest (default: next to the first output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic volume.
    Phantom(PhantomArgs),
    /// Simulate cone-beam projections of a volume.
    Project(ProjectArgs),
    /// Filtered back-projection reconstruction.
    Fdk(FdkArgs),
    /// Iterative SART reconstruction.
    Sart(SartArgs),
    /// Train the network on a dataset or on generated phantoms.
    Train(TrainArgs),
    /// Reconstruct a volume from projections with a trained checkpoint.
    Infer(InferArgs),
    /// PSNR and SSIM of a reconstruction against a reference.
    Eval(EvalArgs),
    /// Sweep angle offsets and geometry noise on a trained checkpoint.
    Robust(RobustArgs),
    /// Write axial/coronal/sagittal slices as PGM images.
    Slice(SliceArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// shepp3d, spheres, constant or constant:<value>.
    #[arg(long, default_value = "shepp3d")]
    pub kind: String,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Isotropic voxel spacing, mm.
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    #[arg(long, default_value_t = cbct_core::DEFAULT_SEED)]
    pub seed: u64,
    /// Output volume file, or `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Number of uniformly spaced views over a half turn.
    #[arg(long, default_value_t = 6)]
    pub views: usize,
    /// Geometry JSON; overrides the other scan flags.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Source-to-origin distance, mm (default: twice the volume extent).
    #[arg(long)]
    pub dso: Option<f64>,
    /// Source-to-detector distance, mm (default: 1.5 x dso).
    #[arg(long)]
    pub dsd: Option<f64>,
    /// Detector pixels per side (default: the volume's size).
    #[arg(long)]
    pub det_pixels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Input volume, or `-` for stdin.
    #[arg(long, default_value = "-")]
    pub input: String,
    #[command(flatten)]
    pub scan: ScanArgs,
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Output grid size per side (default: the detector width).
    #[arg(long)]
    pub size: Option<usize>,
    /// Output voxel spacing, mm.
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    /// Copy the output grid from this volume instead.
    #[arg(long)]
    pub like: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FilterArg {
    RamLak,
    Hann,
}

#[derive(Debug, Args)]
pub struct FdkArgs {
    /// Input projections, or `-` for stdin.
    #[arg(long, default_value = "-")]
    pub input: String,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value = "ram-lak")]
    pub filter: FilterArg,
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Zero,
    Fdk,
}

#[derive(Debug, Args)]
pub struct SartArgs {
    #[arg(long, default_value = "-")]
    pub input: String,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 30)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.5)]
    pub relaxation: f64,
    #[arg(long, value_enum, default_value = "zero")]
    pub init: InitArg,
    /// Keep negative values between sweeps.
    #[arg(long)]
    pub no_clamp: bool,
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
pub enum PresetArg {
    Toy,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregationArg {
    Mlp,
    MaxpoolMlp,
    Svc,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest: JSON list of {volume, projections} file pairs.
    #[arg(long, conflicts_with = "phantom")]
    pub dataset: Option<PathBuf>,
    /// Train on generated phantoms of this kind instead of a dataset.
    #[arg(long)]
    pub phantom: Option<String>,
    /// Number of generated phantoms (seeds seed, seed + 1, ...).
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    /// Generated phantom size per side.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[command(flatten)]
    pub scan: ScanArgs,
    /// JSON file with optional `model` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,
    /// Disable the multi-scale volumetric features.
    #[arg(long)]
    pub no_ms3dv: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Total learning-rate decay factor over the run.
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write `<out>.epoch<k>` every this many epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Per-step CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "-")]
    pub projections: String,
    /// Output grid size per side; voxels are evaluated at their centroids.
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub recon: String,
    #[arg(long = "ref")]
    pub reference: String,
    /// Also write the metrics as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RobustArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Reference volume (default: the phantom recorded in the checkpoint).
    #[arg(long)]
    pub reference: Option<String>,
    /// Nominal geometry JSON (default: the training geometry).
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Global angle offsets, degrees.
    #[arg(long, value_delimiter = ',')]
    pub offsets: Option<Vec<f64>>,
    /// Per-view angle noise half-widths, degrees.
    #[arg(long, value_delimiter = ',')]
    pub angle_noise: Option<Vec<f64>>,
    /// Source-distance noise half-widths, mm.
    #[arg(long, value_delimiter = ',')]
    pub dso_noise: Option<Vec<f64>>,
    #[arg(long, default_value_t = cbct_core::DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    #[arg(long, default_value = "-")]
    pub input: String,
    /// Axes to cut (default: all three).
    #[arg(long, value_delimiter = ',')]
    pub axis: Vec<String>,
    /// Slice indices (default: the middle slice).
    #[arg(long, value_delimiter = ',')]
    pub index: Vec<usize>,
    /// Grey-level window `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.0, 1.0])]
    pub window: Vec<f64>,
    /// Files are written as `<prefix>_<axis>_<index>.pgm`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::invalid("--threads must be >= 1"));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let start = Instant::now();
    let manifest = match cli.command {
        Command::Phantom(a) => phantom(&a)?,
        Command::Project(a) => project(&a)?,
        Command::Fdk(a) => fdk(&a)?,
        Command::Sart(a) => sart(&a)?,
        Command::Train(a) => train_cmd(&a)?,
        Command::Infer(a) => infer(&a)?,
        Command::Eval(a) => eval(&a)?,
        Command::Robust(a) => robust_cmd(&a)?,
        Command::Slice(a) => slice(&a)?,
    };
    manifest.finish(start.elapsed(), cli.manifest.as_deref())?;
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("configs serialise")
}

fn phantom_kind(s: &str) -> CliResult<PhantomKind> {
    Ok(s.parse::<PhantomKind>()?)
}

fn phantom(a: &PhantomArgs) -> CliResult<RunManifest> {
    let vol = make_phantom(phantom_kind(&a.kind)?, [a.size; 3], [a.spacing; 3], a.seed)?;
    let out = Location::parse(&a.out);
    write_volume(&out, &vol)?;
    let mut m = RunManifest::new("phantom", json!({ "kind": a.kind, "size": a.size, "spacing_mm": a.spacing }));
    m.seeds.push(a.seed);
    m.outputs.push(out.display());
    Ok(m)
}

/// Scan geometry for a region of side `extent_mm` from the scan flags.
fn scan_geometry(s: &ScanArgs, extent_mm: f64, default_pixels: usize) -> CliResult<ScanGeometry> {
    if let Some(path) = &s.geometry {
        return formats::read_geometry(path);
    }
    let pixels = s.det_pixels.unwrap_or(default_pixels);
    let dso = s.dso.unwrap_or(2.0 * extent_mm);
    let dsd = s.dsd.unwrap_or(ScanGeometry::default_dsd(dso));
    Ok(cbct_core::geometry::make_uniform_geometry(
        s.views,
        dso,
        dsd,
        cbct_core::geometry::covering_detector(extent_mm, dso, dsd, pixels),
    )?)
}

fn volume_extent(vol: &Volume) -> f64 {
    vol.grid().extent().iter().cloned().fold(0.0, f64::max)
}

fn project(a: &ProjectArgs) -> CliResult<RunManifest> {
    let input = Location::parse(&a.input);
    let vol = read_volume(&input)?;
    let geom = scan_geometry(&a.scan, volume_extent(&vol), vol.dims()[0])?;
    let proj = forward_project(&vol, &geom);
    let out = Location::parse(&a.out);
    write_projections(&out, &proj)?;
    let mut m = RunManifest::new("project", json!({ "geometry": formats::GeometryDoc::from_geometry(&geom) }));
    m.inputs.push(input.display());
    m.outputs.push(out.display());
    Ok(m)
}

fn output_grid(g: &GridArgs, geom: &ScanGeometry) -> CliResult<VolumeGrid> {
    if let Some(like) = &g.like {
        return Ok(*read_volume(&Location::parse(like))?.grid());
    }
    Ok(VolumeGrid::cube(g.size.unwrap_or(geom.detector().width), g.spacing)?)
}

fn fdk(a: &FdkArgs) -> CliResult<RunManifest> {
    let input = Location::parse(&a.input);
    let proj = read_projections(&input)?;
    let grid = output_grid(&a.grid, proj.geometry())?;
    let filter = match a.filter {
        FilterArg::RamLak => RampFilter::RamLak,
        FilterArg::Hann => RampFilter::Hann,
    };
    let vol = fdk_reconstruct(&proj, &FdkConfig { filter, grid })?;
    let out = Location::parse(&a.out);
    write_volume(&out, &vol)?;
    let mut m = RunManifest::new("fdk", json!({ "filter": format!("{filter:?}"), "dims": grid.dims, "spacing_mm": grid.spacing }));
    m.inputs.push(input.display());
    m.outputs.push(out.display());
    Ok(m)
}

fn sart(a: &SartArgs) -> CliResult<RunManifest> {
    let input = Location::parse(&a.input);
    let proj = read_projections(&input)?;
    let grid = output_grid(&a.grid, proj.geometry())?;
    let cfg = SartConfig {
        iterations: a.iterations,
        relaxation: a.relaxation,
        init: match a.init {
            InitArg::Zero => SartInit::Zero,
            InitArg::Fdk => SartInit::Fdk,
        },
        nonneg_clamp: !a.no_clamp,
        grid,
    };
    let vol = sart_reconstruct(&proj, &cfg)?;
    let out = Location::parse(&a.out);
    write_volume(&out, &vol)?;
    let mut m = RunManifest::new(
        "sart",
        json!({
            "iterations": cfg.iterations,
            "relaxation": cfg.relaxation,
            "init": format!("{:?}", cfg.init),
            "nonneg_clamp": cfg.nonneg_clamp,
            "dims": grid.dims,
            "spacing_mm": grid.spacing,
        }),
    );
    m.inputs.push(input.display());
    m.outputs.push(out.display());
    Ok(m)
}

/// Phantom a training run was generated from, kept in checkpoints so the
/// robustness sweep can rebuild its reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: String,
    pub size: usize,
    pub spacing_mm: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn build(&self) -> CliResult<Volume> {
        Ok(make_phantom(phantom_kind(&self.kind)?, [self.size; 3], [self.spacing_mm; 3], self.seed)?)
    }
}

/// Everything a training run needs, after merging defaults, the config
/// file and flags.
#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub samples: Vec<TrainSample>,
    pub phantoms: Vec<PhantomSpec>,
}

pub fn plan_training(a: &TrainArgs) -> CliResult<TrainPlan> {
    let file: Value = match &a.config {
        Some(path) => read_json(path)?,
        None => json!({}),
    };
    if let Some(obj) = file.as_object() {
        if let Some(k) = obj.keys().find(|k| !["model", "train", "preset"].contains(&k.as_str())) {
            return Err(CliError::invalid(format!("config file: unknown section `{k}`")));
        }
    }

    let mut train_flags = FlagLayer::default();
    train_flags
        .set("epochs", a.epochs)
        .set("batch_size", a.batch_size)
        .set("points_per_volume", a.points)
        .set("lr0", a.lr)
        .set("momentum", a.momentum)
        .set("lr_decay_total", a.lr_decay)
        .set("seed", a.seed)
        .set("checkpoint_every", a.checkpoint_every);
    let train_cfg: TrainConfig = resolve(&TrainConfig::default(), &[&section(&file, "train"), &train_flags.into_value()])?;
    train_cfg.validate()?;

    let (samples, phantoms) = match (&a.dataset, &a.phantom) {
        (Some(path), None) => (load_dataset(path)?, Vec::new()),
        (None, Some(kind)) => {
            let mut samples = Vec::with_capacity(a.samples);
            let mut specs = Vec::with_capacity(a.samples);
            for i in 0..a.samples.max(1) {
                let spec = PhantomSpec { kind: kind.clone(), size: a.size, spacing_mm: 1.0, seed: train_cfg.seed + i as u64 };
                let volume = spec.build()?;
                let geom = scan_geometry(&a.scan, volume_extent(&volume), 2 * a.size)?;
                samples.push(TrainSample { id: format!("{kind}-{}", spec.seed), projections: forward_project(&volume, &geom), volume });
                specs.push(spec);
            }
            (samples, specs)
        }
        _ => return Err(CliError::invalid("train needs exactly one of --dataset or --phantom")),
    };

    let first = &samples[0];
    let det = first.projections.geometry().detector();
    let extent = volume_extent(&first.volume);
    let n_views = first.projections.geometry().n_views();
    let preset = match a.preset {
        Some(p) => p,
        None => match file.get("preset") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => PresetArg::Toy,
        },
    };
    let defaults = match preset {
        PresetArg::Toy => ModelConfig::toy(n_views, extent),
        PresetArg::Full => ModelConfig::full(n_views, extent),
    };
    let mut model_flags = FlagLayer::default();
    model_flags.set(
        "aggregation",
        a.aggregation.map(|g| match g {
            AggregationArg::Mlp => Aggregation::Mlp,
            AggregationArg::MaxpoolMlp => Aggregation::MaxpoolMlp,
            AggregationArg::Svc => Aggregation::Svc,
        }),
    );
    if a.no_ms3dv {
        model_flags.set("use_ms3dv", Some(false));
    }
    // Shapes always follow the data.
    model_flags.set("n_views", Some(n_views)).set("image_size", Some(det.width)).set("extent_mm", Some(extent));
    let model_cfg: ModelConfig = resolve(&defaults, &[&section(&file, "model"), &model_flags.into_value()])?;
    model_cfg.validate()?;
    Ok(TrainPlan { model: model_cfg, train: train_cfg, samples, phantoms })
}

struct CliObserver<'a> {
    log: Option<StepCsv>,
    start: Instant,
    out: &'a Path,
    meta: Value,
}

impl TrainObserver<f32> for CliObserver<'_> {
    fn step(&mut self, log: &StepLog) -> cbct_core::Result<()> {
        if let Some(csv) = &mut self.log {
            csv.step(log, self.start.elapsed().as_millis()).map_err(to_core)?;
        }
        Ok(())
    }

    fn epoch(&mut self, log: &EpochLog) -> cbct_core::Result<()> {
        eprintln!("epoch {:>4}  loss {:.6}  psnr {:.2} dB", log.epoch, log.mean_loss, log.psnr);
        if let Some(csv) = &mut self.log {
            csv.flush().map_err(to_core)?;
        }
        Ok(())
    }

    fn checkpoint(&mut self, epochs_done: usize, model: &Model<f32>) -> cbct_core::Result<()> {
        let path = PathBuf::from(format!("{}.epoch{epochs_done}", self.out.display()));
        let mut meta = self.meta.clone();
        meta["epochs_done"] = json!(epochs_done);
        checkpoint::save(&path, model, meta).map_err(to_core)
    }
}

fn to_core(e: CliError) -> cbct_core::Error {
    cbct_core::Error::Invalid { what: "output", reason: e.to_string() }
}

fn train_cmd(a: &TrainArgs) -> CliResult<RunManifest> {
    let plan = plan_training(a)?;
    let model = Model::<f32>::new(plan.model.clone(), plan.train.seed)?;
    let meta = json!({
        "train": to_value(&plan.train),
        "geometry": formats::GeometryDoc::from_geometry(plan.samples[0].projections.geometry()),
        "phantoms": to_value(&plan.phantoms),
    });
    let mut observer = CliObserver {
        log: a.log.as_deref().map(StepCsv::create).transpose()?,
        start: Instant::now(),
        out: &a.out,
        meta: meta.clone(),
    };
    let outcome = train(&plan.samples, model, &plan.train, &mut observer).map_err(|e| match e {
        cbct_core::Error::Invalid { what: "output", reason } => CliError::runtime(reason),
        other => CliError::from(other),
    })?;
    if let Some(csv) = &mut observer.log {
        csv.flush()?;
    }
    let mut meta = meta;
    meta["epochs_done"] = json!(plan.train.epochs);
    checkpoint::save(&a.out, &outcome.model, meta)?;

    let mut m = RunManifest::new("train", json!({ "model": to_value(&plan.model), "train": to_value(&plan.train) }));
    m.seeds.push(plan.train.seed);
    m.seeds.extend(plan.phantoms.iter().map(|p| p.seed));
    m.inputs.extend(a.dataset.iter().map(|p| p.display().to_string()));
    m.outputs.push(a.out.display().to_string());
    m.outputs.extend(a.log.iter().map(|p| p.display().to_string()));
    Ok(m)
}

fn infer(a: &InferArgs) -> CliResult<RunManifest> {
    let (model, _) = checkpoint::load(&a.checkpoint)?;
    let input = Location::parse(&a.projections);
    let proj = read_projections(&input)?;
    let vol = model.reconstruct(&proj, a.resolution)?;
    let out = Location::parse(&a.out);
    write_volume(&out, &vol)?;
    let mut m = RunManifest::new("infer", json!({ "resolution": a.resolution }));
    m.inputs.extend([a.checkpoint.display().to_string(), input.display()]);
    m.outputs.push(out.display());
    Ok(m)
}

fn eval(a: &EvalArgs) -> CliResult<RunManifest> {
    let recon = read_volume(&Location::parse(&a.recon))?;
    let reference = read_volume(&Location::parse(&a.reference))?;
    let rep = MetricReport::evaluate(&[(&recon, &reference)])?;
    print!("{}", report::metrics_pretty(&rep));
    let mut m = RunManifest::new(
        "eval",
        json!({ "psnr_db": report::fmt_db(rep.cases[0].0), "ssim": rep.cases[0].1 }),
    );
    m.inputs.extend([a.recon.clone(), a.reference.clone()]);
    if let Some(csv) = &a.csv {
        fs::write(csv, report::metrics_csv(&rep, std::slice::from_ref(&a.recon))).map_err(|e| CliError::write(csv, e))?;
        m.outputs.push(csv.display().to_string());
    }
    Ok(m)
}

fn robust_cmd(a: &RobustArgs) -> CliResult<RunManifest> {
    let (model, meta) = checkpoint::load(&a.checkpoint)?;
    let reference = match &a.reference {
        Some(r) => read_volume(&Location::parse(r))?,
        None => {
            let spec: Vec<PhantomSpec> = serde_json::from_value(meta.get("phantoms").cloned().unwrap_or(json!([])))?;
            spec.first()
                .ok_or_else(|| CliError::invalid("checkpoint records no phantom; pass --reference"))?
                .build()?
        }
    };
    let nominal = match (&a.geometry, meta.get("geometry")) {
        (Some(path), _) => formats::read_geometry(path)?,
        (None, Some(doc)) => serde_json::from_value::<formats::GeometryDoc>(doc.clone())?.to_geometry()?,
        (None, None) => robust::default_geometry(model.config().n_views, model.config().extent_mm, model.config().image_size)?,
    };
    let explicit = a.offsets.is_some() || a.angle_noise.is_some() || a.dso_noise.is_some();
    let defaults = SweepSpec::default();
    let pick = |given: &Option<Vec<f64>>, default: Vec<f64>| match given {
        Some(v) => v.clone(),
        None if explicit => Vec::new(),
        None => default,
    };
    let spec = SweepSpec {
        offsets_deg: pick(&a.offsets, defaults.offsets_deg),
        angle_noise_deg: pick(&a.angle_noise, defaults.angle_noise_deg),
        dso_noise_mm: pick(&a.dso_noise, defaults.dso_noise_mm),
        seed: a.seed,
    };
    let rows = robust::run_sweep(&model, &reference, &nominal, &spec)?;
    print!("{}", robust::rows_pretty(&rows));
    let mut m = RunManifest::new("robust", json!({ "sweep": to_value(&spec), "rows": to_value(&rows) }));
    m.seeds.push(a.seed);
    m.inputs.push(a.checkpoint.display().to_string());
    m.inputs.extend(a.reference.clone());
    if let Some(csv) = &a.csv {
        fs::write(csv, robust::rows_csv(&rows)).map_err(|e| CliError::write(csv, e))?;
        m.outputs.push(csv.display().to_string());
    }
    Ok(m)
}

fn slice(a: &SliceArgs) -> CliResult<RunManifest> {
    let input = Location::parse(&a.input);
    let vol = read_volume(&input)?;
    let axes: Vec<SliceAxis> = if a.axis.is_empty() {
        SliceAxis::ALL.to_vec()
    } else {
        a.axis.iter().map(|s| s.parse()).collect::<CliResult<_>>()?
    };
    let (lo, hi) = (a.window[0], a.window[1]);
    let mut m = RunManifest::new("slice", json!({ "axes": axes.iter().map(|x| x.name()).collect::<Vec<_>>(), "window": [lo, hi] }));
    m.inputs.push(input.display());
    for axis in axes {
        let n = vol.dims()[match axis {
            SliceAxis::Axial => 2,
            SliceAxis::Coronal => 1,
            SliceAxis::Sagittal => 0,
        }];
        let indices = if a.index.is_empty() { vec![n / 2] } else { a.index.clone() };
        for index in indices {
            let (w, h, px) = report::slice_gray(&vol, axis, index, lo, hi)?;
            let path = PathBuf::from(format!("{}_{}_{index}.pgm", a.out.display(), axis.name()));
            fs::write(&path, report::pgm_bytes(w, h, &px)).map_err(|e| CliError::write(&path, e))?;
            m.outputs.push(path.display().to_string());
        }
    }
    Ok(m)
}
