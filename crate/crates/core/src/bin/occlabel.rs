use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use occlabel::config::ConfigFile;
use occlabel::fusion::fuse_detection_file;
use occlabel::io::{ply, raster, read_grid};
use occlabel::metrics::{camera_rays, grid_iou, ray_iou, EvalReport};
use occlabel::pipeline::{frame_file_name, run_pipeline, write_outputs, PipelineMode};
use occlabel::scene::{load_manifest, GridSpec};
use occlabel::synth::{build_world, write_synth_sequence, DepthNoise, ScenarioSpec, SemanticsFormat};
use occlabel::{Error, Result};

#[derive(Parser)]
#[command(name = "occlabel", version, about = "Semantic voxel occupancy pseudo-labels")]
struct Cli {
    /// TOML config file. Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// JSON class table (default: built-in 15-class vocabulary).
    #[arg(long, global = true)]
    classes: Option<PathBuf>,
    /// More log output (-v info, -vv debug). RUST_LOG also works.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the label pipeline on a sequence manifest.
    Generate(GenerateArgs),
    /// Filter and fuse a detection set into a semantic mask raster.
    FuseMasks(FuseArgs),
    /// Compare predicted grids with ground truth.
    Eval(EvalArgs),
    /// Write a synthetic sequence (manifest, rasters, ground truth).
    Synth(SynthArgs),
    /// Export the occupied cells of a grid file as PLY.
    ExportPly(ExportArgs),
}

#[derive(Args, Default)]
struct PipelineFlags {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<PipelineMode>,
    #[arg(long)]
    logit_threshold: Option<f32>,
    /// Density threshold; 0 disables.
    #[arg(long)]
    min_points: Option<usize>,
    #[arg(long)]
    ray_consistency: Option<bool>,
    #[arg(long)]
    pixel_stride: Option<u32>,
    #[arg(long)]
    visibility_stride: Option<u32>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, env = "OCCLABEL_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Grid origin as x,y,z meters.
    #[arg(long, value_delimiter = ',')]
    grid_origin: Option<Vec<f64>>,
    #[arg(long)]
    grid_resolution: Option<f64>,
    /// Grid size as x,y,z cells.
    #[arg(long, value_delimiter = ',')]
    grid_dims: Option<Vec<usize>>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Sequence manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for frame_NNNN.occ files.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineFlags,
    /// Write the filter's per-cell pass/hit/point counts here.
    #[arg(long)]
    stats_dump: Option<PathBuf>,
    /// Write the filtered static cloud (world frame) as PLY.
    #[arg(long)]
    cloud_ply: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    /// Detection set (JSON).
    #[arg(long)]
    detections: PathBuf,
    /// Output mask raster.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    logit_threshold: Option<f32>,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction directory (with --manifest) or a single grid file.
    #[arg(long)]
    pred: PathBuf,
    /// Manifest whose frames carry ground-truth grids.
    #[arg(long, conflicts_with = "gt")]
    manifest: Option<PathBuf>,
    /// Single ground-truth grid file.
    #[arg(long, required_unless_present = "manifest")]
    gt: Option<PathBuf>,
    #[arg(long)]
    ray_stride: Option<u32>,
    /// RayIoU distance thresholds in meters, comma separated.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Write the JSON report here ("-" for stdout, table then goes to stderr).
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SemanticsArg {
    Mask,
    Detections,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    outlier_fraction: Option<f64>,
    #[arg(long)]
    outlier_magnitude: Option<f64>,
    #[arg(long, value_enum)]
    semantics: Option<SemanticsArg>,
}

#[derive(Args)]
struct ExportArgs {
    /// Grid file (.occ).
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_mode(s: &str) -> std::result::Result<PipelineMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn triple<T: Copy>(v: &[T], flag: &str) -> Result<[T; 3]> {
    v.try_into()
        .map_err(|_| Error::Invalid(format!("{flag} takes three comma-separated values, got {}", v.len())))
}

impl PipelineFlags {
    fn apply(&self, cfg: &mut ConfigFile) -> Result<()> {
        let p = &mut cfg.pipeline;
        if let Some(v) = self.mode {
            p.mode = v;
        }
        if let Some(v) = self.logit_threshold {
            p.logit_threshold = v;
        }
        if let Some(v) = self.min_points {
            p.min_points = v;
        }
        if let Some(v) = self.ray_consistency {
            p.ray_consistency = v;
        }
        if let Some(v) = self.pixel_stride {
            p.pixel_stride = v;
        }
        if let Some(v) = self.visibility_stride {
            p.visibility_stride = v;
        }
        if let Some(v) = self.workers {
            p.workers = v;
        }
        if let Some(v) = self.seed {
            p.seed = v;
        }
        if self.grid_origin.is_some() || self.grid_resolution.is_some() || self.grid_dims.is_some() {
            let g = p.grid;
            let origin = match self.grid_origin.as_deref() {
                Some(o) => triple(o, "--grid-origin")?,
                None => g.origin,
            };
            let dims = match self.grid_dims.as_deref() {
                Some(d) => triple(d, "--grid-dims")?,
                None => g.dims,
            };
            p.grid = GridSpec::new(origin, self.grid_resolution.unwrap_or(g.resolution), dims)?;
        }
        p.validate()
    }
}

fn load_config(cli: &Cli) -> Result<ConfigFile> {
    let mut cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    if let Some(c) = &cli.classes {
        cfg.classes = Some(c.clone());
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn generate(mut cfg: ConfigFile, args: &GenerateArgs) -> Result<()> {
    args.pipeline.apply(&mut cfg)?;
    let classes = cfg.class_table()?;
    let manifest = load_manifest(&args.manifest)?;
    log::info!("{}: {} frames, {} cameras", manifest.sequence_id, manifest.frames.len(), manifest.camera_count());
    let run = run_pipeline(&manifest, &cfg.pipeline, &classes)?;
    let written = write_outputs(&args.out, &run.frames)?;
    if let Some(p) = &args.stats_dump {
        match &run.stats {
            Some(s) => s.dump_to(p)?,
            None => log::warn!("no filter statistics in this configuration; {} not written", p.display()),
        }
    }
    if let Some(p) = &args.cloud_ply {
        ply::write_text(p, &ply::cloud_to_ply(&run.static_cloud))?;
    }
    println!("wrote {} frames to {}", written.len(), args.out.display());
    Ok(())
}

fn fuse(cfg: ConfigFile, args: &FuseArgs) -> Result<()> {
    let classes = cfg.class_table()?;
    let threshold = args.logit_threshold.unwrap_or(cfg.pipeline.logit_threshold);
    let mask = fuse_detection_file(&args.detections, threshold, &classes)?;
    raster::write_mask(&args.out, &mask)
}

#[derive(Serialize)]
struct FrameEval {
    frame: usize,
    #[serde(flatten)]
    report: EvalReport,
}

#[derive(Serialize)]
struct SequenceEval {
    frames: Vec<FrameEval>,
    /// Means over frames where the metric is defined.
    mean_miou: Option<f64>,
    mean_geometric_iou: Option<f64>,
    mean_ray_iou: Option<f64>,
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn eval(cfg: ConfigFile, args: &EvalArgs) -> Result<()> {
    let classes = cfg.class_table()?;
    let stride = args.ray_stride.unwrap_or(cfg.eval.ray_stride);
    let thresholds = args.thresholds.clone().unwrap_or(cfg.eval.thresholds.clone());
    let mut frames = Vec::new();
    if let Some(mpath) = &args.manifest {
        let manifest = load_manifest(mpath)?;
        for (i, frame) in manifest.frames.iter().enumerate() {
            let gt_path = frame
                .gt_grid
                .as_ref()
                .ok_or_else(|| Error::Invalid(format!("frame {i} has no gt_grid")))?;
            let (gt, mask) = read_grid(gt_path).map_err(|e| e.in_frame(i))?;
            let (pred, _) = read_grid(&args.pred.join(frame_file_name(i))).map_err(|e| e.in_frame(i))?;
            let iou = grid_iou(&pred, &gt, &mask, &classes)?;
            let cams: Vec<_> = frame.cameras.iter().map(|c| c.camera.clone()).collect();
            let rays = camera_rays(&cams, &frame.pose.ego_to_world, stride);
            let ray = if rays.is_empty() || thresholds.is_empty() {
                None
            } else {
                Some(ray_iou(&pred, &gt, &rays, &thresholds, &classes)?)
            };
            frames.push(FrameEval {
                frame: i,
                report: EvalReport::new(&iou, ray.as_ref(), &classes),
            });
        }
    } else {
        let gt_path = args.gt.as_ref().expect("clap requires --gt without --manifest");
        let (gt, mask) = read_grid(gt_path)?;
        let (pred, _) = read_grid(&args.pred)?;
        let iou = grid_iou(&pred, &gt, &mask, &classes)?;
        frames.push(FrameEval {
            frame: 0,
            report: EvalReport::new(&iou, None, &classes),
        });
    }
    let seq = SequenceEval {
        mean_miou: mean(frames.iter().map(|f| f.report.miou)),
        mean_geometric_iou: mean(frames.iter().map(|f| f.report.geometric_iou)),
        mean_ray_iou: mean(frames.iter().map(|f| f.report.mean_ray_iou)),
        frames,
    };
    let mut table = String::new();
    for f in &seq.frames {
        table += &format!("frame {}\n{}\n", f.frame, f.report.table());
    }
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
    table += &format!(
        "mean over {} frames: mIoU {}  geometric IoU {}  RayIoU {}\n",
        seq.frames.len(),
        fmt(seq.mean_miou),
        fmt(seq.mean_geometric_iou),
        fmt(seq.mean_ray_iou)
    );
    match &args.json {
        Some(p) if p.as_os_str() == "-" => {
            println!("{}", serde_json::to_string_pretty(&seq).expect("report serializes"));
            eprint!("{table}");
        }
        Some(p) => {
            write_json(p, &seq)?;
            print!("{table}");
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn synth(cfg: ConfigFile, args: &SynthArgs) -> Result<()> {
    let s = &cfg.synth;
    let seed = args.seed.unwrap_or(cfg.pipeline.seed);
    let spec = ScenarioSpec {
        frames: args.frames.unwrap_or(s.frames),
        actors: s.actors.clone(),
        ego_grid: cfg.pipeline.grid,
        ..Default::default()
    };
    let fraction = args.outlier_fraction.unwrap_or(s.outlier_fraction);
    let noise = (fraction > 0.0).then(|| DepthNoise {
        outlier_fraction: fraction,
        magnitude: args.outlier_magnitude.unwrap_or(s.outlier_magnitude),
        seed,
    });
    let semantics = match args.semantics {
        Some(SemanticsArg::Mask) => SemanticsFormat::Mask,
        Some(SemanticsArg::Detections) => SemanticsFormat::Detections,
        None => s.semantics,
    };
    let world = build_world(&spec, seed)?;
    let manifest = cfg
        .pipeline
        .install(|| write_synth_sequence(&world, &args.out, noise, semantics))??;
    println!("{}", manifest.display());
    Ok(())
}

fn export(cfg: ConfigFile, args: &ExportArgs) -> Result<()> {
    let classes = cfg.class_table()?;
    let (grid, _) = read_grid(&args.grid)?;
    ply::write_text(&args.out, &ply::grid_to_ply(&grid, &classes))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Generate(a) => generate(cfg, a),
        Command::FuseMasks(a) => fuse(cfg, a),
        Command::Eval(a) => eval(cfg, a),
        Command::Synth(a) => synth(cfg, a),
        Command::ExportPly(a) => export(cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
