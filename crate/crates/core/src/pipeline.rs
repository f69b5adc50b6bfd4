//! End-to-end label generation over a sequence, with the ablation modes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{accumulate_static, confidence_filter, CellStats, FilterSettings, DEFAULT_MIN_POINTS};
use crate::fusion::{fuse_detection_file, SemanticMask, DEFAULT_LOGIT_THRESHOLD};
use crate::io::{raster, write_grid};
use crate::metrics::{camera_rays, grid_iou, ray_iou, IouReport, RayIouReport};
use crate::scene::{
    CameraModel, ClassTable, FramePose, GridSpec, RigidTransform, SemanticSource, SequenceManifest,
};
use crate::unproject::{split_frame, CameraView, DepthMap, LabeledPointCloud};
use crate::voxelize::{compose_frame_cloud, visibility_mask, voxelize, VisibilityGrid, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// Each frame's own static points, no temporal accumulation.
    PerFrame,
    /// Everything accumulated as static; no per-frame dynamic handling.
    AggregateNoDynamics,
    #[default]
    Full,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 3] = [Self::PerFrame, Self::AggregateNoDynamics, Self::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PerFrame => "per_frame",
            Self::AggregateNoDynamics => "aggregate_no_dynamics",
            Self::Full => "full",
        }
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown mode {s:?}")))
    }
}

/// Pipeline settings. Every field has a default, so a config file may set
/// any subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    pub grid: GridSpec,
    /// Detections below this logit are dropped before fusion.
    pub logit_threshold: f32,
    pub ray_consistency: bool,
    /// Density threshold; 0 disables the density filter.
    pub min_points: usize,
    /// Unproject every n-th pixel row and column.
    pub pixel_stride: u32,
    /// Cast a visibility ray for every n-th pixel row and column.
    pub visibility_stride: u32,
    /// Thread count; 0 uses all cores.
    pub workers: usize,
    /// Seed for stochastic steps (synthetic scenes, depth corruption).
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: PipelineMode::Full,
            grid: GridSpec::default(),
            logit_threshold: DEFAULT_LOGIT_THRESHOLD,
            ray_consistency: true,
            min_points: DEFAULT_MIN_POINTS,
            pixel_stride: 1,
            visibility_stride: 1,
            workers: 0,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.logit_threshold >= 0.0) || !self.logit_threshold.is_finite() {
            return Err(Error::Invalid(format!(
                "logit_threshold must be a non-negative number, got {}",
                self.logit_threshold
            )));
        }
        if self.pixel_stride == 0 || self.visibility_stride == 0 {
            return Err(Error::Invalid("strides must be positive".into()));
        }
        Ok(())
    }

    pub fn filters(&self) -> FilterSettings {
        FilterSettings {
            ray_consistency: self.ray_consistency,
            min_points: (self.min_points > 0).then_some(self.min_points),
        }
    }

    /// Runs `f` on a pool with `workers` threads (all cores when 0).
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }
}

/// One camera's decoded inputs for a frame.
#[derive(Debug, Clone)]
pub struct CameraInput {
    pub camera: CameraModel,
    pub depth: DepthMap,
    pub mask: SemanticMask,
}

#[derive(Debug, Clone)]
pub struct FrameInput {
    pub pose: FramePose,
    pub cameras: Vec<CameraInput>,
}

impl FrameInput {
    pub fn camera_models(&self) -> Vec<CameraModel> {
        self.cameras.iter().map(|c| c.camera.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub grid: VoxelGrid,
    pub visibility: VisibilityGrid,
}

/// Everything a run produces: per-frame labels plus the filtered static
/// cloud (world frame) and the filter statistics, for debug export.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub frames: Vec<FrameOutput>,
    pub static_cloud: LabeledPointCloud,
    pub stats: Option<CellStats>,
    pub counting_grid: Option<GridSpec>,
}

/// Reads depth maps and semantics for every frame. Detection sets are
/// thresholded and fused here.
pub fn load_inputs(manifest: &SequenceManifest, logit_threshold: f32, classes: &ClassTable) -> Result<Vec<FrameInput>> {
    manifest
        .frames
        .par_iter()
        .enumerate()
        .map(|(fi, frame)| {
            let cameras = frame
                .cameras
                .iter()
                .map(|rec| {
                    let depth = raster::read_depth(&rec.depth_path)?;
                    let mask = match &rec.semantics {
                        SemanticSource::Mask(p) => raster::read_mask(p)?,
                        SemanticSource::Detections(p) => fuse_detection_file(p, logit_threshold, classes)?,
                    };
                    Ok(CameraInput {
                        camera: rec.camera.clone(),
                        depth,
                        mask,
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_frame(fi))?;
            Ok(FrameInput {
                pose: frame.pose,
                cameras,
            })
        })
        .collect()
}

fn camera_centers(frames: &[FrameInput]) -> Vec<Vec<Vector3<f64>>> {
    frames
        .iter()
        .map(|f| f.cameras.iter().map(|c| c.camera.center()).collect())
        .collect()
}

fn filter_cloud(
    cloud: &LabeledPointCloud,
    centers: &[Vec<Vector3<f64>>],
    grid: &GridSpec,
    anchor: &RigidTransform,
    settings: FilterSettings,
) -> crate::filter::FilterOutcome {
    confidence_filter(
        cloud,
        |i| {
            let p = &cloud.points[i];
            centers[p.frame as usize][p.camera as usize]
        },
        grid,
        anchor,
        settings,
    )
}

fn label_frame(
    cloud_world: &LabeledPointCloud,
    frame: &FrameInput,
    config: &PipelineConfig,
    classes: &ClassTable,
) -> FrameOutput {
    let to_ego = frame.pose.ego_to_world.inverse();
    let local: LabeledPointCloud = cloud_world
        .points
        .iter()
        .map(|p| {
            let mut q = *p;
            q.position = to_ego.transform_point(&p.position);
            q
        })
        .collect();
    let grid = voxelize(&local, &config.grid, classes);
    let visibility = visibility_mask(
        &grid,
        &frame.camera_models(),
        &frame.pose.ego_to_world,
        config.visibility_stride,
        classes.empty(),
    );
    FrameOutput { grid, visibility }
}

/// Runs the pipeline on decoded inputs, on a pool of `config.workers`
/// threads.
pub fn run_frames(frames: &[FrameInput], config: &PipelineConfig, classes: &ClassTable) -> Result<PipelineRun> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::Invalid("sequence has no frames".into()));
    }
    config.install(|| run_frames_in_pool(frames, config, classes))?
}

fn run_frames_in_pool(frames: &[FrameInput], config: &PipelineConfig, classes: &ClassTable) -> Result<PipelineRun> {
    let split: Vec<(LabeledPointCloud, LabeledPointCloud)> = frames
        .par_iter()
        .enumerate()
        .map(|(fi, f)| {
            let views: Vec<CameraView<'_>> = f
                .cameras
                .iter()
                .map(|c| CameraView {
                    camera: &c.camera,
                    depth: &c.depth,
                    mask: &c.mask,
                })
                .collect();
            split_frame(fi as u32, &views, classes, config.pixel_stride).map_err(|e| e.in_frame(fi))
        })
        .collect::<Result<_>>()?;
    log::info!(
        "{} frames, {} static and {} dynamic points, mode {}",
        frames.len(),
        split.iter().map(|s| s.0.len()).sum::<usize>(),
        split.iter().map(|s| s.1.len()).sum::<usize>(),
        config.mode
    );
    let centers = camera_centers(frames);
    let settings = config.filters();
    let anchor = frames[0].pose.ego_to_world;
    let empty = LabeledPointCloud::default();

    let (outputs, static_cloud, stats, counting_grid) = match config.mode {
        PipelineMode::PerFrame => {
            let per: Vec<(FrameOutput, LabeledPointCloud)> = frames
                .par_iter()
                .zip(&split)
                .map(|(f, (stat, dyna))| {
                    let kept = filter_cloud(stat, &centers, &config.grid, &f.pose.ego_to_world, settings).cloud;
                    let out = label_frame(&compose_frame_cloud(&kept, dyna), f, config, classes);
                    (out, kept)
                })
                .collect();
            let (outs, clouds): (Vec<_>, Vec<_>) = per.into_iter().unzip();
            (outs, accumulate_static(clouds), None, None)
        }
        PipelineMode::AggregateNoDynamics | PipelineMode::Full => {
            let full = config.mode == PipelineMode::Full;
            let accumulated = accumulate_static(split.iter().map(|(stat, dyna)| {
                if full {
                    stat.clone()
                } else {
                    compose_frame_cloud(stat, dyna)
                }
            }));
            let outcome = filter_cloud(&accumulated, &centers, &config.grid, &anchor, settings);
            log::info!("confidence filter kept {} of {} points", outcome.cloud.len(), accumulated.len());
            let outs: Vec<FrameOutput> = frames
                .par_iter()
                .zip(&split)
                .map(|(f, (_, dyna))| {
                    let cloud = if full {
                        compose_frame_cloud(&outcome.cloud, dyna)
                    } else {
                        compose_frame_cloud(&outcome.cloud, &empty)
                    };
                    label_frame(&cloud, f, config, classes)
                })
                .collect();
            (outs, outcome.cloud, outcome.stats, outcome.counting_grid)
        }
    };
    Ok(PipelineRun {
        frames: outputs,
        static_cloud,
        stats,
        counting_grid,
    })
}

/// Loads a validated manifest and runs the pipeline on it.
pub fn run_pipeline(manifest: &SequenceManifest, config: &PipelineConfig, classes: &ClassTable) -> Result<PipelineRun> {
    config.validate()?;
    let inputs = config.install(|| load_inputs(manifest, config.logit_threshold, classes))??;
    run_frames(&inputs, config, classes)
}

pub fn frame_file_name(frame: usize) -> String {
    format!("frame_{frame:04}.occ")
}

/// Writes one `.occ` file per frame into `dir`, returning the paths.
pub fn write_outputs(dir: &Path, frames: &[FrameOutput]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(frame_file_name(i));
            write_grid(&path, &f.grid, &f.visibility).map_err(|e| e.in_frame(i))?;
            Ok(path)
        })
        .collect()
}

/// IoU and RayIoU of one predicted frame against ground truth, on cells the
/// ground-truth mask observes. Rays are the frame's camera pixel rays.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_frame(
    pred: &VoxelGrid,
    gt: &VoxelGrid,
    gt_mask: &VisibilityGrid,
    cameras: &[CameraModel],
    ego_to_world: &RigidTransform,
    ray_stride: u32,
    thresholds: &[f64],
    classes: &ClassTable,
) -> Result<(IouReport, Option<RayIouReport>)> {
    let iou = grid_iou(pred, gt, gt_mask, classes)?;
    let rays = camera_rays(cameras, ego_to_world, ray_stride);
    let ray = if rays.is_empty() || thresholds.is_empty() {
        None
    } else {
        Some(ray_iou(pred, gt, &rays, thresholds, classes)?)
    };
    Ok((iou, ray))
}
