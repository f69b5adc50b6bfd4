//! Synthetic driving scenes: a voxel world, moving box actors, an exact
//! depth/semantics renderer and per-frame ground truth.
//!
//! Rendering walks the same voxel traversal the pipeline uses, so a
//! rendered point always falls inside the cell its pixel ray hits first.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{BinaryMask, DetectionClass, DetectionMask, DetectionSetFile, SemanticMask};
use crate::io::{raster, write_grid};
use crate::pipeline::{CameraInput, FrameInput};
use crate::scene::manifest::write_manifest;
use crate::scene::{
    look_along, CameraModel, ClassId, ClassTable, FramePose, GridSpec, RawCamera, RawFrame,
    RawManifest, RigidTransform,
};
use crate::traversal::RayWalk;
use crate::unproject::{unproject_pixel, DepthMap};
use crate::voxelize::{visibility_mask, VisibilityGrid, VoxelGrid};

/// Depth is placed this far (in z-depth units) past the hit cell's entry
/// face, so the unprojected point lies inside the cell.
const SURFACE_INSET: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub class: ClassId,
    /// Full box extents along the actor's own axes, meters.
    pub size: [f64; 3],
    /// Box center at frame 0, world frame.
    pub start: [f64; 3],
    /// Translation per frame, meters.
    pub velocity: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Camera position in the ego frame.
    pub mount: [f64; 3],
    /// Downward pitch, radians.
    pub pitch: f64,
    /// One camera per yaw (radians, counter-clockwise from ego +x).
    pub yaws: Vec<f64>,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            focal: 160.0,
            mount: [0.1, 0.1, 1.1],
            pitch: 10f64.to_radians(),
            yaws: vec![0.0, std::f64::consts::PI],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    /// World box minimum corner and size, meters.
    pub origin: [f64; 3],
    pub extent: [f64; 3],
    pub resolution: f64,
    pub frames: usize,
    /// Ego position at frame 0 and its translation per frame.
    pub ego_start: [f64; 3],
    pub ego_step: [f64; 3],
    /// Height of the boundary walls, meters.
    pub perimeter_height: f64,
    pub walls: usize,
    pub pillars: usize,
    pub terrain_patches: usize,
    /// Obstacles stay this far (in y) from the ego path.
    pub clear_half_width: f64,
    pub actors: Vec<ActorSpec>,
    pub rig: CameraRig,
    /// Label grid in the ego frame.
    pub ego_grid: GridSpec,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            origin: [-10.0, -10.0, -1.0],
            extent: [20.0, 20.0, 4.0],
            resolution: 0.4,
            frames: 3,
            ego_start: [-0.8, 0.0, 0.0],
            ego_step: [0.8, 0.0, 0.0],
            perimeter_height: 2.4,
            walls: 4,
            pillars: 6,
            terrain_patches: 3,
            clear_half_width: 2.0,
            actors: Vec::new(),
            rig: CameraRig::default(),
            ego_grid: GridSpec::new([-10.0, -10.0, -1.0], 0.4, [50, 50, 10]).expect("valid grid"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub class: ClassId,
    pub half_extents: Vector3<f64>,
    /// Actor-to-world per frame.
    pub poses: Vec<RigidTransform>,
}

impl Actor {
    pub fn contains(&self, frame: usize, p: &Vector3<f64>) -> bool {
        let local = self.poses[frame].inverse().transform_point(p);
        (0..3).all(|a| local[a].abs() <= self.half_extents[a] + 1e-9)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub spec: ScenarioSpec,
    /// Static structure, world frame.
    pub static_grid: VoxelGrid,
    pub actors: Vec<Actor>,
    pub ego_poses: Vec<RigidTransform>,
    pub classes: ClassTable,
}

fn class_id(classes: &ClassTable, name: &str) -> ClassId {
    classes.by_name(name).expect("default vocabulary class")
}

/// Builds a deterministic world: a ground layer with sidewalk strips and
/// terrain patches, boundary walls, random interior walls and pillars, and
/// the requested actors on linear trajectories.
pub fn build_world(spec: &ScenarioSpec, seed: u64) -> Result<SyntheticWorld> {
    if spec.extent.iter().any(|e| !(*e > 0.0)) || !(spec.resolution > 0.0) {
        return Err(Error::Invalid(format!(
            "degenerate scenario: extent {:?}, resolution {}",
            spec.extent, spec.resolution
        )));
    }
    if spec.frames == 0 {
        return Err(Error::Invalid("degenerate scenario: zero frames".into()));
    }
    if spec.rig.yaws.is_empty() {
        return Err(Error::Invalid("scenario has no cameras".into()));
    }
    spec.ego_grid.validate()?;
    let classes = ClassTable::default();
    for a in &spec.actors {
        if !classes.contains(a.class) || !classes.is_dynamic(a.class) {
            return Err(Error::Invalid(format!("actor class {} is not a dynamic class", a.class)));
        }
        if a.size.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Invalid(format!("degenerate actor size {:?}", a.size)));
        }
    }

    let dims = spec.extent.map(|e| (e / spec.resolution).round().max(1.0) as usize);
    let gs = GridSpec::new(spec.origin, spec.resolution, dims)?;
    let mut grid = VoxelGrid::filled(gs, classes.empty());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let road = class_id(&classes, "driveable_surface");
    let sidewalk = class_id(&classes, "sidewalk");
    let terrain = class_id(&classes, "terrain");
    let manmade = class_id(&classes, "manmade");
    let vegetation = class_id(&classes, "vegetation");

    let [nx, ny, nz] = dims;
    let cells_of = |m: f64| (m / spec.resolution).round() as usize;
    let clear = cells_of(spec.clear_half_width);
    let mid_y = ny / 2;
    let in_clear = |y: usize| y + clear >= mid_y && y < mid_y + clear;

    for x in 0..nx {
        for y in 0..ny {
            grid.set([x, y, 0], road);
        }
    }
    // sidewalks along both edges of the cleared corridor
    let walk = 3.min(ny);
    for x in 0..nx {
        for k in 0..walk {
            if mid_y + clear + k < ny {
                grid.set([x, mid_y + clear + k, 0], sidewalk);
            }
            if let Some(y) = mid_y.checked_sub(clear + 1 + k) {
                grid.set([x, y, 0], sidewalk);
            }
        }
    }
    for _ in 0..spec.terrain_patches {
        let w = rng.random_range(3..=8).min(nx);
        let h = rng.random_range(3..=8).min(ny);
        let x0 = rng.random_range(0..=nx - w);
        let y0 = rng.random_range(0..=ny - h);
        for x in x0..x0 + w {
            for y in y0..y0 + h {
                if !in_clear(y) {
                    grid.set([x, y, 0], terrain);
                }
            }
        }
    }

    let top = |h: f64| (1 + cells_of(h)).min(nz);
    let perimeter = top(spec.perimeter_height);
    for z in 1..perimeter {
        for x in 0..nx {
            grid.set([x, 0, z], manmade);
            grid.set([x, ny - 1, z], manmade);
        }
        for y in 0..ny {
            grid.set([0, y, z], manmade);
            grid.set([nx - 1, y, z], manmade);
        }
    }

    let free_y = |rng: &mut ChaCha8Rng, len: usize| -> Option<usize> {
        let candidates: Vec<usize> = (1..ny.saturating_sub(len))
            .filter(|&y| (y..y + len).all(|yy| !in_clear(yy)))
            .collect();
        (!candidates.is_empty()).then(|| candidates[rng.random_range(0..candidates.len())])
    };
    for _ in 0..spec.walls {
        let along_x = rng.random_bool(0.5);
        let len = rng.random_range(5..=12usize);
        let height = top(rng.random_range(1.2..=2.4));
        if along_x {
            let Some(y) = free_y(&mut rng, 1) else { continue };
            let x0 = rng.random_range(1..nx.saturating_sub(len).max(2));
            for x in x0..(x0 + len).min(nx - 1) {
                for z in 1..height {
                    grid.set([x, y, z], manmade);
                }
            }
        } else {
            let Some(y0) = free_y(&mut rng, len.min(ny / 3)) else { continue };
            let x = rng.random_range(1..nx - 1);
            for y in y0..(y0 + len.min(ny / 3)).min(ny - 1) {
                for z in 1..height {
                    grid.set([x, y, z], manmade);
                }
            }
        }
    }
    for _ in 0..spec.pillars {
        let side = rng.random_range(1..=2usize);
        let height = top(rng.random_range(0.8..=2.4));
        let Some(y0) = free_y(&mut rng, side) else { continue };
        let x0 = rng.random_range(1..nx.saturating_sub(side).max(2));
        for x in x0..(x0 + side).min(nx - 1) {
            for y in y0..y0 + side {
                for z in 1..height {
                    grid.set([x, y, z], vegetation);
                }
            }
        }
    }

    let actors = spec
        .actors
        .iter()
        .map(|a| Actor {
            class: a.class,
            half_extents: Vector3::from(a.size) / 2.0,
            poses: (0..spec.frames)
                .map(|t| {
                    let c = Vector3::from(a.start) + Vector3::from(a.velocity) * t as f64;
                    RigidTransform::from_yaw(a.yaw, c)
                })
                .collect(),
        })
        .collect();
    let ego_poses = (0..spec.frames)
        .map(|t| {
            RigidTransform::from_translation(
                Vector3::from(spec.ego_start) + Vector3::from(spec.ego_step) * t as f64,
            )
        })
        .collect();
    Ok(SyntheticWorld {
        spec: spec.clone(),
        static_grid: grid,
        actors,
        ego_poses,
        classes,
    })
}

impl SyntheticWorld {
    pub fn frames(&self) -> usize {
        self.ego_poses.len()
    }

    /// Static grid with frame `t`'s actors stamped in (cells whose center
    /// lies inside a box).
    pub fn frame_grid(&self, t: usize) -> VoxelGrid {
        let mut g = self.static_grid.clone();
        let spec = g.spec;
        for actor in &self.actors {
            let r = actor.half_extents.norm();
            let c = actor.poses[t].translation();
            let lo = spec.cell_of(&(c - Vector3::repeat(r)));
            let hi = spec.cell_of(&(c + Vector3::repeat(r)));
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for z in lo[2]..=hi[2] {
                        let Some(v) = spec.in_bounds([x, y, z]) else { continue };
                        if actor.contains(t, &spec.voxel_center(v)) {
                            g.set(v, actor.class);
                        }
                    }
                }
            }
        }
        g
    }

    /// World-frame cameras at frame `t`.
    pub fn cameras(&self, t: usize) -> Result<Vec<CameraModel>> {
        let rig = &self.spec.rig;
        let ego = &self.ego_poses[t];
        rig.yaws
            .iter()
            .map(|&yaw| {
                let eye = ego.transform_point(&Vector3::from(rig.mount));
                let fwd = Vector3::new(
                    yaw.cos() * rig.pitch.cos(),
                    yaw.sin() * rig.pitch.cos(),
                    -rig.pitch.sin(),
                );
                let pose = look_along(eye, ego.transform_vector(&fwd), Vector3::z())?;
                CameraModel::pinhole(
                    rig.focal,
                    (rig.width as f64 - 1.0) / 2.0,
                    (rig.height as f64 - 1.0) / 2.0,
                    pose,
                    rig.width,
                    rig.height,
                )
            })
            .collect()
    }

    /// Ground-truth labels for frame `t` on the ego grid, with the camera
    /// visibility mask of that frame.
    pub fn ground_truth(&self, t: usize) -> Result<(VoxelGrid, VisibilityGrid)> {
        let world = self.frame_grid(t);
        let spec = self.spec.ego_grid;
        let ego = &self.ego_poses[t];
        let empty = self.classes.empty();
        let labels = (0..spec.num_cells())
            .into_par_iter()
            .map(|i| {
                let p = ego.transform_point(&spec.voxel_center(spec.unlinear(i)));
                world
                    .spec
                    .world_to_voxel(&p)
                    .map_or(empty, |v| world.get(v))
            })
            .collect();
        let gt = VoxelGrid::from_labels(spec, labels)?;
        let mask = visibility_mask(&gt, &self.cameras(t)?, ego, 1, empty);
        Ok((gt, mask))
    }
}

/// Renders z-depth and class for every pixel of every camera against
/// frame `t`'s grid. Pixels whose ray leaves the world get NaN depth and
/// the unlabeled class.
pub fn render_views(
    world: &SyntheticWorld,
    cameras: &[CameraModel],
    t: usize,
) -> Vec<(DepthMap, SemanticMask)> {
    let grid = world.frame_grid(t);
    let unlabeled = world.classes.unlabeled();
    cameras
        .iter()
        .map(|cam| {
            let (w, h) = (cam.width(), cam.height());
            let pixels: Vec<(f32, ClassId)> = (0..h)
                .into_par_iter()
                .flat_map_iter(|v| (0..w).map(move |u| (u, v)))
                .map(|(u, v)| render_pixel(&grid, cam, u, v, &world.classes))
                .collect();
            let depth = DepthMap::new(w, h, pixels.iter().map(|p| p.0).collect()).expect("sized");
            let classes: Vec<ClassId> = pixels.iter().map(|p| p.1).collect();
            let logits = classes
                .iter()
                .map(|&c| if c == unlabeled { 0.0 } else { 1.0 })
                .collect();
            let mask = SemanticMask::from_parts(w, h, classes, logits).expect("sized");
            (depth, mask)
        })
        .collect()
}

fn render_pixel(grid: &VoxelGrid, cam: &CameraModel, u: u32, v: u32, classes: &ClassTable) -> (f32, ClassId) {
    let spec = grid.spec;
    let dir = cam.pixel_ray_world(u as f64, v as f64);
    let hit = RayWalk::ray(&cam.center(), &dir, &spec).find(|x| grid.get(x.voxel) != classes.empty());
    let Some(hit) = hit else {
        return (f32::NAN, classes.unlabeled());
    };
    // Keep the stored (f32) depth inside the hit cell; fall back to the
    // chord midpoint for cells the ray only clips.
    let chord = hit.t_exit - hit.t_enter;
    for t in [hit.t_enter + SURFACE_INSET.min(chord / 2.0), hit.t_enter + chord / 2.0] {
        let d = t as f32;
        if let Ok(p) = unproject_pixel(u as f64, v as f64, d as f64, cam) {
            if spec.world_to_voxel(&p) == Some(hit.voxel) {
                return (d, grid.get(hit.voxel));
            }
        }
    }
    (f32::NAN, classes.unlabeled())
}

/// Perturbs exactly `floor(fraction * N_valid)` valid pixels, chosen by
/// `seed`, by `magnitude` meters with a random sign. A negative step that
/// would make the depth non-positive is applied as positive.
pub fn corrupt_depth(depth: &DepthMap, fraction: f64, magnitude: f64, seed: u64) -> Result<DepthMap> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Invalid(format!("outlier fraction {fraction} outside [0, 1]")));
    }
    if !(magnitude >= 0.0) || !magnitude.is_finite() {
        return Err(Error::Invalid(format!("outlier magnitude {magnitude} must be non-negative")));
    }
    let valid: Vec<usize> = depth
        .data()
        .iter()
        .enumerate()
        .filter(|(_, d)| DepthMap::is_valid(**d))
        .map(|(i, _)| i)
        .collect();
    let k = ((fraction * valid.len() as f64) + 1e-9).floor() as usize;
    let k = k.min(valid.len());
    let mut out = depth.clone();
    if k == 0 || magnitude == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = sample(&mut rng, valid.len(), k).into_iter().collect();
    chosen.sort_unstable();
    let data = out.data_mut();
    for j in chosen {
        let i = valid[j];
        let d = data[i] as f64;
        let down = rng.random_bool(0.5) && d - magnitude > 0.0;
        data[i] = if down { d - magnitude } else { d + magnitude } as f32;
    }
    Ok(out)
}

/// Noise applied while rendering a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DepthNoise {
    pub outlier_fraction: f64,
    pub magnitude: f64,
    pub seed: u64,
}

fn noise_seed(seed: u64, frame: usize, camera: usize) -> u64 {
    seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (camera as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Renders every frame into in-memory pipeline inputs.
pub fn render_sequence(world: &SyntheticWorld, noise: Option<DepthNoise>) -> Result<Vec<FrameInput>> {
    (0..world.frames())
        .map(|t| {
            let cams = world.cameras(t)?;
            let views = render_views(world, &cams, t);
            let cameras = cams
                .into_iter()
                .zip(views)
                .enumerate()
                .map(|(ci, (camera, (depth, mask)))| {
                    let depth = match noise {
                        Some(n) => corrupt_depth(&depth, n.outlier_fraction, n.magnitude, noise_seed(n.seed, t, ci))?,
                        None => depth,
                    };
                    Ok(CameraInput { camera, depth, mask })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FrameInput {
                pose: FramePose {
                    ego_to_world: world.ego_poses[t],
                    timestamp: t as i64 * 500_000,
                },
                cameras,
            })
        })
        .collect()
}

/// How per-camera semantics are written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticsFormat {
    /// Fused mask rasters.
    #[default]
    Mask,
    /// Raw per-class detection sets, with a background detection on
    /// no-hit pixels.
    Detections,
}

/// Splits a fused mask back into one detection per class present.
pub fn mask_to_detections(mask: &SemanticMask, classes: &ClassTable) -> Vec<DetectionMask> {
    let (w, h) = (mask.width(), mask.height());
    let mut present: Vec<ClassId> = mask.classes().to_vec();
    present.sort_unstable();
    present.dedup();
    let mut dets: Vec<DetectionMask> = present
        .iter()
        .filter(|&&c| classes.is_semantic(c))
        .map(|&c| DetectionMask {
            class: DetectionClass::Class(c),
            logit: 0.9,
            mask: BinaryMask::from_fn(w, h, |u, v| mask.class_at(u, v) == c),
        })
        .collect();
    if present.contains(&classes.unlabeled()) {
        dets.push(DetectionMask {
            class: DetectionClass::Background,
            logit: 0.95,
            mask: BinaryMask::from_fn(w, h, |u, v| mask.class_at(u, v) == classes.unlabeled()),
        });
    }
    dets
}

fn rows4(t: &RigidTransform) -> [[f64; 4]; 4] {
    t.to_rows()
}

/// Writes a full sequence under `dir`: `manifest.json`, `depth/`, `mask/`
/// or `det/`, and ground truth in `gt/`. Returns the manifest path.
pub fn write_synth_sequence(
    world: &SyntheticWorld,
    dir: &Path,
    noise: Option<DepthNoise>,
    semantics: SemanticsFormat,
) -> Result<PathBuf> {
    let sub = |name: &str| -> Result<PathBuf> {
        let p = dir.join(name);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    };
    let depth_dir = sub("depth")?;
    let sem_dir = sub(match semantics {
        SemanticsFormat::Mask => "mask",
        SemanticsFormat::Detections => "det",
    })?;
    let gt_dir = sub("gt")?;
    let inputs = render_sequence(world, noise)?;
    let mut raw = RawManifest {
        sequence_id: "synthetic".into(),
        frames: Vec::with_capacity(inputs.len()),
    };
    for (t, frame) in inputs.iter().enumerate() {
        let gt_name = format!("frame_{t:04}.occ");
        let (gt, mask) = world.ground_truth(t)?;
        write_grid(&gt_dir.join(&gt_name), &gt, &mask).map_err(|e| e.in_frame(t))?;
        let mut cameras = Vec::new();
        for (ci, cam) in frame.cameras.iter().enumerate() {
            let depth_name = format!("f{t:04}_c{ci}.bin");
            raster::write_depth(&depth_dir.join(&depth_name), &cam.depth).map_err(|e| e.in_frame(t))?;
            let (mask_rel, det_rel) = match semantics {
                SemanticsFormat::Mask => {
                    raster::write_mask(&sem_dir.join(&depth_name), &cam.mask).map_err(|e| e.in_frame(t))?;
                    (Some(format!("mask/{depth_name}")), None)
                }
                SemanticsFormat::Detections => {
                    let name = format!("f{t:04}_c{ci}.json");
                    let dets = mask_to_detections(&cam.mask, &world.classes);
                    DetectionSetFile::from_detections(cam.mask.width(), cam.mask.height(), &dets)
                        .write(&sem_dir.join(&name))
                        .map_err(|e| e.in_frame(t))?;
                    (None, Some(format!("det/{name}")))
                }
            };
            let k = cam.camera.intrinsics();
            cameras.push(RawCamera {
                name: format!("cam{ci}"),
                width: cam.camera.width(),
                height: cam.camera.height(),
                intrinsics: [
                    [k[(0, 0)], k[(0, 1)], k[(0, 2)]],
                    [k[(1, 0)], k[(1, 1)], k[(1, 2)]],
                    [k[(2, 0)], k[(2, 1)], k[(2, 2)]],
                ],
                cam_to_world: rows4(cam.camera.cam_to_world()),
                depth: format!("depth/{depth_name}"),
                mask: mask_rel,
                detections: det_rel,
            });
        }
        raw.frames.push(RawFrame {
            timestamp: frame.pose.timestamp,
            ego_to_world: rows4(&frame.pose.ego_to_world),
            cameras,
            gt_grid: Some(format!("gt/{gt_name}")),
        });
    }
    let path = dir.join("manifest.json");
    write_manifest(&path, &raw)?;
    Ok(path)
}
