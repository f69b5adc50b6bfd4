//! Sequence manifest: the JSON file describing a driving sequence.
//!
//! ```json
//! {
//!   "sequence_id": "scene-0001",
//!   "frames": [
//!     {
//!       "timestamp": 0,
//!       "ego_to_world": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]],
//!       "gt_grid": "gt/frame_0000.occ",
//!       "cameras": [
//!         {
//!           "name": "front",
//!           "width": 160, "height": 120,
//!           "intrinsics": [[100,0,80],[0,100,60],[0,0,1]],
//!           "cam_to_world": [[...], [...], [...], [0,0,0,1]],
//!           "depth": "depth/f0000_c0.bin",
//!           "mask": "mask/f0000_c0.bin"
//!         }
//!       ]
//!     }
//!   ]
//! }
//! ```
//!
//! Matrices are row-major nested arrays. Paths are relative to the manifest's
//! directory (absolute paths are used as-is). `gt_grid` is optional.
//!
//! Each camera gives its semantics either as a fused mask raster (`mask`)
//! or as a raw detection set (`detections`, JSON) that the pipeline filters
//! and fuses itself. Exactly one of the two must be present.

use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::camera::CameraModel;
use super::transform::RigidTransform;
use crate::error::{Error, Result};
use crate::fusion::DetectionSetFile;
use crate::io::raster::{self, DEPTH_MAGIC, MASK_MAGIC};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawManifest {
    pub sequence_id: String,
    pub frames: Vec<RawFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFrame {
    #[serde(default)]
    pub timestamp: i64,
    pub ego_to_world: [[f64; 4]; 4],
    pub cameras: Vec<RawCamera>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_grid: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCamera {
    #[serde(default)]
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub intrinsics: [[f64; 3]; 3],
    pub cam_to_world: [[f64; 4]; 4],
    pub depth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePose {
    pub ego_to_world: RigidTransform,
    /// Microseconds.
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SemanticSource {
    Mask(PathBuf),
    Detections(PathBuf),
}

#[derive(Debug, Clone)]
pub struct CameraRecord {
    pub name: String,
    pub camera: CameraModel,
    pub depth_path: PathBuf,
    pub semantics: SemanticSource,
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub pose: FramePose,
    pub cameras: Vec<CameraRecord>,
    pub gt_grid: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SequenceManifest {
    pub sequence_id: String,
    pub frames: Vec<Frame>,
}

impl SequenceManifest {
    pub fn camera_count(&self) -> usize {
        self.frames.first().map_or(0, |f| f.cameras.len())
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn check_raster(path: &Path, magic: [u8; 8], what: &'static str, w: u32, h: u32) -> Result<()> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let (header, len) = raster::probe(path, what)?;
    if header.magic != magic {
        return Err(Error::BadMagic {
            what,
            expected: magic.to_vec(),
            found: header.magic.to_vec(),
        });
    }
    let expected = raster::expected_len(magic, w, h) as u64;
    if header.width != w || header.height != h || len != expected {
        return Err(Error::DimensionMismatch(format!(
            "{}: {what} is {}x{} with {len} bytes, camera declares {w}x{h} ({expected} bytes)",
            path.display(),
            header.width,
            header.height
        )));
    }
    Ok(())
}

fn check_detections(path: &Path, w: u32, h: u32) -> Result<()> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let set = DetectionSetFile::read(path)?;
    if set.width != w || set.height != h {
        return Err(Error::DimensionMismatch(format!(
            "{}: detection set is {}x{}, camera declares {w}x{h}",
            path.display(),
            set.width,
            set.height
        )));
    }
    // decoding checks every run-length mask against the size
    set.into_detections()?;
    Ok(())
}

/// Validates a parsed manifest against the filesystem rooted at `base_dir`,
/// failing on the first violated invariant.
pub fn validate_manifest(raw: &RawManifest, base_dir: &Path) -> Result<SequenceManifest> {
    let expected_cameras = raw.frames.first().map_or(0, |f| f.cameras.len());
    let mut frames = Vec::with_capacity(raw.frames.len());
    for (fi, rf) in raw.frames.iter().enumerate() {
        let ego_to_world = RigidTransform::from_rows(&rf.ego_to_world).map_err(|e| match e {
            Error::NonRigidPose(m) => Error::NonRigidPose(format!("frame {fi} ego pose: {m}")),
            other => other,
        })?;
        if rf.cameras.len() != expected_cameras || expected_cameras == 0 {
            return Err(Error::InconsistentCameraCount {
                frame: fi,
                expected: expected_cameras.max(1),
                found: rf.cameras.len(),
            });
        }
        let mut cameras = Vec::with_capacity(rf.cameras.len());
        for (ci, rc) in rf.cameras.iter().enumerate() {
            let pose = RigidTransform::from_rows(&rc.cam_to_world).map_err(|e| match e {
                Error::NonRigidPose(m) => {
                    Error::NonRigidPose(format!("frame {fi} camera {ci} pose: {m}"))
                }
                other => other,
            })?;
            let k = Matrix3::from_fn(|r, c| rc.intrinsics[r][c]);
            let camera = CameraModel::new(k, pose, rc.width, rc.height)?;
            let depth_path = resolve(base_dir, &rc.depth);
            check_raster(&depth_path, DEPTH_MAGIC, "depth map", rc.width, rc.height)?;
            let semantics = match (&rc.mask, &rc.detections) {
                (Some(m), None) => {
                    let p = resolve(base_dir, m);
                    check_raster(&p, MASK_MAGIC, "semantic mask", rc.width, rc.height)?;
                    SemanticSource::Mask(p)
                }
                (None, Some(d)) => {
                    let p = resolve(base_dir, d);
                    check_detections(&p, rc.width, rc.height)?;
                    SemanticSource::Detections(p)
                }
                _ => {
                    return Err(Error::Invalid(format!(
                        "frame {fi} camera {ci}: exactly one of \"mask\" or \"detections\" is required"
                    )))
                }
            };
            cameras.push(CameraRecord {
                name: if rc.name.is_empty() {
                    format!("cam{ci}")
                } else {
                    rc.name.clone()
                },
                camera,
                depth_path,
                semantics,
            });
        }
        let gt_grid = rf.gt_grid.as_deref().map(|p| resolve(base_dir, p));
        if let Some(p) = &gt_grid {
            if !p.is_file() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        frames.push(Frame {
            pose: FramePose {
                ego_to_world,
                timestamp: rf.timestamp,
            },
            cameras,
            gt_grid,
        });
    }
    Ok(SequenceManifest {
        sequence_id: raw.sequence_id.clone(),
        frames,
    })
}

pub fn read_raw_manifest(path: &Path) -> Result<RawManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads and validates a manifest; relative paths resolve against its directory.
pub fn load_manifest(path: &Path) -> Result<SequenceManifest> {
    let raw = read_raw_manifest(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    validate_manifest(&raw, base)
}

pub fn write_manifest(path: &Path, raw: &RawManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(raw).expect("manifest serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
