//! C ABI over the `occlabel` library.
//!
//! Every fallible call returns an [`OcclabelStatus`]; on failure a message
//! is available from [`occlabel_last_error`] on the same thread. Objects
//! cross the boundary as opaque handles and must be released with their
//! `_free` function. No call panics across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::Vector3;
use occlabel::config::ConfigFile;
use occlabel::io::{read_grid, write_grid};
use occlabel::metrics::grid_iou;
use occlabel::pipeline::{run_pipeline, write_outputs, FrameOutput, PipelineConfig, PipelineMode};
use occlabel::scene::{load_manifest, ClassTable, GridSpec};
use occlabel::traversal::traverse_ray;
use occlabel::{Error, VisibilityGrid, VoxelGrid};

/// Call outcome. Values 1 to 3 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OcclabelStatus {
    Ok = 0,
    /// Input failed validation (bad file contents, bad parameters).
    Validation = 1,
    Io = 2,
    /// An internal invariant was violated.
    Internal = 3,
    NullArgument = 4,
    /// A caller-provided buffer is too small; the needed size was written.
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OcclabelMode {
    PerFrame = 0,
    AggregateNoDynamics = 1,
    Full = 2,
}

fn mode_from_raw(m: i32) -> Result<PipelineMode, Error> {
    match m {
        x if x == OcclabelMode::PerFrame as i32 => Ok(PipelineMode::PerFrame),
        x if x == OcclabelMode::AggregateNoDynamics as i32 => Ok(PipelineMode::AggregateNoDynamics),
        x if x == OcclabelMode::Full as i32 => Ok(PipelineMode::Full),
        other => Err(Error::Invalid(format!("unknown mode {other}"))),
    }
}

/// Grid placement: cell (0,0,0) starts at `origin`, cells are `resolution`
/// meters wide.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclabelGridSpec {
    pub origin: [f64; 3],
    pub resolution: f64,
    pub dims: [u32; 3],
}

impl From<GridSpec> for OcclabelGridSpec {
    fn from(g: GridSpec) -> Self {
        Self {
            origin: g.origin,
            resolution: g.resolution,
            dims: g.dims.map(|d| d as u32),
        }
    }
}

impl OcclabelGridSpec {
    fn to_spec(self) -> Result<GridSpec, Error> {
        GridSpec::new(self.origin, self.resolution, self.dims.map(|d| d as usize))
    }
}

/// IoU summary. Metrics with an empty denominator are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclabelIou {
    pub miou: f64,
    pub geometric_iou: f64,
}

/// Labels plus visibility for one frame.
pub struct OcclabelGrid {
    grid: VoxelGrid,
    visibility: VisibilityGrid,
}

pub struct OcclabelConfig {
    config: PipelineConfig,
}

pub struct OcclabelRun {
    frames: Vec<FrameOutput>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> OcclabelStatus {
    match e.exit_code() {
        2 => OcclabelStatus::Io,
        3 => OcclabelStatus::Internal,
        _ => OcclabelStatus::Validation,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
    Small(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OcclabelStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            OcclabelStatus::Ok
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(&format!("null argument: {what}"));
            OcclabelStatus::NullArgument
        }
        Ok(Err(Failure::Small(msg))) => {
            set_last_error(&msg);
            OcclabelStatus::BufferTooSmall
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            OcclabelStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::Invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn occlabel_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn occlabel_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Writes the default label grid (80 m x 80 m x 6.4 m at 0.4 m).
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn occlabel_default_grid_spec(out: *mut OcclabelGridSpec) -> OcclabelStatus {
    guard(|| {
        *deref_mut(out, "out")? = GridSpec::default().into();
        Ok(())
    })
}

/// Reads a `.occ` grid file into a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn occlabel_grid_read(path: *const c_char, out: *mut *mut OcclabelGrid) -> OcclabelStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let (grid, visibility) = read_grid(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(OcclabelGrid { grid, visibility }));
        Ok(())
    })
}

/// # Safety
/// `grid` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn occlabel_grid_write(grid: *const OcclabelGrid, path: *const c_char) -> OcclabelStatus {
    guard(|| {
        let g = deref(grid, "grid")?;
        write_grid(&path_arg(path, "path")?, &g.grid, &g.visibility)?;
        Ok(())
    })
}

/// # Safety
/// `grid` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn occlabel_grid_free(grid: *mut OcclabelGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// # Safety
/// `grid` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn occlabel_grid_spec(grid: *const OcclabelGrid, out: *mut OcclabelGridSpec) -> OcclabelStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(grid, "grid")?.grid.spec.into();
        Ok(())
    })
}

/// Borrows the label plane (x-major, z fastest). The pointer lives as long
/// as the handle.
///
/// # Safety
/// `grid` must be a live handle; `data` and `len` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn occlabel_grid_labels(
    grid: *const OcclabelGrid,
    data: *mut *const u8,
    len: *mut usize,
) -> OcclabelStatus {
    guard(|| {
        let g = deref(grid, "grid")?;
        *deref_mut(data, "data")? = g.grid.labels.as_ptr();
        *deref_mut(len, "len")? = g.grid.labels.len();
        Ok(())
    })
}

/// Borrows the visibility plane: 0 unobserved, 1 free, 2 occupied.
///
/// # Safety
/// As for [`occlabel_grid_labels`].
#[no_mangle]
pub unsafe extern "C" fn occlabel_grid_visibility(
    grid: *const OcclabelGrid,
    data: *mut *const u8,
    len: *mut usize,
) -> OcclabelStatus {
    guard(|| {
        let g = deref(grid, "grid")?;
        // Visibility is repr(u8), so the plane can be lent as bytes.
        *deref_mut(data, "data")? = g.visibility.state.as_ptr() as *const u8;
        *deref_mut(len, "len")? = g.visibility.state.len();
        Ok(())
    })
}

/// New config with library defaults.
#[no_mangle]
pub extern "C" fn occlabel_config_new() -> *mut OcclabelConfig {
    Box::into_raw(Box::new(OcclabelConfig {
        config: PipelineConfig::default(),
    }))
}

/// Loads the `[pipeline]` table of a TOML config file into a new handle.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn occlabel_config_from_toml(
    path: *const c_char,
    out: *mut *mut OcclabelConfig,
) -> OcclabelStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let config = ConfigFile::load(&path_arg(path, "path")?)?.pipeline;
        config.validate()?;
        *out = Box::into_raw(Box::new(OcclabelConfig { config }));
        Ok(())
    })
}

/// # Safety
/// `config` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn occlabel_config_free(config: *mut OcclabelConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// `mode` is an `OcclabelMode` value.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn occlabel_config_set_mode(config: *mut OcclabelConfig, mode: i32) -> OcclabelStatus {
    guard(|| {
        let mode = mode_from_raw(mode)?;
        deref_mut(config, "config")?.config.mode = mode;
        Ok(())
    })
}

/// 0 uses all cores.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn occlabel_config_set_workers(config: *mut OcclabelConfig, workers: u32) -> OcclabelStatus {
    guard(|| {
        deref_mut(config, "config")?.config.workers = workers as usize;
        Ok(())
    })
}

/// Sets both confidence filters; `min_points` 0 disables density pruning.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn occlabel_config_set_filters(
    config: *mut OcclabelConfig,
    ray_consistency: bool,
    min_points: u32,
) -> OcclabelStatus {
    guard(|| {
        let c = &mut deref_mut(config, "config")?.config;
        c.ray_consistency = ray_consistency;
        c.min_points = min_points as usize;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle; `spec` must be readable.
#[no_mangle]
pub unsafe extern "C" fn occlabel_config_set_grid(
    config: *mut OcclabelConfig,
    spec: *const OcclabelGridSpec,
) -> OcclabelStatus {
    guard(|| {
        let spec = deref(spec, "spec")?.to_spec()?;
        deref_mut(config, "config")?.config.grid = spec;
        Ok(())
    })
}

/// Loads, validates and runs a manifest with the default class table.
///
/// # Safety
/// `manifest_path` must be NUL-terminated; `config` a live handle; `out`
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn occlabel_run_manifest(
    manifest_path: *const c_char,
    config: *const OcclabelConfig,
    out: *mut *mut OcclabelRun,
) -> OcclabelStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let config = &deref(config, "config")?.config;
        let manifest = load_manifest(&path_arg(manifest_path, "manifest_path")?)?;
        let run = run_pipeline(&manifest, config, &ClassTable::default())?;
        *out = Box::into_raw(Box::new(OcclabelRun { frames: run.frames }));
        Ok(())
    })
}

/// # Safety
/// `run` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn occlabel_run_frame_count(run: *const OcclabelRun) -> usize {
    run.as_ref().map_or(0, |r| r.frames.len())
}

/// Copies frame `index` of a run into a new grid handle.
///
/// # Safety
/// `run` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn occlabel_run_frame(
    run: *const OcclabelRun,
    index: usize,
    out: *mut *mut OcclabelGrid,
) -> OcclabelStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let f = deref(run, "run")?
            .frames
            .get(index)
            .ok_or_else(|| Error::Invalid(format!("frame index {index} out of range")))?;
        *out = Box::into_raw(Box::new(OcclabelGrid {
            grid: f.grid.clone(),
            visibility: f.visibility.clone(),
        }));
        Ok(())
    })
}

/// Writes `frame_NNNN.occ` files into `dir`, creating it if needed.
///
/// # Safety
/// `run` must be a live handle; `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn occlabel_run_write(run: *const OcclabelRun, dir: *const c_char) -> OcclabelStatus {
    guard(|| {
        let r = deref(run, "run")?;
        write_outputs(&path_arg(dir, "dir")?, &r.frames)?;
        Ok(())
    })
}

/// # Safety
/// `run` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn occlabel_run_free(run: *mut OcclabelRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// IoU of `pred` against `gt` on the cells `gt`'s visibility plane observes.
///
/// # Safety
/// `pred` and `gt` must be live handles; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn occlabel_eval_iou(
    pred: *const OcclabelGrid,
    gt: *const OcclabelGrid,
    out: *mut OcclabelIou,
) -> OcclabelStatus {
    guard(|| {
        let (p, g) = (deref(pred, "pred")?, deref(gt, "gt")?);
        let r = grid_iou(&p.grid, &g.grid, &g.visibility, &ClassTable::default())?;
        *deref_mut(out, "out")? = OcclabelIou {
            miou: r.miou.unwrap_or(f64::NAN),
            geometric_iou: r.geometric_iou.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Cells crossed by the segment `origin -> endpoint`, in order, as
/// `(x, y, z)` triples. `capacity` counts cells. The number of cells is
/// always written to `len`; if it exceeds `capacity`, nothing else is
/// written and `BufferTooSmall` is returned.
///
/// # Safety
/// `origin` and `endpoint` must point to 3 doubles, `spec` be readable,
/// `cells` writable for `3 * capacity` values (may be null when `capacity`
/// is 0), `len` writable.
#[no_mangle]
pub unsafe extern "C" fn occlabel_traverse_ray(
    origin: *const f64,
    endpoint: *const f64,
    spec: *const OcclabelGridSpec,
    cells: *mut u32,
    capacity: usize,
    len: *mut usize,
) -> OcclabelStatus {
    guard(|| {
        if origin.is_null() {
            return Err(Failure::Null("origin"));
        }
        if endpoint.is_null() {
            return Err(Failure::Null("endpoint"));
        }
        let o = Vector3::from_column_slice(std::slice::from_raw_parts(origin, 3));
        let e = Vector3::from_column_slice(std::slice::from_raw_parts(endpoint, 3));
        let spec = deref(spec, "spec")?.to_spec()?;
        let len = deref_mut(len, "len")?;
        let path = traverse_ray(&o, &e, &spec);
        *len = path.len();
        if path.len() > capacity {
            return Err(Failure::Small(format!(
                "{} cells do not fit in a buffer of {capacity}",
                path.len()
            )));
        }
        if path.is_empty() {
            return Ok(());
        }
        if cells.is_null() {
            return Err(Failure::Null("cells"));
        }
        let out = std::slice::from_raw_parts_mut(cells, 3 * path.len());
        for (chunk, v) in out.chunks_exact_mut(3).zip(&path) {
            for a in 0..3 {
                chunk[a] = v[a] as u32;
            }
        }
        Ok(())
    })
}
