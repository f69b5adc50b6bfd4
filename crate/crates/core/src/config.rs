//! Command-line config file (TOML).
//!
//! ```toml
//! classes = "classes.json"      # optional class table, default vocabulary otherwise
//!
//! [pipeline]
//! mode = "full"                 # per_frame | aggregate_no_dynamics | full
//! logit_threshold = 0.2
//! ray_consistency = true
//! min_points = 4                # 0 disables density pruning
//! pixel_stride = 1
//! visibility_stride = 1
//! workers = 0                   # 0 = all cores
//! seed = 0
//! grid = { origin = [-40.0, -40.0, -1.0], resolution = 0.4, dims = [200, 200, 16] }
//!
//! [eval]
//! ray_stride = 8
//! thresholds = [1.0, 2.0, 4.0]
//!
//! [synth]
//! frames = 3
//! outlier_fraction = 0.0
//! outlier_magnitude = 3.0
//! semantics = "mask"            # mask | detections
//! actors = [{ class = 3, size = [1.6, 0.8, 1.2], start = [3.0, 0.0, 0.0], velocity = [0.8, 0.0, 0.0] }]
//! ```
//!
//! Every key is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::DEFAULT_RAY_THRESHOLDS;
use crate::pipeline::PipelineConfig;
use crate::scene::ClassTable;
use crate::synth::{ActorSpec, SemanticsFormat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Every n-th pixel row and column of each camera casts a RayIoU ray.
    pub ray_stride: u32,
    pub thresholds: Vec<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            ray_stride: 8,
            thresholds: DEFAULT_RAY_THRESHOLDS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub frames: usize,
    pub outlier_fraction: f64,
    pub outlier_magnitude: f64,
    pub semantics: SemanticsFormat,
    pub actors: Vec<ActorSpec>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            frames: 3,
            outlier_fraction: 0.0,
            outlier_magnitude: 3.0,
            semantics: SemanticsFormat::Mask,
            actors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub eval: EvalSettings,
    pub synth: SynthSettings,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Reads a config file. A relative `classes` path resolves against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, path)?;
        if let (Some(c), Some(dir)) = (&cfg.classes, path.parent()) {
            if c.is_relative() {
                cfg.classes = Some(dir.join(c));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// The configured class table, or the default vocabulary.
    pub fn class_table(&self) -> Result<ClassTable> {
        self.classes.as_deref().map_or_else(|| Ok(ClassTable::default()), load_classes)
    }
}

/// Reads a JSON class table (`{"entries": [...]}`).
pub fn load_classes(path: &Path) -> Result<ClassTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
