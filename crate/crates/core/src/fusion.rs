//! Dense semantic masks from per-class detection masks.
//!
//! Each detection carries the confidence logit of the box it came from.
//! Detections of the background query and detections below the logit
//! threshold are dropped, then every pixel takes the class of the covering
//! detection with the highest logit (equal logits go to the lower class id).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{ClassId, ClassTable};

pub const DEFAULT_LOGIT_THRESHOLD: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetectionClass {
    Class(ClassId),
    /// The generic background query (e.g. "sky") paired with every prompt.
    Background,
}

impl Serialize for DetectionClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DetectionClass::Class(id) => s.serialize_u8(*id),
            DetectionClass::Background => s.serialize_str("background"),
        }
    }
}

impl<'de> Deserialize<'de> for DetectionClass {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Id(u8),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Id(id) => Ok(DetectionClass::Class(id)),
            Repr::Name(n) if n == "background" => Ok(DetectionClass::Background),
            Repr::Name(n) => Err(serde::de::Error::custom(format!(
                "unknown detection class {n:?} (expected an id or \"background\")"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "binary mask {width}x{height} needs {} pixels, got {}",
                width as usize * height as usize,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let bits = (0..height)
            .flat_map(|v| (0..width).map(move |u| (u, v)))
            .map(|(u, v)| f(u, v))
            .collect();
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Alternating run lengths over the row-major pixels, starting with a
    /// run of unset pixels (possibly zero-length).
    pub fn to_rle(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_rle(width: u32, height: u32, runs: &[u32]) -> Result<Self> {
        let n = width as usize * height as usize;
        let mut bits = Vec::with_capacity(n);
        let mut value = false;
        for &r in runs {
            bits.extend(std::iter::repeat_n(value, r as usize));
            value = !value;
        }
        if bits.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "run lengths cover {} pixels, mask is {width}x{height} ({n})",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMask {
    pub class: DetectionClass,
    /// Detector confidence in (0, 1].
    pub logit: f32,
    pub mask: BinaryMask,
}

/// Per-pixel class image plus the winning logit (0 where unlabeled).
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMask {
    width: u32,
    height: u32,
    classes: Vec<ClassId>,
    logits: Vec<f32>,
}

impl SemanticMask {
    pub fn from_parts(width: u32, height: u32, classes: Vec<ClassId>, logits: Vec<f32>) -> Result<Self> {
        let n = width as usize * height as usize;
        if classes.len() != n || logits.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "semantic mask {width}x{height} needs {n} pixels, got {} classes and {} logits",
                classes.len(),
                logits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            classes,
            logits,
        })
    }

    /// Every pixel labeled `class` with logit 1 (or unlabeled with logit 0).
    pub fn filled(width: u32, height: u32, class: ClassId, logit: f32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            classes: vec![class; n],
            logits: vec![logit; n],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn logits(&self) -> &[f32] {
        &self.logits
    }

    pub fn class_at(&self, u: u32, v: u32) -> ClassId {
        self.classes[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, class: ClassId, logit: f32) {
        let i = v as usize * self.width as usize + u as usize;
        self.classes[i] = class;
        self.logits[i] = logit;
    }
}

/// Keeps detections that are not background and whose logit is at least
/// `threshold`, in input order.
pub fn filter_detections(dets: Vec<DetectionMask>, threshold: f32) -> Vec<DetectionMask> {
    dets.into_iter()
        .filter(|d| d.class != DetectionClass::Background && d.logit >= threshold)
        .collect()
}

/// Highest-logit overlay of already filtered detections.
pub fn fuse_masks(
    dets: &[DetectionMask],
    width: u32,
    height: u32,
    classes: &ClassTable,
) -> Result<SemanticMask> {
    let unlabeled = classes.unlabeled();
    let mut out = SemanticMask::filled(width, height, unlabeled, 0.0);
    for (i, det) in dets.iter().enumerate() {
        if det.mask.width != width || det.mask.height != height {
            return Err(Error::DimensionMismatch(format!(
                "detection {i} mask is {}x{}, image is {width}x{height}",
                det.mask.width, det.mask.height
            )));
        }
        let class = match det.class {
            DetectionClass::Class(c) if classes.is_semantic(c) => c,
            DetectionClass::Class(c) => {
                return Err(Error::Invalid(format!(
                    "detection {i} has non-semantic class id {c}"
                )))
            }
            DetectionClass::Background => {
                return Err(Error::Invalid(format!(
                    "detection {i} is background; filter detections before fusing"
                )))
            }
        };
        for (p, _) in det.mask.bits.iter().enumerate().filter(|(_, &b)| b) {
            let current = out.classes[p];
            let better = current == unlabeled
                || det.logit > out.logits[p]
                || (det.logit == out.logits[p] && class < current);
            if better {
                out.classes[p] = class;
                out.logits[p] = det.logit;
            }
        }
    }
    Ok(out)
}

/// On-disk detection set for one image (JSON):
///
/// ```json
/// {"width": 4, "height": 2,
///  "detections": [{"class": 3, "logit": 0.9, "rle": [2, 3, 3]},
///                 {"class": "background", "logit": 0.95, "rle": [0, 8]}]}
/// ```
///
/// `rle` holds alternating run lengths over row-major pixels, starting with
/// unset pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSetFile {
    pub width: u32,
    pub height: u32,
    pub detections: Vec<DetectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub class: DetectionClass,
    pub logit: f32,
    pub rle: Vec<u32>,
}

impl DetectionSetFile {
    pub fn from_detections(width: u32, height: u32, dets: &[DetectionMask]) -> Self {
        Self {
            width,
            height,
            detections: dets
                .iter()
                .map(|d| DetectionRecord {
                    class: d.class,
                    logit: d.logit,
                    rle: d.mask.to_rle(),
                })
                .collect(),
        }
    }

    pub fn into_detections(self) -> Result<Vec<DetectionMask>> {
        self.detections
            .into_iter()
            .map(|r| {
                Ok(DetectionMask {
                    class: r.class,
                    logit: r.logit,
                    mask: BinaryMask::from_rle(self.width, self.height, &r.rle)?,
                })
            })
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("detection set serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Reads a detection set, filters it and fuses it into a semantic mask.
pub fn fuse_detection_file(path: &Path, threshold: f32, classes: &ClassTable) -> Result<SemanticMask> {
    let set = DetectionSetFile::read(path)?;
    let (w, h) = (set.width, set.height);
    let dets = filter_detections(set.into_detections()?, threshold);
    fuse_masks(&dets, w, h, classes)
}
