//! Depth pixels to labeled world points, split into static and dynamic sets.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::SemanticMask;
use crate::scene::{CameraModel, ClassId, ClassTable};

/// Per-pixel z-depth in meters. Non-finite or non-positive values are invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "depth map {width}x{height} needs {} values, got {}",
                width as usize * height as usize,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn invalid(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![f32::NAN; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn at(&self, u: u32, v: u32) -> f32 {
        self.data[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, d: f32) {
        self.data[v as usize * self.width as usize + u as usize] = d;
    }

    pub fn is_valid(d: f32) -> bool {
        d.is_finite() && d > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&d| Self::is_valid(d)).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    /// World frame, meters.
    pub position: Vector3<f64>,
    pub class: ClassId,
    pub frame: u32,
    pub camera: u16,
    pub pixel: [u32; 2],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPointCloud {
    pub points: Vec<LabeledPoint>,
}

impl LabeledPointCloud {
    pub fn new(points: Vec<LabeledPoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledPoint> {
        self.points.iter()
    }
}

impl FromIterator<LabeledPoint> for LabeledPointCloud {
    fn from_iter<I: IntoIterator<Item = LabeledPoint>>(iter: I) -> Self {
        Self {
            points: iter.into_iter().collect(),
        }
    }
}

/// `T · (K⁻¹ · (u, v, 1)ᵀ · depth)`, with pixel centers at integer `(u, v)`.
pub fn unproject_pixel(u: f64, v: f64, depth: f64, cam: &CameraModel) -> Result<Vector3<f64>> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(Error::InvalidDepth(depth));
    }
    let p_cam = cam.pixel_ray_camera(u, v) * depth;
    Ok(cam.cam_to_world().transform_point(&p_cam))
}

/// One camera's inputs for [`split_frame`].
#[derive(Debug, Clone, Copy)]
pub struct CameraView<'a> {
    pub camera: &'a CameraModel,
    pub depth: &'a DepthMap,
    pub mask: &'a SemanticMask,
}

/// Unprojects every labeled, valid-depth pixel (every `stride`-th row and
/// column) and routes it by its class's dynamic flag. Output is ordered by
/// (camera, v, u).
pub fn split_frame(
    frame_index: u32,
    views: &[CameraView<'_>],
    classes: &ClassTable,
    stride: u32,
) -> Result<(LabeledPointCloud, LabeledPointCloud)> {
    let stride = stride.max(1);
    for (ci, view) in views.iter().enumerate() {
        let (w, h) = (view.camera.width(), view.camera.height());
        if view.depth.width() != w
            || view.depth.height() != h
            || view.mask.width() != w
            || view.mask.height() != h
        {
            return Err(Error::DimensionMismatch(format!(
                "frame {frame_index} camera {ci}: camera {w}x{h}, depth {}x{}, mask {}x{}",
                view.depth.width(),
                view.depth.height(),
                view.mask.width(),
                view.mask.height()
            )));
        }
    }
    let per_camera: Vec<(Vec<LabeledPoint>, Vec<LabeledPoint>)> = views
        .par_iter()
        .enumerate()
        .map(|(ci, view)| {
            let mut stat = Vec::new();
            let mut dyna = Vec::new();
            for v in (0..view.camera.height()).step_by(stride as usize) {
                for u in (0..view.camera.width()).step_by(stride as usize) {
                    let class = view.mask.class_at(u, v);
                    let d = view.depth.at(u, v);
                    if class == classes.unlabeled() || !DepthMap::is_valid(d) {
                        continue;
                    }
                    let position = unproject_pixel(u as f64, v as f64, d as f64, view.camera)
                        .expect("depth checked valid");
                    let p = LabeledPoint {
                        position,
                        class,
                        frame: frame_index,
                        camera: ci as u16,
                        pixel: [u, v],
                    };
                    if classes.is_dynamic(class) {
                        dyna.push(p);
                    } else {
                        stat.push(p);
                    }
                }
            }
            (stat, dyna)
        })
        .collect();
    let mut stat = LabeledPointCloud::default();
    let mut dyna = LabeledPointCloud::default();
    for (s, d) in per_camera {
        stat.points.extend(s);
        dyna.points.extend(d);
    }
    Ok((stat, dyna))
}
