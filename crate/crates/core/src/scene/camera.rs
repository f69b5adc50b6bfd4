use nalgebra::{Matrix3, Vector3};

use super::transform::RigidTransform;
use crate::error::{Error, Result};

/// Pinhole camera: x-right, y-down, z-forward, depth measured along z.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    intrinsics: Matrix3<f64>,
    intrinsics_inv: Matrix3<f64>,
    cam_to_world: RigidTransform,
    width: u32,
    height: u32,
}

impl CameraModel {
    pub fn new(
        intrinsics: Matrix3<f64>,
        cam_to_world: RigidTransform,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!(
                "camera dimensions must be positive, got {width}x{height}"
            )));
        }
        if intrinsics[(0, 0)] == 0.0 || intrinsics[(1, 1)] == 0.0 {
            return Err(Error::Invalid("intrinsics have a zero focal term".into()));
        }
        let intrinsics_inv = intrinsics
            .try_inverse()
            .ok_or_else(|| Error::Invalid("intrinsics are not invertible".into()))?;
        Ok(Self {
            intrinsics,
            intrinsics_inv,
            cam_to_world,
            width,
            height,
        })
    }

    /// Camera with focal length `f` (pixels) and principal point `(cx, cy)`.
    pub fn pinhole(
        f: f64,
        cx: f64,
        cy: f64,
        cam_to_world: RigidTransform,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let k = Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0);
        Self::new(k, cam_to_world, width, height)
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn cam_to_world(&self) -> &RigidTransform {
        &self.cam_to_world
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Camera center in the world frame.
    pub fn center(&self) -> Vector3<f64> {
        *self.cam_to_world.translation()
    }

    /// The same camera re-expressed under `frame_from_world`.
    pub fn reframed(&self, frame_from_world: &RigidTransform) -> Self {
        Self {
            cam_to_world: frame_from_world.compose(&self.cam_to_world),
            ..self.clone()
        }
    }

    /// `K⁻¹·(u, v, 1)ᵀ` in the camera frame; its z component is 1.
    pub fn pixel_ray_camera(&self, u: f64, v: f64) -> Vector3<f64> {
        self.intrinsics_inv * Vector3::new(u, v, 1.0)
    }

    /// World-frame ray direction through pixel `(u, v)`, scaled so that moving
    /// by `d` along it advances the z-depth by `d`.
    pub fn pixel_ray_world(&self, u: f64, v: f64) -> Vector3<f64> {
        self.cam_to_world
            .transform_vector(&self.pixel_ray_camera(u, v))
    }

    /// Projects a world point to `(u, v, depth)`. Points behind the camera
    /// yield a non-positive depth.
    pub fn project(&self, p_world: &Vector3<f64>) -> (f64, f64, f64) {
        let pc = self.cam_to_world.inverse().transform_point(p_world);
        let q = self.intrinsics * pc;
        (q.x / q.z, q.y / q.z, pc.z)
    }
}

/// Camera-to-world pose for a camera at `eye` looking along `forward`,
/// with image "down" as close as possible to `-up`.
pub fn look_along(eye: Vector3<f64>, forward: Vector3<f64>, up: Vector3<f64>) -> Result<RigidTransform> {
    let z = forward.normalize();
    let x = z.cross(&up);
    if x.norm() < 1e-9 {
        return Err(Error::Invalid("forward is parallel to up".into()));
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_columns(&[x, y, z]);
    RigidTransform::from_parts(r, eye)
}
