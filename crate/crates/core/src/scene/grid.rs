use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// In-bounds voxel index `(x, y, z)`.
pub type VoxelIndex = [usize; 3];

/// Unbounded cell index on the infinite lattice a grid tiles.
pub type CellIndex = [i64; 3];

/// Axis-aligned voxel grid: min corner, cubic cell size, and cell counts.
/// The max corner is exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub resolution: f64,
    pub dims: [usize; 3],
}

impl Default for GridSpec {
    /// X/Y in [-40, 40) m, Z in [-1, 5.4) m at 0.4 m.
    fn default() -> Self {
        Self::from_bounds([-40.0, -40.0, -1.0], [40.0, 40.0, 5.4], 0.4)
            .expect("default bounds are valid")
    }
}

impl GridSpec {
    pub fn new(origin: [f64; 3], resolution: f64, dims: [usize; 3]) -> Result<Self> {
        let spec = Self {
            origin,
            resolution,
            dims,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Grid covering `[min, max)` exactly; the extent must be a whole number
    /// of cells on every axis.
    pub fn from_bounds(min: [f64; 3], max: [f64; 3], resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::Invalid(format!("resolution {resolution} must be positive")));
        }
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let cells = (max[a] - min[a]) / resolution;
            let rounded = cells.round();
            if rounded < 1.0 || (cells - rounded).abs() > 1e-6 {
                return Err(Error::Invalid(format!(
                    "axis {a}: extent {} is not a positive multiple of {resolution}",
                    max[a] - min[a]
                )));
            }
            dims[a] = rounded as usize;
        }
        Self::new(min, resolution, dims)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::Invalid(format!(
                "resolution {} must be positive",
                self.resolution
            )));
        }
        if self.dims.iter().any(|&d| d == 0 || d > u16::MAX as usize) {
            return Err(Error::Invalid(format!(
                "dims {:?} must be in 1..=65535",
                self.dims
            )));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid("origin is not finite".into()));
        }
        Ok(())
    }

    pub fn origin_vec(&self) -> Vector3<f64> {
        Vector3::from(self.origin)
    }

    pub fn max_corner(&self) -> Vector3<f64> {
        Vector3::from_fn(|a, _| self.origin[a] + self.dims[a] as f64 * self.resolution)
    }

    pub fn num_cells(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Lattice cell containing `p`, regardless of grid bounds.
    pub fn cell_of(&self, p: &Vector3<f64>) -> CellIndex {
        std::array::from_fn(|a| ((p[a] - self.origin[a]) / self.resolution).floor() as i64)
    }

    pub fn in_bounds(&self, c: CellIndex) -> Option<VoxelIndex> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            if c[a] < 0 || c[a] >= self.dims[a] as i64 {
                return None;
            }
            out[a] = c[a] as usize;
        }
        Some(out)
    }

    /// `floor((p - origin) / resolution)`, or `None` outside `[0, dims)`.
    pub fn world_to_voxel(&self, p: &Vector3<f64>) -> Option<VoxelIndex> {
        self.in_bounds(self.cell_of(p))
    }

    pub fn voxel_center(&self, v: VoxelIndex) -> Vector3<f64> {
        Vector3::from_fn(|a, _| self.origin[a] + (v[a] as f64 + 0.5) * self.resolution)
    }

    pub fn cell_center(&self, c: CellIndex) -> Vector3<f64> {
        Vector3::from_fn(|a, _| self.origin[a] + (c[a] as f64 + 0.5) * self.resolution)
    }

    /// Linear offset in x-major order (x slowest, z fastest).
    pub fn linear(&self, v: VoxelIndex) -> usize {
        (v[0] * self.dims[1] + v[1]) * self.dims[2] + v[2]
    }

    pub fn unlinear(&self, i: usize) -> VoxelIndex {
        let z = i % self.dims[2];
        let y = (i / self.dims[2]) % self.dims[1];
        let x = i / (self.dims[1] * self.dims[2]);
        [x, y, z]
    }

    /// The smallest grid on the same lattice that contains every point.
    /// Returns `None` for an empty point set.
    pub fn tiled_to_cover<'a>(&self, points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Option<GridSpec> {
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        let mut any = false;
        for p in points {
            let c = self.cell_of(p);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            any = true;
        }
        if !any {
            return None;
        }
        Some(GridSpec {
            origin: std::array::from_fn(|a| self.origin[a] + lo[a] as f64 * self.resolution),
            resolution: self.resolution,
            dims: std::array::from_fn(|a| (hi[a] - lo[a] + 1) as usize),
        })
    }

    /// Offset of this grid's lattice relative to `base`, when both share a
    /// lattice (used to map tiled-grid indices back to base cells).
    pub fn lattice_offset(&self, base: &GridSpec) -> CellIndex {
        std::array::from_fn(|a| ((self.origin[a] - base.origin[a]) / self.resolution).round() as i64)
    }
}
