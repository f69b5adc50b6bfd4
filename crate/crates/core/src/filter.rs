//! Static accumulation and the two confidence filters.
//!
//! The ray-consistency filter counts, per cell, how many point rays pass
//! through it (every traversed cell except the terminal one) and how many
//! terminate in it. Points in cells with `pass > hit` are dropped. The
//! density filter then drops points in cells holding fewer than
//! `min_points` points.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{GridSpec, RigidTransform, VoxelIndex};
use crate::traversal::RayWalk;
use crate::unproject::LabeledPointCloud;

pub const DEFAULT_MIN_POINTS: usize = 4;

const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySample {
    pub origin: Vector3<f64>,
    pub endpoint: Vector3<f64>,
    pub point_index: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CellCounts {
    pub pass: u32,
    pub hit: u32,
    pub points: u32,
}

impl CellCounts {
    /// A cell is kept unless rays traverse it more often than they end in it.
    pub fn is_consistent(&self) -> bool {
        self.pass <= self.hit
    }

    fn merge(&mut self, o: &CellCounts) {
        self.pass += o.pass;
        self.hit += o.hit;
        self.points += o.points;
    }
}

/// Sparse per-cell pass/hit/point counts over a grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellStats {
    pub cells: HashMap<VoxelIndex, CellCounts>,
}

impl CellStats {
    pub fn get(&self, v: VoxelIndex) -> CellCounts {
        self.cells.get(&v).copied().unwrap_or_default()
    }

    fn merge(mut self, other: CellStats) -> CellStats {
        let (mut big, small) = if self.cells.len() >= other.cells.len() {
            (std::mem::take(&mut self.cells), other.cells)
        } else {
            (other.cells, std::mem::take(&mut self.cells))
        };
        for (k, v) in small {
            big.entry(k).or_default().merge(&v);
        }
        CellStats { cells: big }
    }

    pub fn sorted(&self) -> BTreeMap<VoxelIndex, CellCounts> {
        self.cells.iter().map(|(k, v)| (*k, *v)).collect()
    }

    /// Debug dump: `OCCSTATS`, u32 record count, then per cell
    /// `i32 x, i32 y, i32 z, u32 pass, u32 hit, u32 points` (little-endian),
    /// sorted by index.
    pub fn write_dump(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(b"OCCSTATS")?;
        w.write_all(&(self.cells.len() as u32).to_le_bytes())?;
        for (k, c) in self.sorted() {
            for i in k {
                w.write_all(&(i as i32).to_le_bytes())?;
            }
            for n in [c.pass, c.hit, c.points] {
                w.write_all(&n.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn dump_to(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_dump(&mut buf).expect("vec write");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Concatenates per-frame static clouds in frame order.
pub fn accumulate_static(per_frame: impl IntoIterator<Item = LabeledPointCloud>) -> LabeledPointCloud {
    let mut out = LabeledPointCloud::default();
    for c in per_frame {
        out.points.extend(c.points);
    }
    out
}

/// Pass/hit/point counts from point rays. Hits go to the terminal cell when
/// the endpoint is inside the grid; each such endpoint is also one point.
pub fn ray_cell_stats(rays: &[RaySample], grid: &GridSpec) -> CellStats {
    rays.par_chunks(CHUNK)
        .map(|chunk| {
            let mut local = CellStats::default();
            for r in chunk {
                let terminal = grid.world_to_voxel(&r.endpoint);
                let mut walk = RayWalk::segment(&r.origin, &r.endpoint, grid).peekable();
                while let Some(x) = walk.next() {
                    let last = walk.peek().is_none();
                    let c = local.cells.entry(x.voxel).or_default();
                    if last && terminal == Some(x.voxel) {
                        c.hit += 1;
                        c.points += 1;
                    } else {
                        c.pass += 1;
                    }
                }
            }
            local
        })
        .reduce(CellStats::default, CellStats::merge)
}

fn point_cells(cloud: &LabeledPointCloud, grid: &GridSpec) -> Vec<Option<VoxelIndex>> {
    cloud
        .points
        .par_iter()
        .map(|p| grid.world_to_voxel(&p.position))
        .collect()
}

fn check_rays(cloud: &LabeledPointCloud, rays: &[RaySample]) -> Result<()> {
    if cloud.len() != rays.len() {
        return Err(Error::Invalid(format!(
            "ray/point mismatch: {} points, {} rays",
            cloud.len(),
            rays.len()
        )));
    }
    for (i, (p, r)) in cloud.points.iter().zip(rays).enumerate() {
        if r.point_index != i || r.endpoint != p.position {
            return Err(Error::Invalid(format!(
                "ray/point mismatch at index {i}: ray belongs to point {} or ends elsewhere",
                r.point_index
            )));
        }
    }
    Ok(())
}

/// Keep-flags for the ray-consistency rule.
pub fn consistency_keep(cloud: &LabeledPointCloud, rays: &[RaySample], grid: &GridSpec) -> Result<Vec<bool>> {
    check_rays(cloud, rays)?;
    let stats = ray_cell_stats(rays, grid);
    Ok(point_cells(cloud, grid)
        .into_iter()
        .map(|c| c.is_none_or(|v| stats.get(v).is_consistent()))
        .collect())
}

/// Keep-flags for the density rule.
pub fn density_keep(cloud: &LabeledPointCloud, grid: &GridSpec, min_points: usize) -> Vec<bool> {
    let cells = point_cells(cloud, grid);
    let mut counts: HashMap<VoxelIndex, usize> = HashMap::new();
    for v in cells.iter().flatten() {
        *counts.entry(*v).or_default() += 1;
    }
    cells
        .into_iter()
        .map(|c| c.is_none_or(|v| counts[&v] >= min_points))
        .collect()
}

fn select(cloud: &LabeledPointCloud, keep: &[bool]) -> LabeledPointCloud {
    cloud
        .points
        .iter()
        .zip(keep)
        .filter(|(_, k)| **k)
        .map(|(p, _)| *p)
        .collect()
}

pub fn ray_consistency_filter(
    cloud: &LabeledPointCloud,
    rays: &[RaySample],
    grid: &GridSpec,
) -> Result<LabeledPointCloud> {
    let keep = consistency_keep(cloud, rays, grid)?;
    Ok(select(cloud, &keep))
}

pub fn density_filter(cloud: &LabeledPointCloud, grid: &GridSpec, min_points: usize) -> LabeledPointCloud {
    select(cloud, &density_keep(cloud, grid, min_points.max(1)))
}

/// Which confidence filters to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterSettings {
    pub ray_consistency: bool,
    /// `None` disables density pruning.
    pub min_points: Option<usize>,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            ray_consistency: true,
            min_points: Some(DEFAULT_MIN_POINTS),
        }
    }
}

/// Result of [`confidence_filter`]: surviving points plus the counting grid
/// and stats, for debug export.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub cloud: LabeledPointCloud,
    pub counting_grid: Option<GridSpec>,
    pub stats: Option<CellStats>,
}

/// Runs ray consistency then density pruning on a world-frame cloud.
///
/// Counting happens on the lattice of `label_grid` placed in the frame
/// `anchor` (world-from-anchor), tiled out to cover every point and ray
/// origin. `origin_of` gives the world-frame camera center for a point.
pub fn confidence_filter(
    cloud: &LabeledPointCloud,
    origin_of: impl Fn(usize) -> Vector3<f64> + Sync,
    label_grid: &GridSpec,
    anchor: &RigidTransform,
    settings: FilterSettings,
) -> FilterOutcome {
    if cloud.is_empty() || (!settings.ray_consistency && settings.min_points.is_none()) {
        return FilterOutcome {
            cloud: cloud.clone(),
            counting_grid: None,
            stats: None,
        };
    }
    let to_anchor = anchor.inverse();
    let local: LabeledPointCloud = cloud
        .points
        .par_iter()
        .map(|p| {
            let mut q = *p;
            q.position = to_anchor.transform_point(&p.position);
            q
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    let rays: Vec<RaySample> = (0..local.len())
        .into_par_iter()
        .map(|i| RaySample {
            origin: to_anchor.transform_point(&origin_of(i)),
            endpoint: local.points[i].position,
            point_index: i,
        })
        .collect();
    let grid = label_grid
        .tiled_to_cover(
            local
                .points
                .iter()
                .map(|p| &p.position)
                .chain(rays.iter().map(|r| &r.origin)),
        )
        .expect("non-empty cloud");

    let mut keep = vec![true; local.len()];
    let mut stats = None;
    if settings.ray_consistency {
        let s = ray_cell_stats(&rays, &grid);
        for (k, c) in keep.iter_mut().zip(point_cells(&local, &grid)) {
            *k = c.is_none_or(|v| s.get(v).is_consistent());
        }
        stats = Some(s);
    }
    let mut survivors: Vec<usize> = (0..local.len()).filter(|&i| keep[i]).collect();
    if let Some(min_points) = settings.min_points {
        let sub: LabeledPointCloud = survivors.iter().map(|&i| local.points[i]).collect();
        let dk = density_keep(&sub, &grid, min_points.max(1));
        survivors = survivors
            .into_iter()
            .zip(dk)
            .filter(|(_, k)| *k)
            .map(|(i, _)| i)
            .collect();
    }
    FilterOutcome {
        cloud: survivors.iter().map(|&i| cloud.points[i]).collect(),
        counting_grid: Some(grid),
        stats,
    }
}
