//! Semantic voxelization and camera visibility masks.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{CameraModel, ClassId, ClassTable, GridSpec, RigidTransform, VoxelIndex};
use crate::traversal::RayWalk;
use crate::unproject::LabeledPointCloud;

/// Dense class labels over a grid, x-major (see [`GridSpec::linear`]).
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    pub labels: Vec<ClassId>,
}

impl VoxelGrid {
    pub fn filled(spec: GridSpec, label: ClassId) -> Self {
        Self {
            labels: vec![label; spec.num_cells()],
            spec,
        }
    }

    pub fn from_labels(spec: GridSpec, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != spec.num_cells() {
            return Err(Error::DimensionMismatch(format!(
                "grid {:?} needs {} labels, got {}",
                spec.dims,
                spec.num_cells(),
                labels.len()
            )));
        }
        Ok(Self { spec, labels })
    }

    pub fn get(&self, v: VoxelIndex) -> ClassId {
        self.labels[self.spec.linear(v)]
    }

    pub fn set(&mut self, v: VoxelIndex, label: ClassId) {
        let i = self.spec.linear(v);
        self.labels[i] = label;
    }

    pub fn occupied_count(&self, empty: ClassId) -> usize {
        self.labels.iter().filter(|&&l| l != empty).count()
    }

    pub fn count_of(&self, class: ClassId) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[repr(u8)]
pub enum Visibility {
    #[default]
    Unobserved = 0,
    FreeVisible = 1,
    OccupiedVisible = 2,
}

impl Visibility {
    pub fn from_u8(b: u8) -> Option<Self> {
        match b {
            0 => Some(Visibility::Unobserved),
            1 => Some(Visibility::FreeVisible),
            2 => Some(Visibility::OccupiedVisible),
            _ => None,
        }
    }

    pub fn observed(self) -> bool {
        self != Visibility::Unobserved
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityGrid {
    pub spec: GridSpec,
    pub state: Vec<Visibility>,
}

impl VisibilityGrid {
    pub fn unobserved(spec: GridSpec) -> Self {
        Self {
            state: vec![Visibility::Unobserved; spec.num_cells()],
            spec,
        }
    }

    /// Every cell marked observed.
    pub fn all_visible(grid: &VoxelGrid, empty: ClassId) -> Self {
        Self {
            spec: grid.spec,
            state: grid
                .labels
                .iter()
                .map(|&l| {
                    if l == empty {
                        Visibility::FreeVisible
                    } else {
                        Visibility::OccupiedVisible
                    }
                })
                .collect(),
        }
    }

    pub fn get(&self, v: VoxelIndex) -> Visibility {
        self.state[self.spec.linear(v)]
    }

    pub fn count(&self, s: Visibility) -> usize {
        self.state.iter().filter(|&&x| x == s).count()
    }
}

/// Static points first, then the frame's dynamic points.
pub fn compose_frame_cloud(static_filtered: &LabeledPointCloud, dynamic_t: &LabeledPointCloud) -> LabeledPointCloud {
    let mut out = LabeledPointCloud {
        points: Vec::with_capacity(static_filtered.len() + dynamic_t.len()),
    };
    out.points.extend_from_slice(&static_filtered.points);
    out.points.extend_from_slice(&dynamic_t.points);
    out
}

/// Winner among the classes voting in one cell: the lowest priority tier
/// present wins, then the most points, then the lower class id.
pub fn vote(counts: impl IntoIterator<Item = (ClassId, u32)>, classes: &ClassTable) -> Option<ClassId> {
    counts
        .into_iter()
        .filter(|&(_, n)| n > 0)
        .min_by(|&(a, na), &(b, nb)| {
            classes
                .tier(a)
                .cmp(&classes.tier(b))
                .then(nb.cmp(&na))
                .then(a.cmp(&b))
        })
        .map(|(c, _)| c)
}

/// Majority-vote voxelization of a cloud already expressed in the grid's
/// frame. Cells without points are `empty`.
pub fn voxelize(cloud: &LabeledPointCloud, spec: &GridSpec, classes: &ClassTable) -> VoxelGrid {
    let mut keyed: Vec<(usize, ClassId)> = cloud
        .points
        .par_iter()
        .filter(|p| classes.is_semantic(p.class))
        .filter_map(|p| spec.world_to_voxel(&p.position).map(|v| (spec.linear(v), p.class)))
        .collect();
    keyed.par_sort_unstable();

    let mut grid = VoxelGrid::filled(*spec, classes.empty());
    let mut i = 0;
    while i < keyed.len() {
        let cell = keyed[i].0;
        let mut runs: Vec<(ClassId, u32)> = Vec::new();
        while i < keyed.len() && keyed[i].0 == cell {
            let class = keyed[i].1;
            match runs.last_mut() {
                Some((c, n)) if *c == class => *n += 1,
                _ => runs.push((class, 1)),
            }
            i += 1;
        }
        grid.labels[cell] = vote(runs, classes).expect("non-empty cell");
    }
    grid
}

/// Visibility from camera pixel rays cast through a labeled grid.
///
/// `cameras` are world-frame; `ego_to_world` places the grid. Each ray marks
/// empty cells up to the first occupied cell as free, that cell as occupied,
/// and nothing behind it. Rays run to the grid boundary.
pub fn visibility_mask(
    grid: &VoxelGrid,
    cameras: &[CameraModel],
    ego_to_world: &RigidTransform,
    stride: u32,
    empty: ClassId,
) -> VisibilityGrid {
    let stride = stride.max(1) as usize;
    let spec = grid.spec;
    let world_to_ego = ego_to_world.inverse();
    let jobs: Vec<(CameraModel, u32)> = cameras
        .iter()
        .flat_map(|c| {
            let local = c.reframed(&world_to_ego);
            (0..c.height())
                .step_by(stride)
                .map(move |v| (local.clone(), v))
        })
        .collect();

    let touched = jobs
        .par_iter()
        .fold(
            || vec![false; spec.num_cells()],
            |mut seen, (cam, v)| {
                let center = cam.center();
                for u in (0..cam.width()).step_by(stride) {
                    let dir = cam.pixel_ray_world(u as f64, *v as f64);
                    for x in RayWalk::ray(&center, &dir, &spec) {
                        let i = spec.linear(x.voxel);
                        seen[i] = true;
                        if grid.labels[i] != empty {
                            break;
                        }
                    }
                }
                seen
            },
        )
        .reduce(
            || vec![false; spec.num_cells()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x |= y);
                a
            },
        );

    VisibilityGrid {
        spec,
        state: touched
            .iter()
            .zip(&grid.labels)
            .map(|(&t, &l)| match (t, l == empty) {
                (false, _) => Visibility::Unobserved,
                (true, true) => Visibility::FreeVisible,
                (true, false) => Visibility::OccupiedVisible,
            })
            .collect(),
    }
}
