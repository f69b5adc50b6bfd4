//! Exact voxel traversal of segments and rays (Amanatides & Woo).
//!
//! A walk visits, in order, every in-bounds cell the path intersects. Cell
//! membership follows floor semantics: a point on a cell's max face belongs
//! to the next cell. When the path crosses several boundaries at the same
//! parameter, axes step in x, y, z order.

use nalgebra::Vector3;

use crate::scene::{GridSpec, VoxelIndex};

/// One visited cell and the parameter interval spent inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub voxel: VoxelIndex,
    pub t_enter: f64,
    pub t_exit: f64,
}

/// Iterator over the cells hit by `origin + t·dir` for `t ∈ [0, t_end]`.
#[derive(Debug, Clone)]
pub struct RayWalk {
    cell: [i64; 3],
    step: [i64; 3],
    t_max: [f64; 3],
    t_delta: [f64; 3],
    t: f64,
    t_end: f64,
    dims: [i64; 3],
    done: bool,
    budget: usize,
}

impl RayWalk {
    pub fn new(origin: &Vector3<f64>, dir: &Vector3<f64>, t_end: f64, grid: &GridSpec) -> Self {
        let dims = grid.dims.map(|d| d as i64);
        let mut walk = RayWalk {
            cell: [0; 3],
            step: [0; 3],
            t_max: [f64::INFINITY; 3],
            t_delta: [f64::INFINITY; 3],
            t: 0.0,
            t_end,
            dims,
            done: true,
            budget: 0,
        };
        if !(t_end >= 0.0) || !origin.iter().chain(dir.iter()).all(|v| v.is_finite()) {
            return walk;
        }

        // Clip [0, t_end] against the grid box.
        let lo = grid.origin_vec();
        let hi = grid.max_corner();
        let mut t0 = 0.0f64;
        let mut t1 = t_end;
        for a in 0..3 {
            if dir[a] == 0.0 {
                if origin[a] < lo[a] || origin[a] >= hi[a] {
                    return walk;
                }
            } else {
                let (mut ta, mut tb) = ((lo[a] - origin[a]) / dir[a], (hi[a] - origin[a]) / dir[a]);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
            }
        }
        if t0 > t1 {
            return walk;
        }

        let entry = origin + dir * t0;
        let res = grid.resolution;
        for a in 0..3 {
            let mut c = ((entry[a] - lo[a]) / res).floor() as i64;
            if t0 > 0.0 {
                // entry lies on the box surface; rounding may put it one
                // cell outside
                c = c.clamp(0, dims[a] - 1);
            }
            walk.cell[a] = c;
            if dir[a] > 0.0 {
                walk.step[a] = 1;
                let boundary = lo[a] + (c + 1) as f64 * res;
                walk.t_max[a] = (boundary - origin[a]) / dir[a];
                walk.t_delta[a] = res / dir[a];
            } else if dir[a] < 0.0 {
                walk.step[a] = -1;
                let boundary = lo[a] + c as f64 * res;
                walk.t_max[a] = (boundary - origin[a]) / dir[a];
                walk.t_delta[a] = -res / dir[a];
            }
        }
        if (0..3).any(|a| walk.cell[a] < 0 || walk.cell[a] >= dims[a]) {
            return walk;
        }
        walk.t = t0;
        walk.done = false;
        walk.budget = (dims[0] + dims[1] + dims[2] + 3) as usize;
        walk
    }

    /// Segment from `origin` to `endpoint`, parameterised by `t ∈ [0, 1]`.
    pub fn segment(origin: &Vector3<f64>, endpoint: &Vector3<f64>, grid: &GridSpec) -> Self {
        Self::new(origin, &(endpoint - origin), 1.0, grid)
    }

    /// Half-line from `origin` along `dir` until it leaves the grid.
    pub fn ray(origin: &Vector3<f64>, dir: &Vector3<f64>, grid: &GridSpec) -> Self {
        Self::new(origin, dir, f64::INFINITY, grid)
    }

    fn next_axis(&self) -> usize {
        let [x, y, z] = self.t_max;
        if x <= y && x <= z {
            0
        } else if y <= z {
            1
        } else {
            2
        }
    }
}

impl Iterator for RayWalk {
    type Item = Crossing;

    fn next(&mut self) -> Option<Crossing> {
        if self.done {
            return None;
        }
        let voxel = self.cell.map(|c| c as usize);
        let axis = self.next_axis();
        let t_next = self.t_max[axis];
        let t_enter = self.t;
        // Floor semantics at the far end: an endpoint exactly on a boundary
        // belongs to the cell on the positive side.
        let advance =
            t_next < self.t_end || (t_next == self.t_end && self.step[axis] > 0);
        self.budget = self.budget.saturating_sub(1);
        if !advance || !t_next.is_finite() || self.budget == 0 {
            self.done = true;
            return Some(Crossing {
                voxel,
                t_enter,
                t_exit: self.t_end.min(t_next).max(t_enter),
            });
        }
        self.cell[axis] += self.step[axis];
        self.t_max[axis] += self.t_delta[axis];
        self.t = t_next;
        if self.cell[axis] < 0 || self.cell[axis] >= self.dims[axis] {
            self.done = true;
        }
        Some(Crossing {
            voxel,
            t_enter,
            t_exit: t_next,
        })
    }
}

/// Cells intersected by the segment `origin → endpoint`, in order, clipped
/// to the grid. When the endpoint is in bounds its cell comes last.
pub fn traverse_ray(origin: &Vector3<f64>, endpoint: &Vector3<f64>, grid: &GridSpec) -> Vec<VoxelIndex> {
    RayWalk::segment(origin, endpoint, grid)
        .map(|c| c.voxel)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid(n: usize) -> GridSpec {
        GridSpec::new([0.0; 3], 1.0, [n, n, n]).unwrap()
    }

    #[test]
    fn axis_aligned_centers() {
        let g = unit_grid(8);
        let cells = traverse_ray(&g.voxel_center([0, 0, 0]), &g.voxel_center([3, 0, 0]), &g);
        assert_eq!(cells, vec![[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]]);
    }

    #[test]
    fn same_cell() {
        let g = unit_grid(4);
        let cells = traverse_ray(&Vector3::new(1.2, 1.3, 1.4), &Vector3::new(1.8, 1.1, 1.9), &g);
        assert_eq!(cells, vec![[1, 1, 1]]);
        let p = Vector3::new(2.5, 2.5, 2.5);
        assert_eq!(traverse_ray(&p, &p, &g), vec![[2, 2, 2]]);
    }

    #[test]
    fn outside_grid_is_empty() {
        let g = unit_grid(4);
        assert!(traverse_ray(&Vector3::new(-5.0, 0.5, 0.5), &Vector3::new(-1.0, 0.5, 0.5), &g).is_empty());
        assert!(traverse_ray(&Vector3::new(-1.0, 5.0, 0.5), &Vector3::new(5.0, 5.0, 0.5), &g).is_empty());
    }

    #[test]
    fn clips_both_ends() {
        let g = unit_grid(3);
        let cells = traverse_ray(&Vector3::new(-2.0, 0.5, 0.5), &Vector3::new(9.0, 0.5, 0.5), &g);
        assert_eq!(cells, vec![[0, 0, 0], [1, 0, 0], [2, 0, 0]]);
        let cells = traverse_ray(&Vector3::new(9.0, 2.5, 0.5), &Vector3::new(-2.0, 2.5, 0.5), &g);
        assert_eq!(cells, vec![[2, 2, 0], [1, 2, 0], [0, 2, 0]]);
    }

    #[test]
    fn endpoint_on_boundary_uses_floor() {
        let g = unit_grid(4);
        // ends exactly on x = 2: belongs to cell 2 moving either way
        let fwd = traverse_ray(&Vector3::new(0.5, 0.5, 0.5), &Vector3::new(2.0, 0.5, 0.5), &g);
        assert_eq!(fwd.last(), Some(&[2, 0, 0]));
        let back = traverse_ray(&Vector3::new(3.5, 0.5, 0.5), &Vector3::new(2.0, 0.5, 0.5), &g);
        assert_eq!(back, vec![[3, 0, 0], [2, 0, 0]]);
    }

    #[test]
    fn corner_tie_steps_x_first() {
        let g = unit_grid(4);
        let cells = traverse_ray(&Vector3::new(0.5, 0.5, 0.5), &Vector3::new(1.5, 1.5, 0.5), &g);
        assert_eq!(cells, vec![[0, 0, 0], [1, 0, 0], [1, 1, 0]]);
    }

    #[test]
    fn crossing_intervals_tile_the_segment() {
        let g = unit_grid(10);
        let o = Vector3::new(0.3, 0.7, 0.2);
        let e = Vector3::new(9.1, 4.4, 6.6);
        let xs: Vec<_> = RayWalk::segment(&o, &e, &g).collect();
        assert_eq!(xs.first().unwrap().t_enter, 0.0);
        assert_eq!(xs.last().unwrap().t_exit, 1.0);
        for w in xs.windows(2) {
            assert_eq!(w[0].t_exit, w[1].t_enter);
        }
    }

    #[test]
    fn infinite_ray_stops_at_exit() {
        let g = unit_grid(5);
        let xs: Vec<_> = RayWalk::ray(&Vector3::new(-3.0, 2.5, 2.5), &Vector3::new(1.0, 0.0, 0.0), &g).collect();
        assert_eq!(xs.len(), 5);
        assert_eq!(xs[0].t_enter, 3.0);
        assert_eq!(xs[4].t_exit, 8.0);
    }

    proptest! {
        #[test]
        fn reverse_symmetry(
            a in proptest::array::uniform3(0.0f64..6.0),
            b in proptest::array::uniform3(0.0f64..6.0),
        ) {
            let g = GridSpec::new([0.0; 3], 0.5, [12, 12, 12]).unwrap();
            let (a, b) = (Vector3::from(a), Vector3::from(b));
            let mut back = traverse_ray(&b, &a, &g);
            back.reverse();
            prop_assert_eq!(traverse_ray(&a, &b, &g), back);
        }

        #[test]
        fn consecutive_cells_are_face_neighbours(
            a in proptest::array::uniform3(-3.0f64..9.0),
            b in proptest::array::uniform3(-3.0f64..9.0),
        ) {
            let g = GridSpec::new([0.0; 3], 0.5, [12, 12, 12]).unwrap();
            let cells = traverse_ray(&Vector3::from(a), &Vector3::from(b), &g);
            for w in cells.windows(2) {
                let d: i64 = (0..3).map(|k| (w[0][k] as i64 - w[1][k] as i64).abs()).sum();
                prop_assert_eq!(d, 1);
            }
            if let Some(v) = g.world_to_voxel(&Vector3::from(b)) {
                prop_assert_eq!(cells.last(), Some(&v));
            }
        }
    }
}
