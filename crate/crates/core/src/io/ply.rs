//! ASCII PLY export with class-colored vertices.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::{ClassId, ClassTable};
use crate::unproject::LabeledPointCloud;
use crate::voxelize::VoxelGrid;

/// RGB for a class: the usual occupancy-benchmark palette for the default
/// vocabulary, a hashed color beyond it.
pub fn class_color(id: ClassId) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 17] = [
        [255, 120, 50],  // barrier
        [255, 192, 203], // bicycle
        [255, 255, 0],   // bus
        [0, 150, 245],   // car
        [0, 255, 255],   // construction_vehicle
        [200, 180, 0],   // motorcycle
        [255, 0, 0],     // pedestrian
        [255, 240, 150], // traffic_cone
        [135, 60, 0],    // trailer
        [160, 32, 240],  // truck
        [255, 0, 255],   // driveable_surface
        [75, 0, 75],     // sidewalk
        [150, 240, 80],  // terrain
        [230, 230, 250], // manmade
        [0, 175, 0],     // vegetation
        [255, 255, 255], // empty
        [128, 128, 128], // unlabeled
    ];
    PALETTE.get(id as usize).copied().unwrap_or_else(|| {
        let h = (id as u32).wrapping_mul(2654435761);
        [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8]
    })
}

fn write_ply(vertices: impl ExactSizeIterator<Item = (Vector3<f64>, ClassId)>) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", vertices.len());
    s.push_str(
        "property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         property uchar label\nend_header\n",
    );
    for (p, c) in vertices {
        let [r, g, b] = class_color(c);
        let _ = writeln!(s, "{} {} {} {r} {g} {b} {c}", p.x as f32, p.y as f32, p.z as f32);
    }
    s
}

/// One vertex per point, in cloud order.
pub fn cloud_to_ply(cloud: &LabeledPointCloud) -> String {
    write_ply(cloud.points.iter().map(|p| (p.position, p.class)))
}

/// One vertex at the center of every non-empty cell, in linear order.
pub fn grid_to_ply(grid: &VoxelGrid, classes: &ClassTable) -> String {
    let occupied: Vec<(Vector3<f64>, ClassId)> = grid
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != classes.empty())
        .map(|(i, &l)| (grid.spec.voxel_center(grid.spec.unlinear(i)), l))
        .collect();
    write_ply(occupied.into_iter())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GridSpec;
    use crate::unproject::LabeledPoint;

    fn body(ply: &str) -> Vec<&str> {
        ply.split("end_header\n").nth(1).unwrap().lines().collect()
    }

    #[test]
    fn empty_grid() {
        let t = ClassTable::default();
        let g = VoxelGrid::filled(GridSpec::new([0.0; 3], 1.0, [2, 2, 2]).unwrap(), t.empty());
        let ply = grid_to_ply(&g, &t);
        assert!(ply.starts_with("ply\nformat ascii 1.0\n"));
        assert!(ply.contains("element vertex 0\n"));
        assert!(body(&ply).is_empty());
    }

    #[test]
    fn single_cell_center() {
        let t = ClassTable::default();
        let mut g = VoxelGrid::filled(GridSpec::new([-40.0, -40.0, -1.0], 0.4, [2, 2, 2]).unwrap(), t.empty());
        g.set([0, 0, 0], 13);
        let ply = grid_to_ply(&g, &t);
        assert!(ply.contains("element vertex 1\n"));
        let fields: Vec<f32> = body(&ply)[0].split(' ').take(3).map(|x| x.parse().unwrap()).collect();
        assert_eq!(fields, vec![-39.8, -39.8, -0.8]);
    }

    #[test]
    fn cloud_order_preserved() {
        let cloud: LabeledPointCloud = (0..5)
            .map(|i| LabeledPoint {
                position: Vector3::new(i as f64, 0.0, 0.0),
                class: i as u8,
                frame: 0,
                camera: 0,
                pixel: [0, 0],
            })
            .collect();
        let ply = cloud_to_ply(&cloud);
        let lines = body(&ply);
        assert_eq!(lines.len(), 5);
        for (i, l) in lines.iter().enumerate() {
            assert!(l.starts_with(&format!("{i} 0 0 ")));
            assert!(l.ends_with(&format!(" {i}")));
        }
    }
}
