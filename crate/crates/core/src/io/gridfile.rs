//! Voxel grid files (`.occ`).
//!
//! Little-endian, 32-byte header followed by two u8 planes of
//! `dims.x * dims.y * dims.z` cells each, x-major (x slowest, z fastest):
//!
//! | offset | size | field                                        |
//! |--------|------|----------------------------------------------|
//! | 0      | 4    | magic `OCCV`                                 |
//! | 4      | 2    | version (u16, currently 1)                   |
//! | 6      | 2    | planes (u16, always 2: labels + visibility)  |
//! | 8      | 6    | dims x, y, z (u16 each)                      |
//! | 14     | 2    | reserved, zero                               |
//! | 16     | 4    | resolution in meters (f32)                   |
//! | 20     | 12   | origin x, y, z in meters (f32 each)          |
//! | 32     | N    | class labels (u8)                            |
//! | 32+N   | N    | visibility: 0 unobserved, 1 free, 2 occupied |

use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::GridSpec;
use crate::voxelize::{Visibility, VisibilityGrid, VoxelGrid};

pub const GRID_MAGIC: [u8; 4] = *b"OCCV";
pub const GRID_VERSION: u16 = 1;
pub const GRID_HEADER_LEN: usize = 32;
const PLANES: u16 = 2;

/// f32 → f64 through the shortest decimal form, so values written from
/// short decimals (0.4, -40) come back exactly.
fn widen(x: f32) -> f64 {
    format!("{x}").parse().expect("f32 display parses as f64")
}

pub fn encode_grid(grid: &VoxelGrid, mask: &VisibilityGrid) -> Result<Vec<u8>> {
    if grid.spec != mask.spec {
        return Err(Error::SpecMismatch("visibility mask differs from grid".into()));
    }
    grid.spec.validate()?;
    let n = grid.spec.num_cells();
    let mut out = Vec::with_capacity(GRID_HEADER_LEN + 2 * n);
    out.extend_from_slice(&GRID_MAGIC);
    out.extend_from_slice(&GRID_VERSION.to_le_bytes());
    out.extend_from_slice(&PLANES.to_le_bytes());
    for d in grid.spec.dims {
        out.extend_from_slice(&(d as u16).to_le_bytes());
    }
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(grid.spec.resolution as f32).to_le_bytes());
    for o in grid.spec.origin {
        out.extend_from_slice(&(o as f32).to_le_bytes());
    }
    out.extend_from_slice(&grid.labels);
    out.extend(mask.state.iter().map(|s| *s as u8));
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<(VoxelGrid, VisibilityGrid)> {
    if bytes.len() < GRID_HEADER_LEN {
        return Err(Error::Truncated {
            what: "grid header",
            expected: GRID_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[..4] != GRID_MAGIC {
        return Err(Error::BadMagic {
            what: "grid file",
            expected: GRID_MAGIC.to_vec(),
            found: bytes[..4].to_vec(),
        });
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u16_at(4);
    if version != GRID_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "grid file",
            found: version as u32,
            supported: GRID_VERSION as u32,
        });
    }
    let planes = u16_at(6);
    if planes != PLANES {
        return Err(Error::Invalid(format!("grid file declares {planes} planes, expected 2")));
    }
    let dims = [u16_at(8) as usize, u16_at(10) as usize, u16_at(12) as usize];
    let spec = GridSpec::new(
        [widen(f32_at(20)), widen(f32_at(24)), widen(f32_at(28))],
        widen(f32_at(16)),
        dims,
    )?;
    let n = spec.num_cells();
    let expected = GRID_HEADER_LEN + 2 * n;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            what: "grid file",
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::DimensionMismatch(format!(
            "grid file has {} trailing bytes",
            bytes.len() - expected
        )));
    }
    let labels = bytes[GRID_HEADER_LEN..GRID_HEADER_LEN + n].to_vec();
    let state = bytes[GRID_HEADER_LEN + n..]
        .iter()
        .map(|&b| {
            Visibility::from_u8(b)
                .ok_or_else(|| Error::Invalid(format!("bad visibility value {b}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        VoxelGrid::from_labels(spec, labels)?,
        VisibilityGrid { spec, state },
    ))
}

pub fn write_grid(path: &Path, grid: &VoxelGrid, mask: &VisibilityGrid) -> Result<()> {
    let bytes = encode_grid(grid, mask)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_grid(path: &Path) -> Result<(VoxelGrid, VisibilityGrid)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grid(&bytes)
}
