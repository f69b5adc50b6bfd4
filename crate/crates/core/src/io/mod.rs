//! Interchange formats: rasters, grid files, PLY.

pub mod gridfile;
pub mod ply;
pub mod raster;

pub use gridfile::{read_grid, write_grid};
