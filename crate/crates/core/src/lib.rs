//! Semantic voxel occupancy pseudo-labels from multi-view depth and
//! segmentation: unprojection, static accumulation with confidence
//! filtering, dynamic object handling, majority-vote voxelization,
//! camera visibility masks and occupancy metrics.

// `!(x > 0.0)` is the NaN-rejecting form used for validation throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod filter;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod scene;
pub mod synth;
pub mod traversal;
pub mod unproject;
pub mod voxelize;

pub use error::{Error, Result};
pub use pipeline::{run_frames, run_pipeline, PipelineConfig, PipelineMode, PipelineRun};
pub use scene::{ClassTable, GridSpec, SequenceManifest};
pub use voxelize::{Visibility, VisibilityGrid, VoxelGrid};
