//! Coordinate frames, cameras, grid geometry, classes and sequence manifests.

pub mod camera;
pub mod classes;
pub mod grid;
pub mod manifest;
pub mod transform;

pub use camera::{look_along, CameraModel};
pub use classes::{ClassEntry, ClassId, ClassTable};
pub use grid::{CellIndex, GridSpec, VoxelIndex};
pub use manifest::{
    load_manifest, validate_manifest, CameraRecord, Frame, FramePose, RawCamera, RawFrame,
    RawManifest, SemanticSource, SequenceManifest,
};
pub use transform::{transform_point, RigidTransform};
