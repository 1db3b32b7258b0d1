//! Voxel grids and exact nearest-neighbor search.

mod kdtree;
mod voxel;

pub use kdtree::{dist2, KdTree};
pub use voxel::{build_voxel_grid, GridParams, VoxelGrid, VoxelKey};
