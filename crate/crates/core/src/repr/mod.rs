//! Point-cloud and voxel-image representations of a shower.

pub mod cloud;
pub mod format;
pub mod voxel;

pub use cloud::{denormalize_cloud, from_masked, normalize_cloud, to_masked, CloudStats, MaskedCloud};
pub use format::{DatasetFormat, DatasetHeader};
pub use voxel::{
    denormalize_image, layer_energies, normalize_image, voxel_hits, voxelize, voxelize_full,
    FullImage, LayerEnergyVector, NormalizedImage, VoxelImage,
};
