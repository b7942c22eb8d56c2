//! Calorimeter shower fast simulation with score-based diffusion models.
//!
//! Showers are represented either as zero-suppressed point clouds at full cell
//! granularity or as voxel images obtained by summing 5x5x5 blocks of cells.
//! Both representations are modelled with variance-preserving diffusion under a
//! velocity parameterization and sampled with the deterministic DDIM rule.
//!
//! Module map:
//! - [`geometry`]: the cell lattice and hit-level operations.
//! - [`showergen`]: a parametric toy shower generator standing in for a full
//!   detector simulation.
//! - [`repr`]: point-cloud and image representations and the on-disk formats.
//! - [`diffusion`]: schedule, networks, training, sampling, two-stage pipelines.
//! - [`eval`]: observables, EMD, deviation bands, classifier AUC and reports.

pub mod config;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod parallel;
pub mod repr;
pub mod rng;
pub mod showergen;

pub use error::{Error, Result};
pub use geometry::{CellHit, CellIndex, GeometrySpec, Vec3};
pub use repr::{MaskedCloud, VoxelImage};
pub use showergen::{IncidentParticle, PointCloudEvent, ShowerModelParams};

/// Version of this library, also recorded in run manifests.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
