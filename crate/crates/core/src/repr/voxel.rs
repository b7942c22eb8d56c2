//! Voxel images: cells grouped into cubic blocks with summed energy.
//!
//! Images are stored z-major (`(vz * n + vy) * n + vx`) so that each layer is a
//! contiguous slice.

use crate::error::{Error, Result};
use crate::geometry::{quantize_clamped, GeometrySpec};
use crate::showergen::{IncidentParticle, PointCloudEvent};

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelImage {
    /// Voxels per axis.
    pub side: usize,
    /// Energies (MeV), z-major.
    pub energies: Vec<f64>,
    pub incident: IncidentParticle,
}

/// Dense image at full cell granularity. Only used to measure storage cost.
#[derive(Clone, Debug, PartialEq)]
pub struct FullImage {
    pub side: usize,
    pub energies: Vec<f64>,
    pub incident: IncidentParticle,
}

/// Deposited energy per voxelized layer (MeV).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerEnergyVector(pub Vec<f64>);

impl LayerEnergyVector {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl VoxelImage {
    pub fn zeros(side: usize, incident: IncidentParticle) -> Self {
        Self { side, energies: vec![0.0; side.pow(3)], incident }
    }

    pub fn index(&self, vx: usize, vy: usize, vz: usize) -> usize {
        (vz * self.side + vy) * self.side + vx
    }

    pub fn get(&self, vx: usize, vy: usize, vz: usize) -> f64 {
        self.energies[self.index(vx, vy, vz)]
    }

    pub fn total_energy(&self) -> f64 {
        self.energies.iter().sum()
    }

    pub fn layer(&self, vz: usize) -> &[f64] {
        let plane = self.side * self.side;
        &self.energies[vz * plane..(vz + 1) * plane]
    }

    pub fn validate(&self) -> Result<()> {
        if self.energies.len() != self.side.pow(3) {
            return Err(Error::contract("image size does not match its side"));
        }
        if self.energies.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::domain("image energies must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Sums cell energies into voxels. Smeared positions are quantized first;
/// positions outside the lattice are clamped onto its boundary.
pub fn voxelize(g: &GeometrySpec, event: &PointCloudEvent) -> VoxelImage {
    let side = g.voxels_per_axis();
    let mut img = VoxelImage::zeros(side, event.incident);
    for h in &event.hits {
        let c = quantize_clamped(g, h.position);
        let k = img.index(c.ix / g.voxel_group, c.iy / g.voxel_group, c.iz / g.voxel_group);
        img.energies[k] += h.energy;
    }
    img
}

/// Dense full-granularity grid of an event.
pub fn voxelize_full(g: &GeometrySpec, event: &PointCloudEvent) -> FullImage {
    let mut energies = vec![0.0; g.n_cells()];
    for h in &event.hits {
        energies[g.linear_index(quantize_clamped(g, h.position))] += h.energy;
    }
    FullImage { side: g.n_cells_per_axis, energies, incident: event.incident }
}

/// Number of voxels with `energy >= threshold`.
pub fn voxel_hits(img: &VoxelImage, threshold: f64) -> usize {
    img.energies.iter().filter(|&&e| e >= threshold).count()
}

pub fn layer_energies(img: &VoxelImage) -> LayerEnergyVector {
    LayerEnergyVector((0..img.side).map(|z| img.layer(z).iter().sum()).collect())
}

/// Per-layer normalized voxels together with the layer sums they were
/// divided by.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedImage {
    pub side: usize,
    /// Voxel fractions; every non-empty layer sums to one.
    pub fractions: Vec<f64>,
    pub layers: LayerEnergyVector,
    /// Layers with zero energy, left all-zero.
    pub empty_layers: Vec<bool>,
}

pub fn normalize_image(img: &VoxelImage) -> Result<NormalizedImage> {
    if img.energies.iter().any(|&e| e < 0.0) {
        return Err(Error::domain("negative voxel energy"));
    }
    let layers = layer_energies(img);
    let plane = img.side * img.side;
    let mut fractions = vec![0.0; img.energies.len()];
    let mut empty_layers = vec![false; img.side];
    for (z, &sum) in layers.0.iter().enumerate() {
        if sum > 0.0 {
            for k in z * plane..(z + 1) * plane {
                fractions[k] = img.energies[k] / sum;
            }
        } else {
            empty_layers[z] = true;
        }
    }
    Ok(NormalizedImage { side: img.side, fractions, layers, empty_layers })
}

/// Scales each layer of `fractions` by its layer energy.
pub fn denormalize_image(
    fractions: &[f64],
    layers: &LayerEnergyVector,
    incident: IncidentParticle,
) -> Result<VoxelImage> {
    let side = layers.0.len();
    if fractions.len() != side.pow(3) {
        return Err(Error::contract(format!(
            "{} voxel fractions for {side} layers",
            fractions.len()
        )));
    }
    let plane = side * side;
    let energies = fractions
        .iter()
        .enumerate()
        .map(|(k, &f)| f * layers.0[k / plane])
        .collect();
    Ok(VoxelImage { side, energies, incident })
}
