//! Shower observables.
//!
//! | kind | needs | value | unit |
//! |---|---|---|---|
//! | `total_energy` | image | sum of voxel energies | GeV |
//! | `n_voxel_hits` | image | voxels at or above threshold | count |
//! | `n_cell_hits` | point cloud | cells at or above threshold | count |
//! | `profile_x/y/z` | image | energy per voxel slice | MeV |
//! | `cell_profile_x/y/z` | point cloud | energy per cell slice | MeV |
//! | `cell_log10_energy` | point cloud | log10 of each hit energy | log10 MeV |

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{quantize_clamped, GeometrySpec};
use crate::repr::VoxelImage;
use crate::showergen::PointCloudEvent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    TotalEnergy,
    NVoxelHits,
    NCellHits,
    ProfileX,
    ProfileY,
    ProfileZ,
    CellProfileX,
    CellProfileY,
    CellProfileZ,
    CellLog10Energy,
}

impl ObservableKind {
    pub const ALL: [ObservableKind; 10] = [
        ObservableKind::TotalEnergy,
        ObservableKind::NVoxelHits,
        ObservableKind::NCellHits,
        ObservableKind::ProfileX,
        ObservableKind::ProfileY,
        ObservableKind::ProfileZ,
        ObservableKind::CellProfileX,
        ObservableKind::CellProfileY,
        ObservableKind::CellProfileZ,
        ObservableKind::CellLog10Energy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObservableKind::TotalEnergy => "total_energy",
            ObservableKind::NVoxelHits => "n_voxel_hits",
            ObservableKind::NCellHits => "n_cell_hits",
            ObservableKind::ProfileX => "profile_x",
            ObservableKind::ProfileY => "profile_y",
            ObservableKind::ProfileZ => "profile_z",
            ObservableKind::CellProfileX => "cell_profile_x",
            ObservableKind::CellProfileY => "cell_profile_y",
            ObservableKind::CellProfileZ => "cell_profile_z",
            ObservableKind::CellLog10Energy => "cell_log10_energy",
        }
    }

    pub fn needs_cells(self) -> bool {
        matches!(
            self,
            ObservableKind::NCellHits
                | ObservableKind::CellProfileX
                | ObservableKind::CellProfileY
                | ObservableKind::CellProfileZ
                | ObservableKind::CellLog10Energy
        )
    }

    /// Axis of a profile observable.
    pub fn profile_axis(self) -> Option<usize> {
        match self {
            ObservableKind::ProfileX | ObservableKind::CellProfileX => Some(0),
            ObservableKind::ProfileY | ObservableKind::CellProfileY => Some(1),
            ObservableKind::ProfileZ | ObservableKind::CellProfileZ => Some(2),
            _ => None,
        }
    }
}

impl FromStr for ObservableKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObservableKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown observable {s:?}")))
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Shower<'a> {
    Image(&'a VoxelImage),
    Cloud(&'a PointCloudEvent),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ObservableValue {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl ObservableValue {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            ObservableValue::Scalar(v) => Some(*v),
            ObservableValue::Vector(_) => None,
        }
    }

    pub fn vector(self) -> Option<Vec<f64>> {
        match self {
            ObservableValue::Vector(v) => Some(v),
            ObservableValue::Scalar(_) => None,
        }
    }
}

pub const MEV_PER_GEV: f64 = 1000.0;

pub fn total_energy_gev(img: &VoxelImage) -> f64 {
    img.total_energy() / MEV_PER_GEV
}

pub fn n_voxel_hits(img: &VoxelImage, threshold: f64) -> usize {
    crate::repr::voxel_hits(img, threshold)
}

pub fn n_cell_hits(g: &GeometrySpec, ev: &PointCloudEvent) -> usize {
    ev.hits.iter().filter(|h| h.energy >= g.energy_threshold).count()
}

/// Energy summed over the planes perpendicular to `axis`.
pub fn voxel_profile(img: &VoxelImage, axis: usize) -> Vec<f64> {
    let n = img.side;
    let mut out = vec![0.0; n];
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                out[[x, y, z][axis]] += img.get(x, y, z);
            }
        }
    }
    out
}

pub fn cell_profile(g: &GeometrySpec, ev: &PointCloudEvent, axis: usize) -> Vec<f64> {
    let mut out = vec![0.0; g.n_cells_per_axis];
    for h in &ev.hits {
        let c = quantize_clamped(g, h.position);
        out[[c.ix, c.iy, c.iz][axis]] += h.energy;
    }
    out
}

pub fn cell_log10_energies(ev: &PointCloudEvent) -> Vec<f64> {
    ev.hits.iter().filter(|h| h.energy > 0.0).map(|h| h.energy.log10()).collect()
}

pub fn observable(g: &GeometrySpec, kind: ObservableKind, shower: Shower<'_>) -> Result<ObservableValue> {
    use ObservableKind as K;
    match (kind, shower) {
        (K::TotalEnergy, Shower::Image(img)) => Ok(ObservableValue::Scalar(total_energy_gev(img))),
        (K::NVoxelHits, Shower::Image(img)) => {
            Ok(ObservableValue::Scalar(n_voxel_hits(img, g.energy_threshold) as f64))
        }
        (K::ProfileX | K::ProfileY | K::ProfileZ, Shower::Image(img)) => {
            Ok(ObservableValue::Vector(voxel_profile(img, kind.profile_axis().expect("profile axis"))))
        }
        (K::NCellHits, Shower::Cloud(ev)) => Ok(ObservableValue::Scalar(n_cell_hits(g, ev) as f64)),
        (K::CellProfileX | K::CellProfileY | K::CellProfileZ, Shower::Cloud(ev)) => Ok(ObservableValue::Vector(
            cell_profile(g, ev, kind.profile_axis().expect("profile axis")),
        )),
        (K::CellLog10Energy, Shower::Cloud(ev)) => Ok(ObservableValue::Vector(cell_log10_energies(ev))),
        (k, Shower::Image(_)) => Err(Error::contract(format!("{} needs point-cloud events", k.name()))),
        (k, Shower::Cloud(_)) => Err(Error::contract(format!("{} needs voxel images", k.name()))),
    }
}

/// Per-event scalar observable over a sample.
pub fn scalar_sample(g: &GeometrySpec, kind: ObservableKind, showers: &[Shower<'_>]) -> Result<Vec<f64>> {
    showers
        .iter()
        .map(|&s| {
            observable(g, kind, s)?
                .scalar()
                .ok_or_else(|| Error::contract(format!("{} is not a scalar", kind.name())))
        })
        .collect()
}

/// Mean energy per bin over a sample (the average profile).
pub fn mean_profile(g: &GeometrySpec, kind: ObservableKind, showers: &[Shower<'_>]) -> Result<Vec<f64>> {
    if kind.profile_axis().is_none() {
        return Err(Error::contract(format!("{} is not a profile", kind.name())));
    }
    if showers.is_empty() {
        return Err(Error::contract("empty sample"));
    }
    let mut acc: Vec<f64> = Vec::new();
    for &s in showers {
        let v = observable(g, kind, s)?.vector().expect("profile is a vector");
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        acc.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
    }
    let n = showers.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// All hit log-energies of a sample, in event order.
pub fn pooled_log10_energies(showers: &[Shower<'_>]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for &s in showers {
        match s {
            Shower::Cloud(ev) => out.extend(cell_log10_energies(ev)),
            Shower::Image(_) => return Err(Error::contract("cell_log10_energy needs point-cloud events")),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cell_center, CellHit, CellIndex};
    use crate::repr::voxelize;
    use crate::showergen::{generate_events, IncidentParticle, ShowerModelParams};

    #[test]
    fn fixtures() {
        let g = GeometrySpec::default();
        let mut img = VoxelImage::zeros(11, IncidentParticle::new(10.0, 0.0));
        img.energies[5] = 2000.0;
        assert_eq!(observable(&g, ObservableKind::TotalEnergy, Shower::Image(&img)).unwrap().scalar(), Some(2.0));
        img.energies[6] = 0.3;
        img.energies[7] = 0.5;
        img.energies[8] = 0.29;
        assert_eq!(observable(&g, ObservableKind::NVoxelHits, Shower::Image(&img)).unwrap().scalar(), Some(3.0));
        let pz = voxel_profile(&img, 2);
        assert!((pz[0] - 2001.09).abs() < 1e-9 && pz[1..].iter().all(|&v| v == 0.0));
        let px = voxel_profile(&img, 0);
        assert_eq!(px[5], 2000.0);
        assert!(observable(&g, ObservableKind::NCellHits, Shower::Image(&img)).is_err());
    }

    #[test]
    fn cell_observables() {
        let g = GeometrySpec::default();
        let hits = [(0, 0, 0, 1.0), (0, 0, 1, 0.5), (54, 3, 1, 10.0)]
            .iter()
            .map(|&(x, y, z, e)| CellHit {
                position: cell_center(&g, CellIndex::new(x, y, z)).unwrap(),
                energy: e,
                is_smeared: false,
            })
            .collect();
        let ev = PointCloudEvent { incident: IncidentParticle::new(5.0, 0.0), hits };
        assert_eq!(n_cell_hits(&g, &ev), 3);
        let pz = cell_profile(&g, &ev, 2);
        assert_eq!((pz[0], pz[1]), (1.0, 10.5));
        assert_eq!(cell_log10_energies(&ev), vec![0.0, 0.5f64.log10(), 1.0]);
        assert!(observable(&g, ObservableKind::TotalEnergy, Shower::Cloud(&ev)).is_err());
    }

    #[test]
    fn voxel_hits_never_exceed_cell_hits() {
        let g = GeometrySpec::default();
        let evs = generate_events(&g, &ShowerModelParams::default(), 2000, 3, 1).unwrap();
        for ev in &evs {
            let img = voxelize(&g, ev);
            assert!(n_voxel_hits(&img, g.energy_threshold) <= n_cell_hits(&g, ev));
        }
    }

    #[test]
    fn mean_profile_averages() {
        let g = GeometrySpec::default();
        let inc = IncidentParticle::new(10.0, 0.0);
        let mut a = VoxelImage::zeros(11, inc);
        let mut b = VoxelImage::zeros(11, inc);
        a.energies[0] = 4.0;
        b.energies[121] = 2.0;
        let m = mean_profile(&g, ObservableKind::ProfileZ, &[Shower::Image(&a), Shower::Image(&b)]).unwrap();
        assert_eq!(&m[..3], &[2.0, 1.0, 0.0]);
    }
}
