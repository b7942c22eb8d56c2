//! Fixed-size masked point clouds, the training layout of the set model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CellHit, GeometrySpec};
use crate::showergen::{IncidentParticle, PointCloudEvent};

/// Feature columns per point: x, y, z, E.
pub const N_FEATURES: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedCloud {
    /// `max_points` rows of (x, y, z, E); masked rows are all zero.
    pub features: Vec<[f64; N_FEATURES]>,
    pub mask: Vec<bool>,
    pub incident: IncidentParticle,
    pub is_smeared: bool,
}

impl MaskedCloud {
    pub fn n_hits(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Conditioning record (log10 momentum, number of hits).
    pub fn condition(&self) -> (f64, usize) {
        (self.incident.log10_momentum(), self.n_hits())
    }

    /// Row-major flattened features.
    pub fn flat(&self) -> Vec<f64> {
        self.features.iter().flatten().copied().collect()
    }
}

pub fn to_masked(g: &GeometrySpec, event: &PointCloudEvent) -> Result<MaskedCloud> {
    let n = event.n_hits();
    if n > g.max_points {
        return Err(Error::Capacity { n_hits: n, max_points: g.max_points });
    }
    let mut features = vec![[0.0; N_FEATURES]; g.max_points];
    let mut mask = vec![false; g.max_points];
    for (row, h) in event.hits.iter().enumerate() {
        features[row] = [h.position[0], h.position[1], h.position[2], h.energy];
        mask[row] = true;
    }
    Ok(MaskedCloud { features, mask, incident: event.incident, is_smeared: event.is_smeared() })
}

pub fn from_masked(mc: &MaskedCloud) -> PointCloudEvent {
    let hits = mc
        .features
        .iter()
        .zip(&mc.mask)
        .filter(|(_, &m)| m)
        .map(|(f, _)| CellHit {
            position: [f[0], f[1], f[2]],
            energy: f[3],
            is_smeared: mc.is_smeared,
        })
        .collect();
    PointCloudEvent { incident: mc.incident, hits }
}

/// Dataset statistics of log10 hit energy, fixed at training time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudStats {
    pub log_e_mean: f64,
    pub log_e_std: f64,
}

impl CloudStats {
    pub fn from_events(events: &[PointCloudEvent]) -> Result<Self> {
        let logs: Vec<f64> = events
            .iter()
            .flat_map(|e| e.hits.iter())
            .map(|h| {
                if h.energy > 0.0 {
                    Ok(h.energy.log10())
                } else {
                    Err(Error::domain("hit energies must be positive"))
                }
            })
            .collect::<Result<_>>()?;
        if logs.len() < 2 {
            return Err(Error::contract("need at least two hits for statistics"));
        }
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
        if !(var > 0.0) {
            return Err(Error::domain("hit energies have zero spread"));
        }
        Ok(Self { log_e_mean: mean, log_e_std: var.sqrt() })
    }
}

fn coord_to_unit(g: &GeometrySpec, axis: usize, c: f64) -> f64 {
    let (lo, hi) = g.extent(axis);
    2.0 * (c - lo) / (hi - lo) - 1.0
}

fn unit_to_coord(g: &GeometrySpec, axis: usize, u: f64) -> f64 {
    let (lo, hi) = g.extent(axis);
    lo + 0.5 * (u + 1.0) * (hi - lo)
}

/// Maps coordinates affinely onto `[-1, 1]` over the lattice and standardizes
/// log10 energy. Masked rows stay zero.
pub fn normalize_cloud(g: &GeometrySpec, stats: &CloudStats, mc: &MaskedCloud) -> Result<MaskedCloud> {
    let mut out = mc.clone();
    for (row, &m) in out.features.iter_mut().zip(&mc.mask) {
        if !m {
            continue;
        }
        if !(row[3] > 0.0) {
            return Err(Error::domain(format!("cannot normalize energy {}", row[3])));
        }
        for axis in 0..3 {
            row[axis] = coord_to_unit(g, axis, row[axis]);
        }
        row[3] = (row[3].log10() - stats.log_e_mean) / stats.log_e_std;
    }
    Ok(out)
}

pub fn denormalize_cloud(g: &GeometrySpec, stats: &CloudStats, mc: &MaskedCloud) -> MaskedCloud {
    let mut out = mc.clone();
    for (row, &m) in out.features.iter_mut().zip(&mc.mask) {
        if !m {
            continue;
        }
        for axis in 0..3 {
            row[axis] = unit_to_coord(g, axis, row[axis]);
        }
        row[3] = 10f64.powf(row[3] * stats.log_e_std + stats.log_e_mean);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::cell_center;
    use crate::showergen::{generate_events, ShowerModelParams};

    fn three_hit_event(g: &GeometrySpec) -> PointCloudEvent {
        let hits = [(1, 2, 3, 0.5), (10, 20, 30, 4.0), (54, 0, 54, 12.0)]
            .iter()
            .map(|&(x, y, z, e)| CellHit {
                position: cell_center(g, crate::CellIndex::new(x, y, z)).unwrap(),
                energy: e,
                is_smeared: false,
            })
            .collect();
        PointCloudEvent { incident: IncidentParticle::new(3.0, 10.0), hits }
    }

    #[test]
    fn masking_pads_to_capacity() {
        let g = GeometrySpec::default();
        let ev = three_hit_event(&g);
        let mc = to_masked(&g, &ev).unwrap();
        assert_eq!(mc.features.len(), 200);
        assert_eq!(mc.n_hits(), 3);
        assert_eq!(mc.mask.iter().filter(|m| !**m).count(), 197);
        assert!(mc.features.iter().zip(&mc.mask).all(|(f, m)| *m || *f == [0.0; 4]));
        assert_eq!(from_masked(&mc), ev);
        assert_eq!(mc.condition(), (3f64.log10(), 3));

        let empty = PointCloudEvent { incident: ev.incident, hits: vec![] };
        let mc = to_masked(&g, &empty).unwrap();
        assert!(mc.mask.iter().all(|m| !m));
    }

    #[test]
    fn capacity_is_enforced() {
        let g = GeometrySpec { max_points: 2, ..Default::default() };
        assert!(matches!(to_masked(&g, &three_hit_event(&g)), Err(Error::Capacity { .. })));
    }

    #[test]
    fn normalization_endpoints_and_inverse() {
        let g = GeometrySpec::default();
        let stats = CloudStats { log_e_mean: 0.3, log_e_std: 0.6 };
        let mut mc = to_masked(&g, &three_hit_event(&g)).unwrap();
        mc.features[0][0] = -275.0;
        mc.features[0][1] = 275.0;
        mc.features[0][2] = 0.0;
        let n = normalize_cloud(&g, &stats, &mc).unwrap();
        assert_eq!(&n.features[0][..3], &[-1.0, 1.0, -1.0]);
        assert!(n.features[3..].iter().all(|f| *f == [0.0; 4]));
        let back = denormalize_cloud(&g, &stats, &n);
        for (a, b) in mc.flat().iter().zip(back.flat()) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12), "{a} vs {b}");
        }

        mc.features[1][3] = 0.0;
        assert!(matches!(normalize_cloud(&g, &stats, &mc), Err(Error::Domain(_))));
    }

    #[test]
    fn normalized_log_energy_is_standardized() {
        let g = GeometrySpec::default();
        let events = generate_events(&g, &ShowerModelParams::default(), 300, 4, 1).unwrap();
        let stats = CloudStats::from_events(&events).unwrap();
        let mut vals = Vec::new();
        for ev in &events {
            let n = normalize_cloud(&g, &stats, &to_masked(&g, ev).unwrap()).unwrap();
            vals.extend(n.features.iter().zip(&n.mask).filter(|(_, m)| **m).map(|(f, _)| f[3]));
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(m.abs() < 1e-9);
        assert!((v.sqrt() - 1.0).abs() < 1e-9);
    }
}
