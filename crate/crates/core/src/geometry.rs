//! The calorimeter cell lattice.
//!
//! Local lattice coordinates: x and y are centered on the origin, z is the
//! depth measured from the front face. All lengths are in cm and energies in
//! MeV.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySpec {
    pub n_cells_per_axis: usize,
    /// Transverse tile size (cm).
    pub cell_pitch_xy: f64,
    /// Layer thickness, absorber plus scintillator (cm).
    pub cell_pitch_z: f64,
    /// Distance of the front face from the interaction point (m). Metadata.
    pub front_face_z: f64,
    /// Hit threshold (MeV), inclusive.
    pub energy_threshold: f64,
    /// Cells per voxel along each axis.
    pub voxel_group: usize,
    /// Padded size of a masked point cloud.
    pub max_points: usize,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        Self {
            n_cells_per_axis: 55,
            cell_pitch_xy: 10.0,
            cell_pitch_z: 2.3,
            front_face_z: 3.8,
            energy_threshold: 0.3,
            voxel_group: 5,
            max_points: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex {
    pub ix: usize,
    pub iy: usize,
    pub iz: usize,
}

impl CellIndex {
    pub const fn new(ix: usize, iy: usize, iz: usize) -> Self {
        Self { ix, iy, iz }
    }

    fn as_array(self) -> [usize; 3] {
        [self.ix, self.iy, self.iz]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellHit {
    pub position: Vec3,
    pub energy: f64,
    pub is_smeared: bool,
}

impl GeometrySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_cells_per_axis == 0 || self.voxel_group == 0 {
            return Err(Error::Config("lattice and voxel sizes must be positive".into()));
        }
        if self.n_cells_per_axis % self.voxel_group != 0 {
            return Err(Error::Config(format!(
                "{} cells per axis not divisible by voxel group {}",
                self.n_cells_per_axis, self.voxel_group
            )));
        }
        if !(self.cell_pitch_xy > 0.0 && self.cell_pitch_z > 0.0) {
            return Err(Error::Config("cell pitches must be strictly positive".into()));
        }
        if !(self.energy_threshold >= 0.0) {
            return Err(Error::Config("energy threshold must be non-negative".into()));
        }
        if self.max_points == 0 {
            return Err(Error::Config("max_points must be at least 1".into()));
        }
        if self.n_cells_per_axis > u16::MAX as usize {
            return Err(Error::Config("lattice too large".into()));
        }
        Ok(())
    }

    /// Voxels per axis of the grouped image (11 for the default lattice).
    pub fn voxels_per_axis(&self) -> usize {
        self.n_cells_per_axis / self.voxel_group
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells_per_axis.pow(3)
    }

    pub fn n_voxels(&self) -> usize {
        self.voxels_per_axis().pow(3)
    }

    pub fn pitch(&self, axis: usize) -> f64 {
        if axis == 2 {
            self.cell_pitch_z
        } else {
            self.cell_pitch_xy
        }
    }

    /// Spatial extent `[lo, hi]` of the lattice along `axis`.
    pub fn extent(&self, axis: usize) -> (f64, f64) {
        let n = self.n_cells_per_axis as f64;
        let p = self.pitch(axis);
        if axis == 2 {
            (0.0, n * p)
        } else {
            (-0.5 * n * p, 0.5 * n * p)
        }
    }

    fn axis_center(&self, axis: usize, i: usize) -> f64 {
        let p = self.pitch(axis);
        if axis == 2 {
            (i as f64 + 0.5) * p
        } else {
            (i as f64 - 0.5 * (self.n_cells_per_axis as f64 - 1.0)) * p
        }
    }

    /// Index along `axis` for a coordinate, with half-open cells `[lo, hi)`
    /// except at the upper lattice edge, which is inclusive.
    fn axis_index(&self, axis: usize, coord: f64) -> Option<usize> {
        let (lo, hi) = self.extent(axis);
        if !(coord >= lo && coord <= hi) {
            return None;
        }
        let n = self.n_cells_per_axis;
        let p = self.pitch(axis);
        let edge = |k: usize| lo + k as f64 * p;
        let mut i = (((coord - lo) / p).floor() as usize).min(n);
        // `floor` can land one cell off when the division rounds across an edge.
        if i < n && coord >= edge(i + 1) {
            i += 1;
        }
        if i > 0 && coord < edge(i) {
            i -= 1;
        }
        Some(i.min(n - 1))
    }

    pub fn check_index(&self, idx: CellIndex) -> Result<()> {
        let n = self.n_cells_per_axis;
        if idx.ix >= n || idx.iy >= n || idx.iz >= n {
            return Err(Error::Bounds { index: idx.as_array(), n });
        }
        Ok(())
    }

    /// Row-major linear index `(iz * n + iy) * n + ix`.
    pub fn linear_index(&self, idx: CellIndex) -> usize {
        let n = self.n_cells_per_axis;
        (idx.iz * n + idx.iy) * n + idx.ix
    }

    pub fn from_linear(&self, lin: usize) -> Result<CellIndex> {
        let n = self.n_cells_per_axis;
        if lin >= self.n_cells() {
            return Err(Error::Bounds { index: [lin % n, (lin / n) % n, lin / (n * n)], n });
        }
        Ok(CellIndex::new(lin % n, (lin / n) % n, lin / (n * n)))
    }

    /// Stable fingerprint of the geometry, stored in file and checkpoint headers.
    pub fn hash(&self) -> u64 {
        let canonical = format!(
            "n={};pxy={:e};pz={:e};z0={:e};thr={:e};group={};max={}",
            self.n_cells_per_axis,
            self.cell_pitch_xy,
            self.cell_pitch_z,
            self.front_face_z,
            self.energy_threshold,
            self.voxel_group,
            self.max_points
        );
        let digest = Sha256::digest(canonical.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// Geometric center of a cell.
pub fn cell_center(g: &GeometrySpec, idx: CellIndex) -> Result<Vec3> {
    g.check_index(idx)?;
    Ok([g.axis_center(0, idx.ix), g.axis_center(1, idx.iy), g.axis_center(2, idx.iz)])
}

/// Cell containing `position`.
pub fn quantize(g: &GeometrySpec, position: Vec3) -> Result<CellIndex> {
    let mut out = [0usize; 3];
    for (axis, slot) in out.iter_mut().enumerate() {
        *slot = g.axis_index(axis, position[axis]).ok_or_else(|| {
            Error::OutOfAcceptance(format!("position {position:?} outside the lattice"))
        })?;
    }
    Ok(CellIndex::new(out[0], out[1], out[2]))
}

/// Like [`quantize`] but clamps positions outside the lattice onto its boundary.
pub fn quantize_clamped(g: &GeometrySpec, position: Vec3) -> CellIndex {
    let mut p = position;
    for (axis, c) in p.iter_mut().enumerate() {
        let (lo, hi) = g.extent(axis);
        *c = if c.is_nan() { 0.5 * (lo + hi) } else { c.clamp(lo, hi) };
    }
    quantize(g, p).expect("clamped position lies inside the lattice")
}

/// Displaces a discrete hit uniformly within its cell on every axis.
pub fn smear<R: Rng + ?Sized>(g: &GeometrySpec, hit: &CellHit, rng: &mut R) -> Result<CellHit> {
    if hit.is_smeared {
        return Err(Error::contract("hit is already smeared"));
    }
    let mut position = hit.position;
    for (axis, c) in position.iter_mut().enumerate() {
        let half = 0.5 * g.pitch(axis);
        *c += rng.random_range(-half..half);
    }
    Ok(CellHit { position, energy: hit.energy, is_smeared: true })
}

/// Keeps hits with `energy >= threshold`, preserving order.
pub fn apply_threshold(g: &GeometrySpec, hits: &[CellHit]) -> Vec<CellHit> {
    hits.iter().copied().filter(|h| h.energy >= g.energy_threshold).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn hit(position: Vec3, energy: f64) -> CellHit {
        CellHit { position, energy, is_smeared: false }
    }

    #[test]
    fn default_geometry_is_valid() {
        let g = GeometrySpec::default();
        g.validate().unwrap();
        assert_eq!(g.voxels_per_axis(), 11);
        assert_eq!(g.n_cells(), 166_375);
    }

    #[test]
    fn first_cell_center_and_symmetry() {
        let g = GeometrySpec::default();
        let c = cell_center(&g, CellIndex::new(0, 0, 0)).unwrap();
        assert_eq!(c[0], -270.0);
        let mid = cell_center(&g, CellIndex::new(27, 27, 27)).unwrap();
        assert_eq!((mid[0], mid[1]), (0.0, 0.0));
        let sum: f64 = (0..55)
            .map(|i| cell_center(&g, CellIndex::new(i, 0, 0)).unwrap()[0])
            .sum();
        assert!(sum.abs() < 1e-9);
    }

    #[test]
    fn out_of_bounds_index() {
        let g = GeometrySpec::default();
        assert!(matches!(
            cell_center(&g, CellIndex::new(55, 0, 0)),
            Err(Error::Bounds { .. })
        ));
    }

    #[test]
    fn quantize_inverts_cell_center_exhaustively_on_small_lattice() {
        let g = GeometrySpec { n_cells_per_axis: 10, voxel_group: 5, ..Default::default() };
        for ix in 0..10 {
            for iy in 0..10 {
                for iz in 0..10 {
                    let idx = CellIndex::new(ix, iy, iz);
                    assert_eq!(quantize(&g, cell_center(&g, idx).unwrap()).unwrap(), idx);
                }
            }
        }
    }

    #[test]
    fn boundary_goes_to_upper_cell_except_at_lattice_edge() {
        let g = GeometrySpec::default();
        // Edge between cells 0 and 1 along x sits at -265 cm.
        let idx = quantize(&g, [-265.0, 0.0, 1.0]).unwrap();
        assert_eq!(idx.ix, 1);
        let top = quantize(&g, [275.0, -275.0, 55.0 * 2.3]).unwrap();
        assert_eq!((top.ix, top.iy, top.iz), (54, 0, 54));
        assert!(matches!(
            quantize(&g, [275.1, 0.0, 1.0]),
            Err(Error::OutOfAcceptance(_))
        ));
    }

    #[test]
    fn smear_keeps_energy_and_cell() {
        let g = GeometrySpec::default();
        let mut r = rng::seeded(3);
        for lin in (0..g.n_cells()).step_by(997) {
            let idx = g.from_linear(lin).unwrap();
            let h = hit(cell_center(&g, idx).unwrap(), 1.25);
            let s = smear(&g, &h, &mut r).unwrap();
            assert!(s.is_smeared);
            assert_eq!(s.energy, h.energy);
            assert_eq!(quantize(&g, s.position).unwrap(), idx);
        }
    }

    #[test]
    fn smearing_twice_is_rejected() {
        let g = GeometrySpec::default();
        let mut r = rng::seeded(0);
        let h = CellHit { position: [0.0, 0.0, 1.15], energy: 1.0, is_smeared: true };
        assert!(matches!(smear(&g, &h, &mut r), Err(Error::Contract(_))));
    }

    #[test]
    fn threshold_is_inclusive() {
        let g = GeometrySpec::default();
        let hits: Vec<_> = [0.1, 0.3, 5.0].iter().map(|&e| hit([0.0; 3], e)).collect();
        let kept: Vec<f64> = apply_threshold(&g, &hits).iter().map(|h| h.energy).collect();
        assert_eq!(kept, vec![0.3, 5.0]);
        assert!(apply_threshold(&g, &[]).is_empty());
        let g0 = GeometrySpec { energy_threshold: 0.0, ..g.clone() };
        assert_eq!(apply_threshold(&g0, &hits), hits);
        let once = apply_threshold(&g, &hits);
        assert_eq!(apply_threshold(&g, &once), once);
    }

    #[test]
    fn invalid_geometries() {
        let bad = GeometrySpec { n_cells_per_axis: 54, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = GeometrySpec { cell_pitch_z: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = GeometrySpec { max_points: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hash_tracks_fields() {
        let a = GeometrySpec::default();
        let b = GeometrySpec { energy_threshold: 0.5, ..Default::default() };
        assert_eq!(a.hash(), GeometrySpec::default().hash());
        assert_ne!(a.hash(), b.hash());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quantize_recovers_index_after_smear(lin in 0usize..166_375, seed in any::<u64>()) {
                let g = GeometrySpec::default();
                let idx = g.from_linear(lin).unwrap();
                let h = hit(cell_center(&g, idx).unwrap(), 1.0);
                let s = smear(&g, &h, &mut rng::seeded(seed)).unwrap();
                prop_assert_eq!(quantize(&g, s.position).unwrap(), idx);
            }
        }
    }
}
