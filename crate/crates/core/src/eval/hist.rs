//! Fixed-binning histograms and the ratio band used to compare them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative deviation beyond which a bin is flagged.
pub const BAND: f64 = 0.10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<f64>,
    /// Whether `counts` have been scaled to unit area.
    pub normalized: bool,
}

impl Histogram {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::contract("histogram edges must be strictly increasing"));
        }
        let counts = vec![0.0; edges.len() - 1];
        Ok(Self { edges, counts, normalized: false })
    }

    pub fn linear(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::contract("need at least one bin"));
        }
        Self::new((0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect())
    }

    pub fn log(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo > 0.0) {
            return Err(Error::contract("log binning needs a positive lower edge"));
        }
        let mut h = Self::linear(lo.log10(), hi.log10(), bins)?;
        h.edges.iter_mut().for_each(|e| *e = 10f64.powf(*e));
        Ok(h)
    }

    /// Unit-width bins centred on `0..=max`.
    pub fn integer(max: usize) -> Result<Self> {
        Self::new((0..=max + 1).map(|i| i as f64 - 0.5).collect())
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Bin of `x`; bins are half-open except the last, which includes its
    /// upper edge.
    pub fn bin_of(&self, x: f64) -> Option<usize> {
        let n = self.n_bins();
        if !(x >= self.edges[0] && x <= self.edges[n]) {
            return None;
        }
        let k = self.edges.partition_point(|&e| e <= x);
        Some(k.saturating_sub(1).min(n - 1))
    }

    pub fn fill(&mut self, x: f64, w: f64) {
        if let Some(k) = self.bin_of(x) {
            self.counts[k] += w;
        }
    }

    pub fn fill_all(&mut self, xs: &[f64]) {
        for &x in xs {
            self.fill(x, 1.0);
        }
    }

    /// Histogram whose bin contents are given directly.
    pub fn from_counts(edges: Vec<f64>, counts: Vec<f64>) -> Result<Self> {
        let mut h = Self::new(edges)?;
        if counts.len() != h.n_bins() {
            return Err(Error::contract("one count per bin required"));
        }
        h.counts = counts;
        Ok(h)
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Copy scaled to unit area (density per bin width).
    pub fn density(&self) -> Self {
        let total = self.total();
        let counts = self
            .counts
            .iter()
            .zip(self.edges.windows(2))
            .map(|(&c, w)| if total > 0.0 { c / (total * (w[1] - w[0])) } else { 0.0 })
            .collect();
        Self { edges: self.edges.clone(), counts, normalized: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandFlag {
    Inside,
    Outside,
    /// Empty reference bin; no ratio is formed.
    Undefined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationBand {
    /// `gen / ref` density per bin; `None` where the reference is empty.
    pub ratios: Vec<Option<f64>>,
    pub flags: Vec<BandFlag>,
}

impl DeviationBand {
    pub fn populated(&self) -> usize {
        self.flags.iter().filter(|&&f| f != BandFlag::Undefined).count()
    }

    pub fn inside(&self) -> usize {
        self.flags.iter().filter(|&&f| f == BandFlag::Inside).count()
    }

    /// Fraction of populated bins inside the band.
    pub fn inside_fraction(&self) -> f64 {
        match self.populated() {
            0 => 0.0,
            n => self.inside() as f64 / n as f64,
        }
    }
}

/// Per-bin density ratio of `gen` to `reference`, flagging bins that deviate
/// by more than [`BAND`].
pub fn deviation_band(gen: &Histogram, reference: &Histogram) -> Result<DeviationBand> {
    if gen.edges != reference.edges {
        return Err(Error::contract("histograms have different binning"));
    }
    let (g, r) = (gen.density(), reference.density());
    let mut ratios = Vec::with_capacity(g.n_bins());
    let mut flags = Vec::with_capacity(g.n_bins());
    for (&gc, &rc) in g.counts.iter().zip(&r.counts) {
        if rc > 0.0 {
            let ratio = gc / rc;
            ratios.push(Some(ratio));
            flags.push(if (ratio - 1.0).abs() > BAND { BandFlag::Outside } else { BandFlag::Inside });
        } else {
            ratios.push(None);
            flags.push(BandFlag::Undefined);
        }
    }
    Ok(DeviationBand { ratios, flags })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binning() {
        let h = Histogram::linear(0.0, 4.0, 4).unwrap();
        assert_eq!(h.bin_of(0.0), Some(0));
        assert_eq!(h.bin_of(1.0), Some(1));
        assert_eq!(h.bin_of(4.0), Some(3));
        assert_eq!(h.bin_of(4.1), None);
        assert_eq!(h.bin_of(f64::NAN), None);
        let l = Histogram::log(0.05, 150.0, 50).unwrap();
        assert_eq!(l.n_bins(), 50);
        assert!((l.edges[50] - 150.0).abs() < 1e-9);
        let i = Histogram::integer(3).unwrap();
        assert_eq!(i.centers(), vec![0.0, 1.0, 2.0, 3.0]);
        assert!(Histogram::new(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn density_has_unit_area() {
        let mut h = Histogram::new(vec![0.0, 1.0, 3.0, 3.5]).unwrap();
        h.fill_all(&[0.5, 2.0, 2.5, 3.2, 3.4]);
        let d = h.density();
        let area: f64 = d.counts.iter().zip(d.edges.windows(2)).map(|(c, w)| c * (w[1] - w[0])).sum();
        assert!((area - 1.0).abs() < 1e-12);
        assert!(d.normalized);
    }

    #[test]
    fn band_fixtures() {
        let edges = vec![0.0, 1.0, 2.0, 3.0];
        let r = Histogram::from_counts(edges.clone(), vec![10.0, 10.0, 0.0]).unwrap();
        let same = deviation_band(&r, &r).unwrap();
        assert_eq!(same.ratios, vec![Some(1.0), Some(1.0), None]);
        assert_eq!(same.flags, vec![BandFlag::Inside, BandFlag::Inside, BandFlag::Undefined]);

        // 1.2x in bin 0 before renormalization.
        let wide: Vec<f64> = (0..=5).map(f64::from).collect();
        let r5 = Histogram::from_counts(wide.clone(), vec![10.0; 5]).unwrap();
        let g5 = Histogram::from_counts(wide, vec![12.0, 10.0, 10.0, 10.0, 10.0]).unwrap();
        let b = deviation_band(&g5, &r5).unwrap();
        assert_eq!(b.flags[0], BandFlag::Outside);
        assert!(b.flags[1..].iter().all(|&f| f == BandFlag::Inside));
        assert!((b.ratios[0].unwrap() - 1.2 * 50.0 / 52.0).abs() < 1e-12);

        let g2 = Histogram::from_counts(edges.clone(), vec![13.0, 7.0, 5.0]).unwrap();
        let b2 = deviation_band(&g2, &r).unwrap();
        assert_eq!(b2.flags[2], BandFlag::Undefined);
        assert_eq!(b2.populated(), 2);

        let other = Histogram::linear(0.0, 3.0, 4).unwrap();
        assert!(deviation_band(&other, &r).is_err());
    }
}
