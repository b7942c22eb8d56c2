//! Parametric toy showers.
//!
//! The generator produces single-pion events with the conditioning
//! distribution and data shape of the full simulation: log-uniform momentum in
//! [1, 125] GeV/c, fixed polar angle of 17 degrees and uniform azimuth. The
//! shower itself is a Gamma longitudinal profile with a Gaussian transverse
//! spread that widens with depth; the visible energy is split into point
//! deposits that are binned into cells, summed, thresholded and capped.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cell_center, quantize, CellHit, CellIndex, GeometrySpec};
use crate::rng;

pub const MOMENTUM_MIN: f64 = 1.0;
pub const MOMENTUM_MAX: f64 = 125.0;
pub const THETA_DEG: f64 = 17.0;
pub const PION_MASS_GEV: f64 = 0.139_570_39;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncidentParticle {
    /// GeV/c.
    pub momentum: f64,
    /// Polar angle (degrees).
    pub theta: f64,
    /// Azimuth (degrees) in [0, 360).
    pub phi: f64,
}

impl IncidentParticle {
    pub fn new(momentum: f64, phi: f64) -> Self {
        Self { momentum, theta: THETA_DEG, phi }
    }

    pub fn log10_momentum(&self) -> f64 {
        self.momentum.log10()
    }

    /// Kinetic energy in GeV for a charged pion.
    pub fn kinetic_energy(&self) -> f64 {
        (self.momentum.powi(2) + PION_MASS_GEV.powi(2)).sqrt() - PION_MASS_GEV
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (MOMENTUM_MIN..=MOMENTUM_MAX).contains(&self.momentum)
            && (0.0..360.0).contains(&self.phi)
            && self.theta > 0.0
            && self.theta < 90.0;
        if ok {
            Ok(())
        } else {
            Err(Error::OutOfAcceptance(format!("invalid incident particle {self:?}")))
        }
    }
}

/// Maps `log10(momentum)` onto `[-1, 1]` over the generated range.
pub fn normalized_log_momentum(momentum: f64) -> f64 {
    2.0 * momentum.log10() / MOMENTUM_MAX.log10() - 1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShowerModelParams {
    /// Mean visible fraction of the incident kinetic energy.
    pub sampling_fraction: f64,
    /// Stochastic term of the relative visible-energy fluctuation (sqrt(GeV)).
    pub stochastic_term: f64,
    /// Constant term of the relative visible-energy fluctuation.
    pub constant_term: f64,
    pub profile_a0: f64,
    pub profile_a1: f64,
    /// Longitudinal slope (1/layer).
    pub profile_b: f64,
    /// Transverse Gaussian width at the front face (cells).
    pub transverse_width_front: f64,
    /// Transverse Gaussian width at the back face (cells).
    pub transverse_width_back: f64,
    /// Mean number of point deposits per GeV of visible energy.
    pub hits_per_gev: f64,
}

impl Default for ShowerModelParams {
    fn default() -> Self {
        Self {
            sampling_fraction: 0.02,
            stochastic_term: 0.5,
            constant_term: 0.05,
            profile_a0: 2.0,
            profile_a1: 0.4,
            profile_b: 0.15,
            transverse_width_front: 1.2,
            transverse_width_back: 2.5,
            hits_per_gev: 200.0,
        }
    }
}

impl ShowerModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.sampling_fraction,
            self.stochastic_term,
            self.constant_term,
            self.profile_a0,
            self.profile_a1,
            self.profile_b,
            self.transverse_width_front,
            self.transverse_width_back,
            self.hits_per_gev,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("shower parameters must be strictly positive".into()));
        }
        if self.sampling_fraction >= 1.0 {
            return Err(Error::Config("sampling_fraction must be below 1".into()));
        }
        Ok(())
    }

    /// Relative fluctuation of the visible energy at `energy` GeV.
    pub fn relative_resolution(&self, energy: f64) -> f64 {
        (self.stochastic_term.powi(2) / energy + self.constant_term.powi(2)).sqrt()
    }

    /// Upper bound on the visible fraction at `energy` GeV.
    pub fn max_visible_fraction(&self, energy: f64) -> f64 {
        self.sampling_fraction * (1.0 + 5.0 * self.relative_resolution(energy))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloudEvent {
    pub incident: IncidentParticle,
    pub hits: Vec<CellHit>,
}

impl PointCloudEvent {
    pub fn n_hits(&self) -> usize {
        self.hits.len()
    }

    /// Total deposited energy (MeV).
    pub fn total_energy(&self) -> f64 {
        self.hits.iter().map(|h| h.energy).sum()
    }

    pub fn is_smeared(&self) -> bool {
        self.hits.first().is_some_and(|h| h.is_smeared)
    }

    /// Checks the point-cloud invariants: bounded size, every hit above
    /// threshold, and at most one hit per cell.
    pub fn validate(&self, g: &GeometrySpec) -> Result<()> {
        if self.hits.len() > g.max_points {
            return Err(Error::Capacity { n_hits: self.hits.len(), max_points: g.max_points });
        }
        let mut seen = std::collections::HashSet::with_capacity(self.hits.len());
        for h in &self.hits {
            if !(h.energy >= g.energy_threshold) || !h.energy.is_finite() {
                return Err(Error::contract(format!("hit energy {} below threshold", h.energy)));
            }
            if !seen.insert(quantize(g, h.position)?) {
                return Err(Error::contract("two hits share a cell"));
            }
        }
        Ok(())
    }
}

/// Incident particle from two uniform variates in `[0, 1]`.
pub fn incident_from_uniforms(u_momentum: f64, u_phi: f64) -> IncidentParticle {
    IncidentParticle::new(MOMENTUM_MAX.powf(u_momentum), 360.0 * u_phi)
}

pub fn sample_incident<R: Rng + ?Sized>(rng: &mut R) -> IncidentParticle {
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    incident_from_uniforms(u, v)
}

/// Shower axis in lattice coordinates at `depth` cm behind the front face.
fn axis_at(g: &GeometrySpec, inc: &IncidentParticle, depth: f64) -> [f64; 2] {
    let radius = (g.front_face_z * 100.0 + depth) * inc.theta.to_radians().tan();
    let phi = inc.phi.to_radians();
    [radius * phi.cos(), radius * phi.sin()]
}

pub fn generate_shower<R: Rng + ?Sized>(
    g: &GeometrySpec,
    p: &ShowerModelParams,
    inc: &IncidentParticle,
    rng: &mut R,
) -> Result<PointCloudEvent> {
    inc.validate()?;
    let depth_extent = g.extent(2).1;
    for depth in [0.0, depth_extent] {
        let [x, y] = axis_at(g, inc, depth);
        if quantize(g, [x, y, depth.min(depth_extent)]).is_err() {
            return Err(Error::OutOfAcceptance(format!("shower axis leaves the lattice for {inc:?}")));
        }
    }

    let energy = inc.kinetic_energy();
    let rel = p.relative_resolution(energy);
    let mean_visible = p.sampling_fraction * energy;
    // Gamma with mean `mean_visible` and relative width `rel`, capped at 5 sigma.
    let shape = 1.0 / (rel * rel);
    let visible_gev = Gamma::new(shape, mean_visible / shape)
        .map_err(|e| Error::domain(e.to_string()))?
        .sample(rng)
        .min(p.max_visible_fraction(energy) * energy);
    let visible = visible_gev * 1000.0;

    let n_deposits = {
        let lambda = p.hits_per_gev * visible_gev;
        let n = if lambda > 0.0 {
            Poisson::new(lambda).map_err(|e| Error::domain(e.to_string()))?.sample(rng) as usize
        } else {
            0
        };
        n.max(1)
    };

    let a = (p.profile_a0 + p.profile_a1 * energy.ln()).max(1e-3);
    let depth_dist = Gamma::new(a, 1.0 / p.profile_b).map_err(|e| Error::domain(e.to_string()))?;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let n_layers = g.n_cells_per_axis as f64;

    let mut weights = Vec::with_capacity(n_deposits);
    let mut cells = Vec::with_capacity(n_deposits);
    for _ in 0..n_deposits {
        let layer = depth_dist.sample(rng);
        let sx = unit.sample(rng);
        let sy = unit.sample(rng);
        let w: f64 = Exp1.sample(rng);
        weights.push(w);
        if layer >= n_layers {
            cells.push(None);
            continue;
        }
        let depth = layer * g.cell_pitch_z;
        let width = (p.transverse_width_front
            + (p.transverse_width_back - p.transverse_width_front) * layer / n_layers)
            * g.cell_pitch_xy;
        let [ax, ay] = axis_at(g, inc, depth);
        cells.push(quantize(g, [ax + width * sx, ay + width * sy, depth]).ok());
    }
    let weight_sum: f64 = weights.iter().sum();

    let mut per_cell: BTreeMap<usize, f64> = BTreeMap::new();
    for (w, cell) in weights.iter().zip(&cells) {
        if let Some(idx) = cell {
            *per_cell.entry(g.linear_index(*idx)).or_insert(0.0) += visible * w / weight_sum;
        }
    }

    let mut kept: Vec<(usize, f64)> =
        per_cell.iter().map(|(&k, &e)| (k, e)).filter(|&(_, e)| e >= g.energy_threshold).collect();
    if kept.is_empty() {
        // Every deposit fell below threshold or leaked; collapse the contained
        // energy into the most energetic cell, or the entry cell if none.
        let contained: f64 = per_cell.values().sum();
        let cell = per_cell
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(&k, _)| k)
            .unwrap_or_else(|| {
                let [x, y] = axis_at(g, inc, 0.0);
                g.linear_index(quantize(g, [x, y, 0.0]).expect("entry point checked above"))
            });
        let e = if contained > 0.0 { contained } else { visible };
        if e >= g.energy_threshold {
            kept.push((cell, e));
        }
    }
    if kept.len() > g.max_points {
        kept.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        kept.truncate(g.max_points);
        kept.sort_by_key(|&(k, _)| k);
    }

    let hits = kept
        .into_iter()
        .map(|(lin, energy)| {
            let idx: CellIndex = g.from_linear(lin)?;
            Ok(CellHit { position: cell_center(g, idx)?, energy, is_smeared: false })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PointCloudEvent { incident: *inc, hits })
}

/// Event `index` of the dataset seeded with `seed`.
pub fn generate_event(
    g: &GeometrySpec,
    p: &ShowerModelParams,
    seed: u64,
    index: u64,
) -> Result<PointCloudEvent> {
    let mut r = rng::stream(seed, index);
    let inc = sample_incident(&mut r);
    generate_shower(g, p, &inc, &mut r)
}

/// Generates `n_events` events, split across `workers` threads. The output is
/// identical for any worker count.
pub fn generate_events(
    g: &GeometrySpec,
    p: &ShowerModelParams,
    n_events: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<PointCloudEvent>> {
    g.validate()?;
    p.validate()?;
    if n_events == 0 {
        return Err(Error::contract("n_events must be at least 1"));
    }
    crate::parallel::try_map_indexed(n_events, workers, |i| generate_event(g, p, seed, i as u64))
}

/// Generates `n_events` events and writes them as a point-cloud dataset.
pub fn build_dataset(
    g: &GeometrySpec,
    p: &ShowerModelParams,
    n_events: usize,
    seed: u64,
    path: &std::path::Path,
) -> Result<()> {
    let events = generate_events(g, p, n_events, seed, 1)?;
    crate::repr::format::write_pointclouds(path, g, &events)
}

/// Smears every hit of every event; event `i` uses stream `i` of `seed`.
pub fn smear_events(
    g: &GeometrySpec,
    events: &[PointCloudEvent],
    seed: u64,
) -> Result<Vec<PointCloudEvent>> {
    events
        .iter()
        .enumerate()
        .map(|(i, ev)| {
            let mut r = rng::stream(seed, i as u64);
            let hits = ev
                .hits
                .iter()
                .map(|h| crate::geometry::smear(g, h, &mut r))
                .collect::<Result<Vec<_>>>()?;
            Ok(PointCloudEvent { incident: ev.incident, hits })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (GeometrySpec, ShowerModelParams) {
        (GeometrySpec::default(), ShowerModelParams::default())
    }

    #[test]
    fn momentum_range_endpoints() {
        assert_eq!(incident_from_uniforms(0.0, 0.0).momentum, 1.0);
        assert_eq!(incident_from_uniforms(1.0, 0.0).momentum, 125.0);
        assert_eq!(incident_from_uniforms(0.5, 0.25).theta, 17.0);
    }

    #[test]
    fn log_momentum_is_uniform() {
        let mut r = rng::seeded(11);
        let n = 100_000;
        let logs: Vec<f64> = (0..n).map(|_| sample_incident(&mut r).momentum.log10()).collect();
        let mean = logs.iter().sum::<f64>() / n as f64;
        let width = MOMENTUM_MAX.log10();
        let sigma = width / 12f64.sqrt();
        assert!((mean - width / 2.0).abs() < 3.0 * sigma / (n as f64).sqrt());
        assert!(logs.iter().all(|&l| (0.0..=width).contains(&l)));
    }

    #[test]
    fn low_momentum_event_conserves_energy() {
        let (g, p) = setup();
        let inc = IncidentParticle::new(1.0, 45.0);
        for seed in 0..50 {
            let ev = generate_shower(&g, &p, &inc, &mut rng::seeded(seed)).unwrap();
            assert!(ev.n_hits() >= 1);
            assert!(ev.total_energy() < inc.kinetic_energy() * 1000.0);
            assert!(
                ev.total_energy()
                    <= p.max_visible_fraction(inc.kinetic_energy()) * inc.kinetic_energy() * 1000.0
            );
            ev.validate(&g).unwrap();
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let (g, p) = setup();
        assert_eq!(generate_event(&g, &p, 7, 3).unwrap(), generate_event(&g, &p, 7, 3).unwrap());
        assert_ne!(generate_event(&g, &p, 7, 3).unwrap(), generate_event(&g, &p, 7, 4).unwrap());
        let serial = generate_events(&g, &p, 37, 5, 1).unwrap();
        let parallel = generate_events(&g, &p, 37, 5, 4).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn zero_events_is_an_error() {
        let (g, p) = setup();
        assert!(generate_events(&g, &p, 0, 1, 1).is_err());
    }

    #[test]
    fn hit_count_grows_with_momentum() {
        let (g, p) = setup();
        let mut means = Vec::new();
        for (k, &mom) in [1.0, 5.0, 25.0, 125.0].iter().enumerate() {
            let mut r = rng::seeded(100 + k as u64);
            let total: usize = (0..1000)
                .map(|_| {
                    let phi = r.random_range(0.0..360.0);
                    generate_shower(&g, &p, &IncidentParticle::new(mom, phi), &mut r)
                        .unwrap()
                        .n_hits()
                })
                .sum();
            means.push(total as f64 / 1000.0);
        }
        assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
        assert!(means[3] <= g.max_points as f64);
    }

    #[test]
    fn shower_centroid_traces_a_ring() {
        let (g, p) = setup();
        let mut r = rng::seeded(9);
        let mut radii = Vec::new();
        for k in 0..36 {
            let phi = 10.0 * k as f64;
            let ev = generate_shower(&g, &p, &IncidentParticle::new(20.0, phi), &mut r).unwrap();
            let e = ev.total_energy();
            let cx = ev.hits.iter().map(|h| h.position[0] * h.energy).sum::<f64>() / e;
            let cy = ev.hits.iter().map(|h| h.position[1] * h.energy).sum::<f64>() / e;
            radii.push((cx.hypot(cy), cy.atan2(cx).to_degrees().rem_euclid(360.0), phi));
        }
        for (radius, angle, phi) in radii {
            assert!((100.0..200.0).contains(&radius), "radius {radius}");
            let d = (angle - phi + 540.0).rem_euclid(360.0) - 180.0;
            assert!(d.abs() < 10.0, "angle {angle} vs phi {phi}");
        }
    }

    #[test]
    fn invalid_incident_is_rejected() {
        let (g, p) = setup();
        let inc = IncidentParticle::new(500.0, 0.0);
        assert!(generate_shower(&g, &p, &inc, &mut rng::seeded(0)).is_err());
        let steep = IncidentParticle { momentum: 10.0, theta: 80.0, phi: 0.0 };
        assert!(matches!(
            generate_shower(&g, &p, &steep, &mut rng::seeded(0)),
            Err(Error::OutOfAcceptance(_))
        ));
    }
}
