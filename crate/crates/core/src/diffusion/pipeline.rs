//! Two-stage generation for both representations.
//!
//! Point clouds: a 1-D model samples the hit count from the incident
//! momentum, then the set model samples that many (x, y, z, E) points.
//! Images: a dense model samples the layer energies, then the grid model
//! samples per-layer voxel fractions conditioned on them.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, ModelKind, Normalization, Standardizer};
use super::loss::TrainItem;
use super::nets::{Net, NetConfig, ScoreNetwork};
use super::sampler::{sample, NetField};
use super::schedule::DiffusionSchedule;
use super::train::{train, TrainHyper, TrainOutcome};
use crate::error::{Error, Result};
use crate::geometry::{cell_center, quantize_clamped, CellHit, GeometrySpec};
use crate::repr::cloud::N_FEATURES;
use crate::repr::{
    denormalize_cloud, layer_energies, normalize_cloud, normalize_image, to_masked, CloudStats,
    LayerEnergyVector, MaskedCloud, VoxelImage,
};
use crate::rng;
use crate::showergen::{normalized_log_momentum, IncidentParticle, PointCloudEvent};

/// Added to layer energies (MeV) before taking logs.
pub const LAYER_OFFSET: f64 = 0.1;
/// Added to voxel fractions before taking logs.
pub const FRACTION_FLOOR: f64 = 1e-6;

pub fn default_net(kind: ModelKind, g: &GeometrySpec) -> NetConfig {
    let side = g.voxels_per_axis();
    match kind {
        ModelKind::Multiplicity => NetConfig::Dense { dim: 1, n_cond: 1, width: 64 },
        ModelKind::Layers => NetConfig::Dense { dim: side, n_cond: 1, width: 64 },
        ModelKind::Cloud => NetConfig::Set { max_points: g.max_points, n_cond: 2, width: 64, attn_dim: 32 },
        ModelKind::Image => NetConfig::Grid { side, channels: [8, 16, 32], attn_dim: 16 },
    }
}

fn hit_count_cond(n: usize, max_points: usize) -> f64 {
    2.0 * n as f64 / max_points as f64 - 1.0
}

fn fraction_decades() -> f64 {
    -FRACTION_FLOOR.log10()
}

/// Voxel fraction to the network's unit range: 0 maps to -1, 1 to about 1.
pub fn fraction_to_unit(f: f64) -> f64 {
    1.0 + 2.0 * (f + FRACTION_FLOOR).log10() / fraction_decades()
}

pub fn unit_to_fraction(u: f64) -> f64 {
    (10f64.powf((u - 1.0) * fraction_decades() / 2.0) - FRACTION_FLOOR).max(0.0)
}

fn layer_log(e: f64) -> f64 {
    (e.max(0.0) + LAYER_OFFSET).log10()
}

fn fit_layers(images: &[VoxelImage]) -> Result<Vec<Standardizer>> {
    let side = images.first().ok_or_else(|| Error::contract("no images"))?.side;
    let layers: Vec<LayerEnergyVector> = images.iter().map(layer_energies).collect();
    (0..side).map(|z| Standardizer::fit(layers.iter().map(|l| layer_log(l.0[z])))).collect()
}

fn normalized_layers(stats: &[Standardizer], layers: &LayerEnergyVector) -> Vec<f64> {
    stats.iter().zip(&layers.0).map(|(s, &e)| s.forward(layer_log(e))).collect()
}

/// Training inputs for one model kind.
pub struct Prepared {
    pub norm: Normalization,
    pub items: Vec<TrainItem>,
}

pub fn prepare_multiplicity(events: &[PointCloudEvent]) -> Result<Prepared> {
    let log_n = Standardizer::fit(events.iter().map(|e| (e.n_hits().max(1) as f64).log10()))?;
    let items = events
        .iter()
        .map(|e| {
            TrainItem::dense(
                vec![log_n.forward((e.n_hits().max(1) as f64).log10())],
                vec![normalized_log_momentum(e.incident.momentum)],
            )
        })
        .collect();
    Ok(Prepared { norm: Normalization::Multiplicity { log_n }, items })
}

/// Set-model inputs. Events must already carry continuous (smeared)
/// coordinates; empty events are skipped.
pub fn prepare_cloud(g: &GeometrySpec, events: &[PointCloudEvent]) -> Result<Prepared> {
    if events.iter().any(|e| e.n_hits() > 0 && !e.is_smeared()) {
        return Err(Error::contract("the cloud model trains on smeared events"));
    }
    let stats = CloudStats::from_events(events)?;
    let mut items = Vec::with_capacity(events.len());
    for e in events.iter().filter(|e| e.n_hits() > 0) {
        let mc = normalize_cloud(g, &stats, &to_masked(g, e)?)?;
        items.push(TrainItem {
            x: mc.flat(),
            cond: vec![normalized_log_momentum(e.incident.momentum), hit_count_cond(e.n_hits(), g.max_points)],
            mask: Some(mc.mask),
        });
    }
    Ok(Prepared { norm: Normalization::Cloud { stats }, items })
}

pub fn prepare_layers(images: &[VoxelImage]) -> Result<Prepared> {
    let layers = fit_layers(images)?;
    let items = images
        .iter()
        .map(|img| {
            TrainItem::dense(
                normalized_layers(&layers, &layer_energies(img)),
                vec![normalized_log_momentum(img.incident.momentum)],
            )
        })
        .collect();
    Ok(Prepared { norm: Normalization::Layers { layers }, items })
}

fn image_cond(layers: &[Standardizer], energies: &LayerEnergyVector, momentum: f64) -> Vec<f64> {
    let mut cond = vec![normalized_log_momentum(momentum)];
    cond.extend(normalized_layers(layers, energies));
    cond
}

pub fn prepare_image(images: &[VoxelImage]) -> Result<Prepared> {
    let layers = fit_layers(images)?;
    let mut items = Vec::with_capacity(images.len());
    for img in images {
        let norm = normalize_image(img)?;
        items.push(TrainItem::dense(
            norm.fractions.iter().map(|&f| fraction_to_unit(f)).collect(),
            image_cond(&layers, &norm.layers, img.incident.momentum),
        ));
    }
    Ok(Prepared { norm: Normalization::Image { layers }, items })
}

/// Trains a model of `kind` on prepared inputs.
#[allow(clippy::too_many_arguments)]
pub fn train_model(
    kind: ModelKind,
    g: &GeometrySpec,
    net_config: NetConfig,
    prepared: Prepared,
    hyper: &TrainHyper,
    seed: u64,
    on_checkpoint: impl FnMut(usize, &Checkpoint) -> Result<()>,
) -> Result<(Checkpoint, TrainOutcome)> {
    let net = net_config.build();
    let init = net.layout().init(&mut rng::stream(seed, 0));
    let mut on_checkpoint = on_checkpoint;
    let make = |params: Vec<f64>, steps_done: usize, log: Vec<super::train::LossRecord>| Checkpoint {
        kind,
        geometry_hash: g.hash(),
        net: net_config.clone(),
        norm: prepared.norm.clone(),
        hyper: hyper.clone(),
        seed,
        steps_done,
        loss_log: log,
        params,
    };
    let outcome = train(&net, init, &prepared.items, hyper, seed, |step, p| {
        on_checkpoint(step, &make(p.to_vec(), step, Vec::new()))
    })?;
    let ck = make(outcome.params.clone(), hyper.steps, outcome.log.clone());
    Ok((ck, outcome))
}

/// Counters accumulated while generating.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub events: usize,
    /// Stage-1 hit counts raised to 1.
    pub clamped_low: usize,
    /// Stage-1 hit counts lowered to `max_points`.
    pub clamped_high: usize,
    /// Negative energies set to zero after denormalization.
    pub clipped_negative: usize,
    /// Generated points outside the lattice, moved to the nearest cell.
    pub clamped_positions: usize,
    /// Events with no energy left after post-processing.
    pub degenerate: usize,
}

impl GenerationLog {
    pub fn merge(&mut self, o: &GenerationLog) {
        self.events += o.events;
        self.clamped_low += o.clamped_low;
        self.clamped_high += o.clamped_high;
        self.clipped_negative += o.clipped_negative;
        self.clamped_positions += o.clamped_positions;
        self.degenerate += o.degenerate;
    }
}

struct Model<'a> {
    net: Net,
    ck: &'a Checkpoint,
}

impl<'a> Model<'a> {
    fn new(ck: &'a Checkpoint, kind: ModelKind, g: &GeometrySpec) -> Result<Self> {
        if ck.kind != kind {
            return Err(Error::contract(format!("expected a {kind} model, got {}", ck.kind)));
        }
        if ck.geometry_hash != g.hash() {
            return Err(Error::contract(format!("{kind} model was trained for a different geometry")));
        }
        ck.validate()?;
        Ok(Self { net: ck.net.build(), ck })
    }

    fn sample<R: Rng + ?Sized>(
        &self,
        sched: &DiffusionSchedule,
        cond: &[f64],
        mask: Option<&[bool]>,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let field = NetField { net: &self.net, params: &self.ck.params };
        sample(&field, sched, self.net.data_len(), cond, mask, rng)
    }
}

/// Rounds half up and clamps to `[1, max]`.
pub fn discretize_hit_count(n: f64, max: usize, log: &mut GenerationLog) -> usize {
    let r = (n + 0.5).floor();
    if !(r >= 1.0) {
        log.clamped_low += 1;
        1
    } else if r > max as f64 {
        log.clamped_high += 1;
        max
    } else {
        r as usize
    }
}

/// Set-model output to an event: quantize positions, sum energies per cell
/// and apply the threshold.
pub fn cloud_to_event(
    g: &GeometrySpec,
    stats: &CloudStats,
    normalized: &MaskedCloud,
    log: &mut GenerationLog,
) -> Result<PointCloudEvent> {
    let raw = denormalize_cloud(g, stats, normalized);
    let mut cells: BTreeMap<usize, f64> = BTreeMap::new();
    for (f, _) in raw.features.iter().zip(&raw.mask).filter(|(_, &m)| m) {
        let pos = [f[0], f[1], f[2]];
        if (0..3).any(|a| {
            let (lo, hi) = g.extent(a);
            !(pos[a] >= lo && pos[a] <= hi)
        }) {
            log.clamped_positions += 1;
        }
        let mut e = f[3];
        if !(e >= 0.0) {
            log.clipped_negative += 1;
            e = 0.0;
        }
        *cells.entry(g.linear_index(quantize_clamped(g, pos))).or_insert(0.0) += e;
    }
    let mut hits = Vec::with_capacity(cells.len());
    for (lin, e) in cells {
        if e >= g.energy_threshold {
            hits.push(CellHit { position: cell_center(g, g.from_linear(lin)?)?, energy: e, is_smeared: false });
        }
    }
    if hits.is_empty() {
        log.degenerate += 1;
    }
    Ok(PointCloudEvent { incident: normalized.incident, hits })
}

pub struct PointCloudGenerator<'a> {
    g: GeometrySpec,
    mult: Model<'a>,
    cloud: Model<'a>,
    log_n: Standardizer,
    stats: CloudStats,
    pub sched: DiffusionSchedule,
}

impl<'a> PointCloudGenerator<'a> {
    pub fn new(g: &GeometrySpec, mult: &'a Checkpoint, cloud: &'a Checkpoint) -> Result<Self> {
        let log_n = match &mult.norm {
            Normalization::Multiplicity { log_n } => *log_n,
            _ => return Err(Error::contract("multiplicity model lacks hit-count statistics")),
        };
        let stats = match &cloud.norm {
            Normalization::Cloud { stats } => *stats,
            _ => return Err(Error::contract("cloud model lacks energy statistics")),
        };
        Ok(Self {
            g: g.clone(),
            mult: Model::new(mult, ModelKind::Multiplicity, g)?,
            cloud: Model::new(cloud, ModelKind::Cloud, g)?,
            log_n,
            stats,
            sched: DiffusionSchedule::default(),
        })
    }

    pub fn event<R: Rng + ?Sized>(
        &self,
        incident: IncidentParticle,
        rng: &mut R,
        log: &mut GenerationLog,
    ) -> Result<PointCloudEvent> {
        incident.validate()?;
        let lp = normalized_log_momentum(incident.momentum);
        let z = self.mult.sample(&self.sched, &[lp], None, rng)?[0];
        let n = discretize_hit_count(10f64.powf(self.log_n.inverse(z)), self.g.max_points, log);
        let mut mask = vec![false; self.g.max_points];
        mask[..n].fill(true);
        let x = self.cloud.sample(&self.sched, &[lp, hit_count_cond(n, self.g.max_points)], Some(&mask), rng)?;
        let features = x.chunks_exact(N_FEATURES).map(|c| [c[0], c[1], c[2], c[3]]).collect();
        let mc = MaskedCloud { features, mask, incident, is_smeared: true };
        log.events += 1;
        cloud_to_event(&self.g, &self.stats, &mc, log)
    }

    /// Event `i` uses stream `i` of `seed`.
    pub fn events(
        &self,
        incidents: &[IncidentParticle],
        seed: u64,
        workers: usize,
    ) -> Result<(Vec<PointCloudEvent>, GenerationLog)> {
        collect_logged(incidents, seed, workers, |inc, r, log| self.event(inc, r, log))
    }
}

pub struct ImageGenerator<'a> {
    layers_model: Model<'a>,
    voxel_model: Model<'a>,
    layer_stats: Vec<Standardizer>,
    cond_stats: Vec<Standardizer>,
    threshold: f64,
    pub sched: DiffusionSchedule,
}

impl<'a> ImageGenerator<'a> {
    pub fn new(g: &GeometrySpec, layers: &'a Checkpoint, image: &'a Checkpoint) -> Result<Self> {
        let layer_stats = match &layers.norm {
            Normalization::Layers { layers } => layers.clone(),
            _ => return Err(Error::contract("layer model lacks layer statistics")),
        };
        let cond_stats = match &image.norm {
            Normalization::Image { layers } => layers.clone(),
            _ => return Err(Error::contract("voxel model lacks layer statistics")),
        };
        if layer_stats.len() != g.voxels_per_axis() || cond_stats.len() != g.voxels_per_axis() {
            return Err(Error::contract("layer statistics do not match the voxel grid"));
        }
        Ok(Self {
            layers_model: Model::new(layers, ModelKind::Layers, g)?,
            voxel_model: Model::new(image, ModelKind::Image, g)?,
            layer_stats,
            cond_stats,
            threshold: g.energy_threshold,
            sched: DiffusionSchedule::default(),
        })
    }

    pub fn event<R: Rng + ?Sized>(
        &self,
        incident: IncidentParticle,
        rng: &mut R,
        log: &mut GenerationLog,
    ) -> Result<VoxelImage> {
        incident.validate()?;
        let side = self.layer_stats.len();
        let lp = normalized_log_momentum(incident.momentum);
        let z = self.layers_model.sample(&self.sched, &[lp], None, rng)?;
        let energies: Vec<f64> = z
            .iter()
            .zip(&self.layer_stats)
            .map(|(&v, s)| {
                let e = 10f64.powf(s.inverse(v)) - LAYER_OFFSET;
                if e < 0.0 {
                    log.clipped_negative += 1;
                }
                e.max(0.0)
            })
            .collect();
        let layers = LayerEnergyVector(energies);
        log.events += 1;
        if layers.total() <= 0.0 {
            log.degenerate += 1;
            return Ok(VoxelImage::zeros(side, incident));
        }
        let cond = image_cond(&self.cond_stats, &layers, incident.momentum);
        let u = self.voxel_model.sample(&self.sched, &cond, None, rng)?;
        Ok(assemble_image(&u, &layers, incident, self.threshold))
    }

    pub fn events(
        &self,
        incidents: &[IncidentParticle],
        seed: u64,
        workers: usize,
    ) -> Result<(Vec<VoxelImage>, GenerationLog)> {
        collect_logged(incidents, seed, workers, |inc, r, log| self.event(inc, r, log))
    }
}

/// Unit-range voxel output to an image whose layers sum to `layers`.
/// Voxels below `threshold` are dropped and the survivors of their layer
/// rescaled. A layer with no surviving voxel puts its energy in its largest
/// voxel.
pub fn assemble_image(u: &[f64], layers: &LayerEnergyVector, incident: IncidentParticle, threshold: f64) -> VoxelImage {
    let side = layers.0.len();
    let plane = side * side;
    let mut energies = vec![0.0; u.len()];
    for z in 0..side {
        let e = layers.0[z];
        if e <= 0.0 {
            continue;
        }
        let span = z * plane..(z + 1) * plane;
        let mut f: Vec<f64> = u[span.clone()].iter().map(|&v| unit_to_fraction(v)).collect();
        let sum: f64 = f.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            for fi in f.iter_mut() {
                if e * *fi / sum < threshold {
                    *fi = 0.0;
                }
            }
        }
        let kept: f64 = f.iter().sum();
        let out = &mut energies[span.clone()];
        if kept > 0.0 && kept.is_finite() {
            for (o, fi) in out.iter_mut().zip(&f) {
                *o = e * fi / kept;
            }
        } else {
            let k = u[span]
                .iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > u[z * plane + best] { i } else { best });
            out[k] = e;
        }
    }
    VoxelImage { side, energies, incident }
}

fn collect_logged<T: Send>(
    incidents: &[IncidentParticle],
    seed: u64,
    workers: usize,
    f: impl Fn(IncidentParticle, &mut rng::Rng, &mut GenerationLog) -> Result<T> + Sync,
) -> Result<(Vec<T>, GenerationLog)> {
    let parts = crate::parallel::try_map_indexed(incidents.len(), workers, |i| {
        let mut log = GenerationLog::default();
        let mut r = rng::stream(seed, i as u64);
        f(incidents[i], &mut r, &mut log).map(|ev| (ev, log))
    })?;
    let mut log = GenerationLog::default();
    let mut out = Vec::with_capacity(parts.len());
    for (ev, l) in parts {
        log.merge(&l);
        out.push(ev);
    }
    Ok((out, log))
}
