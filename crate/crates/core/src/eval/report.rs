//! Comparison report: observable histograms with EMD scores and deviation
//! bands, classifier AUC, and the size/time/parameter table.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::{train_classifier, ClassifierHyper};
use super::emd::{emd_1d, profile_emd};
use super::hist::{deviation_band, BandFlag, Histogram};
use super::observables::{mean_profile, pooled_log10_energies, scalar_sample, ObservableKind, Shower};
use crate::error::{Error, Result};
use crate::geometry::GeometrySpec;
use crate::repr::VoxelImage;
use crate::showergen::PointCloudEvent;

/// Total-energy histogram range (GeV).
pub const TOTAL_ENERGY_RANGE: (f64, f64) = (0.005, 5.0);
pub const TOTAL_ENERGY_BINS: usize = 50;
/// Hit log-energy histogram range (log10 MeV).
pub const LOG_ENERGY_RANGE: (f64, f64) = (-1.0, 3.0);
pub const LOG_ENERGY_BINS: usize = 40;

/// One sample entering the comparison.
#[derive(Clone, Debug, Default)]
pub struct SampleSet {
    pub name: String,
    /// Voxel images on the common grid.
    pub images: Vec<VoxelImage>,
    /// Full-granularity events, when the representation has them.
    pub events: Option<Vec<PointCloudEvent>>,
    pub param_count: Option<usize>,
    pub disk_bytes: Option<u64>,
    pub sample_seconds_per_1k: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ReportInputs {
    pub geometry: GeometrySpec,
    pub reference: SampleSet,
    pub generated: Vec<SampleSet>,
    /// Storage cost of the reference sample per format.
    pub reference_sizes: Vec<(String, u64)>,
    pub classifier: Option<ClassifierHyper>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub param_count: Option<usize>,
    pub disk_bytes: Option<u64>,
    pub sample_seconds_per_1k: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableEntry {
    pub model: String,
    /// Normalized histogram, or the mean profile for profile observables.
    pub values: Vec<f64>,
    pub ratios: Vec<Option<f64>>,
    pub flags: Vec<BandFlag>,
    pub inside_fraction: f64,
    pub emd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableReport {
    pub observable: String,
    pub unit: String,
    pub edges: Vec<f64>,
    pub reference: Vec<f64>,
    pub entries: Vec<ObservableEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tool_version: String,
    pub seed: u64,
    pub n_reference: usize,
    pub classifier: Option<ClassifierHyper>,
    pub table: Vec<TableRow>,
    pub reference_sizes: Vec<(String, u64)>,
    pub observables: Vec<ObservableReport>,
    pub gaps: Vec<String>,
}

fn unit_of(kind: ObservableKind) -> &'static str {
    match kind {
        ObservableKind::TotalEnergy => "GeV",
        ObservableKind::NVoxelHits | ObservableKind::NCellHits => "count",
        ObservableKind::CellLog10Energy => "log10 MeV",
        _ => "MeV per bin (profile EMD in bin units)",
    }
}

fn shower_views<'a>(set: &'a SampleSet, cells: bool) -> Option<Vec<Shower<'a>>> {
    if cells {
        set.events.as_ref().map(|e| e.iter().map(Shower::Cloud).collect())
    } else {
        Some(set.images.iter().map(Shower::Image).collect())
    }
}

fn binning(g: &GeometrySpec, kind: ObservableKind, ref_values: &[f64]) -> Result<Histogram> {
    match kind {
        ObservableKind::TotalEnergy => Histogram::log(TOTAL_ENERGY_RANGE.0, TOTAL_ENERGY_RANGE.1, TOTAL_ENERGY_BINS),
        ObservableKind::NVoxelHits | ObservableKind::NCellHits => {
            let max = ref_values.iter().fold(0.0f64, |m, &v| m.max(v)) as usize;
            Histogram::integer(max.max(1) + max / 2)
        }
        ObservableKind::CellLog10Energy => Histogram::linear(LOG_ENERGY_RANGE.0, LOG_ENERGY_RANGE.1, LOG_ENERGY_BINS),
        k if k.needs_cells() => Histogram::integer(g.n_cells_per_axis - 1),
        _ => Histogram::integer(g.voxels_per_axis() - 1),
    }
}

fn compare(
    g: &GeometrySpec,
    kind: ObservableKind,
    reference: &[Shower<'_>],
    generated: &[(&str, Vec<Shower<'_>>)],
) -> Result<ObservableReport> {
    let (edges, ref_values, entries) = if kind.profile_axis().is_some() {
        let rp = mean_profile(g, kind, reference)?;
        let hist = binning(g, kind, &[])?;
        let centers = hist.centers();
        let r_hist = Histogram::from_counts(hist.edges.clone(), rp.clone())?;
        let mut entries = Vec::new();
        for (name, showers) in generated {
            let gp = mean_profile(g, kind, showers)?;
            let band = deviation_band(&Histogram::from_counts(hist.edges.clone(), gp.clone())?, &r_hist)?;
            entries.push(ObservableEntry {
                model: name.to_string(),
                emd: profile_emd(&centers, &gp, &rp)?,
                inside_fraction: band.inside_fraction(),
                values: gp,
                ratios: band.ratios,
                flags: band.flags,
            });
        }
        (hist.edges, rp, entries)
    } else {
        let values = |s: &[Shower<'_>]| -> Result<Vec<f64>> {
            if kind == ObservableKind::CellLog10Energy {
                pooled_log10_energies(s)
            } else {
                scalar_sample(g, kind, s)
            }
        };
        let rv = values(reference)?;
        let mut r_hist = binning(g, kind, &rv)?;
        r_hist.fill_all(&rv);
        let mut entries = Vec::new();
        for (name, showers) in generated {
            let gv = values(showers)?;
            let mut h = Histogram::new(r_hist.edges.clone())?;
            h.fill_all(&gv);
            let band = deviation_band(&h, &r_hist)?;
            entries.push(ObservableEntry {
                model: name.to_string(),
                emd: emd_1d(&gv, &rv)?,
                inside_fraction: band.inside_fraction(),
                values: h.density().counts,
                ratios: band.ratios,
                flags: band.flags,
            });
        }
        (r_hist.edges.clone(), r_hist.density().counts, entries)
    };
    Ok(ObservableReport {
        observable: kind.name().to_string(),
        unit: unit_of(kind).to_string(),
        edges,
        reference: ref_values,
        entries,
    })
}

pub fn build_report(inputs: &ReportInputs) -> Result<EvalReport> {
    let g = &inputs.geometry;
    if inputs.reference.images.is_empty() {
        return Err(Error::contract("reference sample is empty"));
    }
    let mut gaps = Vec::new();
    if inputs.generated.is_empty() {
        gaps.push("no generated samples supplied; only reference statistics are reported".to_string());
    }
    let mut table = vec![TableRow {
        model: inputs.reference.name.clone(),
        param_count: inputs.reference.param_count,
        disk_bytes: inputs.reference.disk_bytes,
        sample_seconds_per_1k: inputs.reference.sample_seconds_per_1k,
        auc: None,
    }];
    for (k, set) in inputs.generated.iter().enumerate() {
        let auc = match (&inputs.classifier, set.images.is_empty()) {
            (Some(h), false) => Some(train_classifier(&inputs.reference.images, &set.images, h, inputs.seed + k as u64)?.auc),
            (Some(_), true) => {
                gaps.push(format!("{}: no images, classifier skipped", set.name));
                None
            }
            (None, _) => None,
        };
        table.push(TableRow {
            model: set.name.clone(),
            param_count: set.param_count,
            disk_bytes: set.disk_bytes,
            sample_seconds_per_1k: set.sample_seconds_per_1k,
            auc,
        });
    }
    if inputs.classifier.is_none() {
        gaps.push("classifier disabled; AUC not measured".to_string());
    }

    let mut observables = Vec::new();
    for kind in ObservableKind::ALL {
        let cells = kind.needs_cells();
        let Some(reference) = shower_views(&inputs.reference, cells) else {
            gaps.push(format!("{}: reference has no point-cloud events", kind.name()));
            continue;
        };
        let mut generated = Vec::new();
        for set in &inputs.generated {
            match shower_views(set, cells) {
                Some(v) if !v.is_empty() => generated.push((set.name.as_str(), v)),
                _ => gaps.push(format!("{}: {} has no {} data", kind.name(), set.name, if cells { "cell" } else { "image" })),
            }
        }
        observables.push(compare(g, kind, &reference, &generated)?);
    }
    Ok(EvalReport {
        tool_version: crate::TOOL_VERSION.to_string(),
        seed: inputs.seed,
        n_reference: inputs.reference.images.len(),
        classifier: inputs.classifier.clone(),
        table,
        reference_sizes: inputs.reference_sizes.clone(),
        observables,
        gaps,
    })
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

fn human_bytes(b: u64) -> String {
    const UNITS: [&str; 4] = ["B", "kB", "MB", "GB"];
    let mut v = b as f64;
    let mut u = 0;
    while v >= 1000.0 && u < UNITS.len() - 1 {
        v /= 1000.0;
        u += 1;
    }
    if u == 0 {
        format!("{b} B")
    } else {
        format!("{v:.2} {}", UNITS[u])
    }
}

impl EvalReport {
    /// Human-readable table and EMD list.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "calodiff evaluation report (tool {}, seed {})", self.tool_version, self.seed);
        let _ = writeln!(s, "reference events: {}", self.n_reference);
        match &self.classifier {
            Some(c) => {
                let _ = writeln!(
                    s,
                    "classifier: 2x{} ReLU, Adam lr {}, batch {}, <= {} epochs, patience {}, split {}/{}/{}, features ln(1+E/MeV)",
                    c.hidden,
                    c.learning_rate,
                    c.batch_size,
                    c.max_epochs,
                    c.patience,
                    c.train_fraction,
                    c.val_fraction,
                    ((1.0 - c.train_fraction - c.val_fraction) * 100.0).round() / 100.0
                );
            }
            None => {
                let _ = writeln!(s, "classifier: disabled");
            }
        }
        s.push('\n');
        let _ = writeln!(s, "{:<24} {:>12} {:>12} {:>18} {:>8}", "Model", "# parameters", "Disk size", "Sample time [s/1k]", "AUC");
        for r in &self.table {
            let _ = writeln!(
                s,
                "{:<24} {:>12} {:>12} {:>18} {:>8}",
                r.model,
                opt(r.param_count),
                r.disk_bytes.map_or("-".to_string(), human_bytes),
                r.sample_seconds_per_1k.map_or("-".to_string(), |t| format!("{t:.2}")),
                r.auc.map_or("-".to_string(), |a| format!("{a:.3}"))
            );
        }
        if !self.reference_sizes.is_empty() {
            s.push_str("\nReference storage by format:\n");
            for (name, b) in &self.reference_sizes {
                let _ = writeln!(s, "  {:<14} {:>12} ({b} bytes)", name, human_bytes(*b));
            }
        }
        s.push_str("\nEMD to reference (inside-band fraction of populated bins):\n");
        for o in &self.observables {
            for e in &o.entries {
                let _ = writeln!(
                    s,
                    "  {:<18} {:<24} {:>12.6}  ({:.2})  [{}]",
                    o.observable, e.model, e.emd, e.inside_fraction, o.unit
                );
            }
        }
        if !self.gaps.is_empty() {
            s.push_str("\nGaps:\n");
            for gap in &self.gaps {
                let _ = writeln!(s, "  - {gap}");
            }
        }
        s
    }

    /// Machine-readable form.
    pub fn render_data(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::format(e.to_string()))
    }

    /// One comma-separated plot series per observable, keyed by file stem.
    pub fn plot_series(&self) -> Vec<(String, String)> {
        self.observables
            .iter()
            .map(|o| {
                let mut s = String::from("bin_lo,bin_hi,reference");
                for e in &o.entries {
                    let _ = write!(s, ",{0},{0}_ratio,{0}_flag", e.model);
                }
                s.push('\n');
                for (k, w) in o.edges.windows(2).enumerate() {
                    let _ = write!(s, "{},{},{}", w[0], w[1], o.reference[k]);
                    for e in &o.entries {
                        let flag = match e.flags[k] {
                            BandFlag::Inside => "inside",
                            BandFlag::Outside => "outside",
                            BandFlag::Undefined => "undefined",
                        };
                        let _ = write!(s, ",{},{},{flag}", e.values[k], e.ratios[k].map_or(String::new(), |r| r.to_string()));
                    }
                    s.push('\n');
                }
                (o.observable.clone(), s)
            })
            .collect()
    }

    /// Writes `report.txt`, `report.dat` and `plots/<observable>.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir.join("plots"))?;
        let mut written = Vec::new();
        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.render_text())?;
        written.push(txt);
        let dat = dir.join("report.dat");
        std::fs::write(&dat, self.render_data()?)?;
        written.push(dat);
        for (name, body) in self.plot_series() {
            let p = dir.join("plots").join(format!("{name}.csv"));
            std::fs::write(&p, body)?;
            written.push(p);
        }
        Ok(written)
    }
}
