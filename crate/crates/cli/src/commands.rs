use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use calodiff::config::{load_geometry, load_section, load_shower_params, render_section};
use calodiff::diffusion::checkpoint::CHECKPOINT_MAGIC;
use calodiff::diffusion::pipeline::{
    default_net, prepare_cloud, prepare_image, prepare_layers, prepare_multiplicity, train_model,
};
use calodiff::diffusion::{Checkpoint, ImageGenerator, ModelKind, NetConfig, PointCloudGenerator, TrainHyper};
use calodiff::eval::{build_report, ClassifierHyper, ReportInputs, SampleSet};
use calodiff::repr::format::{
    encoded_size, read_dataset, read_images, read_pointclouds, write_events, write_images, write_pointclouds,
    Dataset, DatasetReader, FORMAT_VERSION, MAGIC,
};
use calodiff::repr::{voxel_hits, voxelize, DatasetFormat};
use calodiff::showergen::{generate_events, sample_incident, smear_events};
use calodiff::{rng, Error, GeometrySpec, IncidentParticle, Result, ShowerModelParams};
use serde::Deserialize;
use serde_json::json;

use crate::manifest::{manifest_path, sha256_bytes, sha256_file, Artifact, RunManifest};
use crate::{Global, ModelArg, PipelineArg};

/// Stream reserved for drawing incident particles at sampling time.
const INCIDENT_STREAM: u64 = u64::MAX;

pub fn print_config() -> Result<()> {
    println!("{}", render_section("geometry", &GeometrySpec::default())?);
    println!("{}", render_section("shower", &ShowerModelParams::default())?);
    println!("{}", render_section("train", &TrainHyper::default())?);
    print!("{}", render_section("classifier", &ClassifierHyper::default())?);
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct HyperFile {
    train: TrainHyper,
    net: Option<NetConfig>,
}

fn load_hyper(path: Option<&Path>) -> Result<HyperFile> {
    let Some(path) = path else { return Ok(HyperFile::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn config_hash(path: Option<&Path>) -> Result<String> {
    path.map_or(Ok("default".to_string()), sha256_file)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub struct Context {
    g: GeometrySpec,
    geometry_file: Option<PathBuf>,
    workers: usize,
    args: Vec<String>,
    start: Instant,
}

impl Context {
    pub fn new(global: &Global, args: Vec<String>) -> Result<Self> {
        Ok(Self {
            g: load_geometry(global.geometry.as_deref())?,
            geometry_file: global.geometry.clone(),
            workers: global.workers as usize,
            args,
            start: Instant::now(),
        })
    }

    fn manifest(&self, command: &str) -> Result<RunManifest> {
        let mut config_hashes = BTreeMap::new();
        config_hashes.insert("geometry".to_string(), config_hash(self.geometry_file.as_deref())?);
        Ok(RunManifest {
            command: command.to_string(),
            args: self.args.clone(),
            tool_version: calodiff::TOOL_VERSION.to_string(),
            dataset_format_version: FORMAT_VERSION,
            checkpoint_format_version: calodiff::diffusion::checkpoint::CHECKPOINT_VERSION,
            geometry_hash: format!("{:016x}", self.g.hash()),
            config_hashes,
            workers: self.workers,
            ..Default::default()
        })
    }

    fn finish(&self, mut m: RunManifest, out: &Path, outputs: &[PathBuf]) -> Result<()> {
        m.outputs = outputs.iter().map(|p| Artifact::of(p)).collect::<Result<_>>()?;
        m.wall_seconds = self.start.elapsed().as_secs_f64();
        let path = manifest_path(out);
        m.write(&path)?;
        eprintln!("manifest: {}", path.display());
        Ok(())
    }

    pub fn generate(&self, n: usize, seed: u64, shower_params: Option<&Path>, out: &Path) -> Result<()> {
        let p = load_shower_params(shower_params)?;
        let mut m = self.manifest("generate")?;
        m.config_hashes.insert("shower_params".into(), config_hash(shower_params)?);
        m.seeds.insert("seed".into(), seed);
        eprintln!("generating {n} events (seed {seed}, {} workers)", self.workers);
        let t = Instant::now();
        let events = generate_events(&self.g, &p, n, seed, self.workers)?;
        let secs = t.elapsed().as_secs_f64();
        write_pointclouds(out, &self.g, &events)?;
        m.stats.insert("events".into(), json!(n));
        m.stats.insert("mean_hits".into(), json!(mean(events.iter().map(|e| e.n_hits() as f64))));
        m.stats.insert("sample_seconds_per_1k".into(), json!(secs * 1000.0 / n as f64));
        self.finish(m, out, &[out.to_path_buf()])
    }

    pub fn smear(&self, input: &Path, seed: u64, out: &Path) -> Result<()> {
        let events = read_pointclouds(input, &self.g)?;
        let mut m = self.manifest("smear")?;
        m.seeds.insert("seed".into(), seed);
        m.inputs.push(Artifact::of(input)?);
        let smeared = smear_events(&self.g, &events, seed)?;
        write_pointclouds(out, &self.g, &smeared)?;
        eprintln!("smeared {} events", smeared.len());
        self.finish(m, out, &[out.to_path_buf()])
    }

    pub fn train(&self, model: ModelArg, data: &Path, hyper: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
        let hf = load_hyper(hyper)?;
        let mut train = hf.train;
        if self.workers > 1 {
            train.workers = self.workers;
        }
        let kind = match model {
            ModelArg::Multiplicity => ModelKind::Multiplicity,
            ModelArg::Cloud => ModelKind::Cloud,
            ModelArg::Layers => ModelKind::Layers,
            ModelArg::Image => ModelKind::Image,
        };
        let net = hf.net.unwrap_or_else(|| default_net(kind, &self.g));
        let mut m = self.manifest("train")?;
        m.config_hashes.insert("hyper".into(), config_hash(hyper)?);
        m.seeds.insert("seed".into(), seed);
        m.inputs.push(Artifact::of(data)?);
        let prepared = match kind {
            ModelKind::Multiplicity => prepare_multiplicity(&read_pointclouds(data, &self.g)?)?,
            ModelKind::Cloud => prepare_cloud(&self.g, &read_pointclouds(data, &self.g)?)?,
            ModelKind::Layers => prepare_layers(&read_images(data, &self.g)?)?,
            ModelKind::Image => prepare_image(&read_images(data, &self.g)?)?,
        };
        eprintln!("training {kind} model on {} items for {} steps", prepared.items.len(), train.steps);
        let (ck, outcome) = train_model(kind, &self.g, net, prepared, &train, seed, |step, ck| {
            eprintln!("  step {step}: checkpoint");
            ck.save(out)
        })?;
        ck.save(out)?;
        eprintln!("parameters: {}", outcome.param_count);
        if let Some(last) = outcome.log.last() {
            eprintln!("final loss: {:.6} (step {})", last.loss, last.step);
            m.stats.insert("final_loss".into(), json!(last.loss));
        }
        m.stats.insert("param_count".into(), json!(outcome.param_count));
        self.finish(m, out, &[out.to_path_buf()])
    }

    fn load_ck(&self, dir: &Path, kind: ModelKind) -> Result<Checkpoint> {
        let ck = Checkpoint::load_for(&dir.join(kind.file_name()), kind, self.g.hash())?;
        eprintln!("loaded {kind} model: {} parameters", ck.param_count());
        Ok(ck)
    }

    pub fn sample(
        &self,
        model_dir: &Path,
        n: usize,
        seed: u64,
        out: &Path,
        pipeline: Option<PipelineArg>,
        incidents: Option<&Path>,
    ) -> Result<()> {
        if n == 0 {
            return Err(Error::Contract("--n must be at least 1".into()));
        }
        let has = |k: ModelKind| model_dir.join(k.file_name()).exists();
        let cloud = has(ModelKind::Multiplicity) && has(ModelKind::Cloud);
        let image = has(ModelKind::Layers) && has(ModelKind::Image);
        let pipeline = match (pipeline, cloud, image) {
            (Some(p), _, _) => p,
            (None, true, false) => PipelineArg::Cloud,
            (None, false, true) => PipelineArg::Image,
            (None, true, true) => {
                return Err(Error::Contract("model directory holds both pipelines; pass --pipeline".into()))
            }
            (None, false, false) => {
                return Err(Error::NotFound(model_dir.join(ModelKind::Multiplicity.file_name())));
            }
        };
        let mut m = self.manifest("sample")?;
        m.seeds.insert("seed".into(), seed);
        let incs: Vec<IncidentParticle> = match incidents {
            Some(path) => {
                m.inputs.push(Artifact::of(path)?);
                let all: Vec<IncidentParticle> = match read_dataset(path, &self.g)? {
                    Dataset::PointCloud(v) => v.iter().map(|e| e.incident).collect(),
                    Dataset::Image(v) => v.iter().map(|i| i.incident).collect(),
                    Dataset::FullImage(v) => v.iter().map(|i| i.incident).collect(),
                };
                if all.len() < n {
                    return Err(Error::Contract(format!("{} holds only {} events", path.display(), all.len())));
                }
                all[..n].to_vec()
            }
            None => {
                let mut r = rng::stream(seed, INCIDENT_STREAM);
                (0..n).map(|_| sample_incident(&mut r)).collect()
            }
        };
        let kinds = match pipeline {
            PipelineArg::Cloud => [ModelKind::Multiplicity, ModelKind::Cloud],
            PipelineArg::Image => [ModelKind::Layers, ModelKind::Image],
        };
        let a = self.load_ck(model_dir, kinds[0])?;
        let b = self.load_ck(model_dir, kinds[1])?;
        for k in kinds {
            m.inputs.push(Artifact::of(&model_dir.join(k.file_name()))?);
        }
        eprintln!("sampling {n} events with the {pipeline:?} pipeline ({} workers)", self.workers);
        let t = Instant::now();
        let log = match pipeline {
            PipelineArg::Cloud => {
                let gen = PointCloudGenerator::new(&self.g, &a, &b)?;
                let (events, log) = gen.events(&incs, seed, self.workers)?;
                write_pointclouds(out, &self.g, &events)?;
                log
            }
            PipelineArg::Image => {
                let gen = ImageGenerator::new(&self.g, &a, &b)?;
                let (images, log) = gen.events(&incs, seed, self.workers)?;
                write_images(out, &self.g, &images)?;
                log
            }
        };
        let secs = t.elapsed().as_secs_f64();
        eprintln!("{secs:.1} s ({:.1} s per 1000 events)", secs * 1000.0 / n as f64);
        m.stats.insert("param_count".into(), json!(a.param_count() + b.param_count()));
        m.stats.insert("sample_seconds_per_1k".into(), json!(secs * 1000.0 / n as f64));
        m.stats.insert("generation".into(), serde_json::to_value(&log).map_err(|e| Error::Format(e.to_string()))?);
        self.finish(m, out, &[out.to_path_buf()])
    }

    pub fn voxelize(&self, input: &Path, out: &Path, full: bool) -> Result<()> {
        let events = read_pointclouds(input, &self.g)?;
        let mut m = self.manifest("voxelize")?;
        m.inputs.push(Artifact::of(input)?);
        let format = if full { DatasetFormat::ImageFull } else { DatasetFormat::Image11 };
        write_events(out, &self.g, &events, format)?;
        eprintln!("wrote {} {} images", events.len(), format.name());
        self.finish(m, out, &[out.to_path_buf()])
    }

    fn load_set(&self, path: &Path, name: String) -> Result<SampleSet> {
        let (images, events) = match read_dataset(path, &self.g)? {
            Dataset::PointCloud(ev) => (ev.iter().map(|e| voxelize(&self.g, e)).collect(), Some(ev)),
            Dataset::Image(v) => (v, None),
            Dataset::FullImage(_) => {
                return Err(Error::Format(format!("{}: full-granularity images cannot be evaluated", path.display())))
            }
        };
        let stats = RunManifest::beside(path).map(|m| m.stats).unwrap_or_default();
        Ok(SampleSet {
            name,
            images,
            events,
            param_count: stats.get("param_count").and_then(|v| v.as_u64()).map(|v| v as usize),
            disk_bytes: Some(std::fs::metadata(path)?.len()),
            sample_seconds_per_1k: stats.get("sample_seconds_per_1k").and_then(|v| v.as_f64()),
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn evaluate(
        &self,
        reference: &Path,
        gen: &Path,
        gen2: Option<&Path>,
        seed: u64,
        out: &Path,
        classifier: Option<&Path>,
        no_classifier: bool,
    ) -> Result<()> {
        let mut m = self.manifest("evaluate")?;
        m.seeds.insert("seed".into(), seed);
        m.config_hashes.insert("classifier".into(), config_hash(classifier)?);
        let stem = |p: &Path| p.file_stem().map_or("sample".to_string(), |s| s.to_string_lossy().into_owned());
        let mut names = vec![stem(reference)];
        let mut paths = vec![gen];
        paths.extend(gen2);
        let mut generated = Vec::new();
        for p in &paths {
            let mut name = stem(p);
            while names.contains(&name) {
                name.push('\'');
            }
            names.push(name.clone());
            generated.push(self.load_set(p, name)?);
        }
        for p in std::iter::once(reference).chain(paths.iter().copied()) {
            m.inputs.push(Artifact::of(p)?);
        }
        let reference = self.load_set(reference, names[0].clone())?;
        let mut reference_sizes = Vec::new();
        if let Some(ev) = &reference.events {
            eprintln!("measuring storage cost of the reference sample");
            for f in [DatasetFormat::PointCloud, DatasetFormat::Image11, DatasetFormat::ImageFull] {
                reference_sizes.push((f.name().to_string(), encoded_size(&self.g, ev, f)?));
            }
        }
        let classifier = match (no_classifier, classifier) {
            (true, _) => None,
            (false, Some(p)) => Some(load_section::<ClassifierHyper>(p, "classifier")?),
            (false, None) => Some(ClassifierHyper::default()),
        };
        eprintln!("evaluating {} generated sample(s) against {} reference events", generated.len(), reference.images.len());
        let report = build_report(&ReportInputs {
            geometry: self.g.clone(),
            reference,
            generated,
            reference_sizes,
            classifier,
            seed,
        })?;
        let written = report.write_to(out)?;
        for gap in &report.gaps {
            eprintln!("gap: {gap}");
        }
        self.finish(m, out, &written)
    }

    pub fn inspect(&self, input: &Path) -> Result<()> {
        let mut f = std::fs::File::open(input).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(input.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let mut magic = [0u8; 8];
        let n = f.read(&mut magic)?;
        if n == 8 && &magic == MAGIC {
            self.inspect_dataset(input)
        } else if n == 8 && &magic == CHECKPOINT_MAGIC {
            inspect_checkpoint(input)
        } else if magic.first() == Some(&b'{') {
            let m = RunManifest::read(input)?;
            println!("run manifest: {} (tool {})", m.command, m.tool_version);
            println!("{}", serde_json::to_string_pretty(&m).map_err(|e| Error::Format(e.to_string()))?);
            Ok(())
        } else {
            Err(Error::Format(format!("{}: unrecognized file type", input.display())))
        }
    }

    fn inspect_dataset(&self, input: &Path) -> Result<()> {
        let reader = DatasetReader::open(input, None)?;
        let h = &reader.header;
        println!("dataset: {}", input.display());
        println!("  format          {}", h.format.name());
        println!("  version         {}", h.version);
        println!("  smeared         {}", h.smeared);
        println!("  cells per axis  {}", h.n_cells_per_axis);
        println!("  voxel group     {}", h.voxel_group);
        println!("  geometry hash   {:016x}", h.geometry_hash);
        println!("  events          {}", h.count);
        println!("  chunks          {} x {} events", reader.n_chunks(), h.chunk_events);
        println!("  file bytes      {}", std::fs::metadata(input)?.len());
        println!("  sha256          {}", sha256_file(input)?);
        if h.geometry_hash != self.g.hash() {
            println!("  (geometry differs from the active configuration; contents not decoded)");
            return Ok(());
        }
        match h.format {
            DatasetFormat::ImageFull => {}
            _ => match reader.read_all(&self.g)? {
                Dataset::PointCloud(ev) => {
                    let hits: Vec<usize> = ev.iter().map(|e| e.n_hits()).collect();
                    println!("  hits per event  mean {:.2}, min {}, max {}", mean(hits.iter().map(|&n| n as f64)), hits.iter().min().unwrap_or(&0), hits.iter().max().unwrap_or(&0));
                    println!("  energy [MeV]    mean {:.4}", mean(ev.iter().map(|e| e.total_energy())));
                    println!("  momentum [GeV]  mean {:.3}", mean(ev.iter().map(|e| e.incident.momentum)));
                }
                Dataset::Image(v) => {
                    println!("  voxel hits      mean {:.2}", mean(v.iter().map(|i| voxel_hits(i, self.g.energy_threshold) as f64)));
                    println!("  energy [MeV]    mean {:.4}", mean(v.iter().map(|i| i.total_energy())));
                    println!("  momentum [GeV]  mean {:.3}", mean(v.iter().map(|i| i.incident.momentum)));
                }
                Dataset::FullImage(_) => {}
            },
        }
        Ok(())
    }
}

fn inspect_checkpoint(input: &Path) -> Result<()> {
    let ck = Checkpoint::load(input)?;
    println!("checkpoint: {}", input.display());
    println!("  model           {}", ck.kind);
    println!("  network         {:?}", ck.net);
    println!("  parameters      {}", ck.param_count());
    println!("  geometry hash   {:016x}", ck.geometry_hash);
    println!("  seed            {}", ck.seed);
    println!("  steps           {}", ck.steps_done);
    if let Some(last) = ck.loss_log.last() {
        println!("  final loss      {:.6}", last.loss);
    }
    println!("  params sha256   {}", sha256_bytes(&ck.params.iter().flat_map(|p| p.to_le_bytes()).collect::<Vec<u8>>()));
    Ok(())
}
