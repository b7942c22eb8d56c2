//! Checkpoint files.
//!
//! Layout: 8-byte magic `CALOCKPT`, `u32` version, `u64` header length, a
//! JSON header (model kind, geometry hash, network configuration,
//! normalization statistics, tensor table), then every parameter as a
//! little-endian `f64` in tensor-table order.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::nets::{NetConfig, ScoreNetwork};
use super::train::{LossRecord, TrainHyper};
use crate::error::{Error, Result};
use crate::repr::CloudStats;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CALOCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Multiplicity,
    Cloud,
    Layers,
    Image,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Multiplicity, ModelKind::Cloud, ModelKind::Layers, ModelKind::Image];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Multiplicity => "multiplicity",
            ModelKind::Cloud => "cloud",
            ModelKind::Layers => "layers",
            ModelKind::Image => "image",
        }
    }

    /// Conventional checkpoint file name inside a model directory.
    pub fn file_name(self) -> String {
        format!("{}.ckpt", self.name())
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }
}

/// Mean and standard deviation of one normalized quantity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Err(Error::contract("cannot fit statistics to no values"));
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Ok(Self { mean, std: var.sqrt().max(1e-6) })
    }

    pub fn forward(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Normalization statistics stored with each model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Normalization {
    /// Standardized log10 hit count.
    Multiplicity { log_n: Standardizer },
    Cloud { stats: CloudStats },
    /// Standardized log10 of (layer energy + offset), per layer.
    Layers { layers: Vec<Standardizer> },
    /// The voxel model conditions on the same layer normalization.
    Image { layers: Vec<Standardizer> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    geometry_hash: String,
    net: NetConfig,
    norm: Normalization,
    hyper: TrainHyper,
    seed: u64,
    steps_done: usize,
    loss_log: Vec<LossRecord>,
    param_count: usize,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub geometry_hash: u64,
    pub net: NetConfig,
    pub norm: Normalization,
    pub hyper: TrainHyper,
    pub seed: u64,
    pub steps_done: usize,
    pub loss_log: Vec<LossRecord>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn tensors(&self) -> Vec<TensorEntry> {
        self.net
            .build()
            .layout()
            .entries()
            .iter()
            .map(|e| TensorEntry { name: e.name.clone(), offset: e.range.offset, len: e.range.len })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.net.build().param_count();
        if self.params.len() != expected {
            return Err(Error::format(format!(
                "checkpoint holds {} parameters, network needs {expected}",
                self.params.len()
            )));
        }
        if let Some(i) = self.params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Numeric { context: "checkpoint".into(), detail: format!("parameter {i} is not finite") });
        }
        Ok(())
    }

    pub fn encode<W: Write>(&self, mut out: W) -> Result<()> {
        self.validate()?;
        let header = Header {
            kind: self.kind,
            geometry_hash: format!("{:016x}", self.geometry_hash),
            net: self.net.clone(),
            norm: self.norm.clone(),
            hyper: self.hyper.clone(),
            seed: self.seed,
            steps_done: self.steps_done,
            loss_log: self.loss_log.clone(),
            param_count: self.params.len(),
            tensors: self.tensors(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::format(e.to_string()))?;
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        let mut blob = Vec::with_capacity(self.params.len() * 8);
        for p in &self.params {
            blob.extend_from_slice(&p.to_le_bytes());
        }
        out.write_all(&blob)?;
        Ok(())
    }

    pub fn decode<R: Read>(mut input: R) -> Result<Self> {
        let mut fixed = [0u8; 20];
        input.read_exact(&mut fixed).map_err(|_| Error::Corrupt("truncated checkpoint header".into()))?;
        if &fixed[..8] != CHECKPOINT_MAGIC {
            return Err(Error::format("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(fixed[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(fixed[12..20].try_into().expect("8 bytes")) as usize;
        let mut json = vec![0u8; len];
        input.read_exact(&mut json).map_err(|_| Error::Corrupt("truncated checkpoint header".into()))?;
        let h: Header = serde_json::from_slice(&json).map_err(|e| Error::format(format!("checkpoint header: {e}")))?;
        let geometry_hash = u64::from_str_radix(&h.geometry_hash, 16)
            .map_err(|_| Error::format("bad geometry hash in checkpoint"))?;
        let mut blob = vec![0u8; h.param_count * 8];
        input.read_exact(&mut blob).map_err(|_| Error::Corrupt("truncated checkpoint tensors".into()))?;
        let params = blob.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        let ck = Checkpoint {
            kind: h.kind,
            geometry_hash,
            net: h.net,
            norm: h.norm,
            hyper: h.hyper,
            seed: h.seed,
            steps_done: h.steps_done,
            loss_log: h.loss_log,
            params,
        };
        if ck.tensors() != h.tensors {
            return Err(Error::format("checkpoint tensor table does not match its network"));
        }
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.encode(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::decode(bytes.as_slice())
    }

    /// Loads and checks that the model was trained for `geometry_hash`.
    pub fn load_for(path: &Path, kind: ModelKind, geometry_hash: u64) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.kind != kind {
            return Err(Error::format(format!("{} holds a {} model, expected {kind}", path.display(), ck.kind)));
        }
        if ck.geometry_hash != geometry_hash {
            return Err(Error::format(format!("{} was trained for a different geometry", path.display())));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn sample() -> Checkpoint {
        let net = NetConfig::Dense { dim: 2, n_cond: 1, width: 8 };
        let params = net.build().layout().init(&mut rng::seeded(1));
        Checkpoint {
            kind: ModelKind::Multiplicity,
            geometry_hash: 0xdead_beef_0123_4567,
            net,
            norm: Normalization::Multiplicity { log_n: Standardizer { mean: 1.0 / 3.0, std: 0.1 } },
            hyper: TrainHyper::default(),
            seed: 7,
            steps_done: 12,
            loss_log: vec![LossRecord { step: 12, loss: 0.25 }],
            params,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let mut a = Vec::new();
        ck.encode(&mut a).unwrap();
        let back = Checkpoint::decode(a.as_slice()).unwrap();
        assert_eq!(back, ck);
        let mut b = Vec::new();
        back.encode(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn damage_is_detected() {
        let mut bytes = Vec::new();
        sample().encode(&mut bytes).unwrap();
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 3]), Err(Error::Corrupt(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(bad.as_slice()), Err(Error::Format(_))));
        let mut ck = sample();
        ck.params.pop();
        assert!(ck.encode(Vec::new()).is_err());
    }

    #[test]
    fn kind_names_parse() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("voxel".parse::<ModelKind>().is_err());
    }
}
