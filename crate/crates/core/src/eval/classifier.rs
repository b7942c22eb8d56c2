//! Two-sample classifier test: a network trained to tell reference images
//! from generated ones, scored by test-set AUC.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::auc::auc;
use crate::diffusion::nets::Mlp;
use crate::diffusion::train::Adam;
use crate::error::{Error, Result};
use crate::repr::VoxelImage;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierHyper {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for ClassifierHyper {
    fn default() -> Self {
        Self {
            hidden: 256,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 30,
            patience: 3,
            train_fraction: 0.6,
            val_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierResult {
    pub auc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_loss: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub warnings: Vec<String>,
}

/// Classifier inputs: `ln(1 + E)` per voxel, E in MeV.
pub fn features(img: &VoxelImage) -> Vec<f64> {
    img.energies.iter().map(|&e| e.max(0.0).ln_1p()).collect()
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

struct Split {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

/// Shuffles each class separately and cuts it by the given fractions.
fn stratified_split(labels: &[bool], train: f64, val: f64, r: &mut rng::Rng) -> Split {
    let mut s = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(r);
        let n = idx.len();
        let a = (train * n as f64).round() as usize;
        let b = a + (val * n as f64).round() as usize;
        s.train.extend_from_slice(&idx[..a]);
        s.val.extend_from_slice(&idx[a..b.min(n)]);
        s.test.extend_from_slice(&idx[b.min(n)..]);
    }
    s
}

fn gather(x: &[Vec<f64>], idx: &[usize]) -> Vec<f64> {
    idx.iter().flat_map(|&i| x[i].iter().copied()).collect()
}

fn mean_loss(mlp: &Mlp, p: &[f64], x: &[Vec<f64>], y: &[bool], idx: &[usize]) -> f64 {
    let mut total = 0.0;
    for chunk in idx.chunks(256) {
        let (z, _) = mlp.forward(p, &gather(x, chunk), chunk.len());
        for (zi, &i) in z.iter().zip(chunk) {
            total += softplus(*zi) - if y[i] { *zi } else { 0.0 };
        }
    }
    total / idx.len().max(1) as f64
}

/// Trains on `reference` (label 0) against `generated` (label 1) and returns
/// the test-set AUC.
pub fn train_classifier(
    reference: &[VoxelImage],
    generated: &[VoxelImage],
    hyper: &ClassifierHyper,
    seed: u64,
) -> Result<ClassifierResult> {
    if reference.is_empty() || generated.is_empty() {
        return Err(Error::contract("classifier needs both reference and generated images"));
    }
    let n_in = reference[0].energies.len();
    if reference.iter().chain(generated).any(|i| i.energies.len() != n_in) {
        return Err(Error::contract("all images must share one grid"));
    }
    let mut warnings = Vec::new();
    let (a, b) = (reference.len() as f64, generated.len() as f64);
    if a.max(b) > 10.0 * a.min(b) {
        warnings.push(format!("class imbalance {}:{}", reference.len(), generated.len()));
    }
    let x: Vec<Vec<f64>> = reference.iter().chain(generated).map(features).collect();
    let y: Vec<bool> = (0..x.len()).map(|i| i >= reference.len()).collect();

    let mut r = rng::seeded(seed);
    let split = stratified_split(&y, hyper.train_fraction, hyper.val_fraction, &mut r);
    if split.test.iter().all(|&i| y[i]) || split.test.iter().all(|&i| !y[i]) {
        return Err(Error::contract("too few images for a two-class test split"));
    }

    let mlp = Mlp::new(n_in, hyper.hidden);
    let mut p = mlp.layout().init(&mut r);
    let mut adam = Adam::new(p.len(), 0.9, 0.999, 1e-8);
    let mut best = (mean_loss(&mlp, &p, &x, &y, &split.val), p.clone(), 0);
    let mut order = split.train.clone();
    let mut epochs_run = 0;
    let mut g = vec![0.0; p.len()];
    for epoch in 1..=hyper.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut r);
        for batch in order.chunks(hyper.batch_size) {
            let (z, cache) = mlp.forward(&p, &gather(&x, batch), batch.len());
            let scale = 1.0 / batch.len() as f64;
            let dz: Vec<f64> =
                z.iter().zip(batch).map(|(zi, &i)| (sigmoid(*zi) - if y[i] { 1.0 } else { 0.0 }) * scale).collect();
            g.fill(0.0);
            mlp.backward(&p, &cache, &dz, &mut g);
            adam.step(hyper.learning_rate, &mut p, &g);
        }
        let v = mean_loss(&mlp, &p, &x, &y, &split.val);
        if v < best.0 {
            best = (v, p.clone(), epoch);
        } else if epoch - best.2 >= hyper.patience {
            break;
        }
    }
    let (val_loss, params, best_epoch) = best;
    let mut scores = Vec::with_capacity(split.test.len());
    for chunk in split.test.chunks(256) {
        scores.extend(mlp.forward(&params, &gather(&x, chunk), chunk.len()).0);
    }
    let labels: Vec<bool> = split.test.iter().map(|&i| y[i]).collect();
    Ok(ClassifierResult {
        auc: auc(&scores, &labels)?,
        best_epoch,
        epochs_run,
        val_loss,
        n_train: split.train.len(),
        n_val: split.val.len(),
        n_test: split.test.len(),
        warnings,
    })
}
