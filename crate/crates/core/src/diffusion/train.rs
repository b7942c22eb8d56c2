//! Mini-batch training with Adam, cosine learning-rate decay and an
//! exponential moving average of the weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{draw_batch_noise, example_sse, NoiseDraw, TrainItem};
use super::nets::ScoreNetwork;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// EMA decay of the returned weights; 0 returns the raw weights.
    pub ema_decay: f64,
    pub checkpoint_every: usize,
    pub log_every: usize,
    /// Data-parallel shards per batch.
    pub workers: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            ema_decay: 0.999,
            checkpoint_every: 0,
            log_every: 50,
            workers: 1,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && self.grad_clip >= 0.0
            && (0.0..1.0).contains(&self.ema_decay)
            && self.workers > 0
            && self.log_every > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training hyperparameters: {self:?}")))
        }
    }

    /// Cosine-decayed learning rate at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let frac = step as f64 / self.steps.max(1) as f64;
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// EMA weights (raw weights when EMA is disabled).
    pub params: Vec<f64>,
    pub raw_params: Vec<f64>,
    pub log: Vec<LossRecord>,
    pub param_count: usize,
}

/// Adam with bias-corrected moments.
pub(crate) struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub(crate) fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub(crate) fn step(&mut self, lr: f64, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Loss sum, active count and gradient sum over `items`.
fn shard<N: ScoreNetwork>(
    net: &N,
    params: &[f64],
    items: &[&TrainItem],
    draws: &[NoiseDraw],
) -> Result<(f64, usize, Vec<f64>)> {
    let mut g = vec![0.0; params.len()];
    let mut sse = 0.0;
    let mut count = 0;
    for (it, d) in items.iter().zip(draws) {
        let (s, c) = example_sse(net, params, it, d, Some((&mut g, 1.0)))?;
        sse += s;
        count += c;
    }
    Ok((sse, count, g))
}

fn batch_gradient<N: ScoreNetwork>(
    net: &N,
    params: &[f64],
    items: &[&TrainItem],
    draws: &[NoiseDraw],
    workers: usize,
) -> Result<(f64, Vec<f64>)> {
    let (sse, count, mut g) = if workers <= 1 || items.len() < 2 {
        shard(net, params, items, draws)?
    } else {
        let chunk = items.len().div_ceil(workers);
        let parts: Vec<Result<(f64, usize, Vec<f64>)>> = std::thread::scope(|s| {
            let handles: Vec<_> = items
                .chunks(chunk)
                .zip(draws.chunks(chunk))
                .map(|(it, dr)| s.spawn(move || shard(net, params, it, dr)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("training shard panicked")).collect()
        });
        let mut total = (0.0, 0, vec![0.0; params.len()]);
        for part in parts {
            let (s, c, g) = part?;
            total.0 += s;
            total.1 += c;
            total.2.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        total
    };
    if count == 0 {
        return Err(Error::contract("batch has no unmasked entries"));
    }
    let scale = 1.0 / count as f64;
    g.iter_mut().for_each(|x| *x *= scale);
    Ok((sse * scale, g))
}

/// Trains `net` from `init` on `data`. `on_checkpoint` receives the step and
/// current EMA weights every `checkpoint_every` steps.
pub fn train<N: ScoreNetwork>(
    net: &N,
    init: Vec<f64>,
    data: &[TrainItem],
    hyper: &TrainHyper,
    seed: u64,
    mut on_checkpoint: impl FnMut(usize, &[f64]) -> Result<()>,
) -> Result<TrainOutcome> {
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    if init.len() != net.param_count() {
        return Err(Error::contract("initial parameters do not match the network"));
    }
    let mut r = rng::seeded(seed);
    let mut params = init;
    let mut ema = params.clone();
    let mut last_good = params.clone();
    let mut adam = Adam::new(params.len(), hyper.beta1, hyper.beta2, hyper.adam_eps);
    let mut log = Vec::new();
    let mut running = 0.0;
    let mut n_running = 0;
    for step in 0..hyper.steps {
        let items: Vec<&TrainItem> =
            (0..hyper.batch_size).map(|_| &data[r.random_range(0..data.len())]).collect();
        let draws = draw_batch_noise_refs(&items, &mut r);
        let (loss, mut g) = match batch_gradient(net, &params, &items, &draws, hyper.workers) {
            Ok(v) => v,
            Err(Error::Numeric { .. }) => return Err(Error::Diverged { step, loss: f64::NAN, last_good }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { step, loss, last_good });
        }
        if hyper.grad_clip > 0.0 {
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > hyper.grad_clip {
                let s = hyper.grad_clip / norm;
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
        adam.step(hyper.lr_at(step), &mut params, &g);
        let d = hyper.ema_decay.min((1.0 + step as f64) / (10.0 + step as f64));
        ema.iter_mut().zip(&params).for_each(|(e, p)| *e = d * *e + (1.0 - d) * p);
        last_good.copy_from_slice(&ema);

        running += loss;
        n_running += 1;
        if (step + 1) % hyper.log_every == 0 || step + 1 == hyper.steps {
            log.push(LossRecord { step: step + 1, loss: running / n_running as f64 });
            running = 0.0;
            n_running = 0;
        }
        if hyper.checkpoint_every > 0 && (step + 1) % hyper.checkpoint_every == 0 {
            on_checkpoint(step + 1, &ema)?;
        }
    }
    let out = if hyper.ema_decay > 0.0 { ema } else { params.clone() };
    Ok(TrainOutcome { params: out, raw_params: params, log, param_count: net.param_count() })
}

fn draw_batch_noise_refs<R: Rng + ?Sized>(items: &[&TrainItem], rng: &mut R) -> Vec<NoiseDraw> {
    items.iter().map(|it| super::loss::draw_noise(it.x.len(), rng)).collect()
}

/// Mean loss over `data` with noise fixed by `seed`.
pub fn evaluation_loss<N: ScoreNetwork>(net: &N, params: &[f64], data: &[TrainItem], seed: u64) -> Result<f64> {
    let draws = draw_batch_noise(data, &mut rng::seeded(seed));
    super::loss::loss_with_draws(net, params, data, &draws, None)
}
