//! Variance-preserving cosine schedule and the velocity-parameterization
//! identities built on it.
//!
//! With `alpha_t = cos(pi t / 2)` and `sigma_t = sin(pi t / 2)`:
//!
//! - perturbation: `x_t = alpha_t x + sigma_t eps`
//! - velocity target: `v_t = alpha_t eps - sigma_t x`
//! - score: `-x_t - (alpha_t / sigma_t) v`
//! - clean estimate: `x_hat = alpha_t x_t - sigma_t v`
//! - DDIM: `x_s = alpha_s x_hat + sigma_s (x_t - alpha_t x_hat) / sigma_t`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub n_steps: usize,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self { n_steps: DEFAULT_STEPS }
    }
}

impl DiffusionSchedule {
    pub fn new(n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::contract("schedule needs at least one step"));
        }
        Ok(Self { n_steps })
    }

    /// Descending grid `1 = t_0 > t_1 > ... > t_n = 0` with `n_steps + 1` points.
    pub fn times(&self) -> Vec<f64> {
        let n = self.n_steps;
        (0..=n).map(|k| (n - k) as f64 / n as f64).collect()
    }

    pub fn alpha_sigma(&self, t: f64) -> Result<(f64, f64)> {
        schedule_at(t)
    }
}

/// `(alpha_t, sigma_t)` of the cosine schedule. Endpoints are exact.
pub fn schedule_at(t: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::domain(format!("diffusion time {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok((1.0, 0.0));
    }
    if t == 1.0 {
        return Ok((0.0, 1.0));
    }
    let a = 0.5 * std::f64::consts::PI * t;
    Ok((a.cos(), a.sin()))
}

fn check_shapes(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::contract(format!("shape mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

pub fn perturb(x: &[f64], t: f64, eps: &[f64]) -> Result<Vec<f64>> {
    check_shapes(x, eps)?;
    let (a, s) = schedule_at(t)?;
    Ok(x.iter().zip(eps).map(|(xi, ei)| a * xi + s * ei).collect())
}

pub fn velocity_target(x: &[f64], t: f64, eps: &[f64]) -> Result<Vec<f64>> {
    check_shapes(x, eps)?;
    let (a, s) = schedule_at(t)?;
    Ok(x.iter().zip(eps).map(|(xi, ei)| a * ei - s * xi).collect())
}

pub fn score_from_velocity(x_t: &[f64], v_hat: &[f64], t: f64) -> Result<Vec<f64>> {
    check_shapes(x_t, v_hat)?;
    let (a, s) = schedule_at(t)?;
    if s == 0.0 {
        return Err(Error::SingularTime(t));
    }
    Ok(x_t.iter().zip(v_hat).map(|(x, v)| -x - (a / s) * v).collect())
}

pub fn predict_x0(x_t: &[f64], v_hat: &[f64], t: f64) -> Result<Vec<f64>> {
    check_shapes(x_t, v_hat)?;
    let (a, s) = schedule_at(t)?;
    Ok(x_t.iter().zip(v_hat).map(|(x, v)| a * x - s * v).collect())
}

/// DDIM update from `t` to `s` given the clean estimate `x_hat`.
pub fn ddim_update(x_t: &[f64], x_hat: &[f64], t: f64, s: f64) -> Result<Vec<f64>> {
    check_shapes(x_t, x_hat)?;
    let (at, st) = schedule_at(t)?;
    let (as_, ss) = schedule_at(s)?;
    if st == 0.0 {
        return Err(Error::SingularTime(t));
    }
    let r = ss / st;
    Ok(x_t.iter().zip(x_hat).map(|(x, xh)| as_ * xh + r * (x - at * xh)).collect())
}
