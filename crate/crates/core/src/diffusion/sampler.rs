//! Deterministic DDIM sampling.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::nets::ScoreNetwork;
use super::schedule::{ddim_update, predict_x0, schedule_at, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::rng;

/// Anything that predicts the velocity at `(x_t, t)`.
pub trait VelocityField: Sync {
    fn velocity(&self, x_t: &[f64], t: f64, cond: &[f64], mask: Option<&[bool]>) -> Vec<f64>;
}

pub struct NetField<'a, N> {
    pub net: &'a N,
    pub params: &'a [f64],
}

impl<N: ScoreNetwork> VelocityField for NetField<'_, N> {
    fn velocity(&self, x_t: &[f64], t: f64, cond: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
        self.net.forward(self.params, x_t, t, cond, mask).0
    }
}

/// Velocity given by a closure, e.g. an analytic oracle.
pub struct FnField<F>(pub F);

impl<F: Fn(&[f64], f64) -> Vec<f64> + Sync> VelocityField for FnField<F> {
    fn velocity(&self, x_t: &[f64], t: f64, _cond: &[f64], _mask: Option<&[bool]>) -> Vec<f64> {
        (self.0)(x_t, t)
    }
}

/// Rows of `x` beyond the mask are forced to zero.
fn apply_mask(x: &mut [f64], mask: Option<&[bool]>) {
    if let Some(m) = mask {
        let w = x.len() / m.len();
        for (row, &keep) in x.chunks_exact_mut(w).zip(m) {
            if !keep {
                row.fill(0.0);
            }
        }
    }
}

/// One DDIM update from `t` down to `s`.
pub fn ddim_step<V: VelocityField + ?Sized>(
    field: &V,
    x_t: &[f64],
    t: f64,
    s: f64,
    cond: &[f64],
    mask: Option<&[bool]>,
) -> Result<Vec<f64>> {
    if s >= t {
        return Err(Error::Ordering { s, t });
    }
    if s < 0.0 {
        return Err(Error::domain(format!("target time {s} below 0")));
    }
    let (_, sigma) = schedule_at(t)?;
    if sigma == 0.0 {
        return Err(Error::SingularTime(t));
    }
    let v = field.velocity(x_t, t, cond, mask);
    let x_hat = predict_x0(x_t, &v, t)?;
    let mut x_s = ddim_update(x_t, &x_hat, t, s)?;
    apply_mask(&mut x_s, mask);
    Ok(x_s)
}

/// Integrates from standard normal noise at `t = 1` to `t = 0` over the
/// schedule grid.
pub fn sample<V: VelocityField + ?Sized, R: Rng + ?Sized>(
    field: &V,
    sched: &DiffusionSchedule,
    dim: usize,
    cond: &[f64],
    mask: Option<&[bool]>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    apply_mask(&mut x, mask);
    let times = sched.times();
    for (k, w) in times.windows(2).enumerate() {
        x = ddim_step(field, &x, w[0], w[1], cond, mask)?;
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: format!("sampling step {} of {} (t = {} -> {})", k + 1, sched.n_steps, w[0], w[1]),
                detail: format!("entry {i} is {}", x[i]),
            });
        }
    }
    Ok(x)
}

/// One sampling request: conditioning and optional row mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRequest {
    pub cond: Vec<f64>,
    pub mask: Option<Vec<bool>>,
}

/// Samples every request; request `i` draws its noise from stream `i` of
/// `seed`, so outputs do not depend on `workers`.
pub fn sample_many<V: VelocityField + ?Sized>(
    field: &V,
    sched: &DiffusionSchedule,
    dim: usize,
    requests: &[SampleRequest],
    seed: u64,
    workers: usize,
) -> Result<Vec<Vec<f64>>> {
    let one = |i: usize| {
        let req = &requests[i];
        sample(field, sched, dim, &req.cond, req.mask.as_deref(), &mut rng::stream(seed, i as u64))
    };
    crate::parallel::try_map_indexed(requests.len(), workers, one)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::{perturb, velocity_target};

    /// Exact velocity for data concentrated at the point `x0`.
    fn point_oracle(x0: Vec<f64>) -> FnField<impl Fn(&[f64], f64) -> Vec<f64> + Sync> {
        FnField(move |x_t: &[f64], t: f64| {
            let (a, s) = schedule_at(t).unwrap();
            // x_t = a x0 + s eps  =>  eps = (x_t - a x0) / s
            x_t.iter().zip(&x0).map(|(xt, x)| a * (xt - a * x) / s - s * x).collect()
        })
    }

    /// Exact velocity for standard normal data: E[v | x_t] = 0 since x_t is
    /// itself standard normal and v is independent of it.
    fn normal_oracle() -> FnField<impl Fn(&[f64], f64) -> Vec<f64> + Sync> {
        FnField(|x_t: &[f64], _t: f64| vec![0.0; x_t.len()])
    }

    #[test]
    fn ordering_and_singularity() {
        let f = normal_oracle();
        assert!(matches!(ddim_step(&f, &[1.0], 0.5, 0.5, &[], None), Err(Error::Ordering { .. })));
        assert!(matches!(ddim_step(&f, &[1.0], 0.3, 0.6, &[], None), Err(Error::Ordering { .. })));
        assert_eq!(ddim_step(&f, &[1.0], 0.5, 0.0, &[], None).unwrap().len(), 1);
    }

    #[test]
    fn oracle_step_to_zero_recovers_data() {
        let mut r = rng::seeded(1);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| r.random_range(-3.0..3.0)).collect();
            let eps: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut r)).collect();
            let t = r.random_range(0.01..1.0);
            let xt = perturb(&x, t, &eps).unwrap();
            let v = velocity_target(&x, t, &eps).unwrap();
            let exact = FnField(move |_: &[f64], _: f64| v.clone());
            let out = ddim_step(&exact, &xt, t, 0.0, &[], None).unwrap();
            for (a, b) in out.iter().zip(&x) {
                assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn point_target_is_reached_from_any_noise() {
        let target = vec![0.5, -1.5];
        let f = point_oracle(target.clone());
        let sched = DiffusionSchedule::new(64).unwrap();
        for seed in 0..5 {
            let out = sample(&f, &sched, 2, &[], None, &mut rng::seeded(seed)).unwrap();
            for (a, b) in out.iter().zip(&target) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normal_target_statistics() {
        let f = normal_oracle();
        let sched = DiffusionSchedule::default();
        let reqs = vec![SampleRequest { cond: vec![], mask: None }; 2000];
        let xs = sample_many(&f, &sched, 1, &reqs, 3, 1).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().map(|x| x[0]).sum::<f64>() / n;
        let var = xs.iter().map(|x| (x[0] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 3.0 / n.sqrt());
        assert!((var.sqrt() - 1.0).abs() < 3.0 / (2.0 * n).sqrt());
    }

    #[test]
    fn sampling_is_deterministic_and_worker_invariant() {
        let f = point_oracle(vec![1.0, 2.0, 3.0, 4.0]);
        let sched = DiffusionSchedule::new(16).unwrap();
        let reqs: Vec<SampleRequest> = (0..7)
            .map(|i| SampleRequest { cond: vec![], mask: Some(vec![i % 2 == 0, true]) })
            .collect();
        let a = sample_many(&f, &sched, 4, &reqs, 9, 1).unwrap();
        let b = sample_many(&f, &sched, 4, &reqs, 9, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(&a[1][..2], &[0.0, 0.0]);
    }

    #[test]
    fn non_finite_velocity_names_the_step() {
        let f = FnField(|x: &[f64], t: f64| if t <= 0.5 { vec![f64::NAN; x.len()] } else { vec![0.0; x.len()] });
        let err = sample(&f, &DiffusionSchedule::new(8).unwrap(), 1, &[], None, &mut rng::seeded(1)).unwrap_err();
        assert!(err.to_string().contains("step 5 of 8"), "{err}");
    }
}
