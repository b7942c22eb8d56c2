//! Velocity-matching loss and finite-difference gradient verification.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::nets::ScoreNetwork;
use super::schedule::schedule_at;
use crate::error::{Error, Result};

/// One training example in normalized space.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub x: Vec<f64>,
    pub cond: Vec<f64>,
    /// Per-row validity for set data; rows span `x.len() / mask.len()` entries.
    pub mask: Option<Vec<bool>>,
}

impl TrainItem {
    pub fn dense(x: Vec<f64>, cond: Vec<f64>) -> Self {
        Self { x, cond, mask: None }
    }

    fn row_width(&self) -> usize {
        self.mask.as_ref().map_or(1, |m| self.x.len() / m.len())
    }

    fn active(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i / self.row_width()])
    }

    pub fn n_active(&self) -> usize {
        match &self.mask {
            None => self.x.len(),
            Some(m) => m.iter().filter(|&&v| v).count() * self.row_width(),
        }
    }
}

/// Diffusion time and noise for one example.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub t: f64,
    pub eps: Vec<f64>,
}

/// `t` uniform on `(0, 1]`, `eps` standard normal.
pub fn draw_noise<R: Rng + ?Sized>(len: usize, rng: &mut R) -> NoiseDraw {
    let u: f64 = rng.random();
    let t = 1.0 - u;
    let eps = (0..len).map(|_| StandardNormal.sample(rng)).collect();
    NoiseDraw { t, eps }
}

pub fn draw_batch_noise<R: Rng + ?Sized>(batch: &[TrainItem], rng: &mut R) -> Vec<NoiseDraw> {
    batch.iter().map(|it| draw_noise(it.x.len(), rng)).collect()
}

/// Per-example perturbed input and target; masked entries are zero in both.
pub fn perturbed_pair(item: &TrainItem, draw: &NoiseDraw) -> Result<(Vec<f64>, Vec<f64>)> {
    if item.x.len() != draw.eps.len() {
        return Err(Error::contract("noise shape does not match example"));
    }
    let (a, s) = schedule_at(draw.t)?;
    let mut x_t = vec![0.0; item.x.len()];
    let mut v = vec![0.0; item.x.len()];
    for i in 0..item.x.len() {
        if item.active(i) {
            x_t[i] = a * item.x[i] + s * draw.eps[i];
            v[i] = a * draw.eps[i] - s * item.x[i];
        }
    }
    Ok((x_t, v))
}

/// Sum of squared errors and the active-element count for one example,
/// accumulating `d(sse)/d params * grad_scale` when `grads` is given.
pub fn example_sse<N: ScoreNetwork>(
    net: &N,
    params: &[f64],
    item: &TrainItem,
    draw: &NoiseDraw,
    grads: Option<(&mut [f64], f64)>,
) -> Result<(f64, usize)> {
    let (x_t, v) = perturbed_pair(item, draw)?;
    let (v_hat, cache) = net.forward(params, &x_t, draw.t, &item.cond, item.mask.as_deref());
    let mut sse = 0.0;
    let mut d = vec![0.0; v.len()];
    for i in 0..v.len() {
        if !item.active(i) {
            continue;
        }
        if !v_hat[i].is_finite() {
            return Err(Error::Numeric {
                context: "velocity network forward pass".into(),
                detail: format!("output {i} is {} at t = {}", v_hat[i], draw.t),
            });
        }
        let r = v_hat[i] - v[i];
        sse += r * r;
        d[i] = 2.0 * r;
    }
    if let Some((g, scale)) = grads {
        d.iter_mut().for_each(|x| *x *= scale);
        net.backward(params, &cache, &d, g);
    }
    Ok((sse, item.n_active()))
}

/// Mean squared velocity error over all unmasked entries of the batch, with
/// the noise fixed by `draws`. Adds the gradient to `grads` when given.
pub fn loss_with_draws<N: ScoreNetwork>(
    net: &N,
    params: &[f64],
    batch: &[TrainItem],
    draws: &[NoiseDraw],
    mut grads: Option<&mut [f64]>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    if batch.len() != draws.len() {
        return Err(Error::contract("one noise draw per example required"));
    }
    let count: usize = batch.iter().map(TrainItem::n_active).sum();
    if count == 0 {
        return Err(Error::contract("batch has no unmasked entries"));
    }
    let scale = 1.0 / count as f64;
    let mut total = 0.0;
    for (item, draw) in batch.iter().zip(draws) {
        let g = grads.as_deref_mut().map(|g| (g, scale));
        total += example_sse(net, params, item, draw, g)?.0;
    }
    Ok(total * scale)
}

/// Velocity loss with fresh noise drawn from `rng`.
pub fn velocity_loss<N: ScoreNetwork, R: Rng + ?Sized>(
    net: &N,
    params: &[f64],
    batch: &[TrainItem],
    rng: &mut R,
) -> Result<f64> {
    let draws = draw_batch_noise(batch, rng);
    loss_with_draws(net, params, batch, &draws, None)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub n_coords: usize,
}

pub const FD_STEP: f64 = 1e-4;

/// Relative error with an absolute floor so vanishing gradients compare
/// absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` against central differences of `f` at `coords`.
pub fn finite_difference_check(
    f: impl Fn(&[f64]) -> Result<f64>,
    params: &[f64],
    analytic: &[f64],
    coords: &[usize],
    step: f64,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport { max_rel_err: 0.0, worst_coord: 0, n_coords: coords.len() };
    let mut q = params.to_vec();
    for &i in coords {
        q[i] = params[i] + step;
        let up = f(&q)?;
        q[i] = params[i] - step;
        let down = f(&q)?;
        q[i] = params[i];
        let err = relative_error(analytic[i], (up - down) / (2.0 * step));
        if err > report.max_rel_err || report.max_rel_err.is_nan() {
            report.max_rel_err = err;
            report.worst_coord = i;
        }
    }
    Ok(report)
}

/// Random coordinate subset of size `min(n, len)`, sorted.
pub fn sample_coords<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Vec<usize> {
    let mut v = index::sample(rng, len, n.min(len)).into_vec();
    v.sort_unstable();
    v
}

/// Worst relative error between analytic and finite-difference gradients of
/// the velocity loss over `n_coords` random parameters.
pub fn grad_check<N: ScoreNetwork, R: Rng + ?Sized>(
    net: &N,
    params: &[f64],
    batch: &[TrainItem],
    n_coords: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let draws = draw_batch_noise(batch, rng);
    let mut analytic = vec![0.0; params.len()];
    loss_with_draws(net, params, batch, &draws, Some(&mut analytic))?;
    let coords = sample_coords(params.len(), n_coords, rng);
    finite_difference_check(
        |q| loss_with_draws(net, q, batch, &draws, None),
        params,
        &analytic,
        &coords,
        FD_STEP,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::nets::{LinearNet, SetNet};
    use crate::diffusion::schedule::velocity_target;
    use crate::rng;

    struct Oracle<'a> {
        items: &'a [TrainItem],
        draws: &'a [NoiseDraw],
        scale: f64,
        layout: crate::diffusion::nn::ParamLayout,
    }

    impl ScoreNetwork for Oracle<'_> {
        type Cache = ();
        fn layout(&self) -> &crate::diffusion::nn::ParamLayout {
            &self.layout
        }
        fn data_len(&self) -> usize {
            self.items[0].x.len()
        }
        fn n_cond(&self) -> usize {
            0
        }
        fn forward(&self, _: &[f64], _x_t: &[f64], t: f64, _: &[f64], _: Option<&[bool]>) -> (Vec<f64>, ()) {
            let k = self.draws.iter().position(|d| d.t == t).unwrap();
            let v = velocity_target(&self.items[k].x, t, &self.draws[k].eps).unwrap();
            (v.iter().map(|x| x * self.scale).collect(), ())
        }
        fn backward(&self, _: &[f64], _: &(), _: &[f64], _: &mut [f64]) {}
    }

    fn batch(n: usize, dim: usize, seed: u64) -> Vec<TrainItem> {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|_| TrainItem::dense((0..dim).map(|_| r.random_range(-2.0..2.0)).collect(), vec![]))
            .collect()
    }

    #[test]
    fn oracle_and_zero_networks() {
        let items = batch(8, 5, 1);
        let draws = draw_batch_noise(&items, &mut rng::seeded(2));
        let exact = Oracle { items: &items, draws: &draws, scale: 1.0, layout: Default::default() };
        assert_eq!(loss_with_draws(&exact, &[], &items, &draws, None).unwrap(), 0.0);

        let zero = Oracle { scale: 0.0, ..exact };
        let got = loss_with_draws(&zero, &[], &items, &draws, None).unwrap();
        let mut want = 0.0;
        for (it, d) in items.iter().zip(&draws) {
            let (a, s) = schedule_at(d.t).unwrap();
            let ee: f64 = d.eps.iter().map(|e| e * e).sum();
            let xx: f64 = it.x.iter().map(|e| e * e).sum();
            let ex: f64 = d.eps.iter().zip(&it.x).map(|(e, x)| e * x).sum();
            want += a * a * ee + s * s * xx - 2.0 * a * s * ex;
        }
        want /= 40.0;
        assert!((got - want).abs() < 1e-12 * want);
    }

    #[test]
    fn noise_times_are_in_half_open_interval() {
        let mut r = rng::seeded(3);
        for _ in 0..10_000 {
            let d = draw_noise(1, &mut r);
            assert!(d.t > 0.0 && d.t <= 1.0);
        }
    }

    #[test]
    fn linear_network_gradient_is_exact() {
        let net = LinearNet::new(4, 2);
        let p = net.layout().init(&mut rng::seeded(4));
        let mut items = batch(6, 4, 5);
        items.iter_mut().for_each(|it| it.cond = vec![0.3, -0.1]);
        let rep = grad_check(&net, &p, &items, 200, &mut rng::seeded(6)).unwrap();
        assert_eq!(rep.n_coords, net.layout().total().min(200));
        assert!(rep.max_rel_err < 1e-8, "{rep:?}");
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let net = LinearNet::new(4, 2);
        let p = net.layout().init(&mut rng::seeded(7));
        let mut items = batch(6, 4, 8);
        items.iter_mut().for_each(|it| it.cond = vec![0.3, -0.1]);
        let draws = draw_batch_noise(&items, &mut rng::seeded(9));
        let mut g = vec![0.0; p.len()];
        loss_with_draws(&net, &p, &items, &draws, Some(&mut g)).unwrap();
        g[3] *= 1.5;
        let coords: Vec<usize> = (0..p.len()).collect();
        let rep = finite_difference_check(
            |q| loss_with_draws(&net, q, &items, &draws, None),
            &p,
            &g,
            &coords,
            FD_STEP,
        )
        .unwrap();
        assert!(rep.max_rel_err > 1e-2);
        assert_eq!(rep.worst_coord, 3);
    }

    #[test]
    fn set_loss_ignores_masked_rows_and_row_order() {
        let net = SetNet::new(6, 2, 8, 4);
        let p = net.layout().init(&mut rng::seeded(10));
        let mut r = rng::seeded(11);
        let mask = vec![true, true, false, true, false, true];
        let mut x: Vec<f64> = (0..24).map(|_| r.random_range(-1.0..1.0)).collect();
        for row in [2, 4] {
            x[row * 4..row * 4 + 4].fill(0.0);
        }
        let item = TrainItem { x: x.clone(), cond: vec![0.1, 0.2], mask: Some(mask.clone()) };
        let draw = draw_noise(24, &mut r);
        let base = loss_with_draws(&net, &p, &[item.clone()], &[draw.clone()], None).unwrap();
        assert_eq!(item.n_active(), 16);

        let perm = [5, 3, 2, 0, 4, 1];
        let pick = |v: &[f64]| perm.iter().flat_map(|&k| v[k * 4..k * 4 + 4].to_vec()).collect::<Vec<_>>();
        let item2 = TrainItem { x: pick(&x), cond: vec![0.1, 0.2], mask: Some(perm.iter().map(|&k| mask[k]).collect()) };
        let draw2 = NoiseDraw { t: draw.t, eps: pick(&draw.eps) };
        let shuffled = loss_with_draws(&net, &p, &[item2], &[draw2], None).unwrap();
        assert!((base - shuffled).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let net = LinearNet::new(2, 0);
        let p = net.layout().init(&mut rng::seeded(1));
        assert!(loss_with_draws(&net, &p, &[], &[], None).is_err());
    }
}
