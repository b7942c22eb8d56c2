//! Minimal neural-network layers with hand-written backward passes.
//!
//! Parameters of a network live in one flat `f64` buffer described by a
//! [`ParamLayout`]; layers hold [`ParamRange`]s into it. Forward passes return
//! whatever the backward pass needs, and backward passes accumulate into a
//! gradient buffer with the same layout.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRange {
    pub offset: usize,
    pub len: usize,
}

impl ParamRange {
    #[inline]
    pub fn of<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.offset..self.offset + self.len]
    }

    #[inline]
    pub fn of_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.offset..self.offset + self.len]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub range: ParamRange,
    /// Standard deviation of the normal initialization; zero means zeros.
    pub init_std: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn add(&mut self, name: impl Into<String>, len: usize, init_std: f64) -> ParamRange {
        let range = ParamRange { offset: self.total, len };
        self.entries.push(ParamEntry { name: name.into(), range, init_std });
        self.total += len;
        range
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        for e in &self.entries {
            if e.init_std > 0.0 {
                for v in e.range.of_mut(&mut p) {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = e.init_std * z;
                }
            }
        }
        p
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let mut acc = [0.0; 4];
    let (ca, cb) = (a[..n].chunks_exact(4), b[..n].chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Dense layer `y = x W + b` over `rows` rows; `W` is stored input-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    w: ParamRange,
    b: ParamRange,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, n_in: usize, n_out: usize) -> Self {
        Self::with_gain(layout, name, n_in, n_out, 1.0)
    }

    pub fn with_gain(layout: &mut ParamLayout, name: &str, n_in: usize, n_out: usize, gain: f64) -> Self {
        let w = layout.add(format!("{name}.weight"), n_in * n_out, gain / (n_in as f64).sqrt());
        let b = layout.add(format!("{name}.bias"), n_out, 0.0);
        Self { n_in, n_out, w, b }
    }

    pub fn forward(&self, p: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), rows * self.n_in);
        let w = self.w.of(p);
        let b = self.b.of(p);
        let mut y = vec![0.0; rows * self.n_out];
        for (xr, yr) in x.chunks_exact(self.n_in).zip(y.chunks_exact_mut(self.n_out)) {
            yr.copy_from_slice(b);
            for (&xi, wi) in xr.iter().zip(w.chunks_exact(self.n_out)) {
                if xi != 0.0 {
                    axpy(xi, wi, yr);
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], rows: usize, grads: &mut [f64]) -> Vec<f64> {
        self.accumulate(x, dy, grads);
        let w = self.w.of(p);
        let mut dx = vec![0.0; rows * self.n_in];
        for (dyr, dxr) in dy.chunks_exact(self.n_out).zip(dx.chunks_exact_mut(self.n_in)) {
            for (d, wi) in dxr.iter_mut().zip(w.chunks_exact(self.n_out)) {
                *d = dot(dyr, wi);
            }
        }
        dx
    }

    /// Parameter gradients only, for layers fed directly by data.
    pub fn accumulate(&self, x: &[f64], dy: &[f64], grads: &mut [f64]) {
        {
            let gw = self.w.of_mut(grads);
            for (xr, dyr) in x.chunks_exact(self.n_in).zip(dy.chunks_exact(self.n_out)) {
                for (&xi, gwi) in xr.iter().zip(gw.chunks_exact_mut(self.n_out)) {
                    if xi != 0.0 {
                        axpy(xi, dyr, gwi);
                    }
                }
            }
        }
        let gb = self.b.of_mut(grads);
        for dyr in dy.chunks_exact(self.n_out) {
            axpy(1.0, dyr, gb);
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn silu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v * sigmoid(v)).collect()
}

/// Gradient through SiLU given the pre-activation `z`.
pub fn silu_backward(z: &[f64], dy: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(dy)
        .map(|(&v, &d)| {
            let s = sigmoid(v);
            d * s * (1.0 + v * (1.0 - s))
        })
        .collect()
}

pub fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v.max(0.0)).collect()
}

pub fn relu_backward(z: &[f64], dy: &[f64]) -> Vec<f64> {
    z.iter().zip(dy).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect()
}

pub const TIME_EMBED_DIM: usize = 16;

/// Sinusoidal embedding of diffusion time `t` in `[0, 1]`.
pub fn time_embedding(t: f64) -> [f64; TIME_EMBED_DIM] {
    let mut e = [0.0; TIME_EMBED_DIM];
    let half = TIME_EMBED_DIM / 2;
    for k in 0..half {
        let w = std::f64::consts::PI * (1u32 << k) as f64;
        e[k] = (w * t).sin();
        e[half + k] = (w * t).cos();
    }
    e
}

/// Conditioning embedder: `time_embedding(t) + Linear(cond)`, then a SiLU
/// projection to `width`.
#[derive(Clone, Debug, PartialEq)]
pub struct CondEmbed {
    pub n_cond: usize,
    pub width: usize,
    cond: Linear,
    proj: Linear,
}

#[derive(Clone, Debug)]
pub struct CondEmbedCache {
    cond_in: Vec<f64>,
    e: Vec<f64>,
    z: Vec<f64>,
}

impl CondEmbed {
    pub fn new(layout: &mut ParamLayout, name: &str, n_cond: usize, width: usize) -> Self {
        Self {
            n_cond,
            width,
            cond: Linear::new(layout, &format!("{name}.cond"), n_cond.max(1), TIME_EMBED_DIM),
            proj: Linear::new(layout, &format!("{name}.proj"), TIME_EMBED_DIM, width),
        }
    }

    pub fn forward(&self, p: &[f64], t: f64, cond: &[f64]) -> (Vec<f64>, CondEmbedCache) {
        let cond_in = if self.n_cond == 0 { vec![0.0] } else { cond.to_vec() };
        let mut e = self.cond.forward(p, &cond_in, 1);
        for (ei, ti) in e.iter_mut().zip(time_embedding(t)) {
            *ei += ti;
        }
        let z = self.proj.forward(p, &e, 1);
        (silu(&z), CondEmbedCache { cond_in, e, z })
    }

    pub fn backward(&self, p: &[f64], cache: &CondEmbedCache, dg: &[f64], grads: &mut [f64]) {
        let dz = silu_backward(&cache.z, dg);
        let de = self.proj.backward(p, &cache.e, &dz, 1, grads);
        self.cond.accumulate(&cache.cond_in, &de, grads);
    }
}

/// Single-head softmax self-attention over `n` tokens of width `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub dim: usize,
    pub inner: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    n: usize,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
}

impl Attention {
    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize, inner: usize) -> Self {
        Self {
            dim,
            inner,
            q: Linear::new(layout, &format!("{name}.q"), dim, inner),
            k: Linear::new(layout, &format!("{name}.k"), dim, inner),
            v: Linear::new(layout, &format!("{name}.v"), dim, inner),
            o: Linear::with_gain(layout, &format!("{name}.o"), inner, dim, 0.5),
        }
    }

    pub fn forward(&self, p: &[f64], h: &[f64], n: usize) -> (Vec<f64>, AttentionCache) {
        let a = self.inner;
        let q = self.q.forward(p, h, n);
        let k = self.k.forward(p, h, n);
        let v = self.v.forward(p, h, n);
        let scale = 1.0 / (a as f64).sqrt();
        let mut probs = vec![0.0; n * n];
        for i in 0..n {
            let qi = &q[i * a..(i + 1) * a];
            let row = &mut probs[i * n..(i + 1) * n];
            for (j, r) in row.iter_mut().enumerate() {
                *r = scale * dot(qi, &k[j * a..(j + 1) * a]);
            }
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for r in row.iter_mut() {
                *r = (*r - m).exp();
                s += *r;
            }
            for r in row.iter_mut() {
                *r /= s;
            }
        }
        let mut ctx = vec![0.0; n * a];
        for i in 0..n {
            let ci = &mut ctx[i * a..(i + 1) * a];
            for j in 0..n {
                axpy(probs[i * n + j], &v[j * a..(j + 1) * a], ci);
            }
        }
        let out = self.o.forward(p, &ctx, n);
        (out, AttentionCache { n, q, k, v, probs, ctx })
    }

    pub fn backward(&self, p: &[f64], h: &[f64], c: &AttentionCache, dout: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let (n, a) = (c.n, self.inner);
        let dctx = self.o.backward(p, &c.ctx, dout, n, grads);
        let mut dv = vec![0.0; n * a];
        let mut ds = vec![0.0; n * n];
        for i in 0..n {
            let dci = &dctx[i * a..(i + 1) * a];
            let pi = &c.probs[i * n..(i + 1) * n];
            let mut dp = vec![0.0; n];
            for j in 0..n {
                dp[j] = dot(dci, &c.v[j * a..(j + 1) * a]);
                axpy(pi[j], dci, &mut dv[j * a..(j + 1) * a]);
            }
            let inner: f64 = pi.iter().zip(&dp).map(|(x, y)| x * y).sum();
            for j in 0..n {
                ds[i * n + j] = pi[j] * (dp[j] - inner);
            }
        }
        let scale = 1.0 / (a as f64).sqrt();
        let mut dq = vec![0.0; n * a];
        let mut dk = vec![0.0; n * a];
        for i in 0..n {
            for j in 0..n {
                let s = scale * ds[i * n + j];
                if s != 0.0 {
                    axpy(s, &c.k[j * a..(j + 1) * a], &mut dq[i * a..(i + 1) * a]);
                    axpy(s, &c.q[i * a..(i + 1) * a], &mut dk[j * a..(j + 1) * a]);
                }
            }
        }
        let mut dh = self.q.backward(p, h, &dq, n, grads);
        for (d, e) in dh.iter_mut().zip(self.k.backward(p, h, &dk, n, grads)) {
            *d += e;
        }
        for (d, e) in dh.iter_mut().zip(self.v.backward(p, h, &dv, n, grads)) {
            *d += e;
        }
        dh
    }
}

/// 3-D convolution over cubic grids, channel-major `[c][z][y][x]` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub side_in: usize,
    pub side_out: usize,
    w: ParamRange,
    b: ParamRange,
    /// Valid output range `[lo, hi)` per kernel offset.
    ranges: Vec<(usize, usize)>,
}

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        layout: &mut ParamLayout,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        side_in: usize,
        gain: f64,
    ) -> Self {
        let pad = kernel / 2;
        let side_out = (side_in + 2 * pad - kernel) / stride + 1;
        let fan_in = c_in * kernel.pow(3);
        let w = layout.add(format!("{name}.weight"), c_out * fan_in, gain / (fan_in as f64).sqrt());
        let b = layout.add(format!("{name}.bias"), c_out, 0.0);
        let ranges = (0..kernel)
            .map(|k| {
                let valid = |o: usize| {
                    let i = (o * stride + k) as isize - pad as isize;
                    i >= 0 && (i as usize) < side_in
                };
                let lo = (0..side_out).find(|&o| valid(o)).unwrap_or(side_out);
                let hi = (lo..side_out).take_while(|&o| valid(o)).last().map_or(lo, |o| o + 1);
                (lo, hi)
            })
            .collect();
        Self { c_in, c_out, kernel, stride, pad, side_in, side_out, w, b, ranges }
    }

    fn in_len(&self) -> usize {
        self.side_in.pow(3)
    }

    pub fn out_len(&self) -> usize {
        self.side_out.pow(3)
    }

    #[inline]
    fn input_index(&self, o: usize, k: usize) -> usize {
        o * self.stride + k - self.pad
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kernel.pow(3)
    }

    /// Calls `f(patch row, output offset, input offset)` for every valid
    /// (kernel tap, output voxel) pair; input offsets are within channel `ci`.
    #[inline]
    fn for_each_tap<F: FnMut(usize, usize, usize)>(&self, mut f: F) {
        let (k, so, si) = (self.kernel, self.side_out, self.side_in);
        for ci in 0..self.c_in {
            for kz in 0..k {
                let (z0, z1) = self.ranges[kz];
                for ky in 0..k {
                    let (y0, y1) = self.ranges[ky];
                    for kx in 0..k {
                        let (x0, x1) = self.ranges[kx];
                        let row = ((ci * k + kz) * k + ky) * k + kx;
                        for oz in z0..z1 {
                            let iz = self.input_index(oz, kz);
                            for oy in y0..y1 {
                                let iy = self.input_index(oy, ky);
                                let (orow, irow) = ((oz * so + oy) * so, ci * si.pow(3) + (iz * si + iy) * si);
                                for ox in x0..x1 {
                                    f(row, orow + ox, irow + self.input_index(ox, kx));
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Patch matrix: row `r` holds input tap `r` for every output voxel.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let ol = self.out_len();
        let mut cols = vec![0.0; self.patch_len() * ol];
        self.for_each_tap(|r, o, i| cols[r * ol + o] = x[i]);
        cols
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.c_in * self.in_len());
        let (w, b) = (self.w.of(p), self.b.of(p));
        let ol = self.out_len();
        let pl = self.patch_len();
        let cols = self.im2col(x);
        let mut y = vec![0.0; self.c_out * ol];
        for co in 0..self.c_out {
            let yc = &mut y[co * ol..(co + 1) * ol];
            yc.fill(b[co]);
            for (r, &wv) in w[co * pl..(co + 1) * pl].iter().enumerate() {
                axpy(wv, &cols[r * ol..(r + 1) * ol], yc);
            }
        }
        y
    }

    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let w = self.w.of(p);
        let ol = self.out_len();
        let pl = self.patch_len();
        {
            let gb = self.b.of_mut(grads);
            for co in 0..self.c_out {
                gb[co] += dy[co * ol..(co + 1) * ol].iter().sum::<f64>();
            }
        }
        let cols = self.im2col(x);
        let mut dcols = vec![0.0; pl * ol];
        let gw = self.w.of_mut(grads);
        for co in 0..self.c_out {
            let dyc = &dy[co * ol..(co + 1) * ol];
            for r in 0..pl {
                gw[co * pl + r] += dot(dyc, &cols[r * ol..(r + 1) * ol]);
                axpy(w[co * pl + r], dyc, &mut dcols[r * ol..(r + 1) * ol]);
            }
        }
        let mut dx = vec![0.0; self.c_in * self.in_len()];
        self.for_each_tap(|r, o, i| dx[i] += dcols[r * ol + o]);
        dx
    }
}

/// Nearest-neighbour upsampling of `channels` cubic grids, mapping output
/// index `i` to input index `i * side_in / side_out`.
pub fn upsample(x: &[f64], channels: usize, side_in: usize, side_out: usize) -> Vec<f64> {
    let map: Vec<usize> = (0..side_out).map(|i| i * side_in / side_out).collect();
    let (il, ol) = (side_in.pow(3), side_out.pow(3));
    let mut y = vec![0.0; channels * ol];
    for c in 0..channels {
        for z in 0..side_out {
            for yy in 0..side_out {
                for xx in 0..side_out {
                    y[c * ol + (z * side_out + yy) * side_out + xx] =
                        x[c * il + (map[z] * side_in + map[yy]) * side_in + map[xx]];
                }
            }
        }
    }
    y
}

pub fn upsample_backward(dy: &[f64], channels: usize, side_in: usize, side_out: usize) -> Vec<f64> {
    let map: Vec<usize> = (0..side_out).map(|i| i * side_in / side_out).collect();
    let (il, ol) = (side_in.pow(3), side_out.pow(3));
    let mut dx = vec![0.0; channels * il];
    for c in 0..channels {
        for z in 0..side_out {
            for yy in 0..side_out {
                for xx in 0..side_out {
                    dx[c * il + (map[z] * side_in + map[yy]) * side_in + map[xx]] +=
                        dy[c * ol + (z * side_out + yy) * side_out + xx];
                }
            }
        }
    }
    dx
}

/// Adds `bias[c]` to every element of channel `c`.
pub fn add_channel_bias(h: &mut [f64], bias: &[f64]) {
    let len = h.len() / bias.len();
    for (hc, &b) in h.chunks_exact_mut(len).zip(bias) {
        hc.iter_mut().for_each(|v| *v += b);
    }
}

pub fn channel_sums(dh: &[f64], channels: usize) -> Vec<f64> {
    dh.chunks_exact(dh.len() / channels).map(|c| c.iter().sum()).collect()
}

/// `[c][p]` to `[p][c]`.
pub fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            y[c * rows + r] = x[r * cols + c];
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Central finite differences of `f` with respect to all of `p`.
    fn numeric_grad(f: &dyn Fn(&[f64]) -> f64, p: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        (0..p.len())
            .map(|i| {
                let mut a = p.to_vec();
                let mut b = p.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "{i}: {x} vs {y}");
        }
    }

    #[test]
    fn linear_gradients() {
        let mut layout = ParamLayout::default();
        let lin = Linear::new(&mut layout, "l", 3, 2);
        let p = layout.init(&mut rng::seeded(1));
        let x = random(12, 2);
        let up = random(8, 3);
        let loss = |p: &[f64], x: &[f64]| dot(&lin.forward(p, x, 4), &up);
        let mut g = vec![0.0; p.len()];
        let dx = lin.backward(&p, &x, &up, 4, &mut g);
        assert_close(&g, &numeric_grad(&|q| loss(q, &x), &p), 1e-7);
        assert_close(&dx, &numeric_grad(&|xx| loss(&p, xx), &x), 1e-7);
    }

    #[test]
    fn attention_gradients() {
        let mut layout = ParamLayout::default();
        let att = Attention::new(&mut layout, "a", 4, 3);
        let p = layout.init(&mut rng::seeded(4));
        let h = random(20, 5);
        let up = random(20, 6);
        let loss = |p: &[f64], h: &[f64]| dot(&att.forward(p, h, 5).0, &up);
        let (_, cache) = att.forward(&p, &h, 5);
        let mut g = vec![0.0; p.len()];
        let dh = att.backward(&p, &h, &cache, &up, &mut g);
        assert_close(&g, &numeric_grad(&|q| loss(q, &h), &p), 1e-6);
        assert_close(&dh, &numeric_grad(&|hh| loss(&p, hh), &h), 1e-6);
    }

    #[test]
    fn conv_gradients_and_shapes() {
        for (k, stride, side) in [(3, 1, 5), (3, 2, 5), (3, 2, 6), (1, 1, 4)] {
            let mut layout = ParamLayout::default();
            let conv = Conv3d::new(&mut layout, "c", 2, 3, k, stride, side, 1.0);
            let p = layout.init(&mut rng::seeded(7));
            let x = random(2 * side.pow(3), 8);
            let up = random(3 * conv.out_len(), 9);
            let loss = |p: &[f64], x: &[f64]| dot(&conv.forward(p, x), &up);
            let mut g = vec![0.0; p.len()];
            let dx = conv.backward(&p, &x, &up, &mut g);
            assert_close(&g, &numeric_grad(&|q| loss(q, &x), &p), 1e-6);
            assert_close(&dx, &numeric_grad(&|xx| loss(&p, xx), &x), 1e-6);
        }
        let mut layout = ParamLayout::default();
        assert_eq!(Conv3d::new(&mut layout, "d", 1, 1, 3, 2, 11, 1.0).side_out, 6);
        assert_eq!(Conv3d::new(&mut layout, "e", 1, 1, 3, 2, 6, 1.0).side_out, 3);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut layout = ParamLayout::default();
        let conv = Conv3d::new(&mut layout, "c", 2, 2, 3, 2, 5, 1.0);
        let p = layout.init(&mut rng::seeded(10));
        let x = random(2 * 125, 11);
        let y = conv.forward(&p, &x);
        let w = conv.w.of(&p);
        let b = conv.b.of(&p);
        let so = conv.side_out;
        for co in 0..2 {
            for oz in 0..so {
                for oy in 0..so {
                    for ox in 0..so {
                        let mut acc = b[co];
                        for ci in 0..2 {
                            for kz in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let (iz, iy, ix) = (
                                            (oz * 2 + kz) as isize - 1,
                                            (oy * 2 + ky) as isize - 1,
                                            (ox * 2 + kx) as isize - 1,
                                        );
                                        if [iz, iy, ix].iter().all(|&i| (0..5).contains(&i)) {
                                            acc += w[(((co * 2 + ci) * 3 + kz) * 3 + ky) * 3 + kx]
                                                * x[ci * 125 + ((iz * 5 + iy) * 5 + ix) as usize];
                                        }
                                    }
                                }
                            }
                        }
                        let got = y[co * so.pow(3) + (oz * so + oy) * so + ox];
                        assert!((acc - got).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn upsample_adjoint() {
        let x = random(2 * 27, 12);
        let dy = random(2 * 216, 13);
        let lhs = dot(&upsample(&x, 2, 3, 6), &dy);
        let rhs = dot(&x, &upsample_backward(&dy, 2, 3, 6));
        assert!((lhs - rhs).abs() < 1e-10);
        let up = upsample(&random(125, 1), 1, 5, 11);
        assert_eq!(up.len(), 1331);
    }

    #[test]
    fn activations() {
        let z = random(50, 14);
        let dy = random(50, 15);
        let num = numeric_grad(&|zz| dot(&silu(zz), &dy), &z);
        assert_close(&silu_backward(&z, &dy), &num, 1e-7);
        assert_eq!(relu(&[-1.0, 2.0]), vec![0.0, 2.0]);
        assert_eq!(time_embedding(0.0)[8], 1.0);
    }
}
