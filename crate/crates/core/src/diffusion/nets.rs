//! Velocity networks.
//!
//! - [`DenseNet`]: residual MLP for low-dimensional targets (hit multiplicity,
//!   layer energies).
//! - [`SetNet`]: permutation-equivariant point network. A per-point feature map
//!   is combined with a masked-mean pooled context and one attention block.
//!   Masked rows are never read.
//! - [`GridNet`]: two-level 3-D convolutional encoder/decoder over voxel
//!   images with attention at the coarsest level.
//! - [`LinearNet`]: affine map, used to validate gradient checking.
//!
//! All networks take the noisy input `x_t`, the diffusion time `t` and a
//! conditioning vector, and return the predicted velocity.

use serde::{Deserialize, Serialize};

use super::nn::{
    add_channel_bias, channel_sums, relu, silu, silu_backward, transpose, upsample, upsample_backward,
    Attention, AttentionCache, CondEmbed, CondEmbedCache, Conv3d, Linear, ParamLayout,
};

/// Hidden layers get unit gain; output layers start small.
const OUT_GAIN: f64 = 0.1;

pub trait ScoreNetwork: Send + Sync {
    type Cache: Send;

    fn layout(&self) -> &ParamLayout;

    /// Length of the flattened data vector.
    fn data_len(&self) -> usize;

    fn n_cond(&self) -> usize;

    /// Returns the velocity for every element of `x_t`; masked rows are zero.
    fn forward(&self, p: &[f64], x_t: &[f64], t: f64, cond: &[f64], mask: Option<&[bool]>)
        -> (Vec<f64>, Self::Cache);

    /// Accumulates `d loss / d params` into `grads`.
    fn backward(&self, p: &[f64], cache: &Self::Cache, d_out: &[f64], grads: &mut [f64]);

    fn param_count(&self) -> usize {
        self.layout().total()
    }
}

fn add_rows(h: &mut [f64], v: &[f64]) {
    for row in h.chunks_exact_mut(v.len()) {
        for (a, b) in row.iter_mut().zip(v) {
            *a += b;
        }
    }
}

fn sum_rows(h: &[f64], width: usize) -> Vec<f64> {
    let mut s = vec![0.0; width];
    add_rows_into(&mut s, h);
    s
}

fn add_rows_into(acc: &mut [f64], h: &[f64]) {
    for row in h.chunks_exact(acc.len()) {
        for (a, b) in acc.iter_mut().zip(row) {
            *a += b;
        }
    }
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NetConfig {
    Dense { dim: usize, n_cond: usize, width: usize },
    Set { max_points: usize, n_cond: usize, width: usize, attn_dim: usize },
    Grid { side: usize, channels: [usize; 3], attn_dim: usize },
    Linear { dim: usize, n_cond: usize },
}

impl NetConfig {
    pub fn build(&self) -> Net {
        match *self {
            NetConfig::Dense { dim, n_cond, width } => Net::Dense(DenseNet::new(dim, n_cond, width)),
            NetConfig::Set { max_points, n_cond, width, attn_dim } => {
                Net::Set(SetNet::new(max_points, n_cond, width, attn_dim))
            }
            NetConfig::Grid { side, channels, attn_dim } => Net::Grid(GridNet::new(side, channels, attn_dim)),
            NetConfig::Linear { dim, n_cond } => Net::Linear(LinearNet::new(dim, n_cond)),
        }
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct DenseNet {
    layout: ParamLayout,
    dim: usize,
    embed: CondEmbed,
    l1: Linear,
    l2: Linear,
    l3: Linear,
    out: Linear,
}

#[derive(Debug)]
pub struct DenseCache {
    x: Vec<f64>,
    ec: CondEmbedCache,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    z3: Vec<f64>,
    h3: Vec<f64>,
}

impl DenseNet {
    pub fn new(dim: usize, n_cond: usize, width: usize) -> Self {
        let mut layout = ParamLayout::default();
        let embed = CondEmbed::new(&mut layout, "embed", n_cond, width);
        let l1 = Linear::new(&mut layout, "l1", dim, width);
        let l2 = Linear::new(&mut layout, "l2", width, width);
        let l3 = Linear::new(&mut layout, "l3", width, width);
        let out = Linear::with_gain(&mut layout, "out", width, dim, OUT_GAIN);
        Self { layout, dim, embed, l1, l2, l3, out }
    }
}

impl ScoreNetwork for DenseNet {
    type Cache = DenseCache;

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn data_len(&self) -> usize {
        self.dim
    }

    fn n_cond(&self) -> usize {
        self.embed.n_cond
    }

    fn forward(&self, p: &[f64], x_t: &[f64], t: f64, cond: &[f64], _mask: Option<&[bool]>) -> (Vec<f64>, DenseCache) {
        let (e, ec) = self.embed.forward(p, t, cond);
        let mut z1 = self.l1.forward(p, x_t, 1);
        add_assign(&mut z1, &e);
        let h1 = silu(&z1);
        let z2 = self.l2.forward(p, &h1, 1);
        let mut h2 = silu(&z2);
        add_assign(&mut h2, &h1);
        let z3 = self.l3.forward(p, &h2, 1);
        let mut h3 = silu(&z3);
        add_assign(&mut h3, &h2);
        let y = self.out.forward(p, &h3, 1);
        (y, DenseCache { x: x_t.to_vec(), ec, z1, h1, z2, h2, z3, h3 })
    }

    fn backward(&self, p: &[f64], c: &DenseCache, d_out: &[f64], grads: &mut [f64]) {
        let dh3 = self.out.backward(p, &c.h3, d_out, 1, grads);
        let dz3 = silu_backward(&c.z3, &dh3);
        let mut dh2 = self.l3.backward(p, &c.h2, &dz3, 1, grads);
        add_assign(&mut dh2, &dh3);
        let dz2 = silu_backward(&c.z2, &dh2);
        let mut dh1 = self.l2.backward(p, &c.h1, &dz2, 1, grads);
        add_assign(&mut dh1, &dh2);
        let dz1 = silu_backward(&c.z1, &dh1);
        self.l1.accumulate(&c.x, &dz1, grads);
        self.embed.backward(p, &c.ec, &dz1, grads);
    }
}

// ---------------------------------------------------------------------------

pub const SET_FEATURES: usize = 4;

#[derive(Clone, Debug)]
pub struct SetNet {
    layout: ParamLayout,
    max_points: usize,
    width: usize,
    embed: CondEmbed,
    l1: Linear,
    l2: Linear,
    pool: Linear,
    attn: Attention,
    o1: Linear,
    o2: Linear,
}

#[derive(Debug)]
pub struct SetCache {
    active: Vec<usize>,
    x: Vec<f64>,
    ec: CondEmbedCache,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    pooled: Vec<f64>,
    zc: Vec<f64>,
    h3: Vec<f64>,
    ac: Option<AttentionCache>,
    h4: Vec<f64>,
    z5: Vec<f64>,
    h5: Vec<f64>,
}

impl SetNet {
    pub fn new(max_points: usize, n_cond: usize, width: usize, attn_dim: usize) -> Self {
        let mut layout = ParamLayout::default();
        let embed = CondEmbed::new(&mut layout, "embed", n_cond, width);
        let l1 = Linear::new(&mut layout, "point.l1", SET_FEATURES, width);
        let l2 = Linear::new(&mut layout, "point.l2", width, width);
        let pool = Linear::new(&mut layout, "pool", width, width);
        let attn = Attention::new(&mut layout, "attn", width, attn_dim);
        let o1 = Linear::new(&mut layout, "head.l1", width, width);
        let o2 = Linear::with_gain(&mut layout, "head.out", width, SET_FEATURES, OUT_GAIN);
        Self { layout, max_points, width, embed, l1, l2, pool, attn, o1, o2 }
    }
}

impl ScoreNetwork for SetNet {
    type Cache = SetCache;

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn data_len(&self) -> usize {
        self.max_points * SET_FEATURES
    }

    fn n_cond(&self) -> usize {
        self.embed.n_cond
    }

    fn forward(&self, p: &[f64], x_t: &[f64], t: f64, cond: &[f64], mask: Option<&[bool]>) -> (Vec<f64>, SetCache) {
        let rows = x_t.len() / SET_FEATURES;
        let active: Vec<usize> = match mask {
            Some(m) => (0..rows).filter(|&r| m[r]).collect(),
            None => (0..rows).collect(),
        };
        let n = active.len();
        let w = self.width;
        let mut x = Vec::with_capacity(n * SET_FEATURES);
        for &r in &active {
            x.extend_from_slice(&x_t[r * SET_FEATURES..(r + 1) * SET_FEATURES]);
        }
        let (g, ec) = self.embed.forward(p, t, cond);
        let mut z1 = self.l1.forward(p, &x, n);
        add_rows(&mut z1, &g);
        let h1 = silu(&z1);
        let z2 = self.l2.forward(p, &h1, n);
        let h2 = silu(&z2);
        let mut pooled = sum_rows(&h2, w);
        if n > 0 {
            pooled.iter_mut().for_each(|v| *v /= n as f64);
        }
        let zc = self.pool.forward(p, &pooled, 1);
        let ctx = silu(&zc);
        let mut h3 = h2;
        add_rows(&mut h3, &ctx);
        let (mut h4, ac) = if n > 0 {
            let (a, ac) = self.attn.forward(p, &h3, n);
            (a, Some(ac))
        } else {
            (Vec::new(), None)
        };
        add_assign(&mut h4, &h3);
        let z5 = self.o1.forward(p, &h4, n);
        let h5 = silu(&z5);
        let y = self.o2.forward(p, &h5, n);

        let mut out = vec![0.0; x_t.len()];
        for (k, &r) in active.iter().enumerate() {
            out[r * SET_FEATURES..(r + 1) * SET_FEATURES]
                .copy_from_slice(&y[k * SET_FEATURES..(k + 1) * SET_FEATURES]);
        }
        (out, SetCache { active, x, ec, z1, h1, z2, pooled, zc, h3, ac, h4, z5, h5 })
    }

    fn backward(&self, p: &[f64], c: &SetCache, d_out: &[f64], grads: &mut [f64]) {
        let n = c.active.len();
        if n == 0 {
            return;
        }
        let w = self.width;
        let mut dy = Vec::with_capacity(n * SET_FEATURES);
        for &r in &c.active {
            dy.extend_from_slice(&d_out[r * SET_FEATURES..(r + 1) * SET_FEATURES]);
        }
        let dh5 = self.o2.backward(p, &c.h5, &dy, n, grads);
        let dz5 = silu_backward(&c.z5, &dh5);
        let dh4 = self.o1.backward(p, &c.h4, &dz5, n, grads);
        let mut dh3 = dh4.clone();
        let ac = c.ac.as_ref().expect("attention cache for non-empty set");
        add_assign(&mut dh3, &self.attn.backward(p, &c.h3, ac, &dh4, grads));

        let dctx = sum_rows(&dh3, w);
        let dzc = silu_backward(&c.zc, &dctx);
        let mut dpooled = self.pool.backward(p, &c.pooled, &dzc, 1, grads);
        dpooled.iter_mut().for_each(|v| *v /= n as f64);
        let mut dh2 = dh3;
        add_rows(&mut dh2, &dpooled);
        let dz2 = silu_backward(&c.z2, &dh2);
        let dh1 = self.l2.backward(p, &c.h1, &dz2, n, grads);
        let dz1 = silu_backward(&c.z1, &dh1);
        self.l1.accumulate(&c.x, &dz1, grads);
        let dg = sum_rows(&dz1, w);
        self.embed.backward(p, &c.ec, &dg, grads);
    }
}

// ---------------------------------------------------------------------------

/// Encoder/decoder over `side^3` images. The conditioning vector is
/// `[log-momentum, layer_0, ..., layer_{side-1}]`; the layer entries are also
/// broadcast over their layer as a second input channel.
#[derive(Clone, Debug)]
pub struct GridNet {
    layout: ParamLayout,
    side: usize,
    channels: [usize; 3],
    embed: CondEmbed,
    bias: [Linear; 3],
    enc0: Conv3d,
    enc1: Conv3d,
    enc2: Conv3d,
    attn: Attention,
    dec1: Conv3d,
    dec1b: Conv3d,
    dec0: Conv3d,
    out: Conv3d,
}

#[derive(Debug)]
pub struct GridCache {
    input: Vec<f64>,
    ec: CondEmbedCache,
    g: Vec<f64>,
    z0: Vec<f64>,
    h0: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    tokens: Vec<f64>,
    ac: AttentionCache,
    up1: Vec<f64>,
    z3: Vec<f64>,
    h3: Vec<f64>,
    z4: Vec<f64>,
    up0: Vec<f64>,
    z5: Vec<f64>,
    h5: Vec<f64>,
}

impl GridNet {
    pub fn new(side: usize, channels: [usize; 3], attn_dim: usize) -> Self {
        let [c0, c1, c2] = channels;
        let mut layout = ParamLayout::default();
        let width = 32;
        let embed = CondEmbed::new(&mut layout, "embed", 1 + side, width);
        let bias = [
            Linear::new(&mut layout, "bias0", width, c0),
            Linear::new(&mut layout, "bias1", width, c1),
            Linear::new(&mut layout, "bias2", width, c2),
        ];
        let enc0 = Conv3d::new(&mut layout, "enc0", 2, c0, 3, 1, side, 1.0);
        let enc1 = Conv3d::new(&mut layout, "enc1", c0, c1, 3, 2, enc0.side_out, 1.0);
        let enc2 = Conv3d::new(&mut layout, "enc2", c1, c2, 3, 2, enc1.side_out, 1.0);
        let attn = Attention::new(&mut layout, "attn", c2, attn_dim);
        let dec1 = Conv3d::new(&mut layout, "dec1", c2, c1, 1, 1, enc1.side_out, 1.0);
        let dec1b = Conv3d::new(&mut layout, "dec1b", c1, c1, 3, 1, enc1.side_out, 1.0);
        let dec0 = Conv3d::new(&mut layout, "dec0", c1, c0, 1, 1, side, 1.0);
        let out = Conv3d::new(&mut layout, "out", c0, 1, 3, 1, side, OUT_GAIN);
        Self { layout, side, channels, embed, bias, enc0, enc1, enc2, attn, dec1, dec1b, dec0, out }
    }

    fn sides(&self) -> [usize; 3] {
        [self.side, self.enc1.side_out, self.enc2.side_out]
    }
}

impl ScoreNetwork for GridNet {
    type Cache = GridCache;

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn data_len(&self) -> usize {
        self.side.pow(3)
    }

    fn n_cond(&self) -> usize {
        1 + self.side
    }

    fn forward(&self, p: &[f64], x_t: &[f64], t: f64, cond: &[f64], _mask: Option<&[bool]>) -> (Vec<f64>, GridCache) {
        let [c0, c1, c2] = self.channels;
        let [s0, s1, s2] = self.sides();
        let plane = s0 * s0;
        let mut input = Vec::with_capacity(2 * x_t.len());
        input.extend_from_slice(x_t);
        for z in 0..s0 {
            input.extend(std::iter::repeat_n(cond[1 + z], plane));
        }
        let (g, ec) = self.embed.forward(p, t, cond);

        let mut z0 = self.enc0.forward(p, &input);
        add_channel_bias(&mut z0, &self.bias[0].forward(p, &g, 1));
        let h0 = silu(&z0);
        let mut z1 = self.enc1.forward(p, &h0);
        add_channel_bias(&mut z1, &self.bias[1].forward(p, &g, 1));
        let h1 = silu(&z1);
        let mut z2 = self.enc2.forward(p, &h1);
        add_channel_bias(&mut z2, &self.bias[2].forward(p, &g, 1));
        let n_tok = s2.pow(3);
        let tokens = transpose(&silu(&z2), c2, n_tok);
        let (mut b, ac) = self.attn.forward(p, &tokens, n_tok);
        add_assign(&mut b, &tokens);
        let up1 = upsample(&transpose(&b, n_tok, c2), c2, s2, s1);
        let z3 = self.dec1.forward(p, &up1);
        let mut h3 = silu(&z3);
        add_assign(&mut h3, &h1);
        let z4 = self.dec1b.forward(p, &h3);
        let up0 = upsample(&silu(&z4), c1, s1, s0);
        let z5 = self.dec0.forward(p, &up0);
        let mut h5 = silu(&z5);
        add_assign(&mut h5, &h0);
        let y = self.out.forward(p, &h5);
        debug_assert_eq!(h5.len(), c0 * s0.pow(3));
        (y, GridCache { input, ec, g, z0, h0, z1, h1, z2, tokens, ac, up1, z3, h3, z4, up0, z5, h5 })
    }

    fn backward(&self, p: &[f64], c: &GridCache, d_out: &[f64], grads: &mut [f64]) {
        let [c0, c1, c2] = self.channels;
        let [s0, s1, s2] = self.sides();
        let n_tok = s2.pow(3);
        let dh5 = self.out.backward(p, &c.h5, d_out, grads);
        let dz5 = silu_backward(&c.z5, &dh5);
        let dup0 = self.dec0.backward(p, &c.up0, &dz5, grads);
        let dh4 = upsample_backward(&dup0, c1, s1, s0);
        let dz4 = silu_backward(&c.z4, &dh4);
        let dh3 = self.dec1b.backward(p, &c.h3, &dz4, grads);
        let dz3 = silu_backward(&c.z3, &dh3);
        let dup1 = self.dec1.backward(p, &c.up1, &dz3, grads);
        let db = transpose(&upsample_backward(&dup1, c2, s2, s1), c2, n_tok);
        let mut dtok = db.clone();
        add_assign(&mut dtok, &self.attn.backward(p, &c.tokens, &c.ac, &db, grads));
        let dh2 = transpose(&dtok, n_tok, c2);
        let dz2 = silu_backward(&c.z2, &dh2);

        let mut dg = vec![0.0; c.g.len()];
        add_assign(&mut dg, &self.bias[2].backward(p, &c.g, &channel_sums(&dz2, c2), 1, grads));
        let mut dh1 = self.enc2.backward(p, &c.h1, &dz2, grads);
        add_assign(&mut dh1, &dh3);
        let dz1 = silu_backward(&c.z1, &dh1);
        add_assign(&mut dg, &self.bias[1].backward(p, &c.g, &channel_sums(&dz1, c1), 1, grads));
        let mut dh0 = self.enc1.backward(p, &c.h0, &dz1, grads);
        add_assign(&mut dh0, &dh5);
        let dz0 = silu_backward(&c.z0, &dh0);
        add_assign(&mut dg, &self.bias[0].backward(p, &c.g, &channel_sums(&dz0, c0), 1, grads));
        self.enc0.backward(p, &c.input, &dz0, grads);
        self.embed.backward(p, &c.ec, &dg, grads);
    }
}

// ---------------------------------------------------------------------------

/// `v = W [x_t, t, cond] + b`.
#[derive(Clone, Debug)]
pub struct LinearNet {
    layout: ParamLayout,
    dim: usize,
    n_cond: usize,
    lin: Linear,
}

impl LinearNet {
    pub fn new(dim: usize, n_cond: usize) -> Self {
        let mut layout = ParamLayout::default();
        let lin = Linear::new(&mut layout, "lin", dim + 1 + n_cond, dim);
        Self { layout, dim, n_cond, lin }
    }
}

impl ScoreNetwork for LinearNet {
    type Cache = Vec<f64>;

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn data_len(&self) -> usize {
        self.dim
    }

    fn n_cond(&self) -> usize {
        self.n_cond
    }

    fn forward(&self, p: &[f64], x_t: &[f64], t: f64, cond: &[f64], _mask: Option<&[bool]>) -> (Vec<f64>, Vec<f64>) {
        let mut input = x_t.to_vec();
        input.push(t);
        input.extend_from_slice(&cond[..self.n_cond]);
        (self.lin.forward(p, &input, 1), input)
    }

    fn backward(&self, _p: &[f64], input: &Vec<f64>, d_out: &[f64], grads: &mut [f64]) {
        self.lin.accumulate(input, d_out, grads);
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum Net {
    Dense(DenseNet),
    Set(SetNet),
    Grid(GridNet),
    Linear(LinearNet),
}

#[derive(Debug)]
pub enum NetCache {
    Dense(DenseCache),
    Set(SetCache),
    Grid(Box<GridCache>),
    Linear(Vec<f64>),
}

impl ScoreNetwork for Net {
    type Cache = NetCache;

    fn layout(&self) -> &ParamLayout {
        match self {
            Net::Dense(n) => n.layout(),
            Net::Set(n) => n.layout(),
            Net::Grid(n) => n.layout(),
            Net::Linear(n) => n.layout(),
        }
    }

    fn data_len(&self) -> usize {
        match self {
            Net::Dense(n) => n.data_len(),
            Net::Set(n) => n.data_len(),
            Net::Grid(n) => n.data_len(),
            Net::Linear(n) => n.data_len(),
        }
    }

    fn n_cond(&self) -> usize {
        match self {
            Net::Dense(n) => n.n_cond(),
            Net::Set(n) => n.n_cond(),
            Net::Grid(n) => n.n_cond(),
            Net::Linear(n) => n.n_cond(),
        }
    }

    fn forward(&self, p: &[f64], x_t: &[f64], t: f64, cond: &[f64], mask: Option<&[bool]>) -> (Vec<f64>, NetCache) {
        match self {
            Net::Dense(n) => {
                let (y, c) = n.forward(p, x_t, t, cond, mask);
                (y, NetCache::Dense(c))
            }
            Net::Set(n) => {
                let (y, c) = n.forward(p, x_t, t, cond, mask);
                (y, NetCache::Set(c))
            }
            Net::Grid(n) => {
                let (y, c) = n.forward(p, x_t, t, cond, mask);
                (y, NetCache::Grid(Box::new(c)))
            }
            Net::Linear(n) => {
                let (y, c) = n.forward(p, x_t, t, cond, mask);
                (y, NetCache::Linear(c))
            }
        }
    }

    fn backward(&self, p: &[f64], cache: &NetCache, d_out: &[f64], grads: &mut [f64]) {
        match (self, cache) {
            (Net::Dense(n), NetCache::Dense(c)) => n.backward(p, c, d_out, grads),
            (Net::Set(n), NetCache::Set(c)) => n.backward(p, c, d_out, grads),
            (Net::Grid(n), NetCache::Grid(c)) => n.backward(p, c, d_out, grads),
            (Net::Linear(n), NetCache::Linear(c)) => n.backward(p, c, d_out, grads),
            _ => panic!("cache does not belong to this network"),
        }
    }
}

/// Two hidden ReLU layers and a logit output; the real-vs-generated classifier.
#[derive(Clone, Debug)]
pub struct Mlp {
    layout: ParamLayout,
    l1: Linear,
    l2: Linear,
    out: Linear,
}

#[derive(Debug)]
pub struct MlpCache {
    x: Vec<f64>,
    rows: usize,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
}

impl Mlp {
    pub fn new(n_in: usize, hidden: usize) -> Self {
        let mut layout = ParamLayout::default();
        let l1 = Linear::with_gain(&mut layout, "l1", n_in, hidden, std::f64::consts::SQRT_2);
        let l2 = Linear::with_gain(&mut layout, "l2", hidden, hidden, std::f64::consts::SQRT_2);
        let out = Linear::new(&mut layout, "out", hidden, 1);
        Self { layout, l1, l2, out }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Logits for `rows` stacked inputs.
    pub fn forward(&self, p: &[f64], x: &[f64], rows: usize) -> (Vec<f64>, MlpCache) {
        let z1 = self.l1.forward(p, x, rows);
        let h1 = relu(&z1);
        let z2 = self.l2.forward(p, &h1, rows);
        let h2 = relu(&z2);
        let y = self.out.forward(p, &h2, rows);
        (y, MlpCache { x: x.to_vec(), rows, z1, h1, z2, h2 })
    }

    pub fn backward(&self, p: &[f64], c: &MlpCache, d_logits: &[f64], grads: &mut [f64]) {
        use super::nn::relu_backward;
        let dh2 = self.out.backward(p, &c.h2, d_logits, c.rows, grads);
        let dz2 = relu_backward(&c.z2, &dh2);
        let dh1 = self.l2.backward(p, &c.h1, &dz2, c.rows, grads);
        let dz1 = relu_backward(&c.z1, &dh1);
        self.l1.accumulate(&c.x, &dz1, grads);
    }
}
