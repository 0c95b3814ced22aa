//! Parameterised building blocks. Each layer holds parameter ids only; values
//! live in the model's [`ParamStore`], so one layer graph serves f32 and f64.
//!
//! Every `macs` method mirrors its `forward` exactly, counting the
//! multiply-accumulates of convolutions, linear maps and matrix products.

use rand_chacha::ChaCha8Rng;
use snowformer_tensor::init::{fan_in_uniform, rng};
use snowformer_tensor::{ParamId, ParamStore, RelPosBias, Scalar, Session, Tensor, Var};

use crate::error::Result;

pub const NORM_EPS: f64 = 1e-5;

pub(crate) struct Builder<'a, T: Scalar> {
    pub store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<'a, T: Scalar> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Self {
            store,
            rng: rng(seed),
        }
    }

    pub fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let t = fan_in_uniform(shape, fan_in, &mut self.rng);
        Ok(self.store.add(name, t)?)
    }

    pub fn filled(&mut self, name: String, shape: &[usize], value: f64) -> Result<ParamId> {
        Ok(self.store.add(name, Tensor::full(shape, T::from_f64_lossy(value)))?)
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    w: ParamId,
    b: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub(crate) fn new<T: Scalar>(
        b: &mut Builder<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
    ) -> Result<Self> {
        Ok(Self {
            w: b.weight(format!("{name}.w"), &[cout, cin, k, k], cin * k * k)?,
            b: b.filled(format!("{name}.b"), &[cout], 0.0)?,
            cin,
            cout,
            k,
            stride,
            pad: k / 2,
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.w), s.param(self.b));
        Ok(s.conv2d(x, w, Some(b), self.stride, self.pad)?)
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.out_hw(h, w);
        (n * self.cout * oh * ow * self.cin * self.k * self.k) as u64
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    pub fin: usize,
    pub fout: usize,
}

impl Linear {
    pub(crate) fn new<T: Scalar>(b: &mut Builder<T>, name: &str, fin: usize, fout: usize) -> Result<Self> {
        Ok(Self {
            w: b.weight(format!("{name}.w"), &[fout, fin], fin)?,
            b: b.filled(format!("{name}.b"), &[fout], 0.0)?,
            fin,
            fout,
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.w), s.param(self.b));
        Ok(s.linear(x, w, Some(b))?)
    }

    pub fn macs(&self, rows: usize) -> u64 {
        (rows * self.fin * self.fout) as u64
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    g: ParamId,
    b: ParamId,
}

impl Norm {
    pub(crate) fn new<T: Scalar>(b: &mut Builder<T>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            g: b.filled(format!("{name}.g"), &[c], 1.0)?,
            b: b.filled(format!("{name}.b"), &[c], 0.0)?,
        })
    }

    /// Normalises over `axis` (1 for NCHW maps, the last axis for tokens).
    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var, axis: usize) -> Result<Var> {
        let (g, b) = (s.param(self.g), s.param(self.b));
        Ok(s.layernorm_axis(x, g, b, axis, NORM_EPS)?)
    }
}

/// conv3 → channel norm → GELU → conv3, plus identity.
#[derive(Clone, Debug)]
pub struct ResBlock {
    conv1: Conv,
    norm: Norm,
    conv2: Conv,
}

impl ResBlock {
    pub(crate) fn new<T: Scalar>(b: &mut Builder<T>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv::new(b, &format!("{name}.conv1"), c, c, 3, 1)?,
            norm: Norm::new(b, &format!("{name}.norm"), c)?,
            conv2: Conv::new(b, &format!("{name}.conv2"), c, c, 3, 1)?,
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(s, x)?;
        let y = self.norm.forward(s, y, 1)?;
        let y = s.gelu(y)?;
        let y = self.conv2.forward(s, y)?;
        Ok(s.add(x, y)?)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.conv1.macs(n, h, w) + self.conv2.macs(n, h, w)
    }
}

/// Channel attention followed by spatial attention, each a sigmoid gate.
#[derive(Clone, Debug)]
pub struct Dam {
    ca1: Conv,
    ca2: Conv,
    sa: Conv,
}

impl Dam {
    pub(crate) fn new<T: Scalar>(b: &mut Builder<T>, name: &str, c: usize) -> Result<Self> {
        let hidden = (c / 4).max(4);
        Ok(Self {
            ca1: Conv::new(b, &format!("{name}.ca1"), c, hidden, 1, 1)?,
            ca2: Conv::new(b, &format!("{name}.ca2"), hidden, c, 1, 1)?,
            sa: Conv::new(b, &format!("{name}.sa"), 2, 1, 7, 1)?,
        })
    }

    /// A free-standing module registered in `store` under `name`.
    pub fn standalone<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize, seed: u64) -> Result<Self> {
        Self::new(&mut Builder::new(store, seed), name, c)
    }

    pub fn channel_gate<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let g = s.global_avgpool(x)?;
        let g = self.ca1.forward(s, g)?;
        let g = s.gelu(g)?;
        let g = self.ca2.forward(s, g)?;
        Ok(s.sigmoid(g)?)
    }

    pub fn spatial_gate<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let mean = s.mean_axis(x, 1)?;
        let max = s.max_axis(x, 1)?;
        let m = s.concat(&[mean, max], 1)?;
        let m = self.sa.forward(s, m)?;
        Ok(s.sigmoid(m)?)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let g = self.channel_gate(s, x)?;
        let x = s.mul(x, g)?;
        let g = self.spatial_gate(s, x)?;
        Ok(s.mul(x, g)?)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.ca1.macs(n, 1, 1) + self.ca2.macs(n, 1, 1) + self.sa.macs(n, h, w)
    }
}

/// x + DAM(conv3(GELU(conv3(x)))).
#[derive(Clone, Debug)]
pub struct RefineBlock {
    conv1: Conv,
    conv2: Conv,
    dam: Dam,
}

impl RefineBlock {
    pub(crate) fn new<T: Scalar>(b: &mut Builder<T>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv::new(b, &format!("{name}.conv1"), c, c, 3, 1)?,
            conv2: Conv::new(b, &format!("{name}.conv2"), c, c, 3, 1)?,
            dam: Dam::new(b, &format!("{name}.dam"), c)?,
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(s, x)?;
        let y = s.gelu(y)?;
        let y = self.conv2.forward(s, y)?;
        let y = self.dam.forward(s, y)?;
        Ok(s.add(x, y)?)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.conv1.macs(n, h, w) + self.conv2.macs(n, h, w) + self.dam.macs(n, h, w)
    }
}

/// Multi-head attention over the tokens of one window, with relative position bias.
///
/// Self-attention when no queries are given; otherwise per-image queries
/// `[N, n, C]` attend to the keys and values of each of that image's windows.
#[derive(Clone, Debug)]
pub struct Attention {
    pub heads: usize,
    pub dim: usize,
    qproj: Linear,
    kproj: Linear,
    vproj: Linear,
    out: Linear,
    pub rel: RelPosBias,
}

impl Attention {
    pub(crate) fn new<T: Scalar>(
        b: &mut Builder<T>,
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
    ) -> Result<Self> {
        let table = b.filled(
            format!("{name}.relpos"),
            &[RelPosBias::table_rows(window), heads],
            0.0,
        )?;
        Ok(Self {
            heads,
            dim,
            qproj: Linear::new(b, &format!("{name}.qproj"), dim, dim)?,
            kproj: Linear::new(b, &format!("{name}.kproj"), dim, dim)?,
            vproj: Linear::new(b, &format!("{name}.vproj"), dim, dim)?,
            out: Linear::new(b, &format!("{name}.out"), dim, dim)?,
            rel: RelPosBias {
                window_side: window,
                num_heads: heads,
                table,
            },
        })
    }

    /// `[B, n, C]` → `[B·heads, n, C/heads]`.
    fn split_heads<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let sh = s.shape(x).to_vec();
        let (b, n, d) = (sh[0], sh[1], self.dim / self.heads);
        let x = s.reshape(x, &[b, n, self.heads, d])?;
        let x = s.permute(x, &[0, 2, 1, 3])?;
        Ok(s.reshape(x, &[b * self.heads, n, d])?)
    }

    fn merge_heads<T: Scalar>(&self, s: &mut Session<T>, x: Var, b: usize, n: usize) -> Result<Var> {
        let d = self.dim / self.heads;
        let x = s.reshape(x, &[b, self.heads, n, d])?;
        let x = s.permute(x, &[0, 2, 1, 3])?;
        Ok(s.reshape(x, &[b, n, self.dim])?)
    }

    /// Attention probabilities `[B, heads, n, n]` and the attended output `[B, n, C]`.
    pub fn forward_with_probs<T: Scalar>(
        &self,
        s: &mut Session<T>,
        x: Var,
        queries: Option<Var>,
        grid: usize,
    ) -> Result<(Var, Var)> {
        let sh = s.shape(x).to_vec();
        let (b, n) = (sh[0], sh[1]);
        let q = match queries {
            None => self.qproj.forward(s, x)?,
            Some(q) => {
                let images = s.shape(q)[0];
                let q = self.qproj.forward(s, q)?;
                s.repeat_batch(q, b / images)?
            }
        };
        let k = self.kproj.forward(s, x)?;
        let v = self.vproj.forward(s, x)?;
        let (q, k, v) = (
            self.split_heads(s, q)?,
            self.split_heads(s, k)?,
            self.split_heads(s, v)?,
        );
        let scores = s.bmm(q, k, false, true)?;
        let d = (self.dim / self.heads) as f64;
        let scores = s.scale(scores, T::from_f64_lossy(1.0 / d.sqrt()))?;
        let scores = s.reshape(scores, &[b, self.heads, n, n])?;
        let bias = self.rel.bias(s, grid)?;
        let scores = s.add(scores, bias)?;
        let probs = s.softmax(scores, 3)?;
        let p = s.reshape(probs, &[b * self.heads, n, n])?;
        let y = s.bmm(p, v, false, false)?;
        let y = self.merge_heads(s, y, b, n)?;
        Ok((probs, self.out.forward(s, y)?))
    }

    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<T>,
        x: Var,
        queries: Option<Var>,
        grid: usize,
    ) -> Result<Var> {
        Ok(self.forward_with_probs(s, x, queries, grid)?.1)
    }

    /// `windows` windows of `n` tokens from `images` images.
    pub fn macs(&self, images: usize, windows: usize, n: usize, cross: bool) -> u64 {
        let q_rows = if cross { images * n } else { windows * n };
        let rows = windows * n;
        self.qproj.macs(q_rows)
            + self.kproj.macs(rows)
            + self.vproj.macs(rows)
            + 2 * (windows * n * n * self.dim) as u64
            + self.out.macs(rows)
    }
}

/// Pre-norm transformer block: `x + attn(norm(x))`, then `x + ffn(norm(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    norm1: Norm,
    pub attn: Attention,
    norm2: Norm,
    fc1: Linear,
    fc2: Linear,
}

impl TransformerBlock {
    pub(crate) fn new<T: Scalar>(
        b: &mut Builder<T>,
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
        ffn_ratio: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm1: Norm::new(b, &format!("{name}.norm1"), dim)?,
            attn: Attention::new(b, &format!("{name}.attn"), dim, heads, window)?,
            norm2: Norm::new(b, &format!("{name}.norm2"), dim)?,
            fc1: Linear::new(b, &format!("{name}.ffn.fc1"), dim, dim * ffn_ratio)?,
            fc2: Linear::new(b, &format!("{name}.ffn.fc2"), dim * ffn_ratio, dim)?,
        })
    }

    /// A free-standing block registered in `store` under `name`.
    pub fn standalone<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
        ffn_ratio: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut b = Builder::new(store, seed);
        Self::new(&mut b, name, dim, heads, window, ffn_ratio)
    }

    /// Tokens `[B, n, C]` of windows on a `grid × grid` layout.
    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<T>,
        x: Var,
        queries: Option<Var>,
        grid: usize,
    ) -> Result<Var> {
        let rank = s.shape(x).len();
        let y = self.norm1.forward(s, x, rank - 1)?;
        let y = self.attn.forward(s, y, queries, grid)?;
        let x = s.add(x, y)?;
        let y = self.norm2.forward(s, x, rank - 1)?;
        let y = self.fc1.forward(s, y)?;
        let y = s.gelu(y)?;
        let y = self.fc2.forward(s, y)?;
        Ok(s.add(x, y)?)
    }

    pub fn macs(&self, images: usize, windows: usize, n: usize, cross: bool) -> u64 {
        let rows = windows * n;
        self.attn.macs(images, windows, n, cross) + self.fc1.macs(rows) + self.fc2.macs(rows)
    }
}
