//! The desnowing network.
//!
//! Pipeline: a five-level convolutional encoder, aggregation of the four
//! encoder levels into the latent input, latent window-attention blocks,
//! per-level snow queries, a decoder mixing local self-attention and
//! query cross-attention, and a refinement head driven by position
//! encodings built from encoder and decoder features.

mod config;
pub mod layers;

use snowformer_tensor::{ParamId, ParamStore, Scalar, Session, Tensor, TensorError, Var};

pub use config::{Ablation, ArhMode, DecoderMode, ModelConfig, QueryMode, SafaMode};
use layers::{Builder, Conv, Dam, RefineBlock, ResBlock, TransformerBlock};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Safa {
    Off,
    /// Pool each level down to the latent grid, project with 1×1, sum.
    Pool { avg: bool, branches: Vec<Conv> },
    /// Strided 3×3 convolution per level, sum.
    Strided { branches: Vec<Conv> },
    /// Max-pool and project each level, concatenate, fuse with 1×1.
    Cat { branches: Vec<Conv>, fuse: Conv },
}

#[derive(Clone, Debug)]
enum DecBlock {
    Li(TransformerBlock),
    Lgci(TransformerBlock),
    Res(ResBlock),
}

#[derive(Clone, Debug)]
enum QueryGen {
    Pooled { dam: Dam, proj: Conv },
    Learnable { tokens: ParamId, dim: usize },
}

#[derive(Clone, Debug)]
struct DecLevel {
    matcher: Conv,
    blocks: Vec<DecBlock>,
    query: Option<QueryGen>,
}

#[derive(Clone, Debug)]
enum Head {
    Off {
        out: Conv,
    },
    On {
        /// Position encoders for levels 2, 3 and 4.
        pos: Vec<(Conv, Dam)>,
        stages: Vec<Vec<RefineBlock>>,
        out: Conv,
    },
}

#[derive(Clone, Debug)]
struct Network {
    stem: Conv,
    enc: Vec<Vec<ResBlock>>,
    /// Downsampling into levels 2..=4, plus level 5 when aggregation is off.
    down: Vec<Conv>,
    safa: Safa,
    latent: Vec<TransformerBlock>,
    /// Finest level first.
    dec: Vec<DecLevel>,
    head: Head,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// Encoder features of levels 1 to 4.
    pub encoder: Vec<Var>,
    pub latent_in: Var,
    pub latent: Var,
    /// Queries `[N, window², C_i]` per decoder level, finest first; `None` where unused.
    pub queries: Vec<Option<Var>>,
    /// Decoder features of levels 1 to 4.
    pub decoder: Vec<Var>,
    /// Position encodings of levels 2, 3 and 4 (empty when the head is off).
    pub pos: Vec<Var>,
    /// Level of the position encoding consumed by each refinement stage, in order.
    pub stages: Vec<usize>,
    pub output: Var,
}

pub struct Model<T: Scalar> {
    cfg: ModelConfig,
    params: ParamStore<T>,
    net: Network,
}

/// Builds a model with parameters drawn deterministically from `seed`.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Model<T>> {
    cfg.validate()?;
    let mut params = ParamStore::new();
    let net = Network::build(cfg, &mut Builder::new(&mut params, seed))?;
    Ok(Model {
        cfg: cfg.clone(),
        params,
        net,
    })
}

impl Network {
    fn build<T: Scalar>(cfg: &ModelConfig, b: &mut Builder<T>) -> Result<Self> {
        let c = cfg.widths();
        let ab = cfg.ablation;
        let stem = Conv::new(b, "enc.stem", 3, c[0], 3, 1)?;
        let mut enc = Vec::new();
        for l in 0..4 {
            let blocks = (1..=cfg.encoder_blocks[l])
                .map(|k| ResBlock::new(b, &format!("enc.l{}.b{k}", l + 1), c[l]))
                .collect::<Result<Vec<_>>>()?;
            enc.push(blocks);
        }
        let levels_down = if ab.safa == SafaMode::Off { 4 } else { 3 };
        let down = (0..levels_down)
            .map(|l| Conv::new(b, &format!("enc.down{}", l + 1), c[l], c[l + 1], 3, 2))
            .collect::<Result<Vec<_>>>()?;

        let branch = |b: &mut Builder<T>, l: usize, k: usize, stride: usize| {
            Conv::new(b, &format!("safa.b{}", l + 1), c[l], c[4], k, stride)
        };
        let safa = match ab.safa {
            SafaMode::Off => Safa::Off,
            SafaMode::MaxpoolAdd | SafaMode::Avgpool => Safa::Pool {
                avg: ab.safa == SafaMode::Avgpool,
                branches: (0..4).map(|l| branch(b, l, 1, 1)).collect::<Result<_>>()?,
            },
            SafaMode::Conv => Safa::Strided {
                branches: (0..4)
                    .map(|l| branch(b, l, 3, 1 << (4 - l)))
                    .collect::<Result<_>>()?,
            },
            SafaMode::Cat => Safa::Cat {
                branches: (0..4).map(|l| branch(b, l, 1, 1)).collect::<Result<_>>()?,
                fuse: Conv::new(b, "safa.fuse", 4 * c[4], c[4], 1, 1)?,
            },
        };

        let latent = (1..=cfg.latent_blocks)
            .map(|k| {
                TransformerBlock::new(
                    b,
                    &format!("latent.blk{k}"),
                    c[4],
                    cfg.latent_heads,
                    cfg.window,
                    cfg.ffn_ratio,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let mut dec = Vec::new();
        for l in 0..4 {
            let name = format!("dec.l{}", l + 1);
            let matcher = Conv::new(b, &format!("{name}.match"), c[l + 1], c[l], 1, 1)?;
            let mut blocks = Vec::new();
            for k in 1..=cfg.decoder_blocks[l] {
                let local = match ab.decoder {
                    DecoderMode::Full | DecoderMode::Resblock => k % 2 == 1,
                    DecoderMode::LiOnly => true,
                    DecoderMode::LgciOnly => false,
                };
                let bname = format!("{name}.blk{k}");
                let block = if local && ab.decoder == DecoderMode::Resblock {
                    DecBlock::Res(ResBlock::new(b, &bname, c[l])?)
                } else {
                    let tb = TransformerBlock::new(
                        b,
                        &bname,
                        c[l],
                        cfg.decoder_heads[l],
                        cfg.window,
                        cfg.ffn_ratio,
                    )?;
                    if local {
                        DecBlock::Li(tb)
                    } else {
                        DecBlock::Lgci(tb)
                    }
                };
                blocks.push(block);
            }
            let needs_queries = blocks.iter().any(|b| matches!(b, DecBlock::Lgci(_)));
            let query = if !needs_queries {
                None
            } else {
                let qname = format!("{name}.query");
                Some(match ab.queries {
                    QueryMode::ScaleAware => QueryGen::Pooled {
                        dam: Dam::new(b, &format!("{qname}.dam"), c[4])?,
                        proj: Conv::new(b, &format!("{qname}.proj"), c[4], c[l], 1, 1)?,
                    },
                    QueryMode::SameLayer => QueryGen::Pooled {
                        dam: Dam::new(b, &format!("{qname}.dam"), c[l])?,
                        proj: Conv::new(b, &format!("{qname}.proj"), c[l], c[l], 1, 1)?,
                    },
                    QueryMode::Learnable => QueryGen::Learnable {
                        tokens: b.weight(
                            format!("{qname}.tokens"),
                            &[cfg.window * cfg.window, c[l]],
                            c[l],
                        )?,
                        dim: c[l],
                    },
                })
            };
            dec.push(DecLevel {
                matcher,
                blocks,
                query,
            });
        }

        let head = match ab.arh {
            ArhMode::Off => Head::Off {
                out: Conv::new(b, "arh.out", c[0], 3, 3, 1)?,
            },
            ArhMode::On => {
                let pos = (1..4)
                    .map(|l| {
                        let name = format!("arh.pos{}", l + 1);
                        Ok((
                            Conv::new(b, &format!("{name}.match"), c[l], c[0], 1, 1)?,
                            Dam::new(b, &format!("{name}.dam"), c[0])?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let stages = (1..=3)
                    .map(|st| {
                        (1..=cfg.arh_blocks_per_stage)
                            .map(|k| RefineBlock::new(b, &format!("arh.stage{st}.blk{k}"), c[0]))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                Head::On {
                    pos,
                    stages,
                    out: Conv::new(b, "arh.out", c[0], 3, 3, 1)?,
                }
            }
        };

        Ok(Self {
            stem,
            enc,
            down,
            safa,
            latent,
            dec,
            head,
        })
    }
}

/// Runs `blocks` on windows of side `win`, converting between map and token
/// layouts only when the block kind changes.
fn run_blocks<T: Scalar>(
    s: &mut Session<T>,
    blocks: &[DecBlock],
    x: Var,
    win: usize,
    queries: Option<Var>,
) -> Result<Var> {
    let dims = s.shape(x).to_vec();
    let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    let mut cur = x;
    let mut tokens = false;
    for block in blocks {
        match block {
            DecBlock::Li(tb) | DecBlock::Lgci(tb) => {
                if !tokens {
                    cur = s.window_partition(cur, win)?;
                    tokens = true;
                }
                let q = match block {
                    DecBlock::Lgci(_) => Some(queries.ok_or_else(|| {
                        Error::InvalidConfig("cross-attention block without queries".into())
                    })?),
                    _ => None,
                };
                cur = tb.forward(s, cur, q, win)?;
            }
            DecBlock::Res(rb) => {
                if tokens {
                    cur = s.window_merge(cur, win, (n, c, h, w))?;
                    tokens = false;
                }
                cur = rb.forward(s, cur)?;
            }
        }
    }
    if tokens {
        cur = s.window_merge(cur, win, (n, c, h, w))?;
    }
    Ok(cur)
}

fn blocks_macs(blocks: &[DecBlock], n: usize, h: usize, w: usize, win: usize) -> u64 {
    let windows = n * (h / win) * (w / win);
    let tokens = win * win;
    blocks
        .iter()
        .map(|b| match b {
            DecBlock::Li(tb) => tb.macs(n, windows, tokens, false),
            DecBlock::Lgci(tb) => tb.macs(n, windows, tokens, true),
            DecBlock::Res(rb) => rb.macs(n, h, w),
        })
        .sum()
}

impl QueryGen {
    fn forward<T: Scalar>(&self, s: &mut Session<T>, src: Var, window: usize) -> Result<Var> {
        let n = s.shape(src)[0];
        match self {
            QueryGen::Pooled { dam, proj } => {
                let y = dam.forward(s, src)?;
                let y = s.adaptive_avgpool2d(y, window, window)?;
                let y = proj.forward(s, y)?;
                let c = proj.cout;
                let y = s.reshape(y, &[n, c, window * window])?;
                Ok(s.permute(y, &[0, 2, 1])?)
            }
            QueryGen::Learnable { tokens, dim } => {
                let t = s.param(*tokens);
                let t = s.reshape(t, &[1, window * window, *dim])?;
                Ok(s.repeat_batch(t, n)?)
            }
        }
    }

    fn macs(&self, n: usize, h: usize, w: usize, window: usize) -> u64 {
        match self {
            QueryGen::Pooled { dam, proj } => dam.macs(n, h, w) + proj.macs(n, window, window),
            QueryGen::Learnable { .. } => 0,
        }
    }
}

impl<T: Scalar> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    fn input_dims(&self, s: &Session<T>, x: Var) -> Result<(usize, usize, usize)> {
        match s.shape(x)[..] {
            [n, 3, h, w] => {
                self.cfg.check_input(h, w)?;
                Ok((n, h, w))
            }
            ref other => Err(TensorError::ShapeMismatch {
                op: "forward",
                lhs: other.to_vec(),
                rhs: vec![0, 3, 0, 0],
            }
            .into()),
        }
    }

    /// Encoder features `F^1..F^4`, plus `F^5` when aggregation is off.
    pub fn encode(&self, s: &mut Session<T>, x: Var) -> Result<(Vec<Var>, Option<Var>)> {
        self.input_dims(s, x)?;
        let mut cur = self.net.stem.forward(s, x)?;
        let mut feats = Vec::with_capacity(4);
        for (l, blocks) in self.net.enc.iter().enumerate() {
            if l > 0 {
                cur = self.net.down[l - 1].forward(s, cur)?;
            }
            for b in blocks {
                cur = b.forward(s, cur)?;
            }
            feats.push(cur);
        }
        let f5 = match self.net.down.get(3) {
            Some(d) => Some(d.forward(s, cur)?),
            None => None,
        };
        Ok((feats, f5))
    }

    /// Latent input from the four encoder levels (`F_S`), or `F^5` when aggregation is off.
    pub fn safa_aggregate(&self, s: &mut Session<T>, feats: &[Var], f5: Option<Var>) -> Result<Var> {
        let factor = |l: usize| 1usize << (4 - l);
        let sum = |s: &mut Session<T>, parts: Vec<Var>| -> Result<Var> {
            let mut acc = parts[0];
            for &p in &parts[1..] {
                acc = s.add(acc, p)?;
            }
            Ok(acc)
        };
        match &self.net.safa {
            Safa::Off => f5.ok_or_else(|| Error::InvalidConfig("missing level-5 feature".into())),
            Safa::Pool { avg, branches } => {
                let mut parts = Vec::new();
                for (l, conv) in branches.iter().enumerate() {
                    let f = factor(l);
                    let p = if *avg {
                        s.avgpool2d(feats[l], f, f)?
                    } else {
                        s.maxpool2d(feats[l], f, f)?
                    };
                    parts.push(conv.forward(s, p)?);
                }
                sum(s, parts)
            }
            Safa::Strided { branches } => {
                let mut parts = Vec::new();
                for (l, conv) in branches.iter().enumerate() {
                    parts.push(conv.forward(s, feats[l])?);
                }
                sum(s, parts)
            }
            Safa::Cat { branches, fuse } => {
                let mut parts = Vec::new();
                for (l, conv) in branches.iter().enumerate() {
                    let f = factor(l);
                    let p = s.maxpool2d(feats[l], f, f)?;
                    parts.push(conv.forward(s, p)?);
                }
                let cat = s.concat(&parts, 1)?;
                fuse.forward(s, cat)
            }
        }
    }

    /// Window self-attention blocks on the latent grid; shape preserved.
    pub fn latent_forward(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let d = s.shape(x).to_vec();
        let win = self.cfg.latent_window(d[2] * 16, d[3] * 16);
        let mut cur = s.window_partition(x, win)?;
        for b in &self.net.latent {
            cur = b.forward(s, cur, None, win)?;
        }
        Ok(s.window_merge(cur, win, (d[0], d[1], d[2], d[3]))?)
    }

    /// Queries per decoder level, finest first, computed from the latent feature.
    ///
    /// Levels without cross-attention and levels whose queries come from the
    /// decoder's own feature yield `None`.
    pub fn generate_queries(&self, s: &mut Session<T>, latent: Var) -> Result<Vec<Option<Var>>> {
        let mut out = Vec::with_capacity(4);
        for level in &self.net.dec {
            let q = match &level.query {
                Some(g) if self.cfg.ablation.queries != QueryMode::SameLayer => {
                    Some(g.forward(s, latent, self.cfg.window)?)
                }
                _ => None,
            };
            out.push(q);
        }
        Ok(out)
    }

    /// Decoder features `F_d^1..F_d^4` and the queries each level used.
    pub fn decode(
        &self,
        s: &mut Session<T>,
        latent: Var,
        feats: &[Var],
        queries: &[Option<Var>],
    ) -> Result<(Vec<Var>, Vec<Option<Var>>)> {
        let mut dec = vec![latent; 4];
        let mut used = vec![None; 4];
        let mut cur = latent;
        for l in (0..4).rev() {
            let level = &self.net.dec[l];
            let up = s.upsample_nearest2x(cur)?;
            let up = level.matcher.forward(s, up)?;
            let x = s.add(up, feats[l])?;
            let q = match (&level.query, self.cfg.ablation.queries) {
                (Some(g), QueryMode::SameLayer) => Some(g.forward(s, x, self.cfg.window)?),
                (Some(_), _) => queries[l],
                (None, _) => None,
            };
            cur = run_blocks(s, &level.blocks, x, self.cfg.window, q)?;
            dec[l] = cur;
            used[l] = q;
        }
        Ok((dec, used))
    }

    /// Position encoding `P^i` (i = 2, 3, 4) at full resolution from `F_e^i` and `F_d^i`.
    ///
    /// The 1×1 projection commutes with nearest upsampling, so it runs at the
    /// level's own resolution before upsampling.
    pub fn dam_position_encoding(&self, s: &mut Session<T>, level: usize, fe: Var, fd: Var) -> Result<Var> {
        let Head::On { pos, .. } = &self.net.head else {
            return Err(Error::InvalidConfig("refinement head is disabled".into()));
        };
        if !(2..=4).contains(&level) {
            return Err(Error::InvalidConfig(format!("no position encoding for level {level}")));
        }
        let (proj, dam) = &pos[level - 2];
        let x = s.add(fe, fd)?;
        let x = proj.forward(s, x)?;
        let x = s.upsample_nearest(x, 1 << (level - 1))?;
        dam.forward(s, x)
    }

    /// Progressive refinement of `f_in` with `P^2, P^3, P^4`, projected to RGB.
    /// Returns the output and the level of each consumed encoding, in order.
    pub fn refine_progressive(&self, s: &mut Session<T>, f_in: Var, pos: &[Var]) -> Result<(Var, Vec<usize>)> {
        match &self.net.head {
            Head::Off { out } => Ok((out.forward(s, f_in)?, Vec::new())),
            Head::On { stages, out, .. } => {
                let mut cur = f_in;
                let mut order = Vec::new();
                for (k, blocks) in stages.iter().enumerate() {
                    cur = s.add(cur, pos[k])?;
                    order.push(k + 2);
                    for b in blocks {
                        cur = b.forward(s, cur)?;
                    }
                }
                Ok((out.forward(s, cur)?, order))
            }
        }
    }

    pub fn forward_traced(&self, s: &mut Session<T>, x: Var) -> Result<Trace> {
        let (feats, f5) = self.encode(s, x)?;
        let latent_in = self.safa_aggregate(s, &feats, f5)?;
        let latent = self.latent_forward(s, latent_in)?;
        let queries = self.generate_queries(s, latent)?;
        let (decoder, queries) = self.decode(s, latent, &feats, &queries)?;
        let mut pos = Vec::new();
        if matches!(self.net.head, Head::On { .. }) {
            for level in 2..=4 {
                pos.push(self.dam_position_encoding(s, level, feats[level - 1], decoder[level - 1])?);
            }
        }
        let (mut output, stages) = self.refine_progressive(s, decoder[0], &pos)?;
        if self.cfg.global_residual {
            output = s.add(output, x)?;
        }
        Ok(Trace {
            encoder: feats,
            latent_in,
            latent,
            queries,
            decoder,
            pos,
            stages,
            output,
        })
    }

    /// `[N,3,H,W]` → restored `[N,3,H,W]`, unclipped.
    pub fn forward(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        Ok(self.forward_traced(s, x)?.output)
    }

    /// Inference on one `[3,H,W]` image without recording gradients.
    pub fn predict(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = image.shape().to_vec();
        let mut s = Session::inference(&self.params);
        let x = s.constant(image.reshape(&[1, shape[0], shape[1], shape[2]])?);
        let y = self.forward(&mut s, x)?;
        Ok(s.value(y).reshape(&shape)?)
    }

    /// Multiply-accumulate count of one forward pass on an `n × 3 × h × w` batch.
    pub fn flops_estimate(&self, n: usize, h: usize, w: usize) -> Result<u64> {
        self.cfg.check_input(h, w)?;
        let net = &self.net;
        let res = |l: usize| (h >> l, w >> l);
        let mut macs = net.stem.macs(n, h, w);
        for (l, blocks) in net.enc.iter().enumerate() {
            let (lh, lw) = res(l);
            if l > 0 {
                let (ph, pw) = res(l - 1);
                macs += net.down[l - 1].macs(n, ph, pw);
            }
            macs += blocks.iter().map(|b| b.macs(n, lh, lw)).sum::<u64>();
        }
        if let Some(d) = net.down.get(3) {
            let (ph, pw) = res(3);
            macs += d.macs(n, ph, pw);
        }
        let (h16, w16) = res(4);
        macs += match &net.safa {
            Safa::Off => 0,
            Safa::Pool { branches, .. } => branches.iter().map(|c| c.macs(n, h16, w16)).sum(),
            Safa::Strided { branches } => branches
                .iter()
                .enumerate()
                .map(|(l, c)| c.macs(n, res(l).0, res(l).1))
                .sum(),
            Safa::Cat { branches, fuse } => {
                branches.iter().map(|c| c.macs(n, h16, w16)).sum::<u64>() + fuse.macs(n, h16, w16)
            }
        };
        let lwin = self.cfg.latent_window(h, w);
        let lwindows = n * (h16 / lwin) * (w16 / lwin);
        macs += net
            .latent
            .iter()
            .map(|b| b.macs(n, lwindows, lwin * lwin, false))
            .sum::<u64>();
        let win = self.cfg.window;
        for (l, level) in net.dec.iter().enumerate() {
            let (lh, lw) = res(l);
            macs += level.matcher.macs(n, lh, lw);
            if let Some(q) = &level.query {
                let (qh, qw) = if self.cfg.ablation.queries == QueryMode::SameLayer {
                    (lh, lw)
                } else {
                    (h16, w16)
                };
                macs += q.macs(n, qh, qw, win);
            }
            macs += blocks_macs(&level.blocks, n, lh, lw, win);
        }
        macs += match &net.head {
            Head::Off { out } => out.macs(n, h, w),
            Head::On { pos, stages, out } => {
                let mut m = out.macs(n, h, w);
                for (k, (proj, dam)) in pos.iter().enumerate() {
                    let (lh, lw) = res(k + 1);
                    m += proj.macs(n, lh, lw) + dam.macs(n, h, w);
                }
                for b in stages.iter().flatten() {
                    m += b.macs(n, h, w);
                }
                m
            }
        };
        Ok(macs)
    }
}
