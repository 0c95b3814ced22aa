use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use snowformer_tensor::TensorError;

use crate::error::{Error, Result};

/// How encoder features are aggregated into the latent input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafaMode {
    /// No aggregation; the latent input is a fifth encoder level.
    Off,
    Avgpool,
    /// Strided 3×3 convolutions instead of pooling.
    Conv,
    /// Max-pooled branches concatenated and fused by a 1×1 convolution.
    Cat,
    #[default]
    MaxpoolAdd,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMode {
    /// Alternating local and local-global blocks, starting local.
    #[default]
    Full,
    LiOnly,
    LgciOnly,
    /// Local blocks replaced by convolutional residual blocks.
    Resblock,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    #[default]
    ScaleAware,
    Learnable,
    SameLayer,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArhMode {
    #[default]
    On,
    Off,
}

macro_rules! keyword_enum {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$(<$ty>::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $(<$ty>::$variant => $name),+ }
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(<$ty>::$variant),)+
                    _ => Err(Error::InvalidConfig(format!(
                        "unknown value `{s}`, expected one of: {}",
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

keyword_enum!(SafaMode { Off => "off", Avgpool => "avgpool", Conv => "conv", Cat => "cat", MaxpoolAdd => "maxpool_add" });
keyword_enum!(DecoderMode { Full => "full", LiOnly => "li_only", LgciOnly => "lgci_only", Resblock => "resblock" });
keyword_enum!(QueryMode { ScaleAware => "scale_aware", Learnable => "learnable", SameLayer => "same_layer" });
keyword_enum!(ArhMode { On => "on", Off => "off" });

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub safa: SafaMode,
    pub decoder: DecoderMode,
    pub queries: QueryMode,
    pub arh: ArhMode,
}

impl Ablation {
    /// Applies one `key=value` override such as `safa=cat`.
    pub fn apply(&mut self, item: &str) -> Result<()> {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("ablation `{item}` is not of the form key=value"))
        })?;
        match key.trim() {
            "safa" => self.safa = value.trim().parse()?,
            "decoder" => self.decoder = value.trim().parse()?,
            "queries" => self.queries = value.trim().parse()?,
            "arh" => self.arh = value.trim().parse()?,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown ablation axis `{other}`, expected safa, decoder, queries or arh"
                )))
            }
        }
        Ok(())
    }

    /// Every single-axis departure from the default configuration.
    pub fn variants() -> Vec<(String, Ablation)> {
        let base = Ablation::default();
        let mut out = Vec::new();
        for &m in SafaMode::ALL.iter().filter(|&&m| m != base.safa) {
            out.push((format!("safa={m}"), Ablation { safa: m, ..base }));
        }
        for &m in DecoderMode::ALL.iter().filter(|&&m| m != base.decoder) {
            out.push((format!("decoder={m}"), Ablation { decoder: m, ..base }));
        }
        for &m in QueryMode::ALL.iter().filter(|&&m| m != base.queries) {
            out.push((format!("queries={m}"), Ablation { queries: m, ..base }));
        }
        out.push(("arh=off".into(), Ablation { arh: ArhMode::Off, ..base }));
        out
    }
}

/// Comma-separated overrides applied to the default, e.g. `safa=cat,arh=off`.
impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut a = Ablation::default();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            a.apply(part)?;
        }
        Ok(a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Channels of levels 1 to 5 before `scale` is applied.
    pub channels: [usize; 5],
    pub encoder_blocks: [usize; 4],
    pub latent_blocks: usize,
    pub latent_heads: usize,
    /// Decoder blocks per level, finest level first.
    pub decoder_blocks: [usize; 4],
    pub decoder_heads: [usize; 4],
    pub window: usize,
    pub arh_blocks_per_stage: usize,
    pub ffn_ratio: usize,
    /// Adds the input image to the head output so the network predicts a residual.
    pub global_residual: bool,
    pub ablation: Ablation,
    /// Channel multiplier; `0.25` gives the tiny test model.
    pub scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: [16, 32, 64, 128, 256],
            encoder_blocks: [4, 6, 7, 8],
            latent_blocks: 8,
            latent_heads: 16,
            decoder_blocks: [4, 6, 7, 8],
            decoder_heads: [1, 2, 4, 8],
            window: 8,
            arh_blocks_per_stage: 2,
            ffn_ratio: 2,
            global_residual: true,
            ablation: Ablation::default(),
            scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn tiny() -> Self {
        Self {
            scale: 0.25,
            ..Self::default()
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    /// Channel widths after scaling.
    pub fn widths(&self) -> [usize; 5] {
        self.channels
            .map(|c| ((c as f64 * self.scale).round() as usize).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.widths();
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad(format!("scale {} must be positive", self.scale));
        }
        if c.windows(2).any(|p| p[0] >= p[1]) {
            return bad(format!("channels {c:?} must be strictly increasing"));
        }
        if self.window == 0 || self.ffn_ratio == 0 || self.latent_heads == 0 {
            return bad("window, ffn_ratio and latent_heads must be positive".into());
        }
        if c[4] % self.latent_heads != 0 {
            return bad(format!(
                "latent heads {} do not divide {} channels",
                self.latent_heads, c[4]
            ));
        }
        for i in 0..4 {
            let h = self.decoder_heads[i];
            if h == 0 || c[i] % h != 0 {
                return bad(format!(
                    "decoder level {} heads {h} do not divide {} channels",
                    i + 1,
                    c[i]
                ));
            }
        }
        Ok(())
    }

    /// Checks that an `h × w` input fits the network.
    ///
    /// Four stride-2 stages need divisibility by 16; every decoder level must
    /// also tile exactly into attention windows.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(TensorError::NotDivisible {
                op: "encode",
                size: if h % 16 != 0 || h == 0 { h } else { w },
                divisor: 16,
            }
            .into());
        }
        for level in 0..4 {
            let (lh, lw) = (h >> level, w >> level);
            if lh % self.window != 0 || lw % self.window != 0 {
                return Err(Error::InvalidConfig(format!(
                    "window {} does not divide decoder level {} size {lh}x{lw} of a {h}x{w} input",
                    self.window,
                    level + 1
                )));
            }
        }
        Ok(())
    }

    /// Attention window side in the latent layer for an `h × w` input: the
    /// largest divisor of both latent sides not exceeding `window`.
    pub fn latent_window(&self, h: usize, w: usize) -> usize {
        let (lh, lw) = (h / 16, w / 16);
        (1..=self.window.min(lh).min(lw))
            .rev()
            .find(|d| lh % d == 0 && lw % d == 0)
            .unwrap_or(1)
    }
}
