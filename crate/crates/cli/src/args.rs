use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use snowformer::model::Ablation;
use snowformer::RunConfig;

use crate::{usage, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "snowformer",
    version,
    about = "Single-image snow removal: data synthesis, training, tiled inference and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate snowy/clean PNG pairs and a manifest.
    Synth(SynthArgs),
    /// Train a model on a synthesized dataset.
    Train(TrainArgs),
    /// Restore images with a trained checkpoint.
    Infer(InferArgs),
    /// Score a checkpoint (or the unrestored input) on a dataset.
    Eval(EvalArgs),
    /// Finite-difference gradient checks of every op and of a whole model.
    Gradcheck(GradcheckArgs),
    /// Parameter and multiply-accumulate counts next to published figures.
    Summary(SummaryArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON run configuration; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Channel multiplier (1.0 is the full model, 0.25 the tiny one).
    #[arg(long)]
    pub scale: Option<f64>,
    /// Comma-separated overrides such as `safa=cat` or `queries=learnable`.
    #[arg(long)]
    pub ablation: Option<Ablation>,
    /// Attention window side.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    /// Tile side in pixels; a multiple of 64.
    #[arg(long)]
    pub tile: Option<usize>,
    #[arg(long)]
    pub overlap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    /// Index of the first sample; disjoint ranges give disjoint splits.
    #[arg(long, default_value_t = 0)]
    pub first: u64,
    /// Square image side; overridden per axis by --height/--width.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory for the log, config and checkpoints.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Total number of steps, counting those before a resume.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Base learning rate of the cyclic schedule.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub crop: Option<usize>,
    /// Weight of the perceptual loss; 0 disables it.
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Seeds both initialisation and batch sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub no_flip: bool,
    #[arg(long)]
    pub no_rotate: bool,
    /// Checkpoint to continue from; weights and optimiser state are restored.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Print progress to stderr every N steps; 0 is silent.
    #[arg(long, default_value_t = 100)]
    pub log_every: u64,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub tiles: TileArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// A PNG file or a directory of PNG files.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub tiles: TileArgs,
    #[arg(long, conflicts_with = "baseline")]
    pub checkpoint: Option<PathBuf>,
    /// Score the snowy inputs themselves instead of a model's output.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seeds for the per-op suite.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// Seeds for the whole-model check; 0 skips it.
    #[arg(long, default_value_t = 20)]
    pub model_seeds: u64,
    /// Channel multiplier of the checked model.
    #[arg(long, default_value_t = 0.25)]
    pub scale: f64,
    #[arg(long)]
    pub ablation: Option<Ablation>,
    /// Deliberately corrupt the backward rule of one op kind, e.g. `softmax`.
    #[arg(long)]
    pub fault: Option<String>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SummaryArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Square input side for the multiply-accumulate count.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// Print rows as JSON.
    #[arg(long)]
    pub json: bool,
}

/// Reads a run configuration, either bare or as written next to training outputs.
pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let inner = match value.as_object() {
        Some(obj) if obj.len() == 2 && obj.contains_key("config") && obj.contains_key("config_sha256") => {
            obj["config"].to_string()
        }
        _ => text,
    };
    RunConfig::from_json(&inner, path).map_err(usage)
}

impl ConfigArgs {
    pub fn load(&self) -> CliResult<RunConfig> {
        match &self.config {
            Some(p) => load_config(p),
            None => Ok(RunConfig::default()),
        }
    }
}

impl ModelArgs {
    pub fn is_empty(&self) -> bool {
        self.scale.is_none() && self.ablation.is_none() && self.window.is_none()
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.scale {
            cfg.model.scale = s;
        }
        if let Some(a) = self.ablation {
            cfg.model.ablation = a;
        }
        if let Some(w) = self.window {
            cfg.model.window = w;
        }
    }
}

impl TileArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(t) = self.tile {
            cfg.tiling.tile = t;
        }
        if let Some(o) = self.overlap {
            cfg.tiling.overlap = o;
        }
    }
}

impl SynthArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = self.config.load()?;
        let [mut h, mut w] = cfg.synth.image_size;
        if let Some(s) = self.size {
            (h, w) = (s, s);
        }
        h = self.height.unwrap_or(h);
        w = self.width.unwrap_or(w);
        cfg.synth.image_size = [h, w];
        if let Some(s) = self.seed {
            cfg.synth.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.paths.out = Some(o.clone());
        }
        cfg.synth.validate().map_err(usage)?;
        Ok(cfg)
    }
}

impl TrainArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = self.config.load()?;
        self.model.apply(&mut cfg);
        let t = &mut cfg.train;
        if let Some(v) = self.steps {
            t.steps = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.lr {
            t.schedule.lr0 = v;
        }
        if let Some(v) = self.crop {
            t.augment.crop = v;
        }
        if let Some(v) = self.lambda2 {
            t.loss.lambda2 = v;
        }
        if let Some(v) = self.checkpoint_every {
            t.checkpoint_every = v;
        }
        if self.no_flip {
            t.augment.flip = false;
        }
        if self.no_rotate {
            t.augment.rotate = false;
        }
        if let Some(s) = self.seed {
            t.seed = s;
            cfg.seed = s;
        }
        if let Some(d) = &self.data {
            cfg.paths.data = Some(d.clone());
        }
        if let Some(o) = &self.out {
            cfg.paths.out = Some(o.clone());
        }
        if let Some(r) = &self.resume {
            cfg.paths.checkpoint = Some(r.clone());
        }
        cfg.validate().map_err(usage)?;
        let crop = cfg.train.augment.crop;
        cfg.model.check_input(crop, crop).map_err(usage)?;
        Ok(cfg)
    }
}

/// Starts from `--config`, else from the `config.json` written next to the
/// checkpoint by `train`, else from defaults.
fn model_config(config: &ConfigArgs, checkpoint: Option<&Path>) -> CliResult<RunConfig> {
    if config.config.is_some() {
        return config.load();
    }
    if let Some(sibling) = checkpoint.and_then(Path::parent).map(|d| d.join("config.json")) {
        if sibling.is_file() {
            return load_config(&sibling);
        }
    }
    Ok(RunConfig::default())
}

impl InferArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = model_config(&self.config, self.checkpoint.as_deref())?;
        self.model.apply(&mut cfg);
        self.tiles.apply(&mut cfg);
        if let Some(c) = &self.checkpoint {
            cfg.paths.checkpoint = Some(c.clone());
        }
        if let Some(o) = &self.out {
            cfg.paths.out = Some(o.clone());
        }
        cfg.model.validate().map_err(usage)?;
        Ok(cfg)
    }
}

impl EvalArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = model_config(&self.config, self.checkpoint.as_deref())?;
        self.model.apply(&mut cfg);
        self.tiles.apply(&mut cfg);
        if let Some(c) = &self.checkpoint {
            cfg.paths.checkpoint = Some(c.clone());
        }
        if let Some(d) = &self.data {
            cfg.paths.data = Some(d.clone());
        }
        cfg.model.validate().map_err(usage)?;
        Ok(cfg)
    }
}
