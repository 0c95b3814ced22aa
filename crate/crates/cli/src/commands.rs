use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use snowformer::eval::{evaluate_dataset, ModelSummary};
use snowformer::image_io::{png_read, png_write};
use snowformer::model::{build_model, Model};
use snowformer::synth::{dataset_read, synthesize_dataset};
use snowformer::tiling::{plan_tiles, tiled_inference, Identity};
use snowformer::train::checkpoint::load_training;
use snowformer::train::{StepLog, Trainer};
use snowformer::RunConfig;

use crate::args::{Command, EvalArgs, InferArgs, SynthArgs, TrainArgs};
use crate::{usage, CliResult};

pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.snwf";
pub const INFER_MANIFEST: &str = "infer.json";

pub fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train(&a),
        Command::Infer(a) => infer(&a),
        Command::Eval(a) => eval(&a),
        Command::Gradcheck(a) => crate::gradcheck::run(&a),
        Command::Summary(a) => crate::summary::run(&a),
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| usage(format!("{flag} is required (or set it under `paths` in --config)")))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn synth(args: &SynthArgs) -> CliResult<()> {
    let cfg = args.resolve()?;
    let out = required(&cfg.paths.out, "--out")?;
    let manifest = synthesize_dataset(&cfg.synth, args.first, args.count, out)?;
    println!(
        "wrote {} pairs ({}x{}) to {} [synth config sha256 {}]",
        manifest.count,
        cfg.synth.image_size[0],
        cfg.synth.image_size[1],
        out.display(),
        manifest.config_sha256
    );
    Ok(())
}

#[derive(Serialize)]
struct LogLine<'a> {
    #[serde(flatten)]
    step: &'a StepLog,
    config_sha256: &'a str,
}

fn checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.snwf")
}

fn train(args: &TrainArgs) -> CliResult<()> {
    let cfg = args.resolve()?;
    let data_dir = required(&cfg.paths.data, "--data")?;
    let out = required(&cfg.paths.out, "--out")?;
    let hash = cfg.sha256();
    let data = dataset_read::<f32>(data_dir, None)?;
    if data.pairs.is_empty() {
        return Err(usage(format!("{} contains no training pairs", data_dir.display())));
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_text(&out.join(CONFIG_FILE), &(cfg.stamped_json() + "\n"))?;

    let mut model = build_model::<f32>(&cfg.model, cfg.seed)?;
    let mut trainer = Trainer::new(&mut model, cfg.train.clone())?;
    if let Some(ckpt) = &cfg.paths.checkpoint {
        trainer.resume(ckpt)?;
        eprintln!("resumed from {} at step {}", ckpt.display(), trainer.step_index());
    }
    let log_path = out.join(LOG_FILE);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(cfg.paths.checkpoint.is_some())
        .truncate(cfg.paths.checkpoint.is_none())
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(file);
    let every = cfg.train.checkpoint_every;
    let total = cfg.train.steps;
    let mut io_error = None;
    let result = trainer.run(&data.pairs, |tr, s| {
        let line = serde_json::to_string(&LogLine {
            step: s,
            config_sha256: &hash,
        })
        .expect("log line serializes");
        if let Err(e) = writeln!(log, "{line}") {
            io_error = Some(e);
        }
        let done = tr.step_index();
        if every > 0 && done % every == 0 {
            tr.save(&out.join(checkpoint_name(done)))?;
        }
        if args.log_every > 0 && (done % args.log_every == 0 || done == total) {
            eprintln!(
                "step {done}/{total}  lr {:.3e}  loss {:.4}  psnr {:.2} dB",
                s.lr, s.loss, s.psnr
            );
        }
        Ok(())
    });
    log.flush().with_context(|| format!("writing {}", log_path.display()))?;
    if let Some(e) = io_error {
        return Err(anyhow::Error::new(e)
            .context(format!("writing {}", log_path.display()))
            .into());
    }
    result?;
    let final_path = out.join(FINAL_CHECKPOINT);
    trainer.save(&final_path)?;
    println!(
        "trained {} steps; checkpoint {} [config sha256 {hash}]",
        trainer.step_index(),
        final_path.display()
    );
    Ok(())
}

/// Builds the configured model and loads its weights from the checkpoint.
fn load_model(cfg: &RunConfig) -> CliResult<Model<f32>> {
    let ckpt = required(&cfg.paths.checkpoint, "--checkpoint")?;
    let mut model = build_model::<f32>(&cfg.model, cfg.seed)?;
    load_training(ckpt, model.params_mut(), cfg.train.adam.clone())?;
    Ok(model)
}

fn png_inputs(input: &Path) -> CliResult<Vec<PathBuf>> {
    if input.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(input)
            .with_context(|| format!("reading {}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        Ok(files)
    } else {
        Ok(vec![input.to_path_buf()])
    }
}

#[derive(Serialize)]
struct InferRecord {
    config_sha256: String,
    checkpoint: PathBuf,
    images: Vec<String>,
}

fn infer(args: &InferArgs) -> CliResult<()> {
    let cfg = args.resolve()?;
    let out = required(&cfg.paths.out, "--out")?;
    let model = load_model(&cfg)?;
    let inputs = png_inputs(&args.input)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut names = Vec::with_capacity(inputs.len());
    for path in &inputs {
        let image = png_read::<f32>(path)?;
        let s = image.shape();
        let plan = plan_tiles(s[1], s[2], cfg.tiling)?;
        let restored = tiled_inference(&model, &image, &plan)?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "restored.png".into());
        png_write(&restored, &out.join(&name))?;
        eprintln!("{} -> {} ({} tiles)", path.display(), out.join(&name).display(), plan.tile_count());
        names.push(name);
    }
    let record = InferRecord {
        config_sha256: cfg.sha256(),
        checkpoint: cfg.paths.checkpoint.clone().unwrap_or_default(),
        images: names,
    };
    let text = serde_json::to_string_pretty(&record).expect("record serializes");
    write_text(&out.join(INFER_MANIFEST), &(text + "\n"))?;
    println!("restored {} image(s) into {}", inputs.len(), out.display());
    Ok(())
}

fn eval(args: &EvalArgs) -> CliResult<()> {
    let cfg = args.resolve()?;
    let data = required(&cfg.paths.data, "--data")?;
    let report = if args.baseline {
        let summary = ModelSummary {
            param_count: 0,
            mac_estimate: 0,
            config_sha256: cfg.sha256(),
        };
        evaluate_dataset(&Identity, data, cfg.tiling, summary)?
    } else {
        if cfg.paths.checkpoint.is_none() {
            return Err(usage("eval needs --checkpoint or --baseline"));
        }
        let model = load_model(&cfg)?;
        let summary = ModelSummary {
            param_count: model.param_count(),
            mac_estimate: model.flops_estimate(1, 256, 256)?,
            config_sha256: cfg.sha256(),
        };
        evaluate_dataset(&model, data, cfg.tiling, summary)?
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    if let Some(path) = &args.out {
        let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        f.write_all(text.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{text}");
    Ok(())
}
