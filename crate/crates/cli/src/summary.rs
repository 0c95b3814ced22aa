use serde::Serialize;
use snowformer::model::{build_model, Ablation, ModelConfig};

use crate::args::SummaryArgs;
use crate::{usage, CliResult};

/// A configuration with its published parameter count (millions) and
/// GFLOPs at 256×256, where one was reported.
#[derive(Clone, Copy, Debug)]
pub struct ReferenceRow {
    pub ablation: &'static str,
    pub params_m: Option<f64>,
    pub gflops: Option<f64>,
}

const fn row(ablation: &'static str, params_m: f64, gflops: f64) -> ReferenceRow {
    ReferenceRow {
        ablation,
        params_m: Some(params_m),
        gflops: Some(gflops),
    }
}

/// The full model first, then every single-axis ablation.
pub fn reference_rows() -> Vec<ReferenceRow> {
    vec![
        row("", 8.38, 19.44),
        row("safa=off", 8.32, 19.43),
        row("safa=avgpool", 8.38, 19.43),
        row("safa=conv", 8.76, 19.54),
        row("safa=cat", 11.33, 20.20),
        row("decoder=lgci_only", 8.29, 19.22),
        row("decoder=resblock", 8.22, 19.22),
        row("decoder=li_only", 8.35, 19.64),
        row("queries=learnable", 8.50, 19.45),
        row("queries=same_layer", 8.34, 19.50),
        ReferenceRow {
            ablation: "arh=off",
            params_m: None,
            gflops: None,
        },
    ]
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    name: String,
    params: usize,
    reference_params: Option<u64>,
    macs: u64,
    reference_macs: Option<u64>,
    input: [usize; 2],
    config_sha256: String,
}

fn measure(name: String, cfg: &ModelConfig, size: usize, reference: Option<ReferenceRow>) -> CliResult<SummaryRow> {
    cfg.check_input(size, size).map_err(usage)?;
    let model = build_model::<f32>(cfg, 0)?;
    Ok(SummaryRow {
        name,
        params: model.param_count(),
        reference_params: reference.and_then(|r| r.params_m).map(|m| (m * 1e6).round() as u64),
        macs: model.flops_estimate(1, size, size)?,
        reference_macs: reference.and_then(|r| r.gflops).map(|g| (g * 1e9).round() as u64),
        input: [size, size],
        config_sha256: snowformer::config_sha256(cfg),
    })
}

fn millions(v: usize) -> String {
    format!("{:.2}M", v as f64 / 1e6)
}

fn giga(v: u64) -> String {
    format!("{:.2}G", v as f64 / 1e9)
}

pub fn run(args: &SummaryArgs) -> CliResult<()> {
    let size = args.size;
    let mut rows = Vec::new();
    for r in reference_rows() {
        let ablation: Ablation = r.ablation.parse().map_err(usage)?;
        let cfg = ModelConfig::full().with_ablation(ablation);
        let name = if r.ablation.is_empty() { "full".to_string() } else { r.ablation.to_string() };
        rows.push(measure(name, &cfg, size, Some(r))?);
    }
    rows.push(measure("tiny (scale 0.25)".into(), &ModelConfig::tiny(), size, None)?);
    if args.config.config.is_some() || !args.model.is_empty() {
        let mut run_cfg = args.config.load()?;
        args.model.apply(&mut run_cfg);
        run_cfg.model.validate().map_err(usage)?;
        rows.push(measure("configured".into(), &run_cfg.model, size, None)?);
    }

    if args.json {
        println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialize"));
        return Ok(());
    }
    let dash = || "-".to_string();
    println!(
        "{:<20} {:>10} {:>10} {:>12} {:>12}",
        "config",
        "params",
        "reference",
        format!("MACs@{size}"),
        "reference"
    );
    for r in &rows {
        println!(
            "{:<20} {:>10} {:>10} {:>12} {:>12}",
            r.name,
            millions(r.params),
            r.reference_params.map(|p| millions(p as usize)).unwrap_or_else(dash),
            giga(r.macs),
            r.reference_macs.map(giga).unwrap_or_else(dash),
        );
    }
    if size != 256 {
        println!("reference figures are for a 256x256 input");
    }
    Ok(())
}
