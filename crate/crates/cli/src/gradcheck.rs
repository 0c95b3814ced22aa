use std::collections::BTreeMap;

use anyhow::anyhow;
use serde::Serialize;
use snowformer::gradcheck::{check_model, ModelCheck, ModelCheckOptions};
use snowformer::model::ModelConfig;
use snowformer::tensor::gradcheck::{grad_check, suite, GradCheckOptions};
use snowformer::tensor::OpKind;

use crate::args::GradcheckArgs;
use crate::{usage, CliResult};

const OP_TOL: f64 = 1e-4;

#[derive(Debug, Serialize)]
struct OpRow {
    case: &'static str,
    kind: &'static str,
    seeds: u64,
    max_rel_err: f64,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct Report {
    op_tolerance: f64,
    ops: Vec<OpRow>,
    model_tolerance: f64,
    model: Vec<ModelCheck>,
    passed: bool,
}

pub fn run(args: &GradcheckArgs) -> CliResult<()> {
    let fault = match &args.fault {
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| usage(format!("unknown op kind `{name}`")))?),
        None => None,
    };
    let opts = GradCheckOptions {
        rel_tol: OP_TOL,
        fault,
        ..Default::default()
    };
    let mut rows: BTreeMap<&'static str, OpRow> = BTreeMap::new();
    for seed in 0..args.seeds {
        for case in suite::op_cases(seed) {
            let err = grad_check(&case.params, &case.program, &opts)
                .map_err(snowformer::Error::from)?
                .max_rel_err();
            let row = rows.entry(case.name).or_insert(OpRow {
                case: case.name,
                kind: case.kind.name(),
                seeds: 0,
                max_rel_err: 0.0,
                passed: true,
            });
            row.seeds += 1;
            row.max_rel_err = row.max_rel_err.max(err);
            row.passed &= err <= OP_TOL;
        }
    }

    let mut model_cfg = ModelConfig {
        scale: args.scale,
        ..ModelConfig::default()
    };
    if let Some(a) = args.ablation {
        model_cfg.ablation = a;
    }
    model_cfg.validate().map_err(usage)?;
    let model_opts = ModelCheckOptions::default();
    let model = (0..args.model_seeds)
        .map(|seed| check_model(&model_cfg, seed, &model_opts))
        .collect::<Result<Vec<_>, _>>()?;

    let ops: Vec<OpRow> = rows.into_values().collect();
    let failed: Vec<String> = ops
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.case.to_string())
        .chain(model.iter().filter(|m| !m.passed()).map(|m| format!("model seed {}", m.seed)))
        .collect();
    let report = Report {
        op_tolerance: OP_TOL,
        ops,
        model_tolerance: model_opts.rel_tol,
        model,
        passed: failed.is_empty(),
    };

    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        println!("{:<22} {:<18} {:>5} {:>12}  result", "case", "op", "seeds", "max rel err");
        for r in &report.ops {
            let verdict = if r.passed { "ok" } else { "FAIL" };
            println!("{:<22} {:<18} {:>5} {:>12.3e}  {verdict}", r.case, r.kind, r.seeds, r.max_rel_err);
        }
        for m in &report.model {
            let verdict = if m.passed() { "ok" } else { "FAIL" };
            println!(
                "model seed {:<3} directional {:.3e}  worst coordinate {:.3e}  {verdict}",
                m.seed,
                m.directional_rel_err,
                m.coords.iter().map(|c| c.rel_err).fold(0.0, f64::max)
            );
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(anyhow!("gradient check failed for: {}", failed.join(", ")).into())
    }
}
