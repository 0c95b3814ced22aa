//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snowformer::gradcheck::{check_model, ModelCheckOptions};
use snowformer::image_io::{png_read, png_write};
use snowformer::metrics::{psnr, ssim};
use snowformer::model::layers::TransformerBlock;
use snowformer::model::{build_model, Ablation, ModelConfig};
use snowformer::synth::{compose_snowy, generate, Pair, SynthConfig};
use snowformer::tensor::gradcheck::{grad_check, suite, GradCheckOptions};
use snowformer::tensor::{OpKind, ParamStore, Scalar, Session};
use snowformer::tiling::{plan_tiles, tiled_inference, Identity, TileConfig};
use snowformer::train::checkpoint::{load_training, save_training};
use snowformer::train::{Adam, AdamConfig, AugmentConfig, TrainConfig, Trainer};
use snowformer::Tensor;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn random<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen::<f64>()))
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_snowformer"))
        .env("SNOWFORMER_THREADS", "1")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`snowformer {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn json(text: &str) -> Result<serde_json::Value, String> {
    serde_json::from_str(text).map_err(|e| e.to_string())
}

fn gradient_suite() -> Outcome {
    let opts = GradCheckOptions::default();
    let mut worst_op = (0.0f64, "");
    let mut cases = 0;
    for seed in 0..20 {
        for case in suite::op_cases(seed) {
            let err = grad_check(&case.params, &case.program, &opts)
                .map_err(|e| e.to_string())?
                .max_rel_err();
            ensure!(err <= 1e-4, "{} seed {seed}: rel err {err:e}", case.name);
            if err > worst_op.0 {
                worst_op = (err, case.name);
            }
            cases += 1;
        }
    }
    let mut worst_model = 0.0f64;
    for seed in 0..20 {
        let r = check_model(&ModelConfig::tiny(), seed, &ModelCheckOptions::default()).map_err(|e| e.to_string())?;
        ensure!(r.passed(), "model seed {seed}: rel err {:e}", r.max_rel_err());
        worst_model = worst_model.max(r.max_rel_err());
    }
    Ok(format!(
        "{cases} op cases over 20 seeds, worst {:.1e} ({}); tiny model over 20 seeds, worst {worst_model:.1e}",
        worst_op.0, worst_op.1
    ))
}

fn physics_identities() -> Outcome {
    let cfg = SynthConfig::default().with_size(48, 64);
    for idx in 0..5 {
        let s = generate(&cfg, idx).map_err(|e| e.to_string())?;
        let ones = Tensor::<f64>::ones(&[1, 48, 64]);
        let (k, i) = compose_snowy(&s.j, &s.r, &s.z, &s.c, &ones, &s.a).map_err(|e| e.to_string())?;
        ensure!(i.data() == k.data(), "sample {idx}: T=1 but I != K");
        let zeros = Tensor::<f64>::zeros(&[1, 48, 64]);
        let (_, i) = compose_snowy(&s.j, &zeros, &s.z, &s.c, &ones, &s.a).map_err(|e| e.to_string())?;
        ensure!(i.data() == s.j.data(), "sample {idx}: R=0, T=1 but I != J");
    }
    let f = |c, v| Tensor::<f64>::full(&[c, 1, 1], v);
    let (_, i) = compose_snowy(&f(3, 0.2), &f(1, 1.0), &f(3, 1.0), &f(3, 1.0), &f(1, 0.5), &f(3, 0.8))
        .map_err(|e| e.to_string())?;
    let err = i.data().iter().map(|v| (v - 0.9).abs()).fold(0.0, f64::max);
    ensure!(err <= 1e-12, "scalar case off by {err:e}");
    Ok(format!("identities exact on 5 samples; scalar case error {err:.1e}"))
}

fn softmax_rows<T: Scalar>(s: &Session<T>) -> Vec<f64> {
    let mut sums = Vec::new();
    for (v, kind) in s.op_kinds() {
        if kind == OpKind::Softmax {
            let t = s.value(v);
            let n = *t.shape().last().unwrap();
            sums.extend(t.data().chunks(n).map(|r| r.iter().map(|e| e.as_f64()).sum::<f64>()));
        }
    }
    sums
}

/// Queries per decoder level, and whether every window of a sample saw the same queries.
fn query_probe(cfg: &ModelConfig, batch: &Tensor<f32>) -> (Vec<Tensor<f32>>, bool) {
    let m = build_model::<f32>(cfg, 6).unwrap();
    let mut s = Session::inference(m.params());
    let x = s.constant(batch.clone());
    let t = m.forward_traced(&mut s, x).unwrap();
    let queries = t.queries.iter().flatten().map(|&q| s.value(q).clone()).collect();
    let n = batch.shape()[0];
    let mut shared = true;
    for (v, kind) in s.op_kinds() {
        if kind == OpKind::RepeatBatch {
            let r = s.value(v);
            let per: usize = r.shape()[1..].iter().product();
            let windows = r.shape()[0] / n;
            for img in 0..n {
                let first = &r.data()[img * windows * per..][..per];
                shared &= (1..windows).all(|w| first == &r.data()[(img * windows + w) * per..][..per]);
            }
        }
    }
    (queries, shared)
}

fn samples_differ(q: &Tensor<f32>) -> bool {
    let len = q.numel() / q.shape()[0];
    q.data()[..len] != q.data()[len..2 * len]
}

fn attention_invariants() -> Outcome {
    let batch = random::<f32>(&[2, 3, 64, 64], 3);
    let mut rows = 0;
    let mut worst = 0.0f64;
    for (_, ablation) in std::iter::once(("default".to_string(), Ablation::default())).chain(Ablation::variants()) {
        let m = build_model::<f32>(&ModelConfig::tiny().with_ablation(ablation), 2).unwrap();
        let mut s = Session::inference(m.params());
        let x = s.constant(batch.clone());
        m.forward(&mut s, x).map_err(|e| e.to_string())?;
        for sum in softmax_rows(&s) {
            worst = worst.max((sum - 1.0).abs());
            rows += 1;
        }
    }
    ensure!(worst <= 1e-6, "softmax row sum off by {worst:e}");

    let mut store = ParamStore::<f64>::new();
    let blk = TransformerBlock::standalone(&mut store, "blk", 16, 4, 4, 2, 11).unwrap();
    let x = random::<f64>(&[3, 16, 16], 12).map(|v| 2.0 * v - 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut perm: Vec<usize> = (0..16).collect();
    for i in (1..16).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let permute = |t: &Tensor<f64>| {
        Tensor::from_fn(&[3, 16, 16], |i| {
            let (b, n, c) = (i / 256, i / 16 % 16, i % 16);
            t.data()[(b * 16 + perm[n]) * 16 + c]
        })
    };
    let apply = |t: Tensor<f64>| {
        let mut s = Session::inference(&store);
        let v = s.constant(t);
        let y = blk.forward(&mut s, v, None, 4).unwrap();
        s.value(y).clone()
    };
    let equiv = apply(permute(&x)).max_abs_diff(&permute(&apply(x)));
    ensure!(equiv <= 1e-6, "permutation equivariance off by {equiv:e}");

    let (scale_aware, shared) = query_probe(&ModelConfig::tiny(), &batch);
    ensure!(shared, "scale-aware queries differ between windows of one sample");
    ensure!(
        scale_aware.len() == 4 && scale_aware.iter().all(samples_differ),
        "scale-aware queries do not depend on the sample"
    );
    let learnable = ModelConfig::tiny().with_ablation("queries=learnable".parse().unwrap());
    let (queries, _) = query_probe(&learnable, &batch);
    ensure!(
        !queries.is_empty() && !queries.iter().any(samples_differ),
        "learnable queries depend on the sample"
    );
    Ok(format!(
        "{rows} softmax rows, worst {worst:.1e}; equivariance {equiv:.1e}; query probes hold"
    ))
}

fn read_log(path: &Path) -> Result<Vec<f64>, String> {
    fs::read_to_string(path)
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| json(l).map(|v| v["loss"].as_f64().unwrap_or(f64::NAN)))
        .collect()
}

fn overfit(work: &Path) -> Outcome {
    let data = work.join("overfit_data");
    let run = work.join("overfit_run");
    cli(&["synth", "--count", "1", "--size", "64", "--seed", "0", "--out", p(&data)])?;
    cli(&[
        "train", "--data", p(&data), "--out", p(&run), "--scale", "0.25", "--crop", "64",
        "--steps", "1000", "--lr", "1e-3", "--lambda2", "0", "--no-flip", "--no-rotate",
        "--log-every", "0",
    ])?;
    let final_ckpt = run.join("final.snwf");
    let report = json(&cli(&["eval", "--checkpoint", p(&final_ckpt), "--data", p(&data)])?)?;
    let db = report["mean_psnr_db"].as_f64().unwrap_or(0.0);
    let losses = read_log(&run.join("train_log.jsonl"))?;
    ensure!(losses.len() == 1000, "log has {} lines", losses.len());
    let means: Vec<f64> = losses.chunks(100).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    ensure!(db >= 30.0, "train-sample PSNR {db:.2} dB after 1000 steps");
    ensure!(monotone, "100-step mean loss increased: {means:.3?}");
    Ok(format!(
        "1000 steps, train-sample PSNR {db:.2} dB; 100-step mean loss {:.2} -> {:.2}, non-increasing",
        means[0],
        means[means.len() - 1]
    ))
}

fn generalization(work: &Path) -> Outcome {
    let train = work.join("gen_train");
    let held = work.join("gen_held_out");
    let run = work.join("gen_run");
    cli(&["synth", "--count", "64", "--size", "64", "--out", p(&train)])?;
    cli(&["synth", "--count", "16", "--first", "1000", "--size", "64", "--out", p(&held)])?;
    cli(&[
        "train", "--data", p(&train), "--out", p(&run), "--scale", "0.25", "--crop", "64",
        "--steps", "1000", "--lr", "1e-3", "--lambda2", "0", "--log-every", "0",
    ])?;
    let base = json(&cli(&["eval", "--baseline", "--data", p(&held)])?)?;
    let model = json(&cli(&["eval", "--checkpoint", p(&run.join("final.snwf")), "--data", p(&held)])?)?;
    let (b, m) = (
        base["mean_psnr_db"].as_f64().unwrap_or(f64::NAN),
        model["mean_psnr_db"].as_f64().unwrap_or(f64::NAN),
    );
    ensure!(m - b >= 3.0, "held-out {m:.2} dB vs input {b:.2} dB (gain {:.2})", m - b);
    Ok(format!("1000 steps on 64 pairs; held-out {m:.2} dB vs input {b:.2} dB (+{:.2} dB)", m - b))
}

fn tiling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let (h, w) = (rng.gen_range(64..900), rng.gen_range(64..900));
        let tile = 64 * rng.gen_range(1..6);
        let overlap = rng.gen_range(0..tile);
        let plan = plan_tiles(h, w, TileConfig { tile, overlap }).map_err(|e| e.to_string())?;
        let mut sum = vec![0.0; h * w];
        let (th, tw) = (plan.rows.tile, plan.cols.tile);
        for (i, &oy) in plan.rows.origins.iter().enumerate() {
            for (j, &ox) in plan.cols.origins.iter().enumerate() {
                let map = plan.weight_map(i, j);
                for y in 0..th {
                    for x in 0..tw {
                        sum[(oy + y) * w + ox + x] += map[y * tw + x];
                    }
                }
            }
        }
        worst = sum.iter().map(|s| (s - 1.0).abs()).fold(worst, f64::max);
    }
    ensure!(worst <= 1e-6, "blend weights off by {worst:e}");

    for (h, w) in [(483, 377), (300, 700)] {
        let img = random::<f32>(&[3, h, w], h as u64);
        let plan = plan_tiles(h, w, TileConfig::default()).map_err(|e| e.to_string())?;
        let out = tiled_inference(&Identity, &img, &plan).map_err(|e| e.to_string())?;
        ensure!(out.data() == img.data(), "identity tiling altered a {h}x{w} image");
    }

    let model = build_model::<f32>(&ModelConfig::tiny(), 1).unwrap();
    let img = random::<f32>(&[3, 256, 256], 2);
    let plan = plan_tiles(256, 256, TileConfig::default()).map_err(|e| e.to_string())?;
    let tiled = tiled_inference(&model, &img, &plan).map_err(|e| e.to_string())?;
    let direct = model.predict(&img).map_err(|e| e.to_string())?.map(|v| v.clamp(0.0, 1.0));
    ensure!(tiled.data() == direct.data(), "single-tile plan differs from direct forward");
    Ok(format!("300 random plans, worst weight sum error {worst:.1e}; identity exact; single tile bit-equal"))
}

fn accounting() -> Outcome {
    let m = build_model::<f32>(&ModelConfig::full(), 0).unwrap();
    let params = m.param_count();
    let macs = m.flops_estimate(1, 256, 256).map_err(|e| e.to_string())?;
    ensure!((6_000_000..=11_000_000).contains(&params), "param count {params}");
    ensure!((10_000_000_000..=40_000_000_000).contains(&macs), "MACs {macs}");
    let table = cli(&["summary"])?;
    let line = table
        .lines()
        .find(|l| l.starts_with("full "))
        .ok_or("summary has no `full` row")?;
    let shown = format!("{:.2}M", params as f64 / 1e6);
    ensure!(
        line.contains(&shown) && line.contains("8.38M") && line.contains("19.44G"),
        "summary row lacks computed or reference figures: {line}"
    );
    Ok(format!(
        "{:.2}M params (reference 8.38M), {:.2}G MACs at 256x256 (reference 19.44G)",
        params as f64 / 1e6,
        macs as f64 / 1e9
    ))
}

fn metrics() -> Outcome {
    let x = random::<f64>(&[3, 32, 32], 8);
    for (delta, db) in [(0.1, 20.0), (0.01, 40.0)] {
        let got = psnr(&x, &x.map(|v| v + delta)).map_err(|e| e.to_string())?;
        ensure!((got - db).abs() <= 1e-6, "offset {delta}: {got} dB");
    }
    let y = random::<f64>(&[3, 32, 32], 9);
    let same = ssim(&x, &x).map_err(|e| e.to_string())?;
    ensure!((same - 1.0).abs() <= 1e-9, "SSIM(x,x) = {same}");
    let (a, b) = (ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
    ensure!((a - b).abs() <= 1e-12, "SSIM asymmetric: {a} vs {b}");
    Ok(format!("PSNR closed forms exact to 1e-6; SSIM(x,x)-1 = {:.1e}; asymmetry {:.1e}", same - 1.0, (a - b).abs()))
}

fn determinism(work: &Path) -> Outcome {
    let model = build_model::<f32>(&ModelConfig::tiny(), 3).unwrap();
    let mut params = model.params().clone();
    let mut opt = Adam::new(AdamConfig::default(), &params);
    let grads: Vec<Tensor<f32>> = params.values().iter().map(|t| t.map(|v| v.sin())).collect();
    opt.update(&mut params, &grads, 1e-3).map_err(|e| e.to_string())?;
    let (a, b) = (work.join("a.snwf"), work.join("b.snwf"));
    save_training(&a, &params, Some(&opt)).map_err(|e| e.to_string())?;
    let mut restored = build_model::<f32>(&ModelConfig::tiny(), 9).unwrap().params().clone();
    let opt2 = load_training(&a, &mut restored, AdamConfig::default())
        .map_err(|e| e.to_string())?
        .ok_or("optimizer state missing")?;
    save_training(&b, &restored, Some(&opt2)).map_err(|e| e.to_string())?;
    ensure!(fs::read(&a).unwrap() == fs::read(&b).unwrap(), "checkpoint resave differs");

    let mut logs = Vec::new();
    for run in ["det1", "det2"] {
        let data = work.join(format!("{run}_data"));
        let out = work.join(format!("{run}_out"));
        cli(&["synth", "--count", "3", "--size", "64", "--seed", "11", "--out", p(&data)])?;
        cli(&[
            "train", "--data", p(&data), "--out", p(&out), "--scale", "0.25", "--crop", "64",
            "--steps", "5", "--seed", "2", "--log-every", "0",
        ])?;
        logs.push((
            fs::read(data.join("manifest.json")).unwrap(),
            fs::read(data.join("000002_snow.png")).unwrap(),
            fs::read(out.join("train_log.jsonl")).unwrap(),
        ));
    }
    ensure!(logs[0].0 == logs[1].0 && logs[0].1 == logs[1].1, "synth output differs between runs");
    ensure!(logs[0].2 == logs[1].2, "training logs differ between runs");

    let img = random::<f64>(&[3, 37, 29], 4);
    let path = work.join("roundtrip.png");
    png_write(&img, &path).map_err(|e| e.to_string())?;
    let err = png_read::<f64>(&path).map_err(|e| e.to_string())?.max_abs_diff(&img);
    ensure!(err <= 1.0 / 255.0, "PNG roundtrip error {err}");
    Ok(format!("checkpoint resave byte-identical; synth and train logs reproduce; PNG error {err:.2e}"))
}

fn ablations() -> Outcome {
    let mut cfgs = vec![("full".to_string(), Ablation::default())];
    cfgs.extend(Ablation::variants());
    let data: Vec<Pair<f32>> = (0..4)
        .map(|i| {
            let s = generate(&SynthConfig::default().with_size(48, 48), i).unwrap();
            Pair {
                name: i.to_string(),
                snow: s.i.cast(),
                gt: s.j.cast(),
            }
        })
        .collect();
    let batch = random::<f32>(&[2, 3, 64, 64], 21);
    let signature = |a: Ablation| {
        let cfg = ModelConfig::tiny().with_ablation(a);
        let m = build_model::<f32>(&cfg, 6).unwrap();
        let mut s = Session::inference(m.params());
        let x = s.constant(batch.clone());
        m.forward(&mut s, x).unwrap();
        let (queries, _) = query_probe(&cfg, &batch);
        let mut ops = std::collections::BTreeMap::new();
        for (_, kind) in s.op_kinds() {
            *ops.entry(kind.name()).or_insert(0usize) += 1;
        }
        (
            ops,
            m.param_count(),
            softmax_rows(&s).len(),
            queries.len(),
            queries.iter().any(samples_differ),
        )
    };
    let reference = signature(Ablation::default());
    let mut notes = Vec::new();
    for (name, ablation) in &cfgs {
        let cfg = ModelConfig {
            window: 4,
            ..ModelConfig::tiny().with_ablation(*ablation)
        };
        let mut model = build_model::<f32>(&cfg, 0).map_err(|e| format!("{name}: {e}"))?;
        let train_cfg = TrainConfig {
            steps: 200,
            augment: AugmentConfig {
                crop: 32,
                ..AugmentConfig::default()
            },
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&mut model, train_cfg).map_err(|e| format!("{name}: {e}"))?;
        let mut losses = Vec::new();
        trainer
            .run(&data, |_, log| {
                losses.push(log.loss);
                Ok(())
            })
            .map_err(|e| format!("{name}: {e}"))?;
        ensure!(losses.len() == 200, "{name}: ran {} steps", losses.len());

        let sig = signature(*ablation);
        if name != "full" {
            ensure!(sig != reference, "{name} is indistinguishable from the full model");
        }
        match name.as_str() {
            "queries=learnable" => ensure!(sig.3 == 4 && !sig.4, "{name}: queries vary by sample"),
            "queries=same_layer" | "full" => ensure!(sig.3 == 4 && sig.4, "{name}: queries ignore the sample"),
            "decoder=li_only" => ensure!(sig.3 == 0, "{name}: queries present"),
            _ => {}
        }
        let head = losses[..20].iter().sum::<f64>() / 20.0;
        let tail = losses[180..].iter().sum::<f64>() / 20.0;
        notes.push(format!("{name} {head:.1}->{tail:.1}"));
    }
    Ok(format!("{} configs trained 200 steps, mean loss first->last 20: {}", cfgs.len(), notes.join(", ")))
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let w = work.path();
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("gradient suite", Box::new(gradient_suite)),
        ("physics identities", Box::new(physics_identities)),
        ("attention invariants", Box::new(attention_invariants)),
        ("overfit check", Box::new(|| overfit(w))),
        ("small-set generalization", Box::new(|| generalization(w))),
        ("tiling", Box::new(tiling)),
        ("full-config accounting", Box::new(accounting)),
        ("metric correctness", Box::new(metrics)),
        ("determinism and formats", Box::new(|| determinism(w))),
        ("ablation machinery", Box::new(ablations)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
