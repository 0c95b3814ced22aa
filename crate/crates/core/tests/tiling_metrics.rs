use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snowformer::eval::{evaluate_dataset, EvalReport, ModelSummary};
use snowformer::metrics::{psnr, ssim, PSNR_CAP_DB};
use snowformer::model::{build_model, ModelConfig};
use snowformer::synth::{dataset_write, generate, SynthConfig};
use snowformer::tiling::*;
use snowformer::{Error, Tensor};

fn random<T: snowformer::tensor::Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen::<f64>()))
}

fn weight_sums(plan: &TilePlan) -> Vec<f64> {
    let (h, w) = (plan.rows.len, plan.cols.len);
    let (th, tw) = (plan.rows.tile, plan.cols.tile);
    let mut sum = vec![0.0; h * w];
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
    sum
}

#[test]
fn single_tile_has_unit_weights() {
    let plan = plan_tiles(256, 256, TileConfig::default()).unwrap();
    assert_eq!(plan.tile_count(), 1);
    assert!(plan.weight_map(0, 0).iter().all(|&w| w == 1.0));
}

#[test]
fn weights_sum_to_one_on_a_512_image() {
    let plan = plan_tiles(512, 512, TileConfig { tile: 256, overlap: 32 }).unwrap();
    assert_eq!(plan.rows.origins, vec![0, 224, 256]);
    for s in weight_sums(&plan) {
        assert!((s - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn last_tile_is_shifted_inward() {
    let plan = plan_tiles(300, 256, TileConfig::default()).unwrap();
    assert_eq!(plan.rows.origins, vec![0, 44]);
    assert_eq!(plan.cols.origins, vec![0]);
    assert!(weight_sums(&plan).iter().all(|s| (s - 1.0).abs() <= 1e-6));
}

#[test]
fn invalid_plans() {
    for (h, w, tile, overlap) in [(256, 256, 100, 0), (256, 256, 64, 64), (32, 256, 64, 0), (256, 256, 0, 0)] {
        assert!(matches!(
            plan_tiles(h, w, TileConfig { tile, overlap }),
            Err(Error::InvalidTile(_))
        ));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blend_weights_partition_unity(h in 64usize..700, w in 64usize..700, k in 1usize..5, frac in 0.0f64..1.0) {
        let tile = 64 * k;
        let overlap = ((tile - 1) as f64 * frac) as usize;
        let plan = plan_tiles(h, w, TileConfig { tile, overlap }).unwrap();
        prop_assert!(plan.rows.tile % 64 == 0 && plan.rows.tile <= h);
        prop_assert!(*plan.rows.origins.last().unwrap() + plan.rows.tile == h);
        for s in weight_sums(&plan) {
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }
    }
}

#[test]
fn identity_restorer_is_exact() {
    for (h, w) in [(483, 377), (64, 64), (130, 200)] {
        let img = random::<f32>(&[3, h, w], h as u64);
        let plan = plan_tiles(h, w, TileConfig { tile: 128, overlap: 40 }).unwrap();
        let out = tiled_inference(&Identity, &img, &plan).unwrap();
        assert_eq!(out.data(), img.data(), "{h}x{w}");
    }
}

#[test]
fn single_tile_plan_equals_direct_forward() {
    let model = build_model::<f32>(&ModelConfig::tiny(), 1).unwrap();
    let img = random::<f32>(&[3, 64, 64], 2);
    let plan = plan_tiles(64, 64, TileConfig { tile: 64, overlap: 16 }).unwrap();
    let tiled = tiled_inference(&model, &img, &plan).unwrap();
    let direct = model.predict(&img).unwrap().map(|v| v.clamp(0.0, 1.0));
    assert_eq!(tiled.data(), direct.data());
}

#[test]
fn constant_input_has_no_seams() {
    let model = build_model::<f32>(&ModelConfig::tiny(), 1).unwrap();
    let tile = Tensor::<f32>::full(&[3, 64, 64], 0.4);
    let reference = model.predict(&tile).unwrap().map(|v| v.clamp(0.0, 1.0));
    let img = Tensor::<f32>::full(&[3, 100, 150], 0.4);
    let plan = plan_tiles(100, 150, TileConfig { tile: 64, overlap: 24 }).unwrap();
    let out = tiled_inference(&model, &img, &plan).unwrap();
    // Each output pixel blends the same tile output at different offsets, so
    // compare against the reference value range rather than a single value.
    let (lo, hi) = reference
        .data()
        .iter()
        .fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    assert!(out.data().iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
    // Pixels covered by a single tile's interior reproduce the tile output exactly.
    let (y, x) = (10, 10);
    for c in 0..3 {
        let got = out.data()[(c * 100 + y) * 150 + x];
        let want = reference.data()[(c * 64 + y) * 64 + x];
        assert!((got - want).abs() < 1e-6);
    }
}

#[test]
fn psnr_closed_forms() {
    let x = random::<f64>(&[3, 16, 16], 3);
    assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP_DB);
    for (delta, db) in [(0.1, 20.0), (0.01, 40.0)] {
        let y = x.map(|v| v + delta);
        assert!((psnr(&x, &y).unwrap() - db).abs() < 1e-6);
    }
    let near = x.map(|v| v + 0.05);
    let far = x.map(|v| v + 0.06);
    assert!(psnr(&x, &near).unwrap() > psnr(&x, &far).unwrap());
    assert!(psnr(&x, &Tensor::zeros(&[3, 16, 15])).is_err());
}

#[test]
fn ssim_properties() {
    let x = random::<f64>(&[3, 24, 20], 4);
    let y = random::<f64>(&[3, 24, 20], 5);
    assert!((ssim(&x, &x).unwrap() - 1.0).abs() <= 1e-9);
    let (a, b) = (ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
    assert!((a - b).abs() <= 1e-12);
    assert!((-1.0..1.0).contains(&a));

    let zeros = Tensor::<f64>::zeros(&[3, 16, 16]);
    let ones = Tensor::<f64>::ones(&[3, 16, 16]);
    let c1 = 0.01f64.powi(2);
    let s = ssim(&zeros, &ones).unwrap();
    assert!((s - c1 / (1.0 + c1)).abs() < 1e-12);
    assert!(s < 0.01);

    assert!(matches!(
        ssim(&Tensor::<f64>::zeros(&[3, 10, 30]), &Tensor::zeros(&[3, 10, 30])),
        Err(Error::ImageTooSmall { .. })
    ));
}

fn summary() -> ModelSummary {
    ModelSummary {
        param_count: 1,
        mac_estimate: 2,
        config_sha256: "abc".into(),
    }
}

#[test]
fn ground_truth_against_itself_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::default().with_size(64, 80);
    let samples: Vec<_> = (0..3)
        .map(|i| {
            let mut s = generate(&cfg, i).unwrap();
            s.i = s.j.clone();
            s
        })
        .collect();
    dataset_write(&cfg, &samples, dir.path()).unwrap();
    let report = evaluate_dataset(&Identity, dir.path(), TileConfig::default(), summary()).unwrap();
    assert_eq!(report.count, 3);
    assert_eq!(report.mean_psnr_db, 100.0);
    assert!((report.mean_ssim - 1.0).abs() < 1e-9);
}

#[test]
fn report_aggregates_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::default().with_size(64, 64);
    let samples: Vec<_> = (0..4).map(|i| generate(&cfg, i).unwrap()).collect();
    dataset_write(&cfg, &samples, dir.path()).unwrap();
    let a = evaluate_dataset(&Identity, dir.path(), TileConfig::default(), summary()).unwrap();
    let b = evaluate_dataset(&Identity, dir.path(), TileConfig::default(), summary()).unwrap();
    assert_eq!(a, b);
    let mean = a.images.iter().map(|s| s.psnr_db).sum::<f64>() / 4.0;
    assert_eq!(a.mean_psnr_db, mean);
    let json: serde_json::Value = serde_json::to_value(&a).unwrap();
    for key in ["images", "mean_psnr_db", "mean_ssim", "param_count", "mac_estimate", "config_sha256"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    for key in ["name", "psnr_db", "ssim"] {
        assert!(json["images"][0].get(key).is_some(), "{key}");
    }
    let back: EvalReport = serde_json::from_value(json).unwrap();
    assert_eq!(back, a);
}
