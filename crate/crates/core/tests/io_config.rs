use std::path::Path;

use image::{GrayImage, ImageBuffer, Rgb, RgbaImage};
use snowformer::image_io::{png_read, png_write, quantize};
use snowformer::{Error, RunConfig, Tensor};

#[test]
fn png_roundtrip_within_one_level() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.png");
    let img = Tensor::<f64>::from_fn(&[3, 7, 5], |i| (i as f64 * 0.0137).fract());
    png_write(&img, &path).unwrap();
    let back = png_read::<f64>(&path).unwrap();
    assert_eq!(back.shape(), img.shape());
    assert!(back.max_abs_diff(&img) <= 1.0 / 255.0);
}

#[test]
fn quantisation_rounds_half_up_and_clips() {
    assert_eq!(quantize(0.5f64 / 255.0), 1);
    assert_eq!(quantize(0.49f64 / 255.0), 0);
    assert_eq!(quantize(-0.3f64), 0);
    assert_eq!(quantize(1.7f64), 255);
}

#[test]
fn grayscale_is_promoted_and_alpha_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let gray = dir.path().join("g.png");
    GrayImage::from_fn(4, 3, |x, y| image::Luma([(x * 40 + y) as u8])).save(&gray).unwrap();
    let t = png_read::<f32>(&gray).unwrap();
    assert_eq!(t.shape(), &[3, 3, 4]);
    assert_eq!(&t.data()[..12], &t.data()[12..24]);

    let rgba = dir.path().join("a.png");
    RgbaImage::from_fn(2, 2, |_, _| image::Rgba([255, 0, 51, 7])).save(&rgba).unwrap();
    let t = png_read::<f32>(&rgba).unwrap();
    assert_eq!(t.shape(), &[3, 2, 2]);
    assert_eq!(t.data()[0], 1.0);
    assert_eq!(t.data()[8], 0.2);
}

#[test]
fn sixteen_bit_png_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("deep.png");
    let img: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(3, 3, |_, _| Rgb([1000, 2000, 3000]));
    img.save(&path).unwrap();
    assert!(matches!(
        png_read::<f32>(&path),
        Err(Error::UnsupportedFormat { .. })
    ));
}

#[test]
fn missing_image_is_an_io_error() {
    assert!(matches!(
        png_read::<f32>(Path::new("/nonexistent/x.png")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn run_config_defaults_and_strictness() {
    let cfg = RunConfig::from_json("{}", Path::new("c.json")).unwrap();
    assert_eq!(cfg, RunConfig::default());
    cfg.validate().unwrap();
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(RunConfig::from_json(&text, Path::new("c.json")).unwrap(), cfg);

    let partial = r#"{"model": {"scale": 0.25}, "train": {"steps": 5, "loss": {"lambda2": 0}}}"#;
    let p = RunConfig::from_json(partial, Path::new("c.json")).unwrap();
    assert_eq!(p.model.widths(), [4, 8, 16, 32, 64]);
    assert_eq!(p.train.steps, 5);
    assert_ne!(p.sha256(), cfg.sha256());

    for bad in [r#"{"modle": {}}"#, r#"{"train": {"stpes": 1}}"#, r#"{"model": {"ablation": {"safa": "median"}}}"#] {
        assert!(matches!(
            RunConfig::from_json(bad, Path::new("c.json")),
            Err(Error::Json { .. })
        ));
    }
}

#[test]
fn stamped_config_carries_its_hash() {
    let cfg = RunConfig::default();
    let v: serde_json::Value = serde_json::from_str(&cfg.stamped_json()).unwrap();
    assert_eq!(v["config_sha256"], cfg.sha256());
    assert_eq!(cfg.sha256().len(), 64);
}

#[test]
fn paths_do_not_change_the_hash() {
    let mut cfg = RunConfig::default();
    let before = cfg.sha256();
    cfg.paths.out = Some("elsewhere".into());
    assert_eq!(cfg.sha256(), before);
    cfg.seed = 1;
    assert_ne!(cfg.sha256(), before);
}
