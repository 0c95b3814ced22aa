use snowformer::model::{build_model, ModelConfig};
use snowformer::tensor::ParamStore;
use snowformer::train::checkpoint::*;
use snowformer::train::loss::{Perceptual, SURROGATE_NAMES};
use snowformer::train::{Adam, AdamConfig};
use snowformer::{Error, Tensor};

fn micro() -> ModelConfig {
    ModelConfig {
        window: 2,
        ..ModelConfig::tiny()
    }
}

fn trained_state() -> (ParamStore<f32>, Adam<f32>) {
    let model = build_model::<f32>(&micro(), 3).unwrap();
    let mut params = model.params().clone();
    let mut opt = Adam::new(AdamConfig::default(), &params);
    let grads: Vec<Tensor<f32>> = params
        .values()
        .iter()
        .map(|p| Tensor::from_fn(p.shape(), |i| (i as f32 * 0.37).sin()))
        .collect();
    opt.update(&mut params, &grads, 1e-3).unwrap();
    opt.update(&mut params, &grads, 1e-3).unwrap();
    (params, opt)
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (params, opt) = trained_state();
    let first = dir.path().join("a.snwf");
    save_training(&first, &params, Some(&opt)).unwrap();

    let mut restored = build_model::<f32>(&micro(), 99).unwrap().params().clone();
    let opt2 = load_training(&first, &mut restored, AdamConfig::default()).unwrap().unwrap();
    assert_eq!(restored.values(), params.values());
    assert_eq!(opt2.step, 2);
    assert_eq!(opt2.m, opt.m);
    assert_eq!(opt2.v, opt.v);

    let second = dir.path().join("b.snwf");
    save_training(&second, &restored, Some(&opt2)).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}

#[test]
fn weights_only_checkpoint_has_no_optimizer() {
    let dir = tempfile::tempdir().unwrap();
    let (params, _) = trained_state();
    let path = dir.path().join("w.snwf");
    save_training(&path, &params, None).unwrap();
    let mut restored = params.clone();
    assert!(load_training(&path, &mut restored, AdamConfig::default()).unwrap().is_none());
}

#[test]
fn header_layout() {
    let t = Tensor::<f64>::new(&[2], vec![1.5, -2.0]).unwrap();
    let bytes = encode(&[Entry::from_tensor("ab", &t)]);
    assert_eq!(&bytes[..4], b"SNWF");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
    assert_eq!(&bytes[20..22], b"ab");
    assert_eq!(bytes[22], 1);
    assert_eq!(u32::from_le_bytes(bytes[23..27].try_into().unwrap()), 1);
    assert_eq!(u64::from_le_bytes(bytes[27..35].try_into().unwrap()), 2);
    assert_eq!(f64::from_le_bytes(bytes[35..43].try_into().unwrap()), 1.5);
    let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    assert_eq!(crc, crc32fast::hash(&bytes[..bytes.len() - 4]));
    assert_eq!(bytes.len(), 43 + 8 + 4);
}

#[test]
fn every_truncation_is_reported() {
    let a = Tensor::<f32>::from_fn(&[3, 2], |i| i as f32);
    let b = Tensor::<f64>::scalar(4.0);
    let bytes = encode(&[Entry::from_tensor("a", &a), Entry::from_tensor("b", &b)]);
    let path = std::path::Path::new("cut.snwf");
    for len in 0..bytes.len() {
        match decode(&bytes[..len], path) {
            Err(Error::BadMagic { .. }) => assert!(len < 16),
            Err(Error::TensorCountMismatch { declared, found, .. }) => {
                assert_eq!(declared, 2);
                assert!(found < 2);
            }
            other => panic!("length {len}: {other:?}"),
        }
    }
    assert_eq!(decode(&bytes, path).unwrap().len(), 2);
}

#[test]
fn corruption_is_detected() {
    let t = Tensor::<f32>::from_fn(&[4, 4], |i| i as f32);
    let bytes = encode(&[Entry::from_tensor("t", &t)]);
    let path = std::path::Path::new("bad.snwf");

    let mut flipped = bytes.clone();
    let at = flipped.len() - 10;
    flipped[at] ^= 0x10;
    assert!(matches!(decode(&flipped, path), Err(Error::Checksum { .. })));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode(&magic, path), Err(Error::BadMagic { .. })));

    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(
        decode(&version, path),
        Err(Error::VersionMismatch { found: 9, .. })
    ));

    let err = decode(b"not a checkpoint at all", path).unwrap_err();
    assert!(err.to_string().contains("bad.snwf"));
}

#[test]
fn mismatched_model_lists_offending_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.snwf");
    let tiny = build_model::<f32>(&micro(), 0).unwrap();
    save_training(&path, tiny.params(), None).unwrap();

    let wider = ModelConfig {
        scale: 0.5,
        ..micro()
    };
    let mut other = build_model::<f32>(&wider, 0).unwrap().params().clone();
    let before = other.values().to_vec();
    match load_training(&path, &mut other, AdamConfig::default()) {
        Err(Error::ParamMismatch(keys)) => {
            assert!(keys.iter().any(|k| k.starts_with("enc.stem.w:")));
            assert!(keys.len() > 10);
        }
        other => panic!("expected ParamMismatch, got {other:?}"),
    }
    assert_eq!(other.values(), &before[..]);

    let no_head = ModelConfig {
        ablation: "arh=off".parse().unwrap(),
        ..micro()
    };
    let mut other = build_model::<f32>(&no_head, 0).unwrap().params().clone();
    match load_training(&path, &mut other, AdamConfig::default()) {
        Err(Error::ParamMismatch(keys)) => {
            assert!(keys.iter().any(|k| k.contains("not a parameter")));
        }
        other => panic!("expected ParamMismatch, got {other:?}"),
    }
}

#[test]
fn dtype_mismatch_is_a_param_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f64.snwf");
    let m = build_model::<f64>(&micro(), 0).unwrap();
    save_training(&path, m.params(), None).unwrap();
    let mut f32_params = build_model::<f32>(&micro(), 0).unwrap().params().clone();
    assert!(matches!(
        load_training(&path, &mut f32_params, AdamConfig::default()),
        Err(Error::ParamMismatch(_))
    ));
}

#[test]
fn external_perceptual_weights_load_from_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("phi.snwf");
    let src = Perceptual::<f32>::surrogate(4);
    let w = src.weights();
    let named: Vec<(&str, &Tensor<f32>)> = SURROGATE_NAMES.iter().copied().zip(w.iter()).collect();
    write_checkpoint(&path, &named).unwrap();
    let loaded = Perceptual::<f32>::external(&path).unwrap();
    assert_eq!(loaded.weights(), src.weights());

    write_checkpoint(&path, &named[..2]).unwrap();
    assert!(matches!(
        Perceptual::<f32>::external(&path),
        Err(Error::MissingWeights(_))
    ));
}
