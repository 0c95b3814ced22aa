use proptest::prelude::*;
use snowformer_tensor::gradcheck::{grad_check, suite, GradCheckOptions};
use snowformer_tensor::{OpKind, Tape, Tensor, TensorError};

#[test]
fn every_op_passes_gradient_check_over_twenty_seeds() {
    let mut kinds = std::collections::BTreeSet::new();
    for seed in 0..20 {
        for case in suite::op_cases(seed) {
            let report = grad_check(&case.params, &case.program, &GradCheckOptions::default()).unwrap();
            assert!(
                report.passed(),
                "{} seed {seed}: max rel err {:e}",
                case.name,
                report.max_rel_err()
            );
            kinds.insert(case.kind.name());
        }
    }
    for k in ["conv2d", "matmul", "softmax", "layernorm", "gelu", "window_partition", "window_merge"] {
        assert!(kinds.contains(k), "suite misses {k}: {kinds:?}");
    }
}

#[test]
fn injected_faults_are_caught_for_every_kind() {
    for case in suite::op_cases(7) {
        let opts = GradCheckOptions {
            fault: Some(case.kind),
            ..Default::default()
        };
        let report = grad_check(&case.params, &case.program, &opts).unwrap();
        assert!(!report.passed(), "fault in {} went unnoticed", case.name);
    }
}

#[test]
fn gelu_matches_tabulated_values() {
    // Φ(x)·x with Φ the standard normal CDF.
    let table = [
        (-3.0, -0.004049694094890),
        (-1.0, -0.158655253931457),
        (0.0, 0.0),
        (0.5, 0.345731230637007),
        (1.0, 0.841344746068543),
        (2.0, 1.954499736103642),
    ];
    let mut t = Tape::<f64>::inference();
    let x = t.constant(Tensor::new(&[6], table.iter().map(|p| p.0).collect()).unwrap());
    let y = t.gelu(x).unwrap();
    for (got, (_, want)) in t.value(y).data().iter().zip(table) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

fn naive_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    stride: usize,
    pad: usize,
) -> (Vec<usize>, Vec<f64>) {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Vec::new();
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (y * stride + dy) as isize - pad as isize;
                                let ix = (xx * stride + dx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at(&[b, ic, iy as usize, ix as usize]) * w.at(&[oc, ic, dy, dx]);
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    (vec![n, o, oh, ow], out)
}

fn lcg(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(shape, |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn conv_matches_direct_loops(
        seed in 0u64..1000, n in 1usize..3, c in 1usize..4, o in 1usize..4,
        h in 3usize..9, w in 3usize..9, k in 1usize..4, stride in 1usize..3, pad in 0usize..2,
    ) {
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
        let x = lcg(seed, &[n, c, h, w]);
        let kern = lcg(seed + 1, &[o, c, k, k]);
        let mut t = Tape::<f64>::inference();
        let (xv, wv) = (t.constant(x.clone()), t.constant(kern.clone()));
        let y = t.conv2d(xv, wv, None, stride, pad).unwrap();
        let (shape, want) = naive_conv(&x, &kern, stride, pad);
        prop_assert_eq!(t.shape(y), &shape[..]);
        for (a, b) in t.value(y).data().iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_matches_direct_loops(seed in 0u64..1000, m in 1usize..7, k in 1usize..7, n in 1usize..7) {
        let a = lcg(seed, &[m, k]);
        let b = lcg(seed + 9, &[k, n]);
        let mut t = Tape::<f64>::inference();
        let (av, bv) = (t.constant(a.clone()), t.constant(b.clone()));
        let y = t.matmul(av, bv).unwrap();
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a.at(&[i, p]) * b.at(&[p, j])).sum();
                prop_assert!((t.value(y).at(&[i, j]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_f64(seed in 0u64..1000, rows in 1usize..6, cols in 1usize..40, spread in 0.1f64..60.0) {
        let x = lcg(seed, &[rows, cols]).map(|v| v * spread);
        let mut t = Tape::<f64>::inference();
        let xv = t.constant(x.clone());
        let y = t.softmax(xv, 1).unwrap();
        for r in 0..rows {
            let row: Vec<f64> = (0..cols).map(|c| x.at(&[r, c])).collect();
            let max = row.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let mut total = 0.0;
            for (c, v) in row.iter().enumerate() {
                let got = t.value(y).at(&[r, c]);
                prop_assert!((got - (v - max).exp() / z).abs() < 1e-14);
                total += got;
            }
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_f32(seed in 0u64..1000, rows in 1usize..6, cols in 1usize..64, spread in 0.1f32..60.0) {
        let x: Tensor<f32> = lcg(seed, &[rows, cols]).cast::<f32>().map(|v| v * spread);
        let mut t = Tape::<f32>::inference();
        let xv = t.constant(x);
        let y = t.softmax(xv, 1).unwrap();
        for r in 0..rows {
            let total: f64 = (0..cols).map(|c| t.value(y).at(&[r, c]) as f64).sum();
            prop_assert!((total - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn partition_follows_raster_layout(seed in 0u64..1000, n in 1usize..3, c in 1usize..4, gh in 1usize..4, gw in 1usize..4, s in 1usize..5) {
        let (h, w) = (gh * s, gw * s);
        let x = lcg(seed, &[n, c, h, w]);
        let mut t = Tape::<f64>::new();
        let xv = t.leaf(x.clone());
        let p = t.window_partition(xv, s).unwrap();
        prop_assert_eq!(t.shape(p), &[n * gh * gw, s * s, c][..]);
        for b in 0..n {
            for wy in 0..gh {
                for wx in 0..gw {
                    let win = (b * gh + wy) * gw + wx;
                    for k in 0..s * s {
                        for ch in 0..c {
                            let want = x.at(&[b, ch, wy * s + k / s, wx * s + k % s]);
                            prop_assert_eq!(t.value(p).at(&[win, k, ch]), want);
                        }
                    }
                }
            }
        }
        let back = t.window_merge(p, s, (n, c, h, w)).unwrap();
        prop_assert_eq!(t.value(back), &x);
    }
}

#[test]
fn non_finite_outputs_name_the_op() {
    let mut t = Tape::<f64>::inference();
    let x = t.constant(Tensor::new(&[2], vec![1.0, 0.0]).unwrap());
    assert!(matches!(t.ln(x), Err(TensorError::NonFinite { .. })));
    let big = t.constant(Tensor::scalar(1e300));
    let err = t.exp(big).unwrap_err();
    assert!(err.to_string().contains("exp"), "{err}");
}

#[test]
fn tape_records_op_kinds_and_macs() {
    let mut t = Tape::<f32>::new();
    let a = t.leaf(Tensor::ones(&[2, 3]));
    let b = t.leaf(Tensor::ones(&[3, 4]));
    let y = t.matmul(a, b).unwrap();
    let s = t.softmax(y, 1).unwrap();
    let kinds: Vec<OpKind> = t.op_kinds().map(|(_, k)| k).collect();
    assert!(kinds.contains(&OpKind::MatMul) && kinds.contains(&OpKind::Softmax));
    assert_eq!(t.macs(), 2 * 3 * 4);
    assert_eq!(t.value(s).at(&[1, 2]), 0.25);
}
