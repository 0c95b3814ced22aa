use crate::error::{shape_err, Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::{split_axis, Tensor};

impl<T: Scalar> Tape<T> {
    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        if axis >= v.rank() {
            return Err(TensorError::AxisOutOfRange {
                op: "softmax",
                axis,
                rank: v.rank(),
            });
        }
        let (outer, len, inner) = split_axis(v.shape(), axis);
        let d = v.data();
        let mut out = vec![T::zero(); d.len()];
        if inner == 1 {
            for (src, dst) in d.chunks(len).zip(out.chunks_mut(len)) {
                let m = src.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o = (s - m).exp();
                    z += *o;
                }
                let inv = T::one() / z;
                dst.iter_mut().for_each(|o| *o *= inv);
            }
        } else {
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| (o * len + l) * inner + i;
                    let m = (0..len).map(|l| d[at(l)]).fold(T::neg_infinity(), T::max);
                    let mut z = T::zero();
                    for l in 0..len {
                        let e = (d[at(l)] - m).exp();
                        out[at(l)] = e;
                        z += e;
                    }
                    let inv = T::one() / z;
                    for l in 0..len {
                        out[at(l)] *= inv;
                    }
                }
            }
        }
        self.push(
            Tensor::from_parts(v.shape().to_vec(), out),
            Op::Softmax { x, axis },
        )
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let rank = self.value(x).rank();
        if rank == 0 {
            return shape_err("layernorm", &[], self.shape(gamma));
        }
        self.layernorm_axis(x, gamma, beta, rank - 1, eps)
    }

    /// Layer normalization over an arbitrary axis (e.g. channels of an NCHW map).
    pub fn layernorm_axis(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        eps: f64,
    ) -> Result<Var> {
        let v = self.value(x);
        if axis >= v.rank() {
            return Err(TensorError::AxisOutOfRange {
                op: "layernorm",
                axis,
                rank: v.rank(),
            });
        }
        let (outer, len, inner) = split_axis(v.shape(), axis);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.shape() != [len] || bv.shape() != [len] {
            return shape_err("layernorm", v.shape(), gv.shape());
        }
        let (g, b) = (gv.data(), bv.data());
        let d = v.data();
        let eps = T::from_f64_lossy(eps);
        let inv_len = T::one() / T::from_usize(len).unwrap();
        let mut out = vec![T::zero(); d.len()];
        let mut mean = vec![T::zero(); outer * inner];
        let mut rstd = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let mut mu = T::zero();
                for l in 0..len {
                    mu += d[at(l)];
                }
                mu *= inv_len;
                let mut var = T::zero();
                for l in 0..len {
                    let c = d[at(l)] - mu;
                    var += c * c;
                }
                var *= inv_len;
                let r = T::one() / (var + eps).sqrt();
                for l in 0..len {
                    out[at(l)] = (d[at(l)] - mu) * r * g[l] + b[l];
                }
                mean[o * inner + i] = mu;
                rstd[o * inner + i] = r;
            }
        }
        self.push(
            Tensor::from_parts(v.shape().to_vec(), out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axis,
                mean,
                rstd,
            },
        )
    }
}

pub(crate) fn backward_softmax<T: Scalar>(
    x: Var,
    axis: usize,
    y: &Tensor<T>,
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let (outer, len, inner) = split_axis(y.shape(), axis);
    let yd = y.data();
    let mut gx = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            let mut s = T::zero();
            for l in 0..len {
                s += g[at(l)] * yd[at(l)];
            }
            for l in 0..len {
                gx[at(l)] = yd[at(l)] * (g[at(l)] - s);
            }
        }
    }
    vec![(x, gx)]
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_layernorm<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    axis: usize,
    mean: &[T],
    rstd: &[T],
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let v = tape.value(x);
    let (outer, len, inner) = split_axis(v.shape(), axis);
    let d = v.data();
    let gm = tape.value(gamma).data();
    let inv_len = T::one() / T::from_usize(len).unwrap();
    let mut gx = vec![T::zero(); d.len()];
    let mut ggamma = vec![T::zero(); len];
    let mut gbeta = vec![T::zero(); len];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            let (mu, r) = (mean[o * inner + i], rstd[o * inner + i]);
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for l in 0..len {
                let xhat = (d[at(l)] - mu) * r;
                let dy = g[at(l)];
                ggamma[l] += dy * xhat;
                gbeta[l] += dy;
                let dyh = dy * gm[l];
                sum_dy += dyh;
                sum_dy_xhat += dyh * xhat;
            }
            let (m1, m2) = (sum_dy * inv_len, sum_dy_xhat * inv_len);
            for l in 0..len {
                let xhat = (d[at(l)] - mu) * r;
                gx[at(l)] = r * (g[at(l)] * gm[l] - m1 - xhat * m2);
            }
        }
    }
    vec![(x, gx), (gamma, ggamma), (beta, gbeta)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn softmax_of(data: &[f64]) -> Vec<f64> {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(&[data.len()], data.to_vec()).unwrap());
        let y = t.softmax(x, 0).unwrap();
        t.value(y).to_vec()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_of(&[0.0, 0.0]), vec![0.5, 0.5]);
        let s = softmax_of(&[1.0, 2.0, 3.0]);
        // scalar oracle: e^k / (e + e^2 + e^3)
        let z: f64 = (1..=3).map(|k| (k as f64).exp()).sum();
        for (k, v) in s.iter().enumerate() {
            assert!((v - ((k + 1) as f64).exp() / z).abs() < 1e-15);
        }
        for (v, want) in s.iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!((v - want).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = softmax_of(&[0.3, -1.2, 2.5, 0.0]);
        let b = softmax_of(&[100.3, 98.8, 102.5, 100.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_over_middle_axis() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::<f64>::from_fn(&[2, 3, 2], |i| (i as f64 * 0.7).sin()));
        let y = t.softmax(x, 1).unwrap();
        let y = t.value(y);
        for o in 0..2 {
            for i in 0..2 {
                let s: f64 = (0..3).map(|l| y.at(&[o, l, i])).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layernorm_constant_row_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::<f64>::full(&[2, 5], 3.5));
        let g = t.leaf(Tensor::ones(&[5]));
        let b = t.leaf(Tensor::zeros(&[5]));
        let y = t.layernorm(x, g, b, 1e-5).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layernorm_moments_and_affine() {
        let mut t = Tape::new();
        let row: Vec<f64> = vec![0.5, -1.0, 4.0, 2.0, 0.0, 3.0];
        let x = t.leaf(Tensor::new(&[1, 6], row).unwrap());
        let g1 = t.leaf(Tensor::ones(&[6]));
        let b0 = t.leaf(Tensor::zeros(&[6]));
        let y = t.layernorm(x, g1, b0, 1e-5).unwrap();
        let yn = t.value(y).to_vec();
        let mean = yn.iter().sum::<f64>() / 6.0;
        let var = yn.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);

        let g2 = t.leaf(Tensor::full(&[6], 2.0));
        let b1 = t.leaf(Tensor::ones(&[6]));
        let z = t.layernorm(x, g2, b1, 1e-5).unwrap();
        for (zv, yv) in t.value(z).data().iter().zip(&yn) {
            assert!((zv - (2.0 * yv + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn layernorm_shape_mismatch() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::<f64>::zeros(&[2, 4]));
        let g = t.leaf(Tensor::ones(&[3]));
        let b = t.leaf(Tensor::zeros(&[3]));
        assert!(matches!(
            t.layernorm(x, g, b, 1e-5),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }
}
