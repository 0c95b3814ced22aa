use crate::error::{shape_err, Result, TensorError};
use crate::kernels::{gelu, gelu_grad, sigmoid};
use crate::scalar::Scalar;
use crate::tape::{BinaryKind, Op, ReduceKind, Tape, UnaryKind, Var};
use crate::tensor::{split_axis, Tensor};

/// Index mapping for a numpy-style broadcast of two shapes.
pub(crate) struct Broadcast {
    pub out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = acc;
        acc *= shape[i];
    }
    strides
}

impl Broadcast {
    pub fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        let rank = a.len().max(b.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(a), pad(b));
        let mut out_shape = Vec::with_capacity(rank);
        for (&da, &db) in pa.iter().zip(&pb) {
            if da == db || db == 1 {
                out_shape.push(da);
            } else if da == 1 {
                out_shape.push(db);
            } else {
                return shape_err(op, a, b);
            }
        }
        let stride_for = |p: &[usize]| {
            let cs = contiguous_strides(p);
            p.iter()
                .zip(&out_shape)
                .zip(cs)
                .map(|((&d, &o), s)| if d == 1 && o != 1 { 0 } else { s })
                .collect::<Vec<_>>()
        };
        Ok(Self {
            a_strides: stride_for(&pa),
            b_strides: stride_for(&pb),
            out_shape,
        })
    }

    /// Calls `f(out_index, a_index, b_index)` for every output element in raster order.
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let rank = self.out_shape.len();
        let total: usize = self.out_shape.iter().product();
        if total == 0 {
            return;
        }
        if rank == 0 {
            f(0, 0, 0);
            return;
        }
        let last = self.out_shape[rank - 1];
        let (sa, sb) = (self.a_strides[rank - 1], self.b_strides[rank - 1]);
        let mut idx = vec![0usize; rank - 1];
        let (mut base_a, mut base_b) = (0usize, 0usize);
        let mut o = 0;
        loop {
            for j in 0..last {
                f(o + j, base_a + j * sa, base_b + j * sb);
            }
            o += last;
            // odometer over the leading axes
            let mut d = rank - 1;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                idx[d] += 1;
                base_a += self.a_strides[d];
                base_b += self.b_strides[d];
                if idx[d] < self.out_shape[d] {
                    break;
                }
                base_a -= self.a_strides[d] * idx[d];
                base_b -= self.b_strides[d] * idx[d];
                idx[d] = 0;
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let f = match kind {
            BinaryKind::Add => |x: T, y: T| x + y,
            BinaryKind::Sub => |x: T, y: T| x - y,
            BinaryKind::Mul => |x: T, y: T| x * y,
        };
        let out = if va.shape() == vb.shape() {
            va.zip_map(vb, f)?
        } else {
            let bc = Broadcast::new("broadcast", va.shape(), vb.shape())?;
            let (da, db) = (va.data(), vb.data());
            let mut data = vec![T::zero(); bc.out_shape.iter().product()];
            bc.for_each(|o, ia, ib| data[o] = f(da[ia], db[ib]));
            Tensor::from_parts(bc.out_shape, data)
        };
        self.push(out, Op::Binary { kind, a, b })
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    /// Elementwise product with numpy-style broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = match kind {
            UnaryKind::Sigmoid => v.map(sigmoid),
            UnaryKind::Gelu => v.map(gelu),
            UnaryKind::Exp => v.map(|e| e.exp()),
            UnaryKind::Ln => v.map(|e| e.ln()),
            UnaryKind::Abs => v.map(|e| e.abs()),
            UnaryKind::Square => v.map(|e| e * e),
        };
        self.push(out, Op::Unary { kind, x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Gelu, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, x)
    }

    /// Natural logarithm; non-positive inputs surface as `NonFinite`.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Ln, x)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Abs, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Square, x)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar { x })
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::SumAll { x })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let n = T::from_usize(v.numel().max(1)).unwrap();
        let s = v.sum() / n;
        self.push(Tensor::scalar(s), Op::MeanAll { x })
    }

    fn reduce_axis(&mut self, kind: ReduceKind, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        if axis >= v.rank() {
            return Err(TensorError::AxisOutOfRange {
                op: "reduce",
                axis,
                rank: v.rank(),
            });
        }
        let (outer, len, inner) = split_axis(v.shape(), axis);
        let d = v.data();
        let mut out = vec![T::zero(); outer * inner];
        let mut argmax = Vec::new();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for o in 0..outer {
                    for l in 0..len {
                        let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (acc, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *acc += s;
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    let inv = T::one() / T::from_usize(len).unwrap();
                    out.iter_mut().for_each(|e| *e *= inv);
                }
            }
            ReduceKind::Max => {
                argmax = vec![0u32; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = d[o * len * inner + i];
                        let mut at = 0;
                        for l in 1..len {
                            let e = d[(o * len + l) * inner + i];
                            if e > best {
                                best = e;
                                at = l;
                            }
                        }
                        out[o * inner + i] = best;
                        argmax[o * inner + i] = at as u32;
                    }
                }
            }
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = 1;
        self.push(
            Tensor::from_parts(shape, out),
            Op::Reduce {
                kind,
                x,
                axis,
                argmax,
            },
        )
    }

    /// Sum over `axis`, keeping it as a size-1 dimension.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(ReduceKind::Sum, x, axis)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(ReduceKind::Mean, x, axis)
    }

    /// Maximum over `axis` (first occurrence wins ties), keeping the dimension.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(ReduceKind::Max, x, axis)
    }
}

pub(crate) fn backward_binary<T: Scalar>(
    tape: &Tape<T>,
    kind: BinaryKind,
    a: Var,
    b: Var,
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let (va, vb) = (tape.value(a), tape.value(b));
    if va.shape() == vb.shape() {
        let ga: Vec<T> = match kind {
            BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
            BinaryKind::Mul => g.iter().zip(vb.data()).map(|(&g, &b)| g * b).collect(),
        };
        let gb: Vec<T> = match kind {
            BinaryKind::Add => g.to_vec(),
            BinaryKind::Sub => g.iter().map(|&g| -g).collect(),
            BinaryKind::Mul => g.iter().zip(va.data()).map(|(&g, &a)| g * a).collect(),
        };
        return vec![(a, ga), (b, gb)];
    }
    let bc = Broadcast::new("broadcast", va.shape(), vb.shape()).expect("validated in forward");
    let mut ga = vec![T::zero(); va.numel()];
    let mut gb = vec![T::zero(); vb.numel()];
    let (da, db) = (va.data(), vb.data());
    match kind {
        BinaryKind::Add => bc.for_each(|o, ia, ib| {
            ga[ia] += g[o];
            gb[ib] += g[o];
        }),
        BinaryKind::Sub => bc.for_each(|o, ia, ib| {
            ga[ia] += g[o];
            gb[ib] -= g[o];
        }),
        BinaryKind::Mul => bc.for_each(|o, ia, ib| {
            ga[ia] += g[o] * db[ib];
            gb[ib] += g[o] * da[ia];
        }),
    }
    vec![(a, ga), (b, gb)]
}

pub(crate) fn backward_unary<T: Scalar>(
    tape: &Tape<T>,
    kind: UnaryKind,
    x: Var,
    out: &Tensor<T>,
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let xv = tape.value(x).data();
    let y = out.data();
    let gx: Vec<T> = match kind {
        UnaryKind::Sigmoid => g
            .iter()
            .zip(y)
            .map(|(&g, &s)| g * s * (T::one() - s))
            .collect(),
        UnaryKind::Gelu => g.iter().zip(xv).map(|(&g, &x)| g * gelu_grad(x)).collect(),
        UnaryKind::Exp => g.iter().zip(y).map(|(&g, &e)| g * e).collect(),
        UnaryKind::Ln => g.iter().zip(xv).map(|(&g, &x)| g / x).collect(),
        UnaryKind::Abs => g
            .iter()
            .zip(xv)
            .map(|(&g, &x)| {
                if x > T::zero() {
                    g
                } else if x < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            })
            .collect(),
        UnaryKind::Square => g
            .iter()
            .zip(xv)
            .map(|(&g, &x)| g * (x + x))
            .collect(),
    };
    vec![(x, gx)]
}

pub(crate) fn backward_reduce<T: Scalar>(
    tape: &Tape<T>,
    kind: ReduceKind,
    x: Var,
    axis: usize,
    argmax: &[u32],
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let v = tape.value(x);
    let (outer, len, inner) = split_axis(v.shape(), axis);
    let mut gx = vec![T::zero(); v.numel()];
    match kind {
        ReduceKind::Sum | ReduceKind::Mean => {
            let s = if kind == ReduceKind::Mean {
                T::one() / T::from_usize(len).unwrap()
            } else {
                T::one()
            };
            for o in 0..outer {
                for l in 0..len {
                    let dst = &mut gx[(o * len + l) * inner..(o * len + l + 1) * inner];
                    for (d, &gv) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                        *d = gv * s;
                    }
                }
            }
        }
        ReduceKind::Max => {
            for o in 0..outer {
                for i in 0..inner {
                    let l = argmax[o * inner + i] as usize;
                    gx[(o * len + l) * inner + i] = g[o * inner + i];
                }
            }
        }
    }
    vec![(x, gx)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn broadcast_add_bias_over_channels() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| i as f64));
        let b = tape.leaf(t(&[1, 2, 1, 1], &[10.0, 20.0]));
        let y = tape.add(x, b).unwrap();
        assert_eq!(
            tape.value(y).data(),
            &[10.0, 11.0, 12.0, 13.0, 24.0, 25.0, 26.0, 27.0]
        );
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[4.0, 4.0]);
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 8]);
    }

    #[test]
    fn incompatible_broadcast_is_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::<f64>::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::<f64>::zeros(&[4]));
        assert!(matches!(
            tape.add(a, b),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f32>::zeros(&[3]));
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn max_axis_takes_first_argmax() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1.0, 5.0, 5.0, 7.0, 2.0, 7.0]));
        let m = tape.max_axis(x, 1).unwrap();
        assert_eq!(tape.value(m).shape(), &[2, 1]);
        let s = tape.sum(m).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn ln_of_zero_is_reported() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::zeros(&[1]));
        assert_eq!(tape.ln(x), Err(TensorError::NonFinite { op: "ln" }));
    }
}
