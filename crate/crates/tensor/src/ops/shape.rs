use std::sync::Arc;

use crate::error::{shape_err, Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::{split_axis, Tensor};

fn permute_data<T: Scalar>(src: &[T], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(src.len());
    if src.is_empty() {
        return (out_shape, out);
    }
    if rank == 0 {
        return (out_shape, src.to_vec());
    }
    let last = out_shape[rank - 1];
    let last_stride = strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let mut base = 0usize;
    loop {
        if last_stride == 1 {
            out.extend_from_slice(&src[base..base + last]);
        } else {
            out.extend((0..last).map(|j| src[base + j * last_stride]));
        }
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return (out_shape, out);
            }
            d -= 1;
            idx[d] += 1;
            base += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
}

/// Window geometry for an `[N,C,H,W]` map split into `s×s` windows.
#[derive(Clone, Copy, Debug)]
struct Windows {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    s: usize,
}

impl Windows {
    fn count(&self) -> usize {
        self.n * (self.h / self.s) * (self.w / self.s)
    }

    /// Visits `(image_index, token_index)` pairs, token layout `[window, s*s, C]`.
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let Windows { n, c, h, w, s } = *self;
        let (nh, nw) = (h / s, w / s);
        for b in 0..n {
            for wy in 0..nh {
                for wx in 0..nw {
                    let win = (b * nh + wy) * nw + wx;
                    for ty in 0..s {
                        for tx in 0..s {
                            let tok = (win * s * s + ty * s + tx) * c;
                            let (y, x) = (wy * s + ty, wx * s + tx);
                            for ch in 0..c {
                                f(((b * c + ch) * h + y) * w + x, tok + ch);
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.push(out, Op::Reshape { x })
    }

    /// Reorders axes so that output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let rank = v.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::InvalidArgument {
                op: "permute",
                msg: format!("{perm:?} is not a permutation of rank {rank}"),
            });
        }
        let (shape, data) = permute_data(v.data(), v.shape(), perm);
        self.push(
            Tensor::from_parts(shape, data),
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        )
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                msg: "no inputs".into(),
            });
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let same_rest = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !same_rest {
                return shape_err("concat", &base, s);
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        )
    }

    /// Contiguous range `[start, start+len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "slice",
                axis,
                rank: s.len(),
            });
        }
        if start + len > s[axis] {
            return shape_err("slice", &s, &[start, len]);
        }
        let (outer, full, inner) = split_axis(&s, axis);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&d[from..from + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        self.push(Tensor::from_parts(shape, out), Op::Slice { x, axis, start })
    }

    /// Splits `[N,C,H,W]` into non-overlapping `s×s` windows: `[N·(H/s)·(W/s), s·s, C]`.
    ///
    /// Windows are in raster order per image, tokens in raster order per window.
    pub fn window_partition(&mut self, x: Var, s: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [n, c, h, w] = shape[..] else {
            return shape_err("window_partition", &shape, &[s]);
        };
        for size in [h, w] {
            if s == 0 || size % s != 0 {
                return Err(TensorError::NotDivisible {
                    op: "window_partition",
                    size,
                    divisor: s,
                });
            }
        }
        let g = Windows { n, c, h, w, s };
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        g.for_each(|img, tok| out[tok] = src[img]);
        self.push(
            Tensor::from_parts(vec![g.count(), s * s, c], out),
            Op::WindowPartition { x, s },
        )
    }

    /// Inverse of [`Tape::window_partition`].
    pub fn window_merge(
        &mut self,
        tokens: Var,
        s: usize,
        (n, c, h, w): (usize, usize, usize, usize),
    ) -> Result<Var> {
        for size in [h, w] {
            if s == 0 || size % s != 0 {
                return Err(TensorError::NotDivisible {
                    op: "window_merge",
                    size,
                    divisor: s,
                });
            }
        }
        let g = Windows { n, c, h, w, s };
        let ts = self.shape(tokens).to_vec();
        if ts != [g.count(), s * s, c] {
            return Err(TensorError::CountMismatch {
                shape: vec![g.count(), s * s, c],
                len: self.value(tokens).numel(),
            });
        }
        let src = self.value(tokens).data();
        let mut out = vec![T::zero(); src.len()];
        g.for_each(|img, tok| out[img] = src[tok]);
        self.push(
            Tensor::from_parts(vec![n, c, h, w], out),
            Op::WindowMerge { x: tokens, s },
        )
    }

    /// Rows of a `[R, K]` table selected by `index`, giving `[index.len(), K]`.
    pub fn gather_rows(&mut self, table: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        let [rows, k] = ts[..] else {
            return shape_err("gather", &ts, &[index.len()]);
        };
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(TensorError::InvalidArgument {
                op: "gather",
                msg: format!("row {bad} out of range for table with {rows} rows"),
            });
        }
        let d = self.value(table).data();
        let mut out = Vec::with_capacity(index.len() * k);
        for &i in index.iter() {
            out.extend_from_slice(&d[i * k..(i + 1) * k]);
        }
        self.push(
            Tensor::from_parts(vec![index.len(), k], out),
            Op::Gather { table, index },
        )
    }

    /// Repeats each leading-axis sample `repeats` times consecutively.
    pub fn repeat_batch(&mut self, x: Var, repeats: usize) -> Result<Var> {
        let v = self.value(x);
        if v.rank() == 0 || repeats == 0 {
            return shape_err("repeat_batch", v.shape(), &[repeats]);
        }
        let per = v.numel() / v.shape()[0].max(1);
        let mut out = Vec::with_capacity(v.numel() * repeats);
        for sample in v.data().chunks(per.max(1)) {
            for _ in 0..repeats {
                out.extend_from_slice(sample);
            }
        }
        let mut shape = v.shape().to_vec();
        shape[0] *= repeats;
        self.push(Tensor::from_parts(shape, out), Op::RepeatBatch { x, repeats })
    }
}

pub(crate) fn backward_permute<T: Scalar>(
    x: Var,
    perm: &[usize],
    out_shape: &[usize],
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    let (_, gx) = permute_data(g, out_shape, &inv);
    vec![(x, gx)]
}

pub(crate) fn backward_concat<T: Scalar>(
    tape: &Tape<T>,
    xs: &[Var],
    axis: usize,
    out_shape: &[usize],
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let (outer, total, inner) = split_axis(out_shape, axis);
    let mut offset = 0;
    let mut res = Vec::with_capacity(xs.len());
    for &x in xs {
        let len = tape.shape(x)[axis];
        let mut gx = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * total + offset) * inner;
            gx.extend_from_slice(&g[from..from + len * inner]);
        }
        offset += len;
        res.push((x, gx));
    }
    res
}

pub(crate) fn backward_slice<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    axis: usize,
    start: usize,
    out_shape: &[usize],
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let s = tape.shape(x);
    let (outer, full, inner) = split_axis(s, axis);
    let len = out_shape[axis];
    let mut gx = vec![T::zero(); outer * full * inner];
    for o in 0..outer {
        let to = (o * full + start) * inner;
        gx[to..to + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
    }
    vec![(x, gx)]
}

pub(crate) fn backward_window_partition<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    s: usize,
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let sh = tape.shape(x);
    let geom = Windows {
        n: sh[0],
        c: sh[1],
        h: sh[2],
        w: sh[3],
        s,
    };
    let mut gx = vec![T::zero(); g.len()];
    geom.for_each(|img, tok| gx[img] = g[tok]);
    vec![(x, gx)]
}

pub(crate) fn backward_window_merge<T: Scalar>(
    x: Var,
    s: usize,
    out_shape: &[usize],
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let geom = Windows {
        n: out_shape[0],
        c: out_shape[1],
        h: out_shape[2],
        w: out_shape[3],
        s,
    };
    let mut gx = vec![T::zero(); g.len()];
    geom.for_each(|img, tok| gx[tok] = g[img]);
    vec![(x, gx)]
}

pub(crate) fn backward_gather<T: Scalar>(
    tape: &Tape<T>,
    table: Var,
    index: &[usize],
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let k = tape.shape(table)[1];
    let mut gt = vec![T::zero(); tape.value(table).numel()];
    for (r, &i) in index.iter().enumerate() {
        for (d, &v) in gt[i * k..(i + 1) * k].iter_mut().zip(&g[r * k..(r + 1) * k]) {
            *d += v;
        }
    }
    vec![(table, gt)]
}

pub(crate) fn backward_repeat_batch<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    repeats: usize,
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let v = tape.value(x);
    let per = v.numel() / v.shape()[0].max(1);
    let mut gx = vec![T::zero(); v.numel()];
    for (b, dst) in gx.chunks_mut(per.max(1)).enumerate() {
        for r in 0..repeats {
            let src = &g[(b * repeats + r) * per..(b * repeats + r + 1) * per];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    vec![(x, gx)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_by_four_first_window() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| i as f64));
        let w = t.window_partition(x, 2).unwrap();
        assert_eq!(t.shape(w), &[4, 4, 1]);
        assert_eq!(&t.value(w).data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&t.value(w).data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn single_window_token_layout() {
        let s = 3;
        let mut t = Tape::new();
        let x = t.leaf(Tensor::<f64>::from_fn(&[1, 2, s, s], |i| i as f64));
        let w = t.window_partition(x, s).unwrap();
        let v = t.value(w);
        for k in 0..s * s {
            for ch in 0..2 {
                let (py, px) = (k / s, k % s);
                assert_eq!(v.at(&[0, k, ch]), (ch * s * s + py * s + px) as f64);
            }
        }
    }

    #[test]
    fn partition_merge_roundtrip() {
        let mut t = Tape::new();
        let img = Tensor::<f32>::from_fn(&[2, 3, 8, 12], |i| (i as f32).sin());
        let x = t.leaf(img.clone());
        let w = t.window_partition(x, 4).unwrap();
        let back = t.window_merge(w, 4, (2, 3, 8, 12)).unwrap();
        assert_eq!(t.value(back), &img);
    }

    #[test]
    fn zero_tokens_merge_to_zero_image() {
        let mut t = Tape::new();
        let z = t.leaf(Tensor::<f64>::zeros(&[4, 4, 3]));
        let img = t.window_merge(z, 2, (1, 3, 4, 4)).unwrap();
        assert!(t.value(img).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn partition_rejects_indivisible() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::<f64>::zeros(&[1, 1, 6, 8]));
        assert!(matches!(
            t.window_partition(x, 4),
            Err(TensorError::NotDivisible { size: 6, .. })
        ));
    }

    #[test]
    fn merge_rejects_wrong_token_count() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::<f64>::zeros(&[3, 4, 1]));
        assert!(matches!(
            t.window_merge(x, 2, (1, 1, 4, 4)),
            Err(TensorError::CountMismatch { .. })
        ));
    }

    #[test]
    fn permute_transposes() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::<f64>::from_fn(&[2, 3], |i| i as f64));
        let y = t.permute(x, &[1, 0]).unwrap();
        assert_eq!(t.shape(y), &[3, 2]);
        assert_eq!(t.value(y).data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::<f64>::from_fn(&[2, 1, 3], |i| i as f64));
        let b = t.leaf(Tensor::<f64>::from_fn(&[2, 2, 3], |i| 10.0 + i as f64));
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.shape(c), &[2, 3, 3]);
        let a2 = t.slice(c, 1, 0, 1).unwrap();
        let b2 = t.slice(c, 1, 1, 2).unwrap();
        assert_eq!(t.value(a2), t.value(a));
        assert_eq!(t.value(b2), t.value(b));
    }

    #[test]
    fn repeat_batch_layout() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = t.repeat_batch(x, 2).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
    }
}
