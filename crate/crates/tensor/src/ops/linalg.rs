use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::kernels::gemm;
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Per-batch matrix dimensions `(batch, m, k, n)` for `op(a) · op(b)`.
fn mm_dims(a: &[usize], b: &[usize], ta: bool, tb: bool) -> Result<(usize, usize, usize, usize)> {
    let (batch, ar, ac, br, bc) = match (a.len(), b.len()) {
        (2, 2) => (1, a[0], a[1], b[0], b[1]),
        (3, 3) if a[0] == b[0] => (a[0], a[1], a[2], b[1], b[2]),
        _ => return shape_err("matmul", a, b),
    };
    let (m, k1) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k1 != k2 {
        return shape_err("matmul", a, b);
    }
    Ok((batch, m, k1, n))
}

fn batched<T: Scalar>(
    batch: usize,
    (m, n, k): (usize, usize, usize),
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
) -> Vec<T> {
    let mut out = vec![T::zero(); batch * m * n];
    let body = |(i, c): (usize, &mut [T])| {
        gemm(
            m,
            n,
            k,
            &a[i * m * k..(i + 1) * m * k],
            ta,
            &b[i * k * n..(i + 1) * k * n],
            tb,
            c,
            false,
        )
    };
    if m * n == 0 {
        return out;
    }
    if batch > 1 && rayon::current_num_threads() > 1 {
        out.par_chunks_mut(m * n).enumerate().for_each(body);
    } else {
        out.chunks_mut(m * n).enumerate().for_each(body);
    }
    out
}

impl<T: Scalar> Tape<T> {
    /// Matrix product of `[m,k]·[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).rank() != 2 || self.value(b).rank() != 2 {
            return shape_err("matmul", self.shape(a), self.shape(b));
        }
        self.bmm(a, b, false, false)
    }

    /// Matrix product over 2-D operands or 3-D batches, with optional transposes.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (batch, m, k, n) = mm_dims(va.shape(), vb.shape(), ta, tb)?;
        let data = batched(batch, (m, n, k), va.data(), ta, vb.data(), tb);
        let shape = if va.rank() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        self.push(Tensor::from_parts(shape, data), Op::MatMul { a, b, ta, tb })
    }

    /// `x · wᵀ + b` over the last axis of `x`; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let xs = vx.shape();
        if vw.rank() != 2 || xs.is_empty() || xs[xs.len() - 1] != vw.shape()[1] {
            return shape_err("linear", xs, vw.shape());
        }
        let (out_f, in_f) = (vw.shape()[0], vw.shape()[1]);
        if let Some(b) = b {
            if self.shape(b) != [out_f] {
                return shape_err("linear", vw.shape(), self.shape(b));
            }
        }
        let rows = vx.numel() / in_f.max(1);
        let mut data = vec![T::zero(); rows * out_f];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in data.chunks_mut(out_f) {
                row.copy_from_slice(bias);
            }
        }
        gemm(rows, out_f, in_f, vx.data(), false, vw.data(), true, &mut data, true);
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = out_f;
        self.push(Tensor::from_parts(shape, data), Op::Linear { x, w, b })
    }
}

pub(crate) fn backward_matmul<T: Scalar>(
    tape: &Tape<T>,
    a: Var,
    b: Var,
    ta: bool,
    tb: bool,
    g: &[T],
) -> Result<Vec<(Var, Vec<T>)>> {
    let (va, vb) = (tape.value(a), tape.value(b));
    let (batch, m, k, n) = mm_dims(va.shape(), vb.shape(), ta, tb)?;
    let (ad, bd) = (va.data(), vb.data());
    let mut out = Vec::with_capacity(2);
    if tape.needs(a) {
        let mut ga = vec![T::zero(); ad.len()];
        for i in 0..batch {
            let gi = &g[i * m * n..(i + 1) * m * n];
            let bi = &bd[i * k * n..(i + 1) * k * n];
            let dst = &mut ga[i * m * k..(i + 1) * m * k];
            match (ta, tb) {
                (false, false) => gemm(m, k, n, gi, false, bi, true, dst, false),
                (false, true) => gemm(m, k, n, gi, false, bi, false, dst, false),
                (true, false) => gemm(k, m, n, bi, false, gi, true, dst, false),
                (true, true) => gemm(k, m, n, bi, true, gi, true, dst, false),
            }
        }
        out.push((a, ga));
    }
    if tape.needs(b) {
        let mut gb = vec![T::zero(); bd.len()];
        for i in 0..batch {
            let gi = &g[i * m * n..(i + 1) * m * n];
            let ai = &ad[i * m * k..(i + 1) * m * k];
            let dst = &mut gb[i * k * n..(i + 1) * k * n];
            match (ta, tb) {
                (false, false) => gemm(k, n, m, ai, true, gi, false, dst, false),
                (false, true) => gemm(n, k, m, gi, true, ai, false, dst, false),
                (true, false) => gemm(k, n, m, ai, false, gi, false, dst, false),
                (true, true) => gemm(n, k, m, gi, true, ai, true, dst, false),
            }
        }
        out.push((b, gb));
    }
    Ok(out)
}

pub(crate) fn backward_linear<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    g: &[T],
) -> Result<Vec<(Var, Vec<T>)>> {
    let (vx, vw) = (tape.value(x), tape.value(w));
    let (out_f, in_f) = (vw.shape()[0], vw.shape()[1]);
    let rows = vx.numel() / in_f.max(1);
    let mut out = Vec::with_capacity(3);
    if tape.needs(x) {
        let mut gx = vec![T::zero(); vx.numel()];
        gemm(rows, in_f, out_f, g, false, vw.data(), false, &mut gx, false);
        out.push((x, gx));
    }
    if tape.needs(w) {
        let mut gw = vec![T::zero(); vw.numel()];
        gemm(out_f, in_f, rows, g, true, vx.data(), false, &mut gw, false);
        out.push((w, gw));
    }
    if let Some(b) = b.filter(|b| tape.needs(*b)) {
        let mut gb = vec![T::zero(); out_f];
        for row in g.chunks(out_f) {
            for (acc, &v) in gb.iter_mut().zip(row) {
                *acc += v;
            }
        }
        out.push((b, gb));
    }
    Ok(out)
}
