use crate::error::{shape_err, Result, TensorError};
use crate::kernels::{col2im, gemm, im2col, ConvGeom};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

fn nchw(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *s {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(TensorError::InvalidArgument {
            op,
            msg: format!("expected an NCHW tensor, got shape {s:?}"),
        }),
    }
}

/// Bin `[start, end)` of adaptive pooling cell `i` over an axis of `len` into `out` cells.
pub(crate) fn adaptive_bin(i: usize, len: usize, out: usize) -> (usize, usize) {
    let start = i * len / out;
    let end = ((i + 1) * len).div_ceil(out);
    (start, end)
}

impl<T: Scalar> Tape<T> {
    /// Zero-padded 2-D cross-correlation: `x[N,C,H,W] ⋆ w[O,C,kh,kw] + bias`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        if stride < 1 {
            return Err(TensorError::InvalidStride(stride));
        }
        let (n, c, h, wd) = nchw("conv2d", self.shape(x))?;
        let ws = self.shape(w).to_vec();
        let (o, kh, kw) = match ws[..] {
            [o, wc, kh, kw] if wc == c => (o, kh, kw),
            _ => return shape_err("conv2d", self.shape(x), &ws),
        };
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return shape_err("conv2d", self.shape(x), &ws);
        }
        if let Some(b) = bias {
            if self.shape(b) != [o] {
                return shape_err("conv2d", &ws, self.shape(b));
            }
        }
        let geom = ConvGeom {
            c,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (wd + 2 * pad - kw) / stride + 1,
        };
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let p = geom.out_pixels();
        let rows = geom.cols_rows();
        let mut out = vec![T::zero(); n * o * p];
        let mut cols = if geom.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); rows * p]
        };
        let bias_v = bias.map(|b| self.value(b).data());
        for s in 0..n {
            let xs = &xv[s * c * h * wd..(s + 1) * c * h * wd];
            let dst = &mut out[s * o * p..(s + 1) * o * p];
            if let Some(bv) = bias_v {
                for (row, &bb) in dst.chunks_mut(p).zip(bv) {
                    row.iter_mut().for_each(|e| *e = bb);
                }
            }
            let src = if geom.is_pointwise() {
                xs
            } else {
                im2col(xs, &geom, &mut cols);
                &cols[..]
            };
            gemm(o, p, rows, wv, false, src, false, dst, true);
        }
        self.push(
            Tensor::from_parts(vec![n, o, geom.oh, geom.ow], out),
            Op::Conv2d {
                x,
                w,
                b: bias,
                geom,
            },
        )
    }

    /// Max pooling without padding; ties resolve to the first element in raster order.
    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        if stride < 1 {
            return Err(TensorError::InvalidStride(stride));
        }
        let (n, c, h, w) = nchw("maxpool2d", self.shape(x))?;
        if k == 0 || h < k || w < k {
            return shape_err("maxpool2d", self.shape(x), &[k, k]);
        }
        if k == stride && (h % k != 0 || w % k != 0) {
            return shape_err("maxpool2d", self.shape(x), &[k, k]);
        }
        let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        let mut argmax = vec![0u32; out.len()];
        for plane in 0..n * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y0, x0) = (oy * stride, ox * stride);
                    let mut best = src[y0 * w + x0];
                    let mut at = y0 * w + x0;
                    for yy in y0..y0 + k {
                        for xx in x0..x0 + k {
                            let v = src[yy * w + xx];
                            if v > best {
                                best = v;
                                at = yy * w + xx;
                            }
                        }
                    }
                    let oi = (plane * oh + oy) * ow + ox;
                    out[oi] = best;
                    argmax[oi] = at as u32;
                }
            }
        }
        self.push(
            Tensor::from_parts(vec![n, c, oh, ow], out),
            Op::MaxPool2d { x, argmax },
        )
    }

    pub fn avgpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        if stride < 1 {
            return Err(TensorError::InvalidStride(stride));
        }
        let (n, c, h, w) = nchw("avgpool2d", self.shape(x))?;
        if k == 0 || h < k || w < k {
            return shape_err("avgpool2d", self.shape(x), &[k, k]);
        }
        let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
        let xv = self.value(x).data();
        let inv = T::one() / T::from_usize(k * k).unwrap();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for plane in 0..n * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for yy in oy * stride..oy * stride + k {
                        for xx in ox * stride..ox * stride + k {
                            acc += src[yy * w + xx];
                        }
                    }
                    out[(plane * oh + oy) * ow + ox] = acc * inv;
                }
            }
        }
        self.push(
            Tensor::from_parts(vec![n, c, oh, ow], out),
            Op::AvgPool2d { x, k, stride },
        )
    }

    /// Average pooling onto a fixed `out_h × out_w` grid (bins may overlap or repeat).
    pub fn adaptive_avgpool2d(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (n, c, h, w) = nchw("adaptive_avgpool2d", self.shape(x))?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return shape_err("adaptive_avgpool2d", self.shape(x), &[out_h, out_w]);
        }
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); n * c * out_h * out_w];
        for plane in 0..n * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            for oy in 0..out_h {
                let (y0, y1) = adaptive_bin(oy, h, out_h);
                for ox in 0..out_w {
                    let (x0, x1) = adaptive_bin(ox, w, out_w);
                    let mut acc = T::zero();
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            acc += src[yy * w + xx];
                        }
                    }
                    let cnt = T::from_usize((y1 - y0) * (x1 - x0)).unwrap();
                    out[(plane * out_h + oy) * out_w + ox] = acc / cnt;
                }
            }
        }
        self.push(
            Tensor::from_parts(vec![n, c, out_h, out_w], out),
            Op::AdaptiveAvgPool2d { x },
        )
    }

    /// Mean over the spatial axes, giving `[N,C,1,1]`.
    pub fn global_avgpool(&mut self, x: Var) -> Result<Var> {
        self.adaptive_avgpool2d(x, 1, 1)
    }

    /// Nearest-neighbour upsampling by an integer factor in both spatial axes.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (n, c, h, w) = nchw("upsample_nearest", self.shape(x))?;
        if factor == 0 {
            return Err(TensorError::InvalidArgument {
                op: "upsample_nearest",
                msg: "factor must be positive".into(),
            });
        }
        let (oh, ow) = (h * factor, w * factor);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for plane in 0..n * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for oy in 0..oh {
                let srow = &src[(oy / factor) * w..(oy / factor + 1) * w];
                for (ox, d) in dst[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                    *d = srow[ox / factor];
                }
            }
        }
        self.push(
            Tensor::from_parts(vec![n, c, oh, ow], out),
            Op::Upsample { x, factor },
        )
    }

    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        self.upsample_nearest(x, 2)
    }
}

pub(crate) fn backward_conv2d<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: &ConvGeom,
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let (xv, wv) = (tape.value(x), tape.value(w));
    let n = xv.shape()[0];
    let o = wv.shape()[0];
    let p = geom.out_pixels();
    let rows = geom.cols_rows();
    let sample = geom.c * geom.h * geom.w;
    let (need_x, need_w) = (tape.needs(x), tape.needs(w));
    let mut gx = if need_x { vec![T::zero(); xv.numel()] } else { Vec::new() };
    let mut gw = if need_w { vec![T::zero(); wv.numel()] } else { Vec::new() };
    let mut cols = vec![T::zero(); if geom.is_pointwise() { 0 } else { rows * p }];
    let mut dcols = vec![T::zero(); if geom.is_pointwise() || !need_x { 0 } else { rows * p }];
    for s in 0..n {
        let gs = &g[s * o * p..(s + 1) * o * p];
        let xs = &xv.data()[s * sample..(s + 1) * sample];
        if need_w {
            let src = if geom.is_pointwise() {
                xs
            } else {
                im2col(xs, geom, &mut cols);
                &cols[..]
            };
            gemm(o, rows, p, gs, false, src, true, &mut gw, true);
        }
        if need_x {
            let dst = &mut gx[s * sample..(s + 1) * sample];
            if geom.is_pointwise() {
                gemm(rows, p, o, wv.data(), true, gs, false, dst, false);
            } else {
                gemm(rows, p, o, wv.data(), true, gs, false, &mut dcols, false);
                col2im(&dcols, geom, dst);
            }
        }
    }
    let mut out = Vec::with_capacity(3);
    if need_x {
        out.push((x, gx));
    }
    if need_w {
        out.push((w, gw));
    }
    if let Some(b) = b.filter(|b| tape.needs(*b)) {
        let mut gb = vec![T::zero(); o];
        for s in 0..n {
            for (oc, acc) in gb.iter_mut().enumerate() {
                *acc += g[(s * o + oc) * p..(s * o + oc + 1) * p].iter().copied().sum();
            }
        }
        out.push((b, gb));
    }
    out
}

pub(crate) fn backward_maxpool<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    argmax: &[u32],
    out_shape: &[usize],
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let xs = tape.shape(x);
    let plane_in = xs[2] * xs[3];
    let plane_out = out_shape[2] * out_shape[3];
    let mut gx = vec![T::zero(); tape.value(x).numel()];
    for (oi, (&gv, &at)) in g.iter().zip(argmax).enumerate() {
        let plane = oi / plane_out;
        gx[plane * plane_in + at as usize] += gv;
    }
    vec![(x, gx)]
}

pub(crate) fn backward_avgpool<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    k: usize,
    stride: usize,
    out_shape: &[usize],
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let xs = tape.shape(x);
    let (h, w) = (xs[2], xs[3]);
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let inv = T::one() / T::from_usize(k * k).unwrap();
    let mut gx = vec![T::zero(); tape.value(x).numel()];
    for plane in 0..xs[0] * xs[1] {
        let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g[(plane * oh + oy) * ow + ox] * inv;
                for yy in oy * stride..oy * stride + k {
                    for xx in ox * stride..ox * stride + k {
                        dst[yy * w + xx] += gv;
                    }
                }
            }
        }
    }
    vec![(x, gx)]
}

pub(crate) fn backward_adaptive_avgpool<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    out_shape: &[usize],
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let xs = tape.shape(x);
    let (h, w) = (xs[2], xs[3]);
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let mut gx = vec![T::zero(); tape.value(x).numel()];
    for plane in 0..xs[0] * xs[1] {
        let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1) = adaptive_bin(oy, h, oh);
            for ox in 0..ow {
                let (x0, x1) = adaptive_bin(ox, w, ow);
                let cnt = T::from_usize((y1 - y0) * (x1 - x0)).unwrap();
                let gv = g[(plane * oh + oy) * ow + ox] / cnt;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        dst[yy * w + xx] += gv;
                    }
                }
            }
        }
    }
    vec![(x, gx)]
}

pub(crate) fn backward_upsample<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    factor: usize,
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let xs = tape.shape(x);
    let (h, w) = (xs[2], xs[3]);
    let (oh, ow) = (h * factor, w * factor);
    let mut gx = vec![T::zero(); tape.value(x).numel()];
    for plane in 0..xs[0] * xs[1] {
        let src = &g[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            let drow = &mut dst[(oy / factor) * w..(oy / factor + 1) * w];
            for (ox, &v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                drow[ox / factor] += v;
            }
        }
    }
    vec![(x, gx)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run<T: Scalar>(f: impl FnOnce(&mut Tape<T>) -> Var) -> (Tape<T>, Var) {
        let mut tape = Tape::new();
        let v = f(&mut tape);
        (tape, v)
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let img = Tensor::<f64>::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let (tape, y) = run(|t| {
            let x = t.leaf(img.clone());
            let w = t.leaf(Tensor::ones(&[1, 1, 1, 1]));
            let b = t.leaf(Tensor::zeros(&[1]));
            t.conv2d(x, w, Some(b), 1, 0).unwrap()
        });
        assert_eq!(tape.value(y), &img);
    }

    #[test]
    fn box_kernel_on_constant_image() {
        let c = 0.75;
        let (tape, y) = run(|t| {
            let x = t.leaf(Tensor::<f64>::full(&[1, 1, 5, 5], c));
            let w = t.leaf(Tensor::ones(&[1, 1, 3, 3]));
            t.conv2d(x, w, None, 1, 1).unwrap()
        });
        let out = tape.value(y);
        // direct summation: each output counts in-bounds neighbours
        for yy in 0..5usize {
            for xx in 0..5usize {
                let ny = [yy > 0, true, yy < 4].iter().filter(|b| **b).count();
                let nx = [xx > 0, true, xx < 4].iter().filter(|b| **b).count();
                assert_eq!(out.at(&[0, 0, yy, xx]), (ny * nx) as f64 * c);
            }
        }
        assert_eq!(out.at(&[0, 0, 2, 2]), 9.0 * c);
        assert_eq!(out.at(&[0, 0, 0, 0]), 4.0 * c);
    }

    #[test]
    fn strided_output_size() {
        let (tape, y) = run(|t| {
            let x = t.leaf(Tensor::<f32>::zeros(&[1, 2, 8, 8]));
            let w = t.leaf(Tensor::zeros(&[3, 2, 3, 3]));
            t.conv2d(x, w, None, 2, 1).unwrap()
        });
        assert_eq!(tape.shape(y), &[1, 3, 4, 4]);
    }

    #[test]
    fn zero_stride_rejected() {
        let mut t = Tape::<f32>::new();
        let x = t.leaf(Tensor::zeros(&[1, 1, 4, 4]));
        let w = t.leaf(Tensor::zeros(&[1, 1, 3, 3]));
        assert_eq!(t.conv2d(x, w, None, 0, 1), Err(TensorError::InvalidStride(0)));
    }

    #[test]
    fn maxpool_single_window() {
        let (tape, y) = run(|t| {
            let x = t.leaf(Tensor::<f64>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
            t.maxpool2d(x, 2, 2).unwrap()
        });
        assert_eq!(tape.value(y).data(), &[4.0]);
    }

    #[test]
    fn maxpool_constant_input_is_constant() {
        let (tape, y) = run(|t| {
            let x = t.leaf(Tensor::<f64>::full(&[1, 2, 4, 4], 0.3));
            t.maxpool2d(x, 2, 2).unwrap()
        });
        assert!(tape.value(y).data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn maxpool_gradient_hits_argmax_only() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(
            Tensor::new(&[1, 1, 2, 4], vec![1.0, 9.0, 2.0, 2.0, 3.0, 4.0, 0.0, 1.0]).unwrap(),
        );
        let y = t.maxpool2d(x, 2, 2).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        // second window ties at 2.0: first in raster order wins
        assert_eq!(
            g.get(x).unwrap().data(),
            &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn upsample_replicates_pixels() {
        let (tape, y) = run(|t| {
            let x = t.leaf(Tensor::<f64>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
            t.upsample_nearest2x(x).unwrap()
        });
        assert_eq!(
            tape.value(y).data(),
            &[
                1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0
            ]
        );
    }

    #[test]
    fn global_avgpool_of_constant() {
        let (tape, y) = run(|t| {
            let x = t.leaf(Tensor::<f64>::full(&[2, 3, 5, 7], 1.25));
            t.global_avgpool(x).unwrap()
        });
        assert_eq!(tape.shape(y), &[2, 3, 1, 1]);
        assert!(tape.value(y).data().iter().all(|&v| (v - 1.25).abs() < 1e-15));
    }

    #[test]
    fn adaptive_pool_upsamples_small_grids() {
        let (tape, y) = run(|t| {
            let x = t.leaf(Tensor::<f64>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
            t.adaptive_avgpool2d(x, 4, 4).unwrap()
        });
        assert_eq!(tape.value(y).at(&[0, 0, 0, 1]), 1.0);
        assert_eq!(tape.value(y).at(&[0, 0, 3, 3]), 4.0);
    }
}
