//! Forward implementations (as `Tape` methods) and their backward rules.

mod conv;
mod elementwise;
mod linalg;
mod nn;
mod shape;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};

/// Input-gradient contributions of node `id` given its output gradient `g`.
pub(crate) fn backward_rule<T: Scalar>(
    tape: &Tape<T>,
    id: usize,
    g: &[T],
) -> Result<Vec<(Var, Vec<T>)>> {
    let node = &tape.nodes[id];
    let out = &node.value;
    Ok(match &node.op {
        Op::Leaf => Vec::new(),
        Op::Binary { kind, a, b } => elementwise::backward_binary(tape, *kind, *a, *b, g),
        Op::Unary { kind, x } => elementwise::backward_unary(tape, *kind, *x, out, g),
        Op::Scale { x, c } => vec![(*x, g.iter().map(|&v| v * *c).collect())],
        Op::AddScalar { x } => vec![(*x, g.to_vec())],
        Op::SumAll { x } => vec![(*x, vec![g[0]; tape.value(*x).numel()])],
        Op::MeanAll { x } => {
            let n = tape.value(*x).numel();
            let v = g[0] / T::from_usize(n.max(1)).unwrap();
            vec![(*x, vec![v; n])]
        }
        Op::Reduce {
            kind,
            x,
            axis,
            argmax,
        } => elementwise::backward_reduce(tape, *kind, *x, *axis, argmax, g),
        Op::MatMul { a, b, ta, tb } => linalg::backward_matmul(tape, *a, *b, *ta, *tb, g)?,
        Op::Linear { x, w, b } => linalg::backward_linear(tape, *x, *w, *b, g)?,
        Op::Conv2d { x, w, b, geom } => conv::backward_conv2d(tape, *x, *w, *b, geom, g),
        Op::MaxPool2d { x, argmax } => conv::backward_maxpool(tape, *x, argmax, out.shape(), g),
        Op::AvgPool2d { x, k, stride } => {
            conv::backward_avgpool(tape, *x, *k, *stride, out.shape(), g)
        }
        Op::AdaptiveAvgPool2d { x } => conv::backward_adaptive_avgpool(tape, *x, out.shape(), g),
        Op::Upsample { x, factor } => conv::backward_upsample(tape, *x, *factor, g),
        Op::Softmax { x, axis } => nn::backward_softmax(*x, *axis, out, g),
        Op::LayerNorm {
            x,
            gamma,
            beta,
            axis,
            mean,
            rstd,
        } => nn::backward_layernorm(tape, *x, *gamma, *beta, *axis, mean, rstd, g),
        Op::Reshape { x } => vec![(*x, g.to_vec())],
        Op::Permute { x, perm } => shape::backward_permute(*x, perm, out.shape(), g),
        Op::Concat { xs, axis } => shape::backward_concat(tape, xs, *axis, out.shape(), g),
        Op::Slice { x, axis, start } => {
            shape::backward_slice(tape, *x, *axis, *start, out.shape(), g)
        }
        Op::WindowPartition { x, s } => shape::backward_window_partition(tape, *x, *s, g),
        Op::WindowMerge { x, s } => shape::backward_window_merge(*x, *s, out.shape(), g),
        Op::Gather { table, index } => shape::backward_gather(tape, *table, index, g),
        Op::RepeatBatch { x, repeats } => shape::backward_repeat_batch(tape, *x, *repeats, g),
    })
}
