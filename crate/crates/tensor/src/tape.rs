use std::fmt;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::kernels::ConvGeom;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    id: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.id as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Sigmoid,
    Gelu,
    Exp,
    Ln,
    Abs,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

/// Operation identity, used for diagnostics, fault injection and tape inspection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Sigmoid,
    Gelu,
    Exp,
    Ln,
    Abs,
    Square,
    Scale,
    AddScalar,
    SumAll,
    MeanAll,
    SumAxis,
    MeanAxis,
    MaxAxis,
    MatMul,
    Linear,
    Conv2d,
    MaxPool2d,
    AvgPool2d,
    AdaptiveAvgPool2d,
    Upsample,
    Softmax,
    LayerNorm,
    Reshape,
    Permute,
    Concat,
    Slice,
    WindowPartition,
    WindowMerge,
    Gather,
    RepeatBatch,
}

impl OpKind {
    pub const ALL: &'static [OpKind] = &[
        OpKind::Leaf,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Sigmoid,
        OpKind::Gelu,
        OpKind::Exp,
        OpKind::Ln,
        OpKind::Abs,
        OpKind::Square,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::SumAll,
        OpKind::MeanAll,
        OpKind::SumAxis,
        OpKind::MeanAxis,
        OpKind::MaxAxis,
        OpKind::MatMul,
        OpKind::Linear,
        OpKind::Conv2d,
        OpKind::MaxPool2d,
        OpKind::AvgPool2d,
        OpKind::AdaptiveAvgPool2d,
        OpKind::Upsample,
        OpKind::Softmax,
        OpKind::LayerNorm,
        OpKind::Reshape,
        OpKind::Permute,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::WindowPartition,
        OpKind::WindowMerge,
        OpKind::Gather,
        OpKind::RepeatBatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Gelu => "gelu",
            OpKind::Exp => "exp",
            OpKind::Ln => "ln",
            OpKind::Abs => "abs",
            OpKind::Square => "square",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::SumAll => "sum",
            OpKind::MeanAll => "mean",
            OpKind::SumAxis => "sum_axis",
            OpKind::MeanAxis => "mean_axis",
            OpKind::MaxAxis => "max_axis",
            OpKind::MatMul => "matmul",
            OpKind::Linear => "linear",
            OpKind::Conv2d => "conv2d",
            OpKind::MaxPool2d => "maxpool2d",
            OpKind::AvgPool2d => "avgpool2d",
            OpKind::AdaptiveAvgPool2d => "adaptive_avgpool2d",
            OpKind::Upsample => "upsample_nearest",
            OpKind::Softmax => "softmax",
            OpKind::LayerNorm => "layernorm",
            OpKind::Reshape => "reshape",
            OpKind::Permute => "permute",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::WindowPartition => "window_partition",
            OpKind::WindowMerge => "window_merge",
            OpKind::Gather => "gather",
            OpKind::RepeatBatch => "repeat_batch",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    Unary {
        kind: UnaryKind,
        x: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    AddScalar {
        x: Var,
    },
    SumAll {
        x: Var,
    },
    MeanAll {
        x: Var,
    },
    Reduce {
        kind: ReduceKind,
        x: Var,
        axis: usize,
        argmax: Vec<u32>,
    },
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<u32>,
    },
    AvgPool2d {
        x: Var,
        k: usize,
        stride: usize,
    },
    AdaptiveAvgPool2d {
        x: Var,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    WindowPartition {
        x: Var,
        s: usize,
    },
    WindowMerge {
        x: Var,
        s: usize,
    },
    Gather {
        table: Var,
        index: Arc<Vec<usize>>,
    },
    RepeatBatch {
        x: Var,
        repeats: usize,
    },
}

impl<T> Op<T> {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Binary { kind, .. } => match kind {
                BinaryKind::Add => OpKind::Add,
                BinaryKind::Sub => OpKind::Sub,
                BinaryKind::Mul => OpKind::Mul,
            },
            Op::Unary { kind, .. } => match kind {
                UnaryKind::Sigmoid => OpKind::Sigmoid,
                UnaryKind::Gelu => OpKind::Gelu,
                UnaryKind::Exp => OpKind::Exp,
                UnaryKind::Ln => OpKind::Ln,
                UnaryKind::Abs => OpKind::Abs,
                UnaryKind::Square => OpKind::Square,
            },
            Op::Scale { .. } => OpKind::Scale,
            Op::AddScalar { .. } => OpKind::AddScalar,
            Op::SumAll { .. } => OpKind::SumAll,
            Op::MeanAll { .. } => OpKind::MeanAll,
            Op::Reduce { kind, .. } => match kind {
                ReduceKind::Sum => OpKind::SumAxis,
                ReduceKind::Mean => OpKind::MeanAxis,
                ReduceKind::Max => OpKind::MaxAxis,
            },
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Linear { .. } => OpKind::Linear,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::MaxPool2d { .. } => OpKind::MaxPool2d,
            Op::AvgPool2d { .. } => OpKind::AvgPool2d,
            Op::AdaptiveAvgPool2d { .. } => OpKind::AdaptiveAvgPool2d,
            Op::Upsample { .. } => OpKind::Upsample,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Permute { .. } => OpKind::Permute,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::WindowPartition { .. } => OpKind::WindowPartition,
            Op::WindowMerge { .. } => OpKind::WindowMerge,
            Op::Gather { .. } => OpKind::Gather,
            Op::RepeatBatch { .. } => OpKind::RepeatBatch,
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Binary { a, b, .. } | Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Unary { x, .. }
            | Op::Scale { x, .. }
            | Op::AddScalar { x }
            | Op::SumAll { x }
            | Op::MeanAll { x }
            | Op::Reduce { x, .. }
            | Op::MaxPool2d { x, .. }
            | Op::AvgPool2d { x, .. }
            | Op::AdaptiveAvgPool2d { x }
            | Op::Upsample { x, .. }
            | Op::Softmax { x, .. }
            | Op::Reshape { x }
            | Op::Permute { x, .. }
            | Op::Slice { x, .. }
            | Op::WindowPartition { x, .. }
            | Op::WindowMerge { x, .. }
            | Op::RepeatBatch { x, .. } => vec![*x],
            Op::Linear { x, w, b } | Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Concat { xs, .. } => xs.clone(),
            Op::Gather { table, .. } => vec![*table],
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) kind: OpKind,
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
    macs: u64,
}

/// Records operations in execution order for reverse-mode differentiation.
///
/// Nodes are appended as ops execute, so the node list is always in
/// topological order and backward is a single reverse sweep.
pub struct Tape<T> {
    id: u32,
    pub(crate) nodes: Vec<Node<T>>,
    grad_enabled: bool,
    fault: Option<OpKind>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grad_enabled: true,
            fault: None,
        }
    }

    /// A tape that records values only; nothing on it can be differentiated.
    pub fn inference() -> Self {
        let mut t = Self::new();
        t.grad_enabled = false;
        t
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Corrupts the backward rule of `kind` (scales its input gradients by 1.5).
    /// Exists so the gradient checker can be shown to catch a broken rule.
    pub fn inject_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    /// A tracked leaf (gradient will be produced for it).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let requires_grad = self.grad_enabled;
        self.push_unchecked(value, OpKind::Leaf, Op::Leaf, requires_grad, 0)
    }

    /// An untracked leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_unchecked(value, OpKind::Leaf, Op::Leaf, false, 0)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.check_owner(v);
        &self.nodes[v.index()].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.check_owner(v);
        self.nodes[v.index()].requires_grad
    }

    /// Kinds of all recorded ops, in execution order.
    pub fn op_kinds(&self) -> impl Iterator<Item = (Var, OpKind)> + '_ {
        self.nodes.iter().enumerate().map(|(i, n)| {
            (
                Var {
                    tape: self.id,
                    id: i as u32,
                },
                n.kind,
            )
        })
    }

    pub fn owns(&self, v: Var) -> bool {
        v.tape == self.id && (v.id as usize) < self.nodes.len()
    }

    fn check_owner(&self, v: Var) {
        assert!(self.owns(v), "variable {v:?} does not belong to tape {}", self.id);
    }

    fn push_unchecked(
        &mut self,
        value: Tensor<T>,
        kind: OpKind,
        op: Op<T>,
        requires_grad: bool,
        macs: u64,
    ) -> Var {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            kind,
            value,
            op,
            requires_grad,
            macs,
        });
        Var { tape: self.id, id }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        let kind = op.kind();
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: kind.name() });
        }
        let inputs = op.inputs();
        for v in &inputs {
            self.check_owner(*v);
        }
        let requires_grad =
            self.grad_enabled && inputs.iter().any(|v| self.nodes[v.index()].requires_grad);
        let macs = self.op_macs(&op, &value);
        let op = if requires_grad { op } else { Op::Leaf };
        Ok(self.push_unchecked(value, kind, op, requires_grad, macs))
    }

    fn op_macs(&self, op: &Op<T>, out: &Tensor<T>) -> u64 {
        let out = out.numel() as u64;
        match op {
            Op::MatMul { a, ta, .. } => {
                let s = self.shape(*a);
                let k = if *ta { s[s.len() - 2] } else { s[s.len() - 1] };
                out * k as u64
            }
            Op::Linear { w, .. } => out * self.shape(*w)[1] as u64,
            Op::Conv2d { geom, .. } => out * geom.cols_rows() as u64,
            _ => 0,
        }
    }

    /// Multiply-accumulates performed by the matmul, linear and conv ops recorded so far.
    pub fn macs(&self) -> u64 {
        self.nodes.iter().map(|n| n.macs).sum()
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.index()].requires_grad
    }

    /// Reverse sweep from a scalar `loss`, producing gradients for every tracked leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.owns(loss) {
            return Err(TensorError::DetachedLoss);
        }
        let loss_node = &self.nodes[loss.index()];
        if loss_node.value.numel() != 1 {
            return Err(TensorError::NotScalar(loss_node.value.shape().to_vec()));
        }
        if !loss_node.requires_grad {
            return Err(TensorError::DetachedLoss);
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.index() + 1);
        grads.resize_with(loss.index() + 1, || None);
        grads[loss.index()] = Some(vec![T::one()]);
        let mut leaf_grads: Vec<Option<Tensor<T>>> = Vec::new();
        leaf_grads.resize_with(self.nodes.len(), || None);

        for id in (0..=loss.index()).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(TensorError::NonFinite { op: "backward" });
                }
                leaf_grads[id] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            let mut contributions = crate::ops::backward_rule(self, id, &g)?;
            if self.fault == Some(node.op.kind()) {
                for (_, c) in contributions.iter_mut().take(1) {
                    c.iter_mut().for_each(|v| *v *= crate::scalar::cst(1.5));
                }
            }
            for (input, contrib) in contributions {
                if !self.needs(input) {
                    continue;
                }
                match &mut grads[input.index()] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contrib) {
                            *a += *c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads: leaf_grads,
        })
    }
}

/// Gradients of a scalar with respect to the tracked leaves of one tape.
pub struct Gradients<T> {
    tape: u32,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`, or `None` when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index()).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zero-filled when `v` did not influence the loss.
    pub fn wrt(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }
}
