//! Reverse-mode differentiation over a recorded tape.
//!
//! Every forward operation appends a node holding its output value and the
//! information its backward rule needs. Nodes only reference earlier nodes,
//! so walking the tape backwards is a valid topological order and each node
//! is visited once.

use crate::error::TensorError;
use crate::ops::conv::Padding2d;
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Gelu(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        groups: usize,
        pad: Padding2d,
    },
    AvgPool2d {
        input: Var,
        window: (usize, usize),
        stride: (usize, usize),
    },
    Softmax(Var),
    Matmul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    SumAxis(Var, usize),
    SumAll(Var),
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Dropout(Var, Vec<T>),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Gelu(a)
            | Op::Softmax(a)
            | Op::Permute(a, _)
            | Op::Reshape(a)
            | Op::SumAxis(a, _)
            | Op::SumAll(a)
            | Op::Dropout(a, _) => vec![*a],
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias.iter().copied());
                v
            }
            Op::AvgPool2d { input, .. } | Op::Narrow { input, .. } => vec![*input],
            Op::Concat { parts, .. } => parts.clone(),
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Recorded computation. A fresh tape is used for every forward pass.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    degenerate_rows: usize,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            degenerate_rows: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that gradients are tracked for (a parameter).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Input treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Rows of a masked softmax that had no unmasked entry so far.
    pub fn degenerate_rows(&self) -> usize {
        self.degenerate_rows
    }

    pub(crate) fn note_degenerate(&mut self, rows: usize) {
        if rows > 0 {
            log::warn!("masked softmax: {rows} fully masked row(s) produced zero output");
            self.degenerate_rows += rows;
        }
    }

    /// Appends a computed node. When no input needs a gradient the backward
    /// information is dropped.
    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        debug_assert!(
            value.data().iter().all(|v| !v.is_nan()),
            "NaN produced by forward op"
        );
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse-mode pass from a scalar `loss`. Returns gradients for every
    /// leaf that requires them; leaves the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let loss_shape = self.shape(loss);
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        let leaves = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if n.requires_grad && matches!(n.op, Op::Leaf) {
                    let g = grads[i]
                        .take()
                        .unwrap_or_else(|| vec![T::zero(); n.value.len()]);
                    Some(Tensor::from_parts(n.value.shape().to_vec(), g))
                } else {
                    None
                }
            })
            .collect();
        Ok(Gradients { grads: leaves })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        use crate::ops::{conv, elementwise as ew, matmul, norm, pool, shape, softmax};
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |v: Var, contrib: Vec<T>| accumulate(grads, v, contrib);
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                if needs(*a) {
                    acc(*a, ew::reduce_to(g, out.shape(), self.shape(*a), T::one()));
                }
                if needs(*b) {
                    acc(*b, ew::reduce_to(g, out.shape(), self.shape(*b), sign));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    acc(*a, ew::mul_reduce_to(g, out.shape(), vb, va.shape()));
                }
                if needs(*b) {
                    acc(*b, ew::mul_reduce_to(g, out.shape(), va, vb.shape()));
                }
            }
            Op::Scale(a, c) => acc(*a, g.iter().map(|&x| x * *c).collect()),
            Op::Sigmoid(a) => acc(*a, ew::sigmoid_backward(g, out.data())),
            Op::Gelu(a) => acc(*a, ew::gelu_backward(g, self.value(*a).data())),
            Op::Dropout(a, mask) => acc(*a, g.iter().zip(mask).map(|(&x, &m)| x * m).collect()),
            Op::Conv2d {
                input,
                kernel,
                bias,
                groups,
                pad,
            } => {
                let (x, w) = (self.value(*input), self.value(*kernel));
                if needs(*input) {
                    acc(*input, conv::backward_input(g, out.shape(), w, x.shape(), *groups, *pad));
                }
                if needs(*kernel) {
                    acc(*kernel, conv::backward_kernel(g, out.shape(), x, w.shape(), *groups, *pad));
                }
                if let Some(b) = bias {
                    if needs(*b) {
                        acc(*b, conv::backward_bias(g, out.shape()));
                    }
                }
            }
            Op::AvgPool2d {
                input,
                window,
                stride,
            } => acc(
                *input,
                pool::avg_pool_backward(g, out.shape(), self.shape(*input), *window, *stride),
            ),
            Op::Softmax(a) => acc(*a, softmax::softmax_backward(g, out)),
            Op::Matmul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (ga, gb) = matmul::backward(g, out.shape(), va, vb, needs(*a), needs(*b));
                if let Some(ga) = ga {
                    acc(*a, ga);
                }
                if let Some(gb) = gb {
                    acc(*b, gb);
                }
            }
            Op::Permute(a, axes) => acc(*a, shape::permute_backward(g, out.shape(), axes)),
            Op::Reshape(a) => acc(*a, g.to_vec()),
            Op::Narrow { input, axis, start } => acc(
                *input,
                shape::narrow_backward(g, out.shape(), self.shape(*input), *axis, *start),
            ),
            Op::Concat { parts, axis } => {
                let shapes: Vec<&[usize]> = parts.iter().map(|p| self.shape(*p)).collect();
                let pieces = shape::concat_backward(g, out.shape(), &shapes, *axis);
                for (p, piece) in parts.iter().zip(pieces) {
                    if needs(*p) {
                        acc(*p, piece);
                    }
                }
            }
            Op::SumAxis(a, axis) => acc(*a, shape::sum_axis_backward(g, self.shape(*a), *axis)),
            Op::SumAll(a) => acc(*a, vec![g[0]; self.value(*a).len()]),
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let gam = self.value(*gamma).data();
                let (gx, gg, gb) =
                    norm::batch_norm_backward(g, out.shape(), xhat, inv_std, gam, *train);
                if needs(*input) {
                    acc(*input, gx);
                }
                if needs(*gamma) {
                    acc(*gamma, gg);
                }
                if needs(*beta) {
                    acc(*beta, gb);
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => acc(*logits, softmax::cross_entropy_backward(g[0], probs, labels)),
        }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            debug_assert_eq!(existing.len(), contrib.len());
            existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += *c);
        }
        slot @ None => *slot = Some(contrib),
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[cfg(feature = "fault-injection")]
pub mod fault {
    //! Test hook that corrupts one backward rule so the gradient checker's
    //! failure path can be exercised.
    use std::sync::atomic::{AtomicU8, Ordering};

    static CORRUPTED: AtomicU8 = AtomicU8::new(0);

    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub enum FaultyRule {
        Gelu = 1,
        Matmul = 2,
    }

    pub fn corrupt(rule: Option<FaultyRule>) {
        CORRUPTED.store(rule.map_or(0, |r| r as u8), Ordering::SeqCst);
    }

    pub(crate) fn is_corrupted(rule: FaultyRule) -> bool {
        CORRUPTED.load(Ordering::SeqCst) == rule as u8
    }
}

#[cfg(not(feature = "fault-injection"))]
pub(crate) mod fault {
    #[derive(Clone, Copy)]
    pub enum FaultyRule {
        Gelu,
        Matmul,
    }

    #[inline(always)]
    pub(crate) fn is_corrupted(_: FaultyRule) -> bool {
        false
    }
}
