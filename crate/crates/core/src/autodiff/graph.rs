use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>>;

struct Record<T> {
    inputs: Vec<Var>,
    outputs: Vec<Var>,
    backward: BackwardFn<T>,
}

/// What a backward closure sees: node values, upstream gradients of the
/// record's outputs, and which inputs want a gradient.
pub struct BackwardCtx<'a, T> {
    nodes: &'a [Node<T>],
    inputs: &'a [Var],
    out_grads: Vec<&'a [T]>,
}

impl<'a, T: Real> BackwardCtx<'a, T> {
    pub fn value(&self, v: Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Value of the `i`-th input of the record.
    pub fn input(&self, i: usize) -> &'a Tensor<T> {
        self.value(self.inputs[i])
    }

    /// Whether the `i`-th input needs a gradient.
    pub fn wants(&self, i: usize) -> bool {
        self.nodes[self.inputs[i].0].requires_grad
    }

    pub fn num_inputs(&self) -> usize {
        self.inputs.len()
    }

    /// Upstream gradient of the `i`-th output (zeros when unused).
    pub fn grad_out(&self, i: usize) -> &'a [T] {
        self.out_grads[i]
    }
}

/// Computation graph with a reverse-mode tape.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    tape: Vec<Record<T>>,
    planner: FftPlanner<T>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            tape: Vec::new(),
            planner: FftPlanner::new(),
        }
    }

    fn push_node(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, true)
    }

    pub fn scalar(&mut self, value: T) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient after [`Graph::backward`], if the node received one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn tape_len(&self) -> usize {
        self.tape.len()
    }

    pub(crate) fn fft_plan(&mut self, len: usize, inverse: bool) -> Arc<dyn Fft<T>> {
        if inverse {
            self.planner.plan_fft_inverse(len)
        } else {
            self.planner.plan_fft_forward(len)
        }
    }

    /// Adds the outputs of an operation, recording `backward` on the tape
    /// when any input requires a gradient.
    pub(crate) fn record<F>(&mut self, inputs: &[Var], outputs: Vec<Tensor<T>>, backward: F) -> Vec<Var>
    where
        F: Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> + 'static,
    {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let outs: Vec<Var> = outputs.into_iter().map(|t| self.push_node(t, tracked)).collect();
        if tracked {
            self.tape.push(Record {
                inputs: inputs.to_vec(),
                outputs: outs.clone(),
                backward: Box::new(backward),
            });
        }
        outs
    }

    pub(crate) fn record1<F>(&mut self, inputs: &[Var], output: Tensor<T>, backward: F) -> Var
    where
        F: Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> + 'static,
    {
        self.record(inputs, vec![output], backward)[0]
    }

    /// Backpropagates from a single-element `root` with seed 1.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::InvalidShape {
                op: "backward",
                shape: self.shape(root).to_vec(),
                reason: "root must hold a single element".into(),
            });
        }
        self.backward_seeded(&[(root, vec![T::one()])])
    }

    /// Backpropagates with explicit upstream gradients for several nodes.
    /// Gradients of repeated seeds add up.
    pub fn backward_seeded(&mut self, seeds: &[(Var, Vec<T>)]) -> Result<()> {
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            let numel = self.value(*v).numel();
            if g.len() != numel {
                return Err(Error::ShapeMismatch {
                    op: "backward seed",
                    lhs: vec![g.len()],
                    rhs: vec![numel],
                });
            }
            accumulate(&mut grads[v.0], g);
        }

        for rec in self.tape.iter().rev() {
            if rec.outputs.iter().all(|o| grads[o.0].is_none()) {
                continue;
            }
            let zeros: Vec<Vec<T>> = rec
                .outputs
                .iter()
                .map(|o| match grads[o.0] {
                    Some(_) => Vec::new(),
                    None => vec![T::zero(); self.nodes[o.0].value.numel()],
                })
                .collect();
            let input_grads = {
                let out_grads: Vec<&[T]> = rec
                    .outputs
                    .iter()
                    .zip(&zeros)
                    .map(|(o, z)| grads[o.0].as_deref().unwrap_or(z.as_slice()))
                    .collect();
                let ctx = BackwardCtx {
                    nodes: &self.nodes,
                    inputs: &rec.inputs,
                    out_grads,
                };
                (rec.backward)(&ctx)
            };
            debug_assert_eq!(input_grads.len(), rec.inputs.len());
            for (inp, g) in rec.inputs.iter().zip(input_grads) {
                if let Some(g) = g {
                    if self.nodes[inp.0].requires_grad {
                        debug_assert_eq!(g.len(), self.nodes[inp.0].value.numel());
                        accumulate(&mut grads[inp.0], &g);
                    }
                }
            }
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                node.grad = g;
            }
        }
        Ok(())
    }

    /// Clears gradients left by a previous backward pass.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(acc) => {
            for (a, &b) in acc.iter_mut().zip(g) {
                *a = *a + b;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}
