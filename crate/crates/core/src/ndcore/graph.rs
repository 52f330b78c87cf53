//! Reverse-mode differentiation over a recorded tape.
//!
//! A [`Graph`] records every operation in evaluation order. Nodes hold their
//! value and, after [`Graph::backward`], their gradient. Leaves may borrow
//! their value (model parameters) so that building a graph does not copy
//! weights. Nodes that do not depend on any differentiable leaf are never
//! visited by the backward pass.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::ndcore::matrix::{gemm, Matrix};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Adds a `1 × cols` row to every row of the left operand.
    AddRow(Var, Var),
    Act(Var, Activation),
    /// Elementwise product with a constant of the same shape.
    MulConst(Var, Matrix),
    HConcat(Var, Var),
    /// Mean squared error against a constant target; a `1 × 1` node.
    Mse(Var, Matrix),
    Sum(Var),
}

/// A value on the tape together with its gradient.
#[derive(Debug)]
pub struct DiffNode<'a> {
    value: Cow<'a, Matrix>,
    grad: Option<Matrix>,
    requires_grad: bool,
    op: Op,
}

impl DiffNode<'_> {
    pub fn value(&self) -> &Matrix {
        &self.value
    }

    /// Gradient of the last backward root; `None` before backward or when the
    /// node does not depend on a differentiable leaf.
    pub fn grad(&self) -> Option<&Matrix> {
        self.grad.as_ref()
    }
}

#[derive(Debug, Default)]
pub struct Graph<'a> {
    nodes: Vec<DiffNode<'a>>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Cow<'a, Matrix>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(DiffNode {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Cow::Owned(value), false, Op::Leaf)
    }

    /// A differentiable leaf that owns its value.
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(Cow::Owned(value), true, Op::Leaf)
    }

    /// A differentiable leaf borrowing its value, typically a model parameter.
    pub fn param(&mut self, value: &'a Matrix) -> Var {
        self.push(Cow::Borrowed(value), true, Op::Leaf)
    }

    pub fn node(&self, v: Var) -> &DiffNode<'a> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Moves the gradient out, substituting zeros when none was accumulated.
    pub fn take_grad(&mut self, v: Var) -> Matrix {
        let node = &mut self.nodes[v.0];
        node.grad
            .take()
            .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(value), rg, Op::MatMul(a, b)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(Error::Dimension {
                op: "add_row",
                left: am.shape(),
                right: rm.shape(),
            });
        }
        let mut value = am.clone();
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(rm.data()) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Cow::Owned(value), rg, Op::AddRow(a, row)))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        if act == Activation::Linear {
            return a;
        }
        let value = self.value(a).map(|x| act.apply(x));
        let rg = self.rg(a);
        self.push(Cow::Owned(value), rg, Op::Act(a, act))
    }

    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Result<Var> {
        let value = self.value(a).hadamard(&c)?;
        let rg = self.rg(a);
        Ok(self.push(Cow::Owned(value), rg, Op::MulConst(a, c)))
    }

    pub fn hconcat(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hconcat(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(value), rg, Op::HConcat(a, b)))
    }

    pub fn mse(&mut self, pred: Var, target: Matrix) -> Result<Var> {
        let loss = mse_value(self.value(pred), &target)?;
        let rg = self.rg(pred);
        Ok(self.push(
            Cow::Owned(Matrix::filled(1, 1, loss)),
            rg,
            Op::Mse(pred, target),
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Cow::Owned(Matrix::filled(1, 1, s)), rg, Op::Sum(a))
    }

    /// Back-propagates from a `1 × 1` root, overwriting earlier gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.value(root).shape();
        if shape != (1, 1) {
            return Err(Error::Dimension {
                op: "backward",
                left: shape,
                right: (1, 1),
            });
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.rg(root) {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=root.0).rev() {
            let Some(upstream) = self.nodes[i].grad.take() else {
                continue;
            };
            self.propagate(i, &upstream);
            self.nodes[i].grad = Some(upstream);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Matrix) {
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(acc) => acc.add_assign(&g),
            None => node.grad = Some(g),
        }
    }

    fn propagate(&mut self, i: usize, up: &Matrix) {
        for (v, g) in self.local_grads(i, up) {
            self.accumulate(v, g);
        }
    }

    /// Gradients that node `i` sends to its differentiable inputs.
    fn local_grads(&self, i: usize, up: &Matrix) -> Vec<(Var, Matrix)> {
        let mut out = Vec::with_capacity(2);
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.rg(a) {
                    let bv = self.value(b);
                    let mut ga = Matrix::zeros(up.rows(), bv.rows());
                    gemm(up, false, bv, true, 0.0, &mut ga);
                    out.push((a, ga));
                }
                if self.rg(b) {
                    let av = self.value(a);
                    let mut gb = Matrix::zeros(av.cols(), up.cols());
                    gemm(av, true, up, false, 0.0, &mut gb);
                    out.push((b, gb));
                }
            }
            &Op::AddRow(a, row) => {
                if self.rg(a) {
                    out.push((a, up.clone()));
                }
                if self.rg(row) {
                    let mut g = Matrix::zeros(1, up.cols());
                    for r in 0..up.rows() {
                        for (acc, x) in g.data_mut().iter_mut().zip(up.row(r)) {
                            *acc += x;
                        }
                    }
                    out.push((row, g));
                }
            }
            &Op::Act(a, act) => {
                if self.rg(a) {
                    let y = &self.nodes[i].value;
                    let mut g = up.clone();
                    for (gv, &y) in g.data_mut().iter_mut().zip(y.data()) {
                        *gv *= match act {
                            Activation::Linear => 1.0,
                            Activation::Relu => {
                                if y > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Activation::Tanh => 1.0 - y * y,
                        };
                    }
                    out.push((a, g));
                }
            }
            Op::MulConst(a, c) => {
                if self.rg(*a) {
                    out.push((*a, up.hadamard(c).expect("shape fixed at record time")));
                }
            }
            &Op::HConcat(a, b) => {
                let ca = self.value(a).cols();
                let cb = self.value(b).cols();
                if self.rg(a) {
                    out.push((a, Matrix::from_fn(up.rows(), ca, |r, c| up.get(r, c))));
                }
                if self.rg(b) {
                    out.push((b, Matrix::from_fn(up.rows(), cb, |r, c| up.get(r, ca + c))));
                }
            }
            Op::Mse(p, target) => {
                if self.rg(*p) {
                    let pv = self.value(*p);
                    let k = 2.0 * up.get(0, 0) / pv.len() as f64;
                    let g = Matrix::from_vec(
                        pv.rows(),
                        pv.cols(),
                        pv.data()
                            .iter()
                            .zip(target.data())
                            .map(|(&x, &t)| k * (x - t))
                            .collect(),
                    )
                    .expect("shape fixed at record time");
                    out.push((*p, g));
                }
            }
            &Op::Sum(a) => {
                if self.rg(a) {
                    let av = self.value(a);
                    out.push((a, Matrix::filled(av.rows(), av.cols(), up.get(0, 0))));
                }
            }
        }
        out
    }
}

/// Mean of squared elementwise differences.
pub fn mse_value(pred: &Matrix, target: &Matrix) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension {
            op: "mse",
            left: pred.shape(),
            right: target.shape(),
        });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / pred.len() as f64)
}
