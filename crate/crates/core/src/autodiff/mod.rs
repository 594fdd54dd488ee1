//! Tape-based reverse-mode automatic differentiation.
//!
//! Every forward op appends a node to a [`Tape`]; node ids are assigned in
//! execution order, so the tape is already topologically sorted and
//! [`Tape::backward`] simply walks it from the loss down to id 0.
//!
//! Gradients accumulate: calling `backward` twice on the same loss adds the
//! leaf gradients twice. Intermediate gradients are cleared at the start of
//! each pass.

mod conv;
mod elementwise;
mod linalg;
mod loss;
mod norm;
mod reduce;
mod scan;
mod shape;

pub use conv::ConvOpts;
pub use elementwise::{gelu_scalar, silu_scalar, softplus_scalar, Unary};
pub use norm::{Mode, RunningStats, BN_EPS, BN_MOMENTUM};
pub(crate) use reduce::{mean_along, var_along};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<F: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    Unary(Var, Unary),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    SumAll(Var),
    Mean(Var, usize),
    Variance(Var, usize),
    Softmax(Var, usize),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        opts: ConvOpts,
    },
    DwConv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Bmm {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
        train: bool,
    },
    SelectiveScan {
        u: Var,
        delta: Var,
        a: Var,
        bm: Var,
        cm: Var,
        d: Var,
        states: Vec<F>,
        state_size: usize,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<F>,
    },
}

impl<F: Scalar> Op<F> {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            Scale(a, _)
            | AddScalar(a)
            | Unary(a, _)
            | Reshape(a)
            | Permute(a, _)
            | SumAll(a)
            | Mean(a, _)
            | Variance(a, _)
            | Softmax(a, _) => vec![*a],
            Concat(xs, _) => xs.clone(),
            Conv1d { x, w, b, .. } | DwConv2d { x, w, b } | Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Bmm { a, b, .. } => vec![*a, *b],
            BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            SelectiveScan {
                u, delta, a, bm, cm, d, ..
            } => vec![*u, *delta, *a, *bm, *cm, *d],
            CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

pub(crate) struct Node<F: Scalar> {
    pub(crate) value: Tensor<F>,
    grad: Option<Vec<F>>,
    requires_grad: bool,
    finite: bool,
    op: Op<F>,
}

/// Recording of one forward pass.
pub struct Tape<F: Scalar = f32> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push_leaf(value, false)
    }

    /// Stop-gradient: a constant copy of `x`.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.constant(v)
    }

    fn push_leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        let finite = value.all_finite();
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            finite,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        let parents = op.parents();
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let inputs_finite = parents.iter().all(|p| self.nodes[p.0].finite);
        let finite = inputs_finite && value.all_finite();
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            finite,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient as a tensor, zeros if `v` was never reached.
    pub fn grad_tensor(&self, v: Var) -> Tensor<F> {
        let shape = self.shape(v);
        match self.grad(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("grad shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub(crate) fn accumulate(&mut self, v: Var, g: &[F]) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        debug_assert_eq!(g.len(), node.value.numel());
        match &mut node.grad {
            Some(acc) => {
                for (a, &x) in acc.iter_mut().zip(g) {
                    *a += x;
                }
            }
            None => node.grad = Some(g.to_vec()),
        }
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::NoGraph);
        }
        for n in &mut self.nodes {
            if !matches!(n.op, Op::Leaf) {
                n.grad = None;
            }
        }
        self.nodes[loss.0].grad = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.op_backward(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, gv) in contributions {
                self.accumulate(v, &gv);
            }
        }
        Ok(())
    }

    fn op_backward(&self, i: usize, g: &[F]) -> Vec<(Var, Vec<F>)> {
        let node = &self.nodes[i];
        let want = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (v, sign) in [(*a, F::one()), (*b, F::one())] {
                    if want(v) {
                        out.push((v, self.reduce_broadcast(g, i, v, sign)));
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, F::one()), (*b, -F::one())] {
                    if want(v) {
                        out.push((v, self.reduce_broadcast(g, i, v, sign)));
                    }
                }
            }
            Op::Mul(a, b) => out.extend(self.mul_backward(g, i, *a, *b)),
            Op::Scale(a, s) => {
                if want(*a) {
                    out.push((*a, g.iter().map(|&x| x * *s).collect()));
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if want(*a) {
                    out.push((*a, g.to_vec()));
                }
            }
            Op::Unary(a, kind) => {
                if want(*a) {
                    let x = self.value(*a).data();
                    let y = node.value.data();
                    out.push((*a, elementwise::unary_backward(*kind, x, y, g)));
                }
            }
            Op::Permute(a, perm) => {
                if want(*a) {
                    out.push((*a, shape::permute_backward(self.shape(*a), perm, g)));
                }
            }
            Op::Concat(xs, axis) => {
                let shapes: Vec<&[usize]> = xs.iter().map(|v| self.shape(*v)).collect();
                for (v, gv) in xs.iter().zip(shape::concat_backward(&shapes, *axis, g)) {
                    if want(*v) {
                        out.push((*v, gv));
                    }
                }
            }
            Op::SumAll(a) => {
                if want(*a) {
                    out.push((*a, vec![g[0]; self.value(*a).numel()]));
                }
            }
            Op::Mean(a, axis) => {
                if want(*a) {
                    out.push((*a, reduce::mean_backward(self.shape(*a), *axis, g)));
                }
            }
            Op::Variance(a, axis) => {
                if want(*a) {
                    out.push((*a, reduce::var_backward(self.value(*a), *axis, g)));
                }
            }
            Op::Softmax(a, axis) => {
                if want(*a) {
                    out.push((*a, reduce::softmax_backward(&node.value, *axis, g)));
                }
            }
            Op::Conv1d { x, w, b, opts } => {
                let (gx, gw, gb) = conv::conv1d_backward(
                    self.value(*x),
                    self.value(*w),
                    opts,
                    node.value.shape(),
                    g,
                    want(*x),
                    want(*w),
                    b.map(want).unwrap_or(false),
                );
                out.extend(gx.map(|v| (*x, v)));
                out.extend(gw.map(|v| (*w, v)));
                if let (Some(b), Some(gb)) = (b, gb) {
                    out.push((*b, gb));
                }
            }
            Op::DwConv2d { x, w, b } => {
                let (gx, gw, gb) = conv::dwconv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    want(*x),
                    want(*w),
                    b.map(want).unwrap_or(false),
                );
                out.extend(gx.map(|v| (*x, v)));
                out.extend(gw.map(|v| (*w, v)));
                if let (Some(b), Some(gb)) = (b, gb) {
                    out.push((*b, gb));
                }
            }
            Op::Linear { x, w, b } => {
                let (gx, gw, gb) = linalg::linear_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    want(*x),
                    want(*w),
                    b.map(want).unwrap_or(false),
                );
                out.extend(gx.map(|v| (*x, v)));
                out.extend(gw.map(|v| (*w, v)));
                if let (Some(b), Some(gb)) = (b, gb) {
                    out.push((*b, gb));
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let (ga, gb) = linalg::bmm_backward(
                    self.value(*a),
                    self.value(*b),
                    *trans_b,
                    g,
                    want(*a),
                    want(*b),
                );
                out.extend(ga.map(|v| (*a, v)));
                out.extend(gb.map(|v| (*b, v)));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (gx, gg, gbeta) = norm::batchnorm_backward(
                    self.value(*x).shape(),
                    self.value(*gamma).data(),
                    xhat,
                    inv_std,
                    *train,
                    g,
                );
                if want(*x) {
                    out.push((*x, gx));
                }
                if want(*gamma) {
                    out.push((*gamma, gg));
                }
                if want(*beta) {
                    out.push((*beta, gbeta));
                }
            }
            Op::SelectiveScan {
                u,
                delta,
                a,
                bm,
                cm,
                d,
                states,
                state_size,
            } => {
                let grads = scan::selective_scan_backward(
                    scan::ScanInputs {
                        u: self.value(*u),
                        delta: self.value(*delta),
                        a: self.value(*a),
                        bm: self.value(*bm),
                        cm: self.value(*cm),
                        d: self.value(*d),
                        state_size: *state_size,
                    },
                    states,
                    g,
                );
                for (v, gv) in [*u, *delta, *a, *bm, *cm, *d].into_iter().zip(grads) {
                    if want(v) {
                        out.push((v, gv));
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if want(*logits) {
                    out.push((*logits, loss::cross_entropy_backward(probs, labels, g[0])));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut t = Tape::<f32>::new();
        let x = t.leaf(Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::<f32>::new();
        let x = t.leaf(Tensor::new(&[2], vec![1., -2.]).unwrap());
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, -4.0]);
    }

    #[test]
    fn double_backward_doubles_leaf_grads() {
        let mut t = Tape::<f32>::new();
        let x = t.leaf(Tensor::new(&[3], vec![0.5, -1.5, 2.0]).unwrap());
        let y = t.gelu(x);
        let z = t.mul(y, x).unwrap();
        let s = t.sum(z);
        t.backward(s).unwrap();
        let once = t.grad(x).unwrap().to_vec();
        t.backward(s).unwrap();
        let twice = t.grad(x).unwrap();
        for (a, b) in once.iter().zip(twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn backward_on_constant_is_no_graph() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::scalar(3.0));
        assert!(matches!(t.backward(x), Err(Error::NoGraph)));
        let y = t.leaf(Tensor::scalar(1.0));
        let d = t.detach(y);
        let s = t.sum(d);
        assert!(matches!(t.backward(s), Err(Error::NoGraph)));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::<f32>::new();
        let x = t.leaf(Tensor::zeros(&[2]));
        assert!(matches!(t.backward(x), Err(Error::Shape { .. })));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut t = Tape::<f32>::new();
        let x = t.leaf(Tensor::new(&[2], vec![1., 3.]).unwrap());
        let d = t.detach(x);
        let y = t.mul(x, d).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, 3.0]);
    }
}
