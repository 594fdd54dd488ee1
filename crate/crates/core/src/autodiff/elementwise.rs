//! Broadcasting arithmetic and pointwise nonlinearities.

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{c, strides, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`
    Gelu,
    /// `x * sigmoid(x)`
    Silu,
    /// `ln(1 + e^x)`
    Softplus,
    Exp,
    Sqrt,
    Recip,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

pub fn gelu_scalar<F: Scalar>(x: F) -> F {
    let inner = c::<F>(GELU_K) * (x + c::<F>(GELU_C) * x * x * x);
    c::<F>(0.5) * x * (F::one() + inner.tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let x2 = x * x;
    let inner = c::<F>(GELU_K) * (x + c::<F>(GELU_C) * x2 * x);
    let th = inner.tanh();
    let dinner = c::<F>(GELU_K) * (F::one() + c::<F>(3.0 * GELU_C) * x2);
    c::<F>(0.5) * (F::one() + th) + c::<F>(0.5) * x * (F::one() - th * th) * dinner
}

fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn silu_scalar<F: Scalar>(x: F) -> F {
    x * sigmoid(x)
}

pub fn softplus_scalar<F: Scalar>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

fn apply<F: Scalar>(kind: Unary, x: F) -> F {
    match kind {
        Unary::Gelu => gelu_scalar(x),
        Unary::Silu => silu_scalar(x),
        Unary::Softplus => softplus_scalar(x),
        Unary::Exp => x.exp(),
        Unary::Sqrt => x.sqrt(),
        Unary::Recip => x.recip(),
    }
}

pub(crate) fn unary_backward<F: Scalar>(kind: Unary, x: &[F], y: &[F], g: &[F]) -> Vec<F> {
    x.iter()
        .zip(y)
        .zip(g)
        .map(|((&x, &y), &g)| {
            let d = match kind {
                Unary::Gelu => gelu_grad(x),
                Unary::Silu => {
                    let s = sigmoid(x);
                    s * (F::one() + x * (F::one() - s))
                }
                Unary::Softplus => sigmoid(x),
                Unary::Exp => y,
                Unary::Sqrt => c::<F>(0.5) / y,
                Unary::Recip => -y * y,
            };
            g * d
        })
        .collect()
}

/// Numpy-style broadcast of two shapes, aligned on trailing axes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out`, the flat index of the broadcast source.
/// `None` when no broadcasting happens.
pub(crate) fn index_map(out: &[usize], inp: &[usize]) -> Option<Vec<usize>> {
    if out == inp {
        return None;
    }
    let n = out.len();
    let off = n - inp.len();
    let in_strides = strides(inp);
    let eff: Vec<usize> = (0..n)
        .map(|i| {
            if i < off || inp[i - off] == 1 {
                0
            } else {
                in_strides[i - off]
            }
        })
        .collect();
    let total: usize = out.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    let mut src = 0usize;
    for _ in 0..total {
        map.push(src);
        for ax in (0..n).rev() {
            idx[ax] += 1;
            src += eff[ax];
            if idx[ax] < out[ax] {
                break;
            }
            src -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Some(map)
}

#[derive(Clone, Copy)]
enum Bin {
    Add,
    Sub,
    Mul,
}

impl<F: Scalar> Tape<F> {
    fn binary(&mut self, a: Var, b: Var, kind: Bin, name: &'static str) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| {
            Error::shape(name, format!("cannot broadcast {sa:?} with {sb:?}"))
        })?;
        let ma = index_map(&out_shape, &sa);
        let mb = index_map(&out_shape, &sb);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let n: usize = out_shape.iter().product();
        let f = |x: F, y: F| match kind {
            Bin::Add => x + y,
            Bin::Sub => x - y,
            Bin::Mul => x * y,
        };
        let data: Vec<F> = match (&ma, &mb) {
            (None, None) => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..n)
                .map(|i| {
                    let ia = ma.as_ref().map_or(i, |m| m[i]);
                    let ib = mb.as_ref().map_or(i, |m| m[i]);
                    f(da[ia], db[ib])
                })
                .collect(),
        };
        let value = Tensor::new(&out_shape, data)?;
        let op = match kind {
            Bin::Add => Op::Add(a, b),
            Bin::Sub => Op::Sub(a, b),
            Bin::Mul => Op::Mul(a, b),
        };
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Bin::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Bin::Sub, "sub")
    }

    /// Element-wise product with trailing-axis broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Bin::Mul, "mul")
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: F) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let v = self.value(a).map(|x| apply(kind, x));
        self.push(v, Op::Unary(a, kind))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Silu)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }

    pub fn reciprocal(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Recip)
    }

    /// Gradient of a broadcasting add/sub output w.r.t. input `v`.
    pub(crate) fn reduce_broadcast(&self, g: &[F], out: usize, v: Var, sign: F) -> Vec<F> {
        let out_shape = self.nodes[out].value.shape();
        match index_map(out_shape, self.shape(v)) {
            None => g.iter().map(|&x| x * sign).collect(),
            Some(map) => {
                let mut acc = vec![F::zero(); self.value(v).numel()];
                for (i, &j) in map.iter().enumerate() {
                    acc[j] += g[i] * sign;
                }
                acc
            }
        }
    }

    pub(crate) fn mul_backward(&self, g: &[F], out: usize, a: Var, b: Var) -> Vec<(Var, Vec<F>)> {
        let out_shape = self.nodes[out].value.shape();
        let ma = index_map(out_shape, self.shape(a));
        let mb = index_map(out_shape, self.shape(b));
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut res = Vec::new();
        for (target, own, other_map, other) in [(a, &ma, &mb, db), (b, &mb, &ma, da)] {
            if !self.requires_grad(target) {
                continue;
            }
            let mut acc = vec![F::zero(); self.value(target).numel()];
            for (i, &gi) in g.iter().enumerate() {
                let j = own.as_ref().map_or(i, |m| m[i]);
                let k = other_map.as_ref().map_or(i, |m| m[i]);
                acc[j] += gi * other[k];
            }
            res.push((target, acc));
        }
        res
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_values() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        // tanh form evaluated in extended precision: 0.5 * (1 + tanh(0.7978845608 * 1.044715))
        assert!((gelu_scalar(1.0f64) - 0.841_191_990_608_276_8).abs() < 1e-12);
        assert!((gelu_scalar(1.0f32) - 0.8412).abs() < 1e-4);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus_scalar(100.0f32) - 100.0).abs() < 1e-5);
        assert!(softplus_scalar(-100.0f32) >= 0.0);
        assert!((softplus_scalar(0.0f64) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::new(&[2, 2], vec![1., -2., 3.5, 0.25]).unwrap());
        let o = t.constant(Tensor::ones(&[2, 2]));
        let y = t.mul(x, o).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 1], &[1, 5]), Some(vec![2, 5]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
        let mut t = Tape::<f32>::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[4]));
        let err = t.add(a, b).unwrap_err();
        assert!(err.to_string().contains("cannot broadcast"));
    }

    #[test]
    fn broadcast_mul_grad_matches_explicit_tiling() {
        // a: (2,3,2), b: (3,1) broadcast -> grads of b must be sums over tiles
        let av: Vec<f32> = (0..12).map(|i| i as f32 * 0.5 - 2.0).collect();
        let bv = vec![1.5f32, -0.5, 2.0];
        let mut t = Tape::<f32>::new();
        let a = t.leaf(Tensor::new(&[2, 3, 2], av.clone()).unwrap());
        let b = t.leaf(Tensor::new(&[3, 1], bv.clone()).unwrap());
        let y = t.mul(a, b).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();

        let mut t2 = Tape::<f32>::new();
        let a2 = t2.leaf(Tensor::new(&[2, 3, 2], av.clone()).unwrap());
        let tiled: Vec<f32> = (0..12).map(|i| bv[(i / 2) % 3]).collect();
        let b2 = t2.leaf(Tensor::new(&[2, 3, 2], tiled).unwrap());
        let y2 = t2.mul(a2, b2).unwrap();
        let s2 = t2.sum(y2);
        t2.backward(s2).unwrap();
        let gb_tiled = t2.grad(b2).unwrap();
        let mut expect = [0f32; 3];
        for (i, g) in gb_tiled.iter().enumerate() {
            expect[(i / 2) % 3] += g;
        }
        assert_eq!(t.grad(b).unwrap(), &expect);
        assert_eq!(t.grad(a).unwrap(), t2.grad(a2).unwrap());
    }
}
