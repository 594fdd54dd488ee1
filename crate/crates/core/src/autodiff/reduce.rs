//! Reductions and softmax.

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{c, Scalar, Tensor};

/// (outer, extent, inner) sizes around `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(op, format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok(())
}

fn kept(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axis] = 1;
    s
}

pub(crate) fn mean_along<F: Scalar>(x: &Tensor<F>, axis: usize) -> Vec<F> {
    let (outer, n, inner) = split(x.shape(), axis);
    let d = x.data();
    let inv = F::one() / c::<F>(n as f64);
    let mut out = vec![F::zero(); outer * inner];
    for o in 0..outer {
        for k in 0..n {
            let row = &d[(o * n + k) * inner..(o * n + k + 1) * inner];
            for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

/// Biased (population) variance along `axis`.
pub(crate) fn var_along<F: Scalar>(x: &Tensor<F>, axis: usize, mean: &[F]) -> Vec<F> {
    let (outer, n, inner) = split(x.shape(), axis);
    let d = x.data();
    let inv = F::one() / c::<F>(n as f64);
    let mut out = vec![F::zero(); outer * inner];
    for o in 0..outer {
        for k in 0..n {
            for i in 0..inner {
                let dev = d[(o * n + k) * inner + i] - mean[o * inner + i];
                out[o * inner + i] += dev * dev;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

pub(crate) fn mean_backward<F: Scalar>(shape: &[usize], axis: usize, g: &[F]) -> Vec<F> {
    let (outer, n, inner) = split(shape, axis);
    let inv = F::one() / c::<F>(n as f64);
    let mut out = Vec::with_capacity(outer * n * inner);
    for o in 0..outer {
        for _ in 0..n {
            out.extend(g[o * inner..(o + 1) * inner].iter().map(|&v| v * inv));
        }
    }
    out
}

pub(crate) fn var_backward<F: Scalar>(x: &Tensor<F>, axis: usize, g: &[F]) -> Vec<F> {
    let (outer, n, inner) = split(x.shape(), axis);
    let mean = mean_along(x, axis);
    let k = c::<F>(2.0 / n as f64);
    let d = x.data();
    let mut out = vec![F::zero(); d.len()];
    for o in 0..outer {
        for j in 0..n {
            for i in 0..inner {
                let idx = (o * n + j) * inner + i;
                out[idx] = g[o * inner + i] * k * (d[idx] - mean[o * inner + i]);
            }
        }
    }
    out
}

pub(crate) fn softmax_backward<F: Scalar>(y: &Tensor<F>, axis: usize, g: &[F]) -> Vec<F> {
    let (outer, n, inner) = split(y.shape(), axis);
    let d = y.data();
    let mut out = vec![F::zero(); d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let dot: F = (0..n).map(|k| g[at(k)] * d[at(k)]).sum();
            for k in 0..n {
                out[at(k)] = d[at(k)] * (g[at(k)] - dot);
            }
        }
    }
    out
}

impl<F: Scalar> Tape<F> {
    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: F = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Mean along `axis`, keeping it with extent 1.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        check_axis("mean", self.shape(x), axis)?;
        let shape = kept(self.shape(x), axis);
        let v = Tensor::new(&shape, mean_along(self.value(x), axis))?;
        Ok(self.push(v, Op::Mean(x, axis)))
    }

    /// Biased variance along `axis`, keeping it with extent 1.
    pub fn variance(&mut self, x: Var, axis: usize) -> Result<Var> {
        check_axis("variance", self.shape(x), axis)?;
        let shape = kept(self.shape(x), axis);
        let m = mean_along(self.value(x), axis);
        let v = Tensor::new(&shape, var_along(self.value(x), axis, &m))?;
        Ok(self.push(v, Op::Variance(x, axis)))
    }

    /// `(mean, biased variance)` along `axis`, both with the axis kept.
    pub fn mean_var(&mut self, x: Var, axis: usize) -> Result<(Var, Var)> {
        Ok((self.mean(x, axis)?, self.variance(x, axis)?))
    }

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        check_axis("softmax", self.shape(x), axis)?;
        let v = softmax_values(self.value(x), axis);
        Ok(self.push(v, Op::Softmax(x, axis)))
    }
}

pub(crate) fn softmax_values<F: Scalar>(x: &Tensor<F>, axis: usize) -> Tensor<F> {
    let (outer, n, inner) = split(x.shape(), axis);
    let d = x.data();
    let mut out = vec![F::zero(); d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let m = (0..n).map(|k| d[at(k)]).fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for k in 0..n {
                let e = (d[at(k)] - m).exp();
                out[at(k)] = e;
                z += e;
            }
            for k in 0..n {
                out[at(k)] = out[at(k)] / z;
            }
        }
    }
    Tensor::new(x.shape(), out).expect("softmax shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_var_of_123() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::new(&[3], vec![1., 2., 3.]).unwrap());
        let (m, v) = t.mean_var(x, 0).unwrap();
        assert_eq!(t.value(m).data(), &[2.0]);
        assert!((t.value(v).data()[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_and_singleton_variance() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::full(&[2, 4], 1.75));
        let (_, v) = t.mean_var(x, 1).unwrap();
        assert_eq!(t.value(v).data(), &[0.0, 0.0]);
        let y = t.constant(Tensor::new(&[2, 1], vec![3., -4.]).unwrap());
        let (m, v) = t.mean_var(y, 1).unwrap();
        assert_eq!(t.value(m).data(), &[3., -4.]);
        assert_eq!(t.value(v).data(), &[0., 0.]);
        assert!(t.mean(y, 2).is_err());
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::new(&[1, 2], vec![0.0, 3f64.ln()]).unwrap());
        let y = t.softmax(x, 1).unwrap();
        let d = t.value(y).data();
        assert!((d[0] - 0.25).abs() < 1e-15 && (d[1] - 0.75).abs() < 1e-15);

        let eq = t.constant(Tensor::full(&[5], 2.5));
        let y = t.softmax(eq, 0).unwrap();
        assert!(t.value(y).data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn softmax_shift_invariant() {
        let mut t = Tape::<f32>::new();
        let v = vec![0.3, -1.2, 2.0, 0.7];
        let x = t.constant(Tensor::new(&[4], v.clone()).unwrap());
        let xs = t.constant(Tensor::new(&[4], v.iter().map(|a| a + 50.0).collect()).unwrap());
        let a = t.softmax(x, 0).unwrap();
        let b = t.softmax(xs, 0).unwrap();
        assert!(t.value(a).max_abs_diff(t.value(b)) < 1e-6);
    }
}
