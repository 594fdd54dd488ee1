//! Reshape, axis permutation and concatenation.

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{strides, Scalar, Tensor};

/// Gathers `src` (with `shape`) into the permuted layout.
fn permute_data<F: Scalar>(src: &[F], shape: &[usize], perm: &[usize]) -> Vec<F> {
    let n = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; n];
    let mut off = 0usize;
    for _ in 0..src.len() {
        out.push(src[off]);
        for ax in (0..n).rev() {
            idx[ax] += 1;
            off += step[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= step[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    out
}

fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub(crate) fn permute_backward<F: Scalar>(in_shape: &[usize], perm: &[usize], g: &[F]) -> Vec<F> {
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    permute_data(g, &out_shape, &inverse(perm))
}

pub(crate) fn concat_backward<F: Scalar>(shapes: &[&[usize]], axis: usize, g: &[F]) -> Vec<Vec<F>> {
    let outer: usize = shapes[0][..axis].iter().product();
    let inners: Vec<usize> = shapes.iter().map(|s| s[axis..].iter().product()).collect();
    let row: usize = inners.iter().sum();
    let mut res: Vec<Vec<F>> = inners.iter().map(|&k| Vec::with_capacity(k * outer)).collect();
    for o in 0..outer {
        let mut start = o * row;
        for (r, &k) in res.iter_mut().zip(&inners) {
            r.extend_from_slice(&g[start..start + k]);
            start += k;
        }
    }
    res
}

impl<F: Scalar> Tape<F> {
    /// Metadata-only reshape; values are copied bit-for-bit.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape(x)),
            ));
        }
        let v = Tensor::new(shape, self.value(x).data().to_vec())?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(
                "permute",
                format!("{perm:?} is not a permutation of the {} axes of {shape:?}", shape.len()),
            ));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let data = permute_data(self.value(x).data(), &shape, perm);
        let v = Tensor::new(&out_shape, data)?;
        Ok(self.push(v, Op::Permute(x, perm.to_vec())))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("input {s:?} does not match {first:?} off axis {axis}"),
                ));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in xs {
                let inner: usize = self.shape(v)[axis..].iter().product();
                data.extend_from_slice(&self.value(v).data()[o * inner..(o + 1) * inner]);
            }
        }
        let v = Tensor::new(&out_shape, data)?;
        Ok(self.push(v, Op::Concat(xs.to_vec(), axis)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_index_rule() {
        let mut t = Tape::<f32>::new();
        let data: Vec<f32> = (0..24).map(|i| i as f32).collect();
        let x = t.constant(Tensor::new(&[2, 3, 4], data).unwrap());
        let y = t.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(t.shape(y), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(t.value(y).at(&[c, a, b]), t.value(x).at(&[a, b, c]));
                }
            }
        }
    }

    #[test]
    fn permute_rejects_duplicates() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::zeros(&[2, 3]));
        assert!(t.permute(x, &[0, 0]).is_err());
    }

    #[test]
    fn concat_axis1() {
        let mut t = Tape::<f32>::new();
        let a = t.leaf(Tensor::new(&[2, 1, 2], vec![1., 2., 3., 4.]).unwrap());
        let b = t.leaf(Tensor::new(&[2, 2, 2], vec![5., 6., 7., 8., 9., 10., 11., 12.]).unwrap());
        let y = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.shape(y), &[2, 3, 2]);
        assert_eq!(t.value(y).data(), &[1., 2., 5., 6., 7., 8., 3., 4., 9., 10., 11., 12.]);
        let w = t.constant(Tensor::new(&[2, 3, 2], (0..12).map(|i| i as f32).collect()).unwrap());
        let p = t.mul(y, w).unwrap();
        let s = t.sum(p);
        t.backward(s).unwrap();
        assert_eq!(t.grad(a).unwrap(), &[0., 1., 6., 7.]);
        assert_eq!(t.grad(b).unwrap(), &[2., 3., 4., 5., 8., 9., 10., 11.]);
    }
}
