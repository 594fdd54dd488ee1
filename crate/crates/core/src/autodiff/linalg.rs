//! Dense linear maps and batched matrix products.

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

type Grads<F> = (Option<Vec<F>>, Option<Vec<F>>, Option<Vec<F>>);

pub(crate) fn linear_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    g: &[F],
    want_x: bool,
    want_w: bool,
    want_b: bool,
) -> Grads<F> {
    let (out_f, in_f) = (w.shape()[0], w.shape()[1]);
    let rows = x.numel() / in_f;
    let (xd, wd) = (x.data(), w.data());
    let mut gx = want_x.then(|| vec![F::zero(); xd.len()]);
    let mut gw = want_w.then(|| vec![F::zero(); wd.len()]);
    let mut gb = want_b.then(|| vec![F::zero(); out_f]);
    for r in 0..rows {
        let xr = &xd[r * in_f..(r + 1) * in_f];
        for o in 0..out_f {
            let go = g[r * out_f + o];
            if let Some(gb) = gb.as_mut() {
                gb[o] += go;
            }
            if let Some(gw) = gw.as_mut() {
                for (a, &xv) in gw[o * in_f..(o + 1) * in_f].iter_mut().zip(xr) {
                    *a += go * xv;
                }
            }
            if let Some(gx) = gx.as_mut() {
                for (a, &wv) in gx[r * in_f..(r + 1) * in_f].iter_mut().zip(&wd[o * in_f..(o + 1) * in_f]) {
                    *a += go * wv;
                }
            }
        }
    }
    (gx, gw, gb)
}

fn bmm_dims(a: &[usize], b: &[usize], trans_b: bool) -> Result<(usize, usize, usize, usize)> {
    if a.len() != 3 || b.len() != 3 || a[0] != b[0] {
        return Err(Error::shape("bmm", format!("need (batch, n, k) x (batch, ., .), got {a:?} and {b:?}")));
    }
    let (bk, m) = if trans_b { (b[2], b[1]) } else { (b[1], b[2]) };
    if a[2] != bk {
        return Err(Error::shape("bmm", format!("inner extents differ: a axis 2 is {}, b has {bk}", a[2])));
    }
    Ok((a[0], a[1], a[2], m))
}

pub(crate) fn bmm_backward<F: Scalar>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    trans_b: bool,
    g: &[F],
    want_a: bool,
    want_b: bool,
) -> (Option<Vec<F>>, Option<Vec<F>>) {
    let (nb, n, k, m) = bmm_dims(a.shape(), b.shape(), trans_b).expect("validated");
    let (ad, bd) = (a.data(), b.data());
    let bidx = |bt: usize, kk: usize, j: usize| {
        if trans_b {
            (bt * m + j) * k + kk
        } else {
            (bt * k + kk) * m + j
        }
    };
    let mut ga = want_a.then(|| vec![F::zero(); ad.len()]);
    let mut gb = want_b.then(|| vec![F::zero(); bd.len()]);
    for bt in 0..nb {
        for i in 0..n {
            for j in 0..m {
                let go = g[(bt * n + i) * m + j];
                for kk in 0..k {
                    let ai = (bt * n + i) * k + kk;
                    let bi = bidx(bt, kk, j);
                    if let Some(ga) = ga.as_mut() {
                        ga[ai] += go * bd[bi];
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[bi] += go * ad[ai];
                    }
                }
            }
        }
    }
    (ga, gb)
}

impl<F: Scalar> Tape<F> {
    /// Affine map on the last axis: `x (..., in)`, `w (out, in)`, `b (out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[1]) {
            return Err(Error::shape(
                "linear",
                format!("weight {ws:?} does not match last axis of input {xs:?}"),
            ));
        }
        let (out_f, in_f) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [out_f] {
                return Err(Error::shape("linear", format!("bias must be ({out_f}), got {:?}", self.shape(b))));
            }
        }
        let rows = self.value(x).numel() / in_f;
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let bd = b.map(|b| self.value(b).data());
        let mut out = Vec::with_capacity(rows * out_f);
        for r in 0..rows {
            let xr = &xd[r * in_f..(r + 1) * in_f];
            for o in 0..out_f {
                let dot: F = xr.iter().zip(&wd[o * in_f..(o + 1) * in_f]).map(|(&a, &b)| a * b).sum();
                out.push(dot + bd.map_or(F::zero(), |b| b[o]));
            }
        }
        let mut shape = xs;
        *shape.last_mut().expect("non-empty") = out_f;
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::Linear { x, w, b }))
    }

    /// Batched product `a (B, n, k) @ b (B, k, m)`, or `a @ b^T` for
    /// `b (B, m, k)` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (nb, n, k, m) = bmm_dims(self.shape(a), self.shape(b), trans_b)?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![F::zero(); nb * n * m];
        for bt in 0..nb {
            for i in 0..n {
                for j in 0..m {
                    let mut acc = F::zero();
                    for kk in 0..k {
                        let bi = if trans_b { (bt * m + j) * k + kk } else { (bt * k + kk) * m + j };
                        acc += ad[(bt * n + i) * k + kk] * bd[bi];
                    }
                    out[(bt * n + i) * m + j] = acc;
                }
            }
        }
        let v = Tensor::new(&[nb, n, m], out)?;
        Ok(self.push(v, Op::Bmm { a, b, trans_b }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_matches_matmul() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::new(&[2, 3], vec![1., 2., 3., -1., 0., 0.5]).unwrap());
        let w = t.constant(Tensor::new(&[2, 3], vec![1., 0., -1., 2., 1., 0.]).unwrap());
        let b = t.constant(Tensor::new(&[2], vec![0.5, -0.5]).unwrap());
        let y = t.linear(x, w, Some(b)).unwrap();
        assert_eq!(t.value(y).data(), &[-1.5, 3.5, -1.0, -2.5]);
    }

    #[test]
    fn bmm_transpose_agrees() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Tensor::new(&[1, 2, 2], vec![1., 2., 3., 4.]).unwrap());
        let b = t.constant(Tensor::new(&[1, 2, 2], vec![5., 6., 7., 8.]).unwrap());
        let bt = t.permute(b, &[0, 2, 1]).unwrap();
        let y1 = t.bmm(a, b, true).unwrap();
        let y2 = t.bmm(a, bt, false).unwrap();
        assert_eq!(t.value(y1), t.value(y2));
        assert_eq!(t.value(y1).data(), &[17., 23., 39., 53.]);
    }
}
