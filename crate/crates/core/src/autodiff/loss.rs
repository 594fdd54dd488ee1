//! Softmax cross-entropy with integer targets.

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{c, Scalar, Tensor};

pub(crate) fn cross_entropy_backward<F: Scalar>(probs: &[F], labels: &[usize], g: F) -> Vec<F> {
    let batch = labels.len();
    let classes = probs.len() / batch;
    let scale = g / c::<F>(batch as f64);
    let mut out: Vec<F> = probs.iter().map(|&p| p * scale).collect();
    for (i, &y) in labels.iter().enumerate() {
        out[i * classes + y] -= scale;
    }
    out
}

impl<F: Scalar> Tape<F> {
    /// Mean over the batch of `-log softmax(logits)[label]`, computed with
    /// log-sum-exp. `logits` is `(B, C)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {s:?} do not match {} labels", labels.len()),
            ));
        }
        let classes = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label { label: bad, classes });
        }
        let d = self.value(logits).data();
        let mut probs = vec![F::zero(); d.len()];
        let mut total = F::zero();
        for (i, &y) in labels.iter().enumerate() {
            let row = &d[i * classes..(i + 1) * classes];
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let z: F = row.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + z.ln();
            total += lse - row[y];
            for (p, &v) in probs[i * classes..(i + 1) * classes].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let loss = total / c::<F>(labels.len() as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }
}
