//! Batch normalization over the channel axis (axis 1).

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{c, Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running per-channel statistics. Fresh stats are mean 0, variance 1, so
/// evaluating before any training step is well defined.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<F: Scalar = f32> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

impl<F: Scalar> RunningStats<F> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![F::zero(); channels],
            var: vec![F::one(); channels],
        }
    }
}

pub(crate) fn batchnorm_backward<F: Scalar>(
    shape: &[usize],
    gamma: &[F],
    xhat: &[F],
    inv_std: &[F],
    train: bool,
    g: &[F],
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let (batch, ch) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    let n = c::<F>((batch * inner) as f64);
    let mut gg = vec![F::zero(); ch];
    let mut gbeta = vec![F::zero(); ch];
    for b in 0..batch {
        for ci in 0..ch {
            let off = (b * ch + ci) * inner;
            for i in off..off + inner {
                gg[ci] += g[i] * xhat[i];
                gbeta[ci] += g[i];
            }
        }
    }
    let mut gx = vec![F::zero(); g.len()];
    for b in 0..batch {
        for ci in 0..ch {
            let off = (b * ch + ci) * inner;
            for i in off..off + inner {
                gx[i] = if train {
                    // d/dx of gamma * (x - mu) / sigma with batch statistics
                    gamma[ci] * inv_std[ci] / n * (n * g[i] - gbeta[ci] - xhat[i] * gg[ci])
                } else {
                    g[i] * gamma[ci] * inv_std[ci]
                };
            }
        }
    }
    (gx, gg, gbeta)
}

impl<F: Scalar> Tape<F> {
    /// `gamma * (x - mean) / sqrt(var + eps) + beta` per channel of
    /// `x (B, C, ...)`. Train mode uses biased batch statistics and folds them
    /// into `stats` with momentum 0.1; eval mode reads `stats`.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<F>,
        mode: Mode,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("batchnorm", format!("input must be (batch, channels, ...), got {shape:?}")));
        }
        let (batch, ch) = (shape[0], shape[1]);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [ch] {
                return Err(Error::shape(
                    "batchnorm",
                    format!("{name} must have {ch} entries (channel axis 1), got {:?}", self.shape(v)),
                ));
            }
        }
        if stats.mean.len() != ch || stats.var.len() != ch {
            return Err(Error::shape("batchnorm", format!("running stats sized for {} channels, input has {ch}", stats.mean.len())));
        }
        let inner: usize = shape[2..].iter().product();
        let xd = self.value(x).data();
        let eps = c::<F>(BN_EPS);
        let (mean, var) = match mode {
            Mode::Train => {
                let n = c::<F>((batch * inner) as f64);
                let mut mean = vec![F::zero(); ch];
                let mut var = vec![F::zero(); ch];
                for b in 0..batch {
                    for ci in 0..ch {
                        let off = (b * ch + ci) * inner;
                        mean[ci] += xd[off..off + inner].iter().copied().sum::<F>();
                    }
                }
                mean.iter_mut().for_each(|m| *m = *m / n);
                for b in 0..batch {
                    for ci in 0..ch {
                        let off = (b * ch + ci) * inner;
                        var[ci] += xd[off..off + inner].iter().map(|&v| (v - mean[ci]) * (v - mean[ci])).sum::<F>();
                    }
                }
                var.iter_mut().for_each(|v| *v = *v / n);
                let m = c::<F>(BN_MOMENTUM);
                for ci in 0..ch {
                    stats.mean[ci] = (F::one() - m) * stats.mean[ci] + m * mean[ci];
                    stats.var[ci] = (F::one() - m) * stats.var[ci] + m * var[ci];
                }
                (mean, var)
            }
            Mode::Eval => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![F::zero(); xd.len()];
        let mut out = vec![F::zero(); xd.len()];
        for b in 0..batch {
            for ci in 0..ch {
                let off = (b * ch + ci) * inner;
                for i in off..off + inner {
                    xhat[i] = (xd[i] - mean[ci]) * inv_std[ci];
                    out[i] = gd[ci] * xhat[i] + bd[ci];
                }
            }
        }
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(
            v,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
        ))
    }
}
