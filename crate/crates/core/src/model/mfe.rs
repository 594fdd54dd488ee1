//! Per-variable embedding: every (sensor, variable) series is lifted to `D`
//! channels by its own strided 1-D convolution.

use rand::Rng;

use crate::autodiff::{ConvOpts, Var};
use crate::error::{Error, Result};
use crate::layers::Conv1d;
use crate::model::config::ModelConfig;
use crate::params::{Ctx, ParamStore};
use crate::tensor::Scalar;

#[derive(Clone, Debug)]
pub struct Mfe {
    conv: Conv1d,
    sensors: usize,
    variables: usize,
    channels: usize,
    shared: bool,
}

impl Mfe {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let (n, m) = (cfg.model.sensors, cfg.model.variables);
        let (p, s, d) = (cfg.mfe.kernel, cfg.mfe.stride, cfg.mfe.channels);
        if cfg.model.length < p {
            return Err(Error::Config(format!(
                "window length {} is shorter than mfe.kernel {p}",
                cfg.model.length
            )));
        }
        let conv = if cfg.mfe.shared_weights {
            Conv1d::new(store, "mfe", 1, d, p, ConvOpts::new(s, 1, 0), true, rng)?
        } else {
            let g = n * m;
            Conv1d::new(store, "mfe", g, g * d, p, ConvOpts::new(s, g, 0), true, rng)?
        };
        Ok(Mfe {
            conv,
            sensors: n,
            variables: m,
            channels: d,
            shared: cfg.mfe.shared_weights,
        })
    }

    /// `(B, N, M, L)` to `(B, N, M, D, T)`.
    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x).to_vec();
        let (n, m, d) = (self.sensors, self.variables, self.channels);
        if shape.len() != 4 || shape[1] != n || shape[2] != m {
            return Err(Error::Shape {
                op: "mfe",
                detail: format!("expected input (B, {n}, {m}, L), got {shape:?}"),
            });
        }
        let (b, l) = (shape[0], shape[3]);
        let y = if self.shared {
            let flat = ctx.tape.reshape(x, &[b * n * m, 1, l])?;
            self.conv.forward(ctx, flat)?
        } else {
            let grouped = ctx.tape.reshape(x, &[b, n * m, l])?;
            self.conv.forward(ctx, grouped)?
        };
        let t = self.conv.out_len(l);
        ctx.tape.reshape(y, &[b, n, m, d, t])
    }

    pub fn out_len(&self, len: usize) -> usize {
        self.conv.out_len(len)
    }

    pub fn flops(&self, len: usize) -> u64 {
        let reps = if self.shared { self.sensors * self.variables } else { 1 };
        reps as u64 * self.conv.flops(len)
    }
}
