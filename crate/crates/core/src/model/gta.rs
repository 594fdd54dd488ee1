//! Global temporal aggregation: average over variables, then a selective
//! state-space block over time.
//!
//! The block follows the gated form
//!
//! ```text
//! h   = conv(linear_in(x))
//! out = linear_out(silu(ssm(h)) * linear_gate(h)) + x
//! ```
//!
//! where `conv` is a short causal depthwise convolution shared by both
//! branches.

use rand::Rng;

use crate::autodiff::{ConvOpts, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::Conv1d;
use crate::model::config::ModelConfig;
use crate::params::{Ctx, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// `(B, N, D*M, T)` with channel index `d*M + m` to `(B, N*D, T)` by
/// averaging over `m`.
pub fn gap_forward<F: Scalar>(tape: &mut Tape<F>, x: Var, variables: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 || variables == 0 || !s[2].is_multiple_of(variables) {
        return Err(Error::Shape {
            op: "gap",
            detail: format!("expected (B, N, D*{variables}, T), got {s:?}"),
        });
    }
    let (b, n, d, t) = (s[0], s[1], s[2] / variables, s[3]);
    let v = tape.reshape(x, &[b, n * d, variables, t])?;
    let v = tape.mean(v, 2)?;
    tape.reshape(v, &[b, n * d, t])
}

/// Selective scan with input-dependent step, input and output maps.
#[derive(Clone, Debug)]
pub struct Ssm {
    pub dt: Conv1d,
    pub b_proj: Conv1d,
    pub c_proj: Conv1d,
    pub a_log: ParamId,
    pub d_skip: ParamId,
    pub width: usize,
    pub state: usize,
}

impl Ssm {
    pub fn new<R: Rng + ?Sized>(name: &str, width: usize, state: usize, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let dt = Conv1d::pointwise(store, &format!("{name}.dt"), width, width, 1, true, rng)?;
        // initial steps log-uniform in [1e-3, 1e-1], stored as inverse softplus
        let bias = store.get_mut(dt.bias.expect("dt has bias"));
        for v in bias.value.data_mut() {
            let step = (rng.random_range(1e-3f64.ln()..1e-1f64.ln())).exp();
            *v = (step.exp_m1()).ln() as f32;
        }
        let b_proj = Conv1d::pointwise(store, &format!("{name}.b"), width, state, 1, false, rng)?;
        let c_proj = Conv1d::pointwise(store, &format!("{name}.c"), width, state, 1, false, rng)?;
        let a_init = (0..width * state).map(|i| ((i % state) as f32 + 1.0).ln()).collect();
        let a_log = store.add(format!("{name}.a_log"), Tensor::new(&[width, state], a_init)?);
        let d_skip = store.add(format!("{name}.d"), Tensor::ones(&[width]));
        Ok(Ssm {
            dt,
            b_proj,
            c_proj,
            a_log,
            d_skip,
            width,
            state,
        })
    }

    /// `u (B, E, T)` to `(B, E, T)`.
    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, u: Var) -> Result<Var> {
        let dt = self.dt.forward(ctx, u)?;
        let delta = ctx.tape.softplus(dt);
        let bm = self.b_proj.forward(ctx, u)?;
        let cm = self.c_proj.forward(ctx, u)?;
        let a_log = ctx.param(self.a_log);
        let a = ctx.tape.exp(a_log);
        let a = ctx.tape.scale(a, -F::one());
        let d = ctx.param(self.d_skip);
        ctx.tape.selective_scan(u, delta, a, bm, cm, d, self.state)
    }

    pub fn flops(&self, len: usize) -> u64 {
        let (e, s, t) = (self.width as u64, self.state as u64, len as u64);
        let proj = self.dt.flops(len) + e * t + self.b_proj.flops(len) + self.c_proj.flops(len);
        // discretize (mul, exp), state update (two MACs), readout (one MAC)
        let scan = 5 * e * s * t + 2 * e * t;
        proj + 2 * e * s + scan
    }
}

#[derive(Clone, Debug)]
pub struct MambaBlock {
    pub in_proj: Conv1d,
    pub conv: Conv1d,
    pub ssm: Ssm,
    pub gate: Conv1d,
    pub out_proj: Conv1d,
    pub width: usize,
}

impl MambaBlock {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let e = cfg.ssm_width();
        let w = cfg.gta.conv_width;
        Ok(MambaBlock {
            in_proj: Conv1d::pointwise(store, "gta.in", e, e, 1, true, rng)?,
            conv: Conv1d::new(store, "gta.conv", e, e, w, ConvOpts::causal(w, e), true, rng)?,
            ssm: Ssm::new("gta.ssm", e, cfg.gta.state_size, store, rng)?,
            gate: Conv1d::pointwise(store, "gta.gate", e, e, 1, true, rng)?,
            out_proj: Conv1d::pointwise(store, "gta.out", e, e, 1, true, rng)?,
            width: e,
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        self.forward_with_gate(ctx, x, None)
    }

    /// As [`forward`](Self::forward), optionally replacing the gate branch.
    pub fn forward_with_gate<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var, gate: Option<Var>) -> Result<Var> {
        let h = self.in_proj.forward(ctx, x)?;
        let h = self.conv.forward(ctx, h)?;
        let y = self.ssm.forward(ctx, h)?;
        let main = ctx.tape.silu(y);
        let gate = match gate {
            Some(g) => g,
            None => self.gate.forward(ctx, h)?,
        };
        let mixed = ctx.tape.mul(main, gate)?;
        let out = self.out_proj.forward(ctx, mixed)?;
        ctx.tape.add(out, x)
    }

    pub fn flops(&self, len: usize) -> u64 {
        let et = (self.width * len) as u64;
        self.in_proj.flops(len)
            + self.conv.flops(len)
            + self.ssm.flops(len)
            + et // silu
            + self.gate.flops(len)
            + et // gating product
            + self.out_proj.flops(len)
            + et // residual
    }
}

/// Averaging cost of [`gap_forward`]: one add per input element plus one
/// scale per output.
pub fn gap_flops(sensors: usize, channels: usize, variables: usize, len: usize) -> u64 {
    let out = (sensors * channels * len) as u64;
    out * variables as u64 + out
}
