//! Parameterized building blocks shared by the model stages.
//!
//! Weights and biases are initialised uniformly in `±1/sqrt(fan_in)`.
//! Every layer reports its per-sample multiply-accumulate count for the
//! cost analyzer; see [`crate::model`] for the counting convention.

use rand::Rng;

use crate::autodiff::{ConvOpts, Var};
use crate::error::{Error, Result};
use crate::model::config::Activation;
use crate::params::{Ctx, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

fn init<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

pub fn activate<F: Scalar>(ctx: &mut Ctx<'_, F>, x: Var, act: Activation) -> Var {
    match act {
        Activation::None => x,
        Activation::Gelu => ctx.tape.gelu(x),
        Activation::Silu => ctx.tape.silu(x),
    }
}

/// Per-element cost of an activation: zero for the identity.
pub fn activation_ops(act: Activation, elems: usize) -> u64 {
    match act {
        Activation::None => 0,
        _ => elems as u64,
    }
}

/// Grouped 1-D convolution over `(B, Cin, L)`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub opts: ConvOpts,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        opts: ConvOpts,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let g = opts.groups;
        if g == 0 || !cin.is_multiple_of(g) || !cout.is_multiple_of(g) {
            return Err(Error::Config(format!(
                "{name}: {cin} input and {cout} output channels are not divisible into {g} groups"
            )));
        }
        let fan_in = cin / g * kernel;
        let weight = store.add(format!("{name}.weight"), init(&[cout, cin / g, kernel], fan_in, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), init(&[cout], fan_in, rng)));
        Ok(Conv1d {
            weight,
            bias,
            cin,
            cout,
            kernel,
            opts,
        })
    }

    /// Kernel-size-1 grouped convolution.
    pub fn pointwise<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        groups: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(store, name, cin, cout, 1, ConvOpts::new(1, groups, 0), bias, rng)
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.tape.conv1d(x, w, b, self.opts)
    }

    pub fn out_len(&self, len: usize) -> usize {
        self.opts.out_len(len, self.kernel)
    }

    /// Every kernel tap is one MAC, padded taps included; bias adds one op
    /// per output element.
    pub fn flops(&self, len: usize) -> u64 {
        let t = self.out_len(len) as u64;
        let taps = (self.cin / self.opts.groups * self.kernel) as u64;
        let mut n = self.cout as u64 * taps * t;
        if self.bias.is_some() {
            n += self.cout as u64 * t;
        }
        n
    }
}

/// Depthwise 2-D convolution with "same" padding over `(B, C, H, W)`.
#[derive(Clone, Debug)]
pub struct DwConv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels: usize,
    pub kh: usize,
    pub kw: usize,
}

impl DwConv2d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        (kh, kw): (usize, usize),
        rng: &mut R,
    ) -> Self {
        let fan_in = kh * kw;
        DwConv2d {
            weight: store.add(format!("{name}.weight"), init(&[channels, kh, kw], fan_in, rng)),
            bias: store.add(format!("{name}.bias"), init(&[channels], fan_in, rng)),
            channels,
            kh,
            kw,
        }
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        ctx.tape.depthwise_conv2d(x, w, Some(b))
    }

    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let plane = (self.channels * h * w) as u64;
        plane * (self.kh * self.kw) as u64 + plane
    }
}

/// Affine map on the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init(&[out_features, in_features], in_features, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), init(&[out_features], in_features, rng)));
        Linear {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.tape.linear(x, w, b)
    }

    /// Cost for `rows` input vectors.
    pub fn flops(&self, rows: usize) -> u64 {
        let per_row = self.in_features * self.out_features + if self.bias.is_some() { self.out_features } else { 0 };
        (rows * per_row) as u64
    }
}

/// Batch normalization with its running statistics stored as buffers.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[channels])),
            channels,
        }
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        ctx.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var)
    }

    /// Folded affine: one op per element.
    pub fn flops(&self, elems_per_channel: usize) -> u64 {
        (self.channels * elems_per_channel) as u64
    }
}
