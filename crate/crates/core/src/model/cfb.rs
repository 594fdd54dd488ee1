//! Cascaded fusion block: squeeze, recursive depthwise convolutions,
//! concatenation of every order, pointwise fusion and a residual add.
//!
//! ```text
//! z    = gelu(bn(pw(x)))                C -> C_m = floor(C / r)
//! x_0  = z,  x_k = gelu(dw(x_{k-1}))    k = 1..K
//! y    = gelu(bn(pw(concat(x_0..x_K)))) (K+1) C_m -> C
//! out  = x + y
//! ```
//!
//! Input layout is `(B, C, H, W)`: channels, an interaction axis
//! (variables or sensors) and time.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Conv1d, DwConv2d};
use crate::model::config::CfbConfig;
use crate::params::{Ctx, ParamStore};
use crate::tensor::Scalar;

#[derive(Clone, Debug)]
pub struct Cfb {
    pub squeeze: Conv1d,
    pub squeeze_bn: BatchNorm,
    pub recursion: Vec<DwConv2d>,
    pub fuse: Conv1d,
    pub fuse_bn: BatchNorm,
    pub channels: usize,
    pub squeezed: usize,
    r: usize,
    kernel: (usize, usize),
}

impl Cfb {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        channels: usize,
        cfg: &CfbConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.r == 0 || channels < cfg.r {
            return Err(Error::Config(format!(
                "{name}: reduction ratio {} leaves no channels out of {channels}",
                cfg.r
            )));
        }
        let cm = channels / cfg.r;
        let kernel = cfg.kernel.extents();
        let squeeze = Conv1d::pointwise(store, &format!("{name}.squeeze"), channels, cm, 1, false, rng)?;
        let squeeze_bn = BatchNorm::new(store, &format!("{name}.squeeze_bn"), cm);
        let recursion = (0..cfg.k)
            .map(|k| DwConv2d::new(store, &format!("{name}.dw{k}"), cm, kernel, rng))
            .collect();
        let fuse = Conv1d::pointwise(store, &format!("{name}.fuse"), (cfg.k + 1) * cm, channels, 1, false, rng)?;
        let fuse_bn = BatchNorm::new(store, &format!("{name}.fuse_bn"), channels);
        Ok(Cfb {
            squeeze,
            squeeze_bn,
            recursion,
            fuse,
            fuse_bn,
            channels,
            squeezed: cm,
            r: cfg.r,
            kernel,
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let s = ctx.tape.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::Shape {
                op: "cfb",
                detail: format!("expected (B, {}, H, W), got {s:?}", self.channels),
            });
        }
        let (b, h, w) = (s[0], s[2], s[3]);
        let cm = self.squeezed;
        let flat = ctx.tape.reshape(x, &[b, self.channels, h * w])?;
        let z = self.squeeze.forward(ctx, flat)?;
        let z = self.squeeze_bn.forward(ctx, z)?;
        let z = ctx.tape.gelu(z);
        let mut order = ctx.tape.reshape(z, &[b, cm, h, w])?;
        let mut orders = vec![order];
        for dw in &self.recursion {
            let y = dw.forward(ctx, order)?;
            order = ctx.tape.gelu(y);
            orders.push(order);
        }
        let u = ctx.tape.concat(&orders, 1)?;
        let u = ctx.tape.reshape(u, &[b, orders.len() * cm, h * w])?;
        let y = self.fuse.forward(ctx, u)?;
        let y = self.fuse_bn.forward(ctx, y)?;
        let y = ctx.tape.gelu(y);
        let y = ctx.tape.reshape(y, &s)?;
        ctx.tape.add(x, y)
    }

    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let (kh, kw) = self.kernel;
        cfb_flops(self.channels, h, w, self.r, self.recursion.len(), kh, kw)
    }
}

/// Per-sample cost of a block on a `(C, H, W)` input with reduction `r`,
/// depth `k` and `kh x kw` depthwise kernels. MACs:
///
/// ```text
/// squeeze   C * C_m * H * W
/// recursion K * C_m * kh * kw * H * W     (+ C_m * H * W bias per order)
/// fusion    (K + 1) * C_m * C * H * W
/// ```
///
/// plus one op per element for each batch norm, activation and the
/// residual add.
pub fn cfb_flops(c: usize, h: usize, w: usize, r: usize, k: usize, kh: usize, kw: usize) -> u64 {
    let cm = (c / r) as u64;
    let (c, k, hw) = (c as u64, k as u64, (h * w) as u64);
    let squeeze = c * cm * hw + 2 * cm * hw;
    let recursion = k * (cm * (kh * kw) as u64 * hw + 2 * cm * hw);
    let fusion = (k + 1) * cm * c * hw + 2 * c * hw;
    let residual = c * hw;
    squeeze + recursion + fusion + residual
}
