//! Cross-sensor self-attention over per-sensor tokens.
//!
//! ```text
//! A[i, j] = softmax_j(q(x_i) . k(x_j))
//! out_i   = x_i + w(sum_j A[i, j] v(x_j))
//! ```

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::model::config::CsiConfig;
use crate::params::{Ctx, ParamStore};
use crate::tensor::Scalar;

#[derive(Clone, Debug)]
pub struct Csi {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub w: Linear,
    pub features: usize,
    pub d_k: usize,
    scaled: bool,
}

impl Csi {
    pub fn new<R: Rng + ?Sized>(features: usize, cfg: &CsiConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let dk = cfg.d_k;
        Csi {
            q: Linear::new(store, "csi.q", features, dk, true, rng),
            k: Linear::new(store, "csi.k", features, dk, true, rng),
            v: Linear::new(store, "csi.v", features, dk, true, rng),
            w: Linear::new(store, "csi.w", dk, features, true, rng),
            features,
            d_k: dk,
            scaled: cfg.scaled,
        }
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        Ok(self.forward_with_attention(ctx, x)?.0)
    }

    /// `x (B, N, F)` to `(out, attention (B, N, N))`.
    pub fn forward_with_attention<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<(Var, Var)> {
        let s = ctx.tape.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.features {
            return Err(Error::Shape {
                op: "csi",
                detail: format!("expected (B, N, {}), got {s:?}", self.features),
            });
        }
        let q = self.q.forward(ctx, x)?;
        let k = self.k.forward(ctx, x)?;
        let v = self.v.forward(ctx, x)?;
        let mut logits = ctx.tape.bmm(q, k, true)?;
        if self.scaled {
            logits = ctx.tape.scale(logits, F::of_f64(1.0 / (self.d_k as f64).sqrt()));
        }
        let attn = ctx.tape.softmax(logits, 2)?;
        let o = ctx.tape.bmm(attn, v, false)?;
        let o = self.w.forward(ctx, o)?;
        Ok((ctx.tape.add(x, o)?, attn))
    }

    pub fn flops(&self, sensors: usize) -> u64 {
        csi_flops(sensors, self.features, self.d_k, self.scaled)
    }
}

/// Per-sample cost of attention over `n` tokens of width `f`:
///
/// ```text
/// projections  3 n (f dk + dk) + n (dk f + f)
/// scores       n^2 dk  (+ n^2 when scaled)
/// softmax      n^2
/// mixing       n^2 dk
/// residual     n f
/// ```
pub fn csi_flops(n: usize, f: usize, dk: usize, scaled: bool) -> u64 {
    let (n, f, dk) = (n as u64, f as u64, dk as u64);
    let proj = 3 * n * (f * dk + dk) + n * (dk * f + f);
    let scores = n * n * dk + if scaled { n * n } else { 0 };
    proj + scores + n * n + n * n * dk + n * f
}
