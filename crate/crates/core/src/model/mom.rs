//! Moment-Morph: training-time mixing of per-sample mean and standard
//! deviation across the batch.
//!
//! ```text
//! mu, sigma = Mean(x; a), sqrt(Var(x; a) + eps)     (treated as constants)
//! mu_m      = lam * mu    + (1 - lam) * mu[pi]
//! sigma_m   = lam * sigma + (1 - lam) * sigma[pi]
//! out       = (x - mu) / sigma * sigma_m + mu_m
//! ```

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::autodiff::{mean_along, var_along, Tape, Var};
use crate::error::{Error, Result};
use crate::model::config::{MomAxis, MomConfig};
use crate::params::Ctx;
use crate::tensor::{Scalar, Tensor};

pub const MOM_EPS: f64 = 1e-6;

impl MomAxis {
    /// Reduction axis for a `(B, C, T)` tensor.
    pub fn index(self) -> usize {
        match self {
            MomAxis::Time => 2,
            MomAxis::Channel => 1,
        }
    }
}

/// Moment statistics of `x` per sample along `axis`, with `axis` kept at
/// extent 1: `(mu, sigma)`.
pub fn moments<F: Scalar>(x: &Tensor<F>, axis: usize) -> (Tensor<F>, Tensor<F>) {
    let mut shape = x.shape().to_vec();
    shape[axis] = 1;
    let mu = mean_along(x, axis);
    let sigma = var_along(x, axis, &mu)
        .into_iter()
        .map(|v| (v + F::of_f64(MOM_EPS)).sqrt())
        .collect();
    (
        Tensor::new(&shape, mu).expect("moment shape"),
        Tensor::new(&shape, sigma).expect("moment shape"),
    )
}

fn mix<F: Scalar>(s: &Tensor<F>, perm: &[usize], lam: f64) -> Tensor<F> {
    let per = s.numel() / perm.len();
    let (l, r) = (F::of_f64(lam), F::of_f64(1.0 - lam));
    let d = s.data();
    let out = (0..s.numel())
        .map(|i| {
            let (b, k) = (i / per, i % per);
            l * d[i] + r * d[perm[b] * per + k]
        })
        .collect();
    Tensor::new(s.shape(), out).expect("same shape")
}

/// Applies the moment mix with a fixed `lam` and batch permutation `perm`.
pub fn mom_apply<F: Scalar>(tape: &mut Tape<F>, x: Var, axis: usize, lam: f64, perm: &[usize]) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if axis == 0 || axis >= shape.len() {
        return Err(Error::shape("mom", format!("moment axis {axis} invalid for {shape:?}")));
    }
    if perm.len() != shape[0] {
        return Err(Error::shape(
            "mom",
            format!("permutation of length {} for batch of {}", perm.len(), shape[0]),
        ));
    }
    let (mu, sigma) = moments(tape.value(x), axis);
    let mu_m = mix(&mu, perm, lam);
    let sigma_m = mix(&sigma, perm, lam);
    let inv = sigma.map(|v| F::one() / v);
    let (mu, inv, mu_m, sigma_m) = (
        tape.constant(mu),
        tape.constant(inv),
        tape.constant(mu_m),
        tape.constant(sigma_m),
    );
    let centered = tape.sub(x, mu)?;
    let normed = tape.mul(centered, inv)?;
    let scaled = tape.mul(normed, sigma_m)?;
    tape.add(scaled, mu_m)
}

/// One MoM insertion site. Each site flips its own activation coin.
#[derive(Clone, Debug)]
pub struct Mom {
    pub cfg: MomConfig,
    pub enabled: bool,
}

impl Mom {
    pub fn new(cfg: &MomConfig, enabled: bool) -> Self {
        Mom {
            cfg: cfg.clone(),
            enabled,
        }
    }

    /// Identity in eval mode, when disabled, when the coin fails, or for a
    /// batch of one. Otherwise draws `lam ~ Beta(alpha, alpha)` and a
    /// uniform permutation from the context's RNG.
    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        if !self.enabled || !ctx.is_train() || self.cfg.p == 0.0 {
            return Ok(x);
        }
        let batch = ctx.tape.shape(x)[0];
        let axis = self.cfg.axis.index();
        let beta = Beta::new(self.cfg.alpha, self.cfg.alpha)
            .map_err(|e| Error::Config(format!("mom.alpha: {e}")))?;
        let rng = ctx.require_rng()?;
        if !rng.random_bool(self.cfg.p) {
            return Ok(x);
        }
        let lam: f64 = beta.sample(rng);
        let mut perm: Vec<usize> = (0..batch).collect();
        perm.shuffle(rng);
        if batch == 1 {
            return Ok(x);
        }
        mom_apply(&mut ctx.tape, x, axis, lam, &perm)
    }
}
