//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps taken so far.
    pub t: u64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        }
    }

    /// One update of every trainable parameter from its accumulated
    /// gradient. Fails before touching any parameter if a gradient is not
    /// finite.
    ///
    /// ```text
    /// m = b1 m + (1 - b1) g,   v = b2 v + (1 - b2) g^2
    /// p = p (1 - lr wd) - lr (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    /// ```
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for p in store.iter().filter(|p| p.trainable) {
            if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{}` at index {i}", p.name)));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let decay = (1.0 - self.lr * self.weight_decay) as f32;
        for p in store.iter_mut().filter(|p| p.trainable) {
            let value = p.value.data_mut();
            for i in 0..value.len() {
                let g = p.grad[i] as f64;
                let m = b1 * p.m[i] as f64 + (1.0 - b1) * g;
                let v = b2 * p.v[i] as f64 + (1.0 - b2) * g * g;
                p.m[i] = m as f32;
                p.v[i] = v as f32;
                let update = self.lr * (m / c1) / ((v / c2).sqrt() + self.eps);
                value[i] = value[i] * decay - update as f32;
            }
        }
        Ok(())
    }
}
