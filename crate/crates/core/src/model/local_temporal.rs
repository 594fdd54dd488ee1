//! Local temporal extraction (depthwise temporal convolution) and
//! cross-channel fusion (grouped pointwise convolutions).
//!
//! Both operate on the compute view `(B, N*M*D, T)` with channel index
//! `(n*M + m)*D + d`.

use rand::Rng;

use crate::autodiff::{ConvOpts, Var};
use crate::error::{Error, Result};
use crate::layers::{activate, activation_ops, Conv1d};
use crate::model::config::{Activation, CcfGrouping, ModelConfig};
use crate::params::{Ctx, ParamStore};
use crate::tensor::Scalar;

/// One depthwise kernel per channel, "same" padding.
#[derive(Clone, Debug)]
pub struct Ltfe {
    pub conv: Conv1d,
    act: Activation,
}

impl Ltfe {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let k = cfg.ltfe.kernel;
        if k.is_multiple_of(2) {
            return Err(Error::Config(format!("ltfe.kernel must be odd, got {k}")));
        }
        let ch = cfg.model.sensors * cfg.model.variables * cfg.mfe.channels;
        let conv = Conv1d::new(store, "ltfe", ch, ch, k, ConvOpts::new(1, ch, k / 2), true, rng)?;
        Ok(Ltfe {
            conv,
            act: cfg.ltfe.activation,
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        Ok(activate(ctx, y, self.act))
    }

    pub fn flops(&self, len: usize) -> u64 {
        self.conv.flops(len) + activation_ops(self.act, self.conv.cout * len)
    }
}

/// Grouped pointwise mixing of the `D` channels of each variable, then a
/// per-sensor pointwise map across that sensor's `M*D` channels.
#[derive(Clone, Debug)]
pub struct Ccf {
    pub group: Conv1d,
    pub merge: Conv1d,
    act: Activation,
    grouping: CcfGrouping,
    sensors: usize,
    variables: usize,
    channels: usize,
}

impl Ccf {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let (n, m, d) = (cfg.model.sensors, cfg.model.variables, cfg.mfe.channels);
        let ch = n * m * d;
        let groups = match cfg.ccf.grouping {
            CcfGrouping::SensorVariable => n * m,
            CcfGrouping::Variable => m,
        };
        let group = Conv1d::pointwise(store, "ccf.group", ch, ch, groups, true, rng)?;
        let merge = Conv1d::pointwise(store, "ccf.merge", ch, ch, n, true, rng)?;
        Ok(Ccf {
            group,
            merge,
            act: cfg.ccf.activation,
            grouping: cfg.ccf.grouping,
            sensors: n,
            variables: m,
            channels: d,
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let y = match self.grouping {
            CcfGrouping::SensorVariable => self.group.forward(ctx, x)?,
            CcfGrouping::Variable => {
                // regroup channels variable-major so each group spans all sensors
                let (n, m, d) = (self.sensors, self.variables, self.channels);
                let s = ctx.tape.shape(x).to_vec();
                let (b, t) = (s[0], s[2]);
                let v = ctx.tape.reshape(x, &[b, n, m, d, t])?;
                let v = ctx.tape.permute(v, &[0, 2, 1, 3, 4])?;
                let v = ctx.tape.reshape(v, &[b, m * n * d, t])?;
                let v = self.group.forward(ctx, v)?;
                let v = ctx.tape.reshape(v, &[b, m, n, d, t])?;
                let v = ctx.tape.permute(v, &[0, 2, 1, 3, 4])?;
                ctx.tape.reshape(v, &[b, n * m * d, t])?
            }
        };
        let y = activate(ctx, y, self.act);
        let z = self.merge.forward(ctx, y)?;
        Ok(activate(ctx, z, self.act))
    }

    pub fn flops(&self, len: usize) -> u64 {
        let elems = self.group.cout * len;
        self.group.flops(len) + self.merge.flops(len) + 2 * activation_ops(self.act, elems)
    }
}
