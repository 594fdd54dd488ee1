//! Full recognition network.
//!
//! ```text
//! x (B,N,M,L) -> mfe -> (B,N,M,D,T) -> mom -> ltfe -> ccf
//!   -> variable fusion on (B*N, D, M, T) -> (B,N,D*M,T) -> mom
//!   -> gap -> (B,N*D,T) -> mamba block
//!   -> sensor fusion: cfb on (B,D,N,T) | attention on (B,N,D*T)
//!   -> flatten -> fc -> logits (B,C)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Mode, Var};
use crate::data::Dataset;
use crate::metrics::{argmax_rows, compute_metrics, Metrics};
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::model::cfb::Cfb;
use crate::model::config::{ModelConfig, SensorFusion, VariableFusion};
use crate::model::csi::Csi;
use crate::model::gta::{gap_flops, gap_forward, MambaBlock};
use crate::model::local_temporal::{Ccf, Ltfe};
use crate::model::mfe::Mfe;
use crate::model::mom::Mom;
use crate::params::{Ctx, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub enum SensorStage {
    Cfb(Cfb),
    Attention(Csi),
}

#[derive(Clone, Debug)]
pub struct Network {
    pub cfg: ModelConfig,
    pub mfe: Mfe,
    pub mom_local: Mom,
    pub ltfe: Ltfe,
    pub ccf: Ccf,
    pub variable_fusion: Option<Cfb>,
    pub mom_global: Mom,
    pub mamba: MambaBlock,
    pub sensor_fusion: SensorStage,
    pub head: Linear,
}

/// Per-stage inference cost for one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopReport {
    pub stages: Vec<(&'static str, u64)>,
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        self.stages.iter().map(|(_, n)| n).sum()
    }

    pub fn stage(&self, name: &str) -> Option<u64> {
        self.stages.iter().find(|(s, _)| *s == name).map(|(_, n)| *n)
    }
}

impl Network {
    /// Registers every parameter in `store`, initialised from `seed`.
    pub fn new(cfg: &ModelConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let (n, d, t) = (cfg.model.sensors, cfg.mfe.channels, cfg.seq_len());
        let mfe = Mfe::new(cfg, store, rng)?;
        let ltfe = Ltfe::new(cfg, store, rng)?;
        let ccf = Ccf::new(cfg, store, rng)?;
        let variable_fusion = match cfg.fusion.variable {
            VariableFusion::Cfb => Some(Cfb::new("cfb_var", d, &cfg.cfb, store, rng)?),
            VariableFusion::None => None,
        };
        let mamba = MambaBlock::new(cfg, store, rng)?;
        let sensor_fusion = match cfg.fusion.sensor {
            SensorFusion::Cfb => SensorStage::Cfb(Cfb::new("cfb_sensor", d, &cfg.cfb, store, rng)?),
            SensorFusion::Attention => SensorStage::Attention(Csi::new(d * t, &cfg.csi, store, rng)),
        };
        let head = Linear::new(store, "head", n * d * t, cfg.model.classes, true, rng);
        Ok(Network {
            cfg: cfg.clone(),
            mfe,
            mom_local: Mom::new(&cfg.mom, cfg.mom.enabled_pre_ltfe),
            ltfe,
            ccf,
            variable_fusion,
            mom_global: Mom::new(&cfg.mom, cfg.mom.enabled_pre_gta),
            mamba,
            sensor_fusion,
            head,
        })
    }

    /// `x (B, N, M, L)` to logits `(B, C)`.
    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let (n, m, d) = (self.cfg.model.sensors, self.cfg.model.variables, self.cfg.mfe.channels);
        let s = ctx.tape.shape(x).to_vec();
        if s.len() != 4 || s[1..] != [n, m, self.cfg.model.length] {
            return Err(Error::Shape {
                op: "network",
                detail: format!("expected input (B, {n}, {m}, {}), got {s:?}", self.cfg.model.length),
            });
        }
        let b = s[0];
        let t = self.cfg.seq_len();
        let e = self.mfe.forward(ctx, x)?;
        let h = ctx.tape.reshape(e, &[b, n * m * d, t])?;
        let h = self.mom_local.forward(ctx, h)?;
        let h = self.ltfe.forward(ctx, h)?;
        let h = self.ccf.forward(ctx, h)?;

        // (B,N,M,D,T) -> (B*N, D, M, T)
        let h = ctx.tape.reshape(h, &[b, n, m, d, t])?;
        let h = ctx.tape.permute(h, &[0, 1, 3, 2, 4])?;
        let mut h = ctx.tape.reshape(h, &[b * n, d, m, t])?;
        if let Some(cfb) = &self.variable_fusion {
            h = cfb.forward(ctx, h)?;
        }
        let h = ctx.tape.reshape(h, &[b, n * d * m, t])?;
        let h = self.mom_global.forward(ctx, h)?;
        let h = ctx.tape.reshape(h, &[b, n, d * m, t])?;
        let h = gap_forward(&mut ctx.tape, h, m)?;
        let h = self.mamba.forward(ctx, h)?;

        let fused = match &self.sensor_fusion {
            SensorStage::Cfb(cfb) => {
                let v = ctx.tape.reshape(h, &[b, n, d, t])?;
                let v = ctx.tape.permute(v, &[0, 2, 1, 3])?;
                cfb.forward(ctx, v)?
            }
            SensorStage::Attention(csi) => {
                let v = ctx.tape.reshape(h, &[b, n, d * t])?;
                csi.forward(ctx, v)?
            }
        };
        let flat = ctx.tape.reshape(fused, &[b, n * d * t])?;
        self.head.forward(ctx, flat)
    }

    /// Analyzer breakdown; augmentation is inactive at inference and
    /// reshapes are free.
    pub fn flops(&self) -> FlopReport {
        let c = &self.cfg;
        let (n, m, d, l, t) = (c.model.sensors, c.model.variables, c.mfe.channels, c.model.length, c.seq_len());
        let variable = self.variable_fusion.as_ref().map_or(0, |cfb| n as u64 * cfb.flops(m, t));
        let sensor = match &self.sensor_fusion {
            SensorStage::Cfb(cfb) => cfb.flops(n, t),
            SensorStage::Attention(csi) => csi.flops(n),
        };
        FlopReport {
            stages: vec![
                ("mfe", self.mfe.flops(l)),
                ("ltfe", self.ltfe.flops(t)),
                ("ccf", self.ccf.flops(t)),
                ("variable_fusion", variable),
                ("gap", gap_flops(n, d, m, t)),
                ("gta", self.mamba.flops(t)),
                ("sensor_fusion", sensor),
                ("head", self.head.flops(1)),
            ],
        }
    }
}

/// A network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub net: Network,
    pub store: ParamStore,
}

impl Model {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Network::new(cfg, &mut store, seed)?;
        Ok(Model { net, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.cfg
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_trainable()
    }

    /// Inference logits `(B, C)` for `x (B, N, M, L)`.
    pub fn logits(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut ctx = Ctx::<f32>::new(&mut self.store, Mode::Eval);
        let xv = ctx.tape.constant(x.clone());
        let y = self.net.forward(&mut ctx, xv)?;
        Ok(ctx.tape.value(y).clone())
    }

    pub fn predict(&mut self, data: &Dataset, batch: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(data.len());
        for idx in (0..data.len()).collect::<Vec<_>>().chunks(batch.max(1)) {
            let b = data.batch(idx)?;
            let logits = self.logits(&b.x)?;
            out.extend(argmax_rows(logits.data(), data.classes));
        }
        Ok(out)
    }

    pub fn evaluate(&mut self, data: &Dataset, batch: usize) -> Result<Metrics> {
        let preds = self.predict(data, batch)?;
        let labels: Vec<usize> = data.labels.iter().map(|&y| y as usize).collect();
        compute_metrics(&preds, &labels, data.classes)
    }
}

/// Trainable scalars whose parameter names start with `prefix`.
pub fn count_parameters_with_prefix(store: &ParamStore, prefix: &str) -> usize {
    store
        .iter()
        .filter(|p| p.trainable && p.name.starts_with(prefix))
        .map(|p| p.value.numel())
        .sum()
}
