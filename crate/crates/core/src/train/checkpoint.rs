//! Binary checkpoints.
//!
//! Layout (little-endian): `"WHCK"`, `u32` version, the model and training
//! configuration as length-prefixed TOML, normalization statistics, the
//! training counters, then every stored tensor as
//! `name, trainable, shape, values, adam m, adam v`.

use std::fs;
use std::path::Path;

use crate::config::{parse_toml, to_toml};
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"WHCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlob {
    pub name: String,
    pub trainable: bool,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

/// Progress counters carried across epochs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: u32,
    pub best_epoch: u32,
    /// Best validation macro-F1 so far; negative before the first epoch.
    pub best_metric: f64,
    pub epochs_since_best: u32,
    /// Optimizer steps taken.
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub norm: NormStats,
    pub state: TrainState,
    pub params: Vec<ParamBlob>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn floats(&mut self, v: &[f32]) {
        self.u32(v.len() as u32);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!(
                    "truncated {what}: expected {n} more bytes, found {}",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn floats(&mut self, what: &str) -> Result<Vec<f32>> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n.saturating_mul(4), what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }
    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let at = self.pos;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Format {
            offset: at as u64,
            msg: format!("{what} is not UTF-8"),
        })
    }
}

impl Checkpoint {
    pub fn capture(
        model_config: &ModelConfig,
        train_config: &TrainConfig,
        norm: &NormStats,
        state: TrainState,
        store: &ParamStore,
    ) -> Self {
        Checkpoint {
            model_config: model_config.clone(),
            train_config: train_config.clone(),
            norm: norm.clone(),
            state,
            params: store
                .iter()
                .map(|p| ParamBlob {
                    name: p.name.clone(),
                    trainable: p.trainable,
                    shape: p.value.shape().to_vec(),
                    value: p.value.data().to_vec(),
                    m: p.m.clone(),
                    v: p.v.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds the network the checkpoint was taken from.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(&self.model_config, self.train_config.seed)?;
        self.restore(&mut model.store)?;
        Ok(model)
    }

    /// Copies values and optimizer moments into `store`, which must hold
    /// exactly the same tensors.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (blob, p) in self.params.iter().zip(store.iter()) {
            if blob.name != p.name || blob.shape != p.value.shape() || blob.trainable != p.trainable {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match model tensor `{}` {:?}",
                    blob.name,
                    blob.shape,
                    p.name,
                    p.value.shape()
                )));
            }
        }
        for (blob, p) in self.params.iter().zip(store.iter_mut()) {
            p.value = Tensor::new(&blob.shape, blob.value.clone())?;
            p.m.clone_from(&blob.m);
            p.v.clone_from(&blob.v);
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.str(&to_toml(&self.model_config));
        w.str(&to_toml(&self.train_config));
        w.floats(&self.norm.min);
        w.floats(&self.norm.max);
        let s = &self.state;
        w.u32(s.epoch);
        w.u32(s.best_epoch);
        w.f64(s.best_metric);
        w.u32(s.epochs_since_best);
        w.u64(s.step);
        w.u32(self.params.len() as u32);
        for p in &self.params {
            w.str(&p.name);
            w.0.push(p.trainable as u8);
            w.u32(p.shape.len() as u32);
            for &d in &p.shape {
                w.u32(d as u32);
            }
            w.floats(&p.value);
            w.floats(&p.m);
            w.floats(&p.v);
        }
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "bad magic, expected \"WHCK\"".into(),
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported checkpoint version {version}"),
            });
        }
        let model_config: ModelConfig = parse_toml(&r.str("model config")?)?;
        let train_config: TrainConfig = parse_toml(&r.str("train config")?)?;
        let norm = NormStats {
            min: r.floats("normalization minima")?,
            max: r.floats("normalization maxima")?,
        };
        let state = TrainState {
            epoch: r.u32("epoch")?,
            best_epoch: r.u32("best epoch")?,
            best_metric: r.f64("best metric")?,
            epochs_since_best: r.u32("patience counter")?,
            step: r.u64("step")?,
        };
        let count = r.u32("tensor count")? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.str("tensor name")?;
            let trainable = r.take(1, "trainable flag")?[0] != 0;
            let ndim = r.u32("rank")? as usize;
            let shape = (0..ndim).map(|_| r.u32("extent").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let at = r.pos;
            let value = r.floats("values")?;
            let m = r.floats("first moments")?;
            let v = r.floats("second moments")?;
            let n: usize = shape.iter().product();
            if value.len() != n || m.len() != n || v.len() != n {
                return Err(Error::Format {
                    offset: at as u64,
                    msg: format!("tensor `{name}` of shape {shape:?} has inconsistent payload lengths"),
                });
            }
            params.push(ParamBlob {
                name,
                trainable,
                shape,
                value,
                m,
                v,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                msg: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(Checkpoint {
            model_config,
            train_config,
            norm,
            state,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}
