//! Named parameters, their optimizer state, and the per-step forward context
//! that binds them onto a tape.

use std::collections::HashMap;

use rand::RngCore;

use crate::autodiff::{Mode, RunningStats, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named tensor with gradient accumulator and AdamW moment buffers.
/// Non-trainable entries (batch-norm running statistics) share the same
/// storage so that checkpoints capture them.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f32>,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub trainable: bool,
}

impl Parameter {
    fn new(name: String, value: Tensor, trainable: bool) -> Self {
        let n = value.numel();
        Parameter {
            name,
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            trainable,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(Parameter::new(name.into(), value, true))
    }

    /// Non-trainable state carried alongside the parameters.
    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(Parameter::new(name.into(), value, false))
    }

    fn push(&mut self, p: Parameter) -> ParamId {
        debug_assert!(
            self.params.iter().all(|q| q.name != p.name),
            "duplicate parameter name {}",
            p.name
        );
        self.params.push(p);
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

/// Everything a layer needs during one forward pass: the tape, parameter
/// storage, train/eval mode, and the augmentation RNG stream.
pub struct Ctx<'a, F: Scalar = f32> {
    pub tape: Tape<F>,
    pub mode: Mode,
    store: &'a mut ParamStore,
    rng: Option<&'a mut dyn RngCore>,
    bound: HashMap<ParamId, Var>,
    overrides: Option<&'a [Tensor<F>]>,
}

impl<'a, F: Scalar> Ctx<'a, F> {
    pub fn new(store: &'a mut ParamStore, mode: Mode) -> Self {
        Ctx {
            tape: Tape::new(),
            mode,
            store,
            rng: None,
            bound: HashMap::new(),
            overrides: None,
        }
    }

    pub fn with_rng(mut self, rng: &'a mut dyn RngCore) -> Self {
        self.rng = Some(rng);
        self
    }

    /// Substitute parameter values (indexed by [`ParamId`]) for the stored
    /// `f32` ones; used by the gradient checker to run in `f64`.
    pub fn with_overrides(mut self, values: &'a [Tensor<F>]) -> Self {
        self.overrides = Some(values);
        self
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn rng(&mut self) -> Option<&mut (dyn RngCore + 'a)> {
        self.rng.as_deref_mut()
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    /// Tape variable for a parameter, bound once per context.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = &self.store.params[id.0];
        let value = match self.overrides {
            Some(o) => o[id.0].clone(),
            None => p.value.cast(),
        };
        let v = if p.trainable {
            self.tape.leaf(value)
        } else {
            self.tape.constant(value)
        };
        self.bound.insert(id, v);
        v
    }

    pub fn bound_var(&self, id: ParamId) -> Option<Var> {
        self.bound.get(&id).copied()
    }

    /// Batch norm whose running statistics live in `mean`/`var` buffers.
    pub fn batchnorm(&mut self, x: Var, gamma: ParamId, beta: ParamId, mean: ParamId, var: ParamId) -> Result<Var> {
        let (g, b) = (self.param(gamma), self.param(beta));
        let load = |id: ParamId| -> Vec<F> {
            self.store.params[id.0].value.data().iter().map(|&v| F::of_f64(v as f64)).collect()
        };
        let mut stats = RunningStats {
            mean: load(mean),
            var: load(var),
        };
        let y = self.tape.batchnorm(x, g, b, &mut stats, self.mode)?;
        if self.mode == Mode::Train {
            for (id, src) in [(mean, &stats.mean), (var, &stats.var)] {
                let dst = self.store.params[id.0].value.data_mut();
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s.as_f64() as f32;
                }
            }
        }
        Ok(y)
    }

    /// Backward from `loss`, then add every bound trainable parameter's
    /// gradient into its store accumulator.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)?;
        let mut bound: Vec<(ParamId, Var)> = self.bound.iter().map(|(&k, &v)| (k, v)).collect();
        bound.sort();
        for (id, var) in bound {
            let p = &mut self.store.params[id.0];
            if !p.trainable {
                continue;
            }
            if let Some(g) = self.tape.grad(var) {
                for (acc, &x) in p.grad.iter_mut().zip(g) {
                    *acc += x.as_f64() as f32;
                }
            }
        }
        Ok(())
    }

    pub fn require_rng(&mut self) -> Result<&mut (dyn RngCore + 'a)> {
        self.rng
            .as_deref_mut()
            .ok_or_else(|| Error::Config("training-mode augmentation needs an RNG stream".into()))
    }
}
