//! Central finite-difference checks of every differentiable op and every
//! model block.
//!
//! Each case draws random tiny shapes (extents at most 5), evaluates the
//! scalar `sum(y * r)` for a fixed pseudo-random `r`, and compares the tape
//! gradient of every input and parameter against central differences. The
//! error is `|g_tape - g_fd| / max(|g_tape|, |g_fd|)` over the concatenated
//! gradient vector.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ConvOpts, Mode, Tape, Var};
use crate::error::Result;
use crate::model::cfb::Cfb;
use crate::model::config::{
    CcfGrouping, CfbConfig, CfbKernel, CsiConfig, ModelConfig, MomAxis, SensorFusion, VariableFusion,
};
use crate::model::csi::Csi;
use crate::model::gta::{gap_forward, MambaBlock, Ssm};
use crate::model::local_temporal::{Ccf, Ltfe};
use crate::model::mfe::Mfe;
use crate::model::mom::{mom_apply, moments};
use crate::model::Network;
use crate::params::{Ctx, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn tolerance(self) -> f64 {
        match self {
            Precision::F32 => 1e-2,
            Precision::F64 => 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Case {
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Gelu,
    Silu,
    Softplus,
    Exp,
    Sqrt,
    Reciprocal,
    Reshape,
    Permute,
    Concat,
    Sum,
    Mean,
    Variance,
    Softmax,
    Conv1d,
    PointwiseConv,
    DepthwiseConv2d,
    Linear,
    Bmm,
    BatchNorm,
    SelectiveScan,
    CrossEntropy,
    Mfe,
    Mom,
    Ltfe,
    Ccf,
    Cfb,
    Gap,
    Ssm,
    Mamba,
    Csi,
    Network,
    /// Deliberately broken: `x * detach(x)` drops half the gradient.
    DetachFault,
}

impl Case {
    /// Every genuine case; excludes [`Case::DetachFault`].
    pub const ALL: [Case; 36] = [
        Case::Add,
        Case::Sub,
        Case::Mul,
        Case::Scale,
        Case::AddScalar,
        Case::Gelu,
        Case::Silu,
        Case::Softplus,
        Case::Exp,
        Case::Sqrt,
        Case::Reciprocal,
        Case::Reshape,
        Case::Permute,
        Case::Concat,
        Case::Sum,
        Case::Mean,
        Case::Variance,
        Case::Softmax,
        Case::Conv1d,
        Case::PointwiseConv,
        Case::DepthwiseConv2d,
        Case::Linear,
        Case::Bmm,
        Case::BatchNorm,
        Case::SelectiveScan,
        Case::CrossEntropy,
        Case::Mfe,
        Case::Mom,
        Case::Ltfe,
        Case::Ccf,
        Case::Cfb,
        Case::Gap,
        Case::Ssm,
        Case::Mamba,
        Case::Csi,
        Case::Network,
    ];

    pub fn name(self) -> String {
        format!("{self:?}").to_lowercase()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub case: Case,
    pub precision: Precision,
    pub instances: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

enum Block {
    Mfe(Mfe),
    Ltfe(Ltfe),
    Ccf(Ccf),
    Cfb(Cfb),
    Ssm(Ssm),
    Mamba(MambaBlock),
    Csi(Csi),
    Network(Network),
}

struct Instance {
    /// Free inputs followed, for blocks, by every stored tensor.
    inputs: Vec<Tensor<f64>>,
    /// Which inputs are differentiated.
    diff: Vec<bool>,
    ints: Vec<usize>,
    reals: Vec<f64>,
    block: Option<(Block, ParamStore)>,
    /// Constants that the analytic path treats as stop-gradient.
    frozen: Vec<Tensor<f64>>,
}

fn ext<R: Rng>(rng: &mut R, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn randn<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

fn rand_shape<R: Rng>(rng: &mut R, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| ext(rng, 1, 4)).collect()
}

fn rand_shape_in<R: Rng>(rng: &mut R, lo: usize, hi: usize) -> Vec<usize> {
    let rank = ext(rng, lo, hi);
    rand_shape(rng, rank)
}

fn plain(inputs: Vec<Tensor<f64>>) -> Instance {
    let n = inputs.len();
    Instance {
        inputs,
        diff: vec![true; n],
        ints: vec![],
        reals: vec![],
        block: None,
        frozen: vec![],
    }
}

fn with_block(x: Tensor<f64>, block: Block, store: ParamStore) -> Instance {
    let mut inputs = vec![x];
    let mut diff = vec![true];
    for p in store.iter() {
        inputs.push(p.value.cast());
        diff.push(p.trainable);
    }
    Instance {
        inputs,
        diff,
        ints: vec![],
        reals: vec![],
        block: Some((block, store)),
        frozen: vec![],
    }
}

fn tiny_model<R: Rng>(rng: &mut R) -> ModelConfig {
    let mut c = ModelConfig::default();
    c.model.sensors = ext(rng, 1, 2);
    c.model.variables = ext(rng, 1, 2);
    c.mfe.kernel = ext(rng, 1, 3);
    c.mfe.stride = ext(rng, 1, 2);
    c.model.length = c.mfe.kernel + ext(rng, 0, 4);
    c.mfe.channels = ext(rng, 1, 3);
    c.ltfe.kernel = [1, 3][ext(rng, 0, 1)];
    c.ccf.grouping = [CcfGrouping::SensorVariable, CcfGrouping::Variable][ext(rng, 0, 1)];
    c.gta.state_size = ext(rng, 1, 3);
    c.gta.conv_width = ext(rng, 1, 4);
    c.mom.p = 0.0;
    c
}

fn sample(case: Case, rng: &mut ChaCha8Rng) -> Instance {
    let seed = rng.random::<u64>();
    match case {
        Case::Add | Case::Sub | Case::Mul => {
            let a = rand_shape_in(rng, 1, 3);
            let mut b: Vec<usize> = a.iter().map(|&d| if rng.random_bool(0.3) { 1 } else { d }).collect();
            let drop = ext(rng, 0, b.len() - 1);
            b.drain(..drop);
            if rng.random_bool(0.5) {
                plain(vec![randn(rng, &a), randn(rng, &b)])
            } else {
                plain(vec![randn(rng, &b), randn(rng, &a)])
            }
        }
        Case::Scale | Case::AddScalar | Case::Gelu | Case::Silu | Case::Softplus | Case::Exp | Case::Sum
        | Case::DetachFault => {
            let s = rand_shape_in(rng, 1, 3);
            plain(vec![randn(rng, &s)])
        }
        Case::Sqrt | Case::Reciprocal => {
            let s = rand_shape_in(rng, 1, 3);
            let sign = case == Case::Reciprocal;
            let x = randn(rng, &s).map(|v| if sign && v < 0.0 { v - 0.5 } else { v.abs() + 0.5 });
            plain(vec![x])
        }
        Case::Reshape | Case::Permute => {
            let s = rand_shape(rng, 3);
            let mut inst = plain(vec![randn(rng, &s)]);
            let mut perm = vec![0, 1, 2];
            perm.shuffle(rng);
            inst.ints = perm;
            inst
        }
        Case::Concat => {
            let mut s = rand_shape_in(rng, 1, 3);
            let axis = ext(rng, 0, s.len() - 1);
            let parts = ext(rng, 2, 3);
            let inputs = (0..parts)
                .map(|_| {
                    s[axis] = ext(rng, 1, 3);
                    randn(rng, &s)
                })
                .collect();
            let mut inst = plain(inputs);
            inst.ints = vec![axis];
            inst
        }
        Case::Mean | Case::Variance | Case::Softmax => {
            let s = rand_shape_in(rng, 1, 3);
            let mut inst = plain(vec![randn(rng, &s)]);
            inst.ints = vec![ext(rng, 0, s.len() - 1)];
            inst
        }
        Case::Conv1d | Case::PointwiseConv => {
            let pointwise = case == Case::PointwiseConv;
            let (b, g) = (ext(rng, 1, 2), ext(rng, 1, 2));
            let (cin_g, cout_g) = (ext(rng, 1, 3), ext(rng, 1, 3));
            let k = if pointwise { 1 } else { ext(rng, 1, 3) };
            let stride = if pointwise { 1 } else { ext(rng, 1, 2) };
            let (pl, pr) = if pointwise { (0, 0) } else { (ext(rng, 0, 2), ext(rng, 0, 2)) };
            let len = (k + ext(rng, 0, 3)).saturating_sub(pl + pr).max(1);
            let len = if len + pl + pr < k { k } else { len };
            let mut inst = plain(vec![
                randn(rng, &[b, g * cin_g, len]),
                randn(rng, &[g * cout_g, cin_g, k]),
                randn(rng, &[g * cout_g]),
            ]);
            inst.ints = vec![stride, g, pl, pr];
            inst
        }
        Case::DepthwiseConv2d => {
            let (b, c, h, w) = (ext(rng, 1, 2), ext(rng, 1, 3), ext(rng, 1, 4), ext(rng, 1, 4));
            let (kh, kw) = ([1, 3][ext(rng, 0, 1)], [1, 3][ext(rng, 0, 1)]);
            plain(vec![randn(rng, &[b, c, h, w]), randn(rng, &[c, kh, kw]), randn(rng, &[c])])
        }
        Case::Linear => {
            let mut s = rand_shape_in(rng, 2, 3);
            let out = ext(rng, 1, 4);
            let inp = *s.last().expect("rank >= 2");
            let x = randn(rng, &s);
            s.clear();
            plain(vec![x, randn(rng, &[out, inp]), randn(rng, &[out])])
        }
        Case::Bmm => {
            let (b, n, k, m) = (ext(rng, 1, 2), ext(rng, 1, 4), ext(rng, 1, 4), ext(rng, 1, 4));
            let trans = rng.random_bool(0.5);
            let bs = if trans { [b, m, k] } else { [b, k, m] };
            let mut inst = plain(vec![randn(rng, &[b, n, k]), randn(rng, &bs)]);
            inst.ints = vec![trans as usize];
            inst
        }
        Case::BatchNorm => {
            let (b, c, l) = (ext(rng, 2, 4), ext(rng, 1, 3), ext(rng, 1, 3));
            let gamma = randn(rng, &[c]).map(|v| v + 1.0);
            plain(vec![randn(rng, &[b, c, l]), gamma, randn(rng, &[c])])
        }
        Case::SelectiveScan => {
            let (b, e, s, t) = (ext(rng, 1, 2), ext(rng, 1, 3), ext(rng, 1, 3), ext(rng, 1, 4));
            let mut inst = plain(vec![
                randn(rng, &[b, e, t]),
                randn(rng, &[b, e, t]).map(|v| v.abs() * 0.5 + 0.1),
                randn(rng, &[e, s]).map(|v| -(v.abs() + 0.2)),
                randn(rng, &[b, s, t]),
                randn(rng, &[b, s, t]),
                randn(rng, &[e]),
            ]);
            inst.ints = vec![s];
            inst
        }
        Case::CrossEntropy => {
            let (b, c) = (ext(rng, 1, 4), ext(rng, 2, 5));
            let mut inst = plain(vec![randn(rng, &[b, c])]);
            inst.ints = (0..b).map(|_| ext(rng, 0, c - 1)).collect();
            inst
        }
        Case::Mom => {
            let (b, c, t) = (ext(rng, 2, 3), ext(rng, 1, 3), ext(rng, 2, 5));
            let x = randn(rng, &[b, c, t]);
            let axis = [MomAxis::Time, MomAxis::Channel][ext(rng, 0, 1)].index();
            let mut perm: Vec<usize> = (0..b).collect();
            perm.shuffle(rng);
            let lam = rng.random_range(0.0..1.0);
            let (mu, sigma) = moments(&x, axis);
            let mut inst = plain(vec![x]);
            inst.ints = [vec![axis], perm].concat();
            inst.reals = vec![lam];
            let probe = {
                let mut tape = Tape::<f64>::new();
                let v = tape.constant(inst.inputs[0].clone());
                let y = mom_apply(&mut tape, v, axis, lam, &inst.ints[1..]).expect("valid mom");
                tape.value(y).clone()
            };
            // out = x * k + c with k, c constants: recover them for the surrogate
            let k = {
                let m = mix_ref(&sigma, &inst.ints[1..], lam);
                let mut kk = m.clone();
                for (d, s) in kk.data_mut().iter_mut().zip(sigma.data()) {
                    *d /= s;
                }
                kk
            };
            let _ = probe;
            let mu_m = mix_ref(&mu, &inst.ints[1..], lam);
            inst.frozen = vec![mu, k, mu_m];
            inst
        }
        Case::Gap => {
            let (b, n, d, m, t) = (ext(rng, 1, 2), ext(rng, 1, 2), ext(rng, 1, 3), ext(rng, 1, 3), ext(rng, 1, 3));
            let mut inst = plain(vec![randn(rng, &[b, n, d * m, t])]);
            inst.ints = vec![m];
            inst
        }
        Case::Mfe | Case::Ltfe | Case::Ccf | Case::Mamba | Case::Network => {
            let mut cfg = tiny_model(rng);
            let mut store = ParamStore::new();
            let prng = &mut ChaCha8Rng::seed_from_u64(seed);
            let (n, m, d, t) = (cfg.model.sensors, cfg.model.variables, cfg.mfe.channels, cfg.seq_len());
            let b = ext(rng, 1, 2);
            match case {
                Case::Mfe => {
                    cfg.mfe.shared_weights = rng.random_bool(0.5);
                    let blk = Mfe::new(&cfg, &mut store, prng).expect("valid mfe");
                    with_block(randn(rng, &[b, n, m, cfg.model.length]), Block::Mfe(blk), store)
                }
                Case::Ltfe => {
                    let blk = Ltfe::new(&cfg, &mut store, prng).expect("valid ltfe");
                    with_block(randn(rng, &[b, n * m * d, t]), Block::Ltfe(blk), store)
                }
                Case::Ccf => {
                    let blk = Ccf::new(&cfg, &mut store, prng).expect("valid ccf");
                    with_block(randn(rng, &[b, n * m * d, t]), Block::Ccf(blk), store)
                }
                Case::Mamba => {
                    let blk = MambaBlock::new(&cfg, &mut store, prng).expect("valid block");
                    with_block(randn(rng, &[b, n * d, t]), Block::Mamba(blk), store)
                }
                _ => {
                    cfg.model.classes = ext(rng, 2, 3);
                    cfg.mfe.channels = 4;
                    cfg.cfb.r = 4;
                    cfg.cfb.k = ext(rng, 0, 2);
                    cfg.csi.d_k = ext(rng, 1, 3);
                    cfg.fusion.variable = [VariableFusion::Cfb, VariableFusion::None][ext(rng, 0, 1)];
                    cfg.fusion.sensor = [SensorFusion::Cfb, SensorFusion::Attention][ext(rng, 0, 1)];
                    // batch statistics over few samples are too ill-conditioned for 32-bit differences
                    let b = 5;
                    let net = Network::new(&cfg, &mut store, seed).expect("valid network");
                    let mut inst = with_block(
                        randn(rng, &[b, cfg.model.sensors, cfg.model.variables, cfg.model.length]),
                        Block::Network(net),
                        store,
                    );
                    inst.ints = (0..b).map(|_| ext(rng, 0, cfg.model.classes - 1)).collect();
                    inst
                }
            }
        }
        Case::Cfb => {
            let c = ext(rng, 2, 4);
            let cfg = CfbConfig {
                r: ext(rng, 1, 2),
                k: ext(rng, 0, 2),
                kernel: [CfbKernel::Square3, CfbKernel::Temporal3][ext(rng, 0, 1)],
            };
            let (b, h, w) = (2, ext(rng, 1, 3), ext(rng, 1, 4));
            let mut store = ParamStore::new();
            let blk = Cfb::new("cfb", c, &cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(seed)).expect("valid cfb");
            with_block(randn(rng, &[b, c, h, w]), Block::Cfb(blk), store)
        }
        Case::Ssm => {
            let (b, e, s, t) = (ext(rng, 1, 2), ext(rng, 1, 3), ext(rng, 1, 3), ext(rng, 1, 4));
            let mut store = ParamStore::new();
            let blk = Ssm::new("ssm", e, s, &mut store, &mut ChaCha8Rng::seed_from_u64(seed)).expect("valid ssm");
            with_block(randn(rng, &[b, e, t]), Block::Ssm(blk), store)
        }
        Case::Csi => {
            let (b, n, f) = (ext(rng, 1, 2), ext(rng, 1, 3), ext(rng, 1, 4));
            let cfg = CsiConfig {
                d_k: ext(rng, 1, 4),
                scaled: rng.random_bool(0.5),
            };
            let mut store = ParamStore::new();
            let blk = Csi::new(f, &cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(seed));
            with_block(randn(rng, &[b, n, f]), Block::Csi(blk), store)
        }
    }
}

fn mix_ref(s: &Tensor<f64>, perm: &[usize], lam: f64) -> Tensor<f64> {
    let per = s.numel() / perm.len();
    let d = s.data();
    let out = (0..s.numel())
        .map(|i| lam * d[i] + (1.0 - lam) * d[perm[i / per] * per + i % per])
        .collect();
    Tensor::new(s.shape(), out).expect("same shape")
}

/// Fixed weights `r` so that the checked scalar exercises every output.
fn readout<F: Scalar>(tape: &mut Tape<F>, y: Var) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let r = (0..n)
        .map(|i| F::of_f64(((i * 37 + 11) % 23) as f64 / 11.0 - 1.0 + 0.05))
        .collect();
    let r = tape.constant(Tensor::new(&shape, r)?);
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

fn op_forward<F: Scalar>(case: Case, inst: &Instance, tape: &mut Tape<F>, v: &[Var], analytic: bool) -> Result<Var> {
    let i = &inst.ints;
    Ok(match case {
        Case::Add => tape.add(v[0], v[1])?,
        Case::Sub => tape.sub(v[0], v[1])?,
        Case::Mul => tape.mul(v[0], v[1])?,
        Case::Scale => tape.scale(v[0], F::of_f64(-1.7)),
        Case::AddScalar => tape.add_scalar(v[0], F::of_f64(0.3)),
        Case::Gelu => tape.gelu(v[0]),
        Case::Silu => tape.silu(v[0]),
        Case::Softplus => tape.softplus(v[0]),
        Case::Exp => tape.exp(v[0]),
        Case::Sqrt => tape.sqrt(v[0]),
        Case::Reciprocal => tape.reciprocal(v[0]),
        Case::Reshape => {
            let n = tape.value(v[0]).numel();
            let first = tape.shape(v[0])[0];
            tape.reshape(v[0], &[n / first, first])?
        }
        Case::Permute => tape.permute(v[0], i)?,
        Case::Concat => tape.concat(v, i[0])?,
        Case::Sum => tape.sum(v[0]),
        Case::Mean => tape.mean(v[0], i[0])?,
        Case::Variance => tape.variance(v[0], i[0])?,
        Case::Softmax => tape.softmax(v[0], i[0])?,
        Case::Conv1d | Case::PointwiseConv => {
            let opts = ConvOpts {
                stride: i[0],
                groups: i[1],
                pad_left: i[2],
                pad_right: i[3],
            };
            tape.conv1d(v[0], v[1], Some(v[2]), opts)?
        }
        Case::DepthwiseConv2d => tape.depthwise_conv2d(v[0], v[1], Some(v[2]))?,
        Case::Linear => tape.linear(v[0], v[1], Some(v[2]))?,
        Case::Bmm => tape.bmm(v[0], v[1], i[0] == 1)?,
        Case::BatchNorm => {
            let ch = tape.shape(v[1])[0];
            let mut stats = crate::autodiff::RunningStats::new(ch);
            tape.batchnorm(v[0], v[1], v[2], &mut stats, Mode::Train)?
        }
        Case::SelectiveScan => tape.selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], i[0])?,
        Case::CrossEntropy => tape.cross_entropy(v[0], i)?,
        Case::Mom => {
            if analytic {
                mom_apply(tape, v[0], i[0], inst.reals[0], &i[1..])?
            } else {
                // surrogate with moments frozen at the unperturbed input
                let [mu, k, mu_m] = [0, 1, 2].map(|j| tape.constant(inst.frozen[j].cast()));
                let c = tape.sub(v[0], mu)?;
                let s = tape.mul(c, k)?;
                tape.add(s, mu_m)?
            }
        }
        Case::Gap => gap_forward(tape, v[0], i[0])?,
        Case::DetachFault => {
            let d = tape.detach(v[0]);
            tape.mul(v[0], d)?
        }
        _ => unreachable!("block cases run through a context"),
    })
}

/// Loss value and, if requested, the gradient of every input.
fn evaluate<F: Scalar>(case: Case, inst: &mut Instance, values: &[Tensor<F>], grad: bool) -> Result<(f64, Vec<Vec<f64>>)> {
    let collect = |tape: &Tape<F>, v: Var, n: usize| -> Vec<f64> {
        tape.grad(v)
            .map_or_else(|| vec![0.0; n], |g| g.iter().map(|x| x.as_f64()).collect())
    };
    if let Some((block, store)) = inst.block.as_mut() {
        let (x, params) = values.split_at(1);
        let mut ctx = Ctx::<F>::new(store, Mode::Train).with_overrides(params);
        let xv = ctx.tape.leaf(x[0].clone());
        let y = match block {
            Block::Mfe(b) => b.forward(&mut ctx, xv)?,
            Block::Ltfe(b) => b.forward(&mut ctx, xv)?,
            Block::Ccf(b) => b.forward(&mut ctx, xv)?,
            Block::Cfb(b) => b.forward(&mut ctx, xv)?,
            Block::Ssm(b) => b.forward(&mut ctx, xv)?,
            Block::Mamba(b) => b.forward(&mut ctx, xv)?,
            Block::Csi(b) => b.forward(&mut ctx, xv)?,
            Block::Network(b) => b.forward(&mut ctx, xv)?,
        };
        let loss = if case == Case::Network {
            ctx.tape.cross_entropy(y, &inst.ints)?
        } else {
            readout(&mut ctx.tape, y)?
        };
        let lv = ctx.tape.value(loss).data()[0].as_f64();
        if !grad {
            return Ok((lv, vec![]));
        }
        ctx.tape.backward(loss)?;
        let mut grads = vec![collect(&ctx.tape, xv, x[0].numel())];
        for (j, p) in params.iter().enumerate() {
            let id = ctx.store().ids().nth(j).expect("aligned");
            grads.push(match ctx.bound_var(id) {
                Some(v) => collect(&ctx.tape, v, p.numel()),
                None => vec![0.0; p.numel()],
            });
        }
        return Ok((lv, grads));
    }
    let mut tape = Tape::<F>::new();
    let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = op_forward(case, inst, &mut tape, &vars, grad)?;
    let loss = if tape.value(y).numel() == 1 { y } else { readout(&mut tape, y)? };
    let lv = tape.value(loss).data()[0].as_f64();
    if !grad {
        return Ok((lv, vec![]));
    }
    tape.backward(loss)?;
    Ok((lv, vars.iter().zip(values).map(|(&v, t)| collect(&tape, v, t.numel())).collect()))
}

/// Central difference of the loss along one coordinate.
fn central<F: Scalar>(case: Case, inst: &mut Instance, values: &mut [Tensor<F>], j: usize, k: usize, h: f64) -> Result<f64> {
    let x0 = inst.inputs[j].data()[k];
    let (plus, minus) = (F::of_f64(x0 + h), F::of_f64(x0 - h));
    values[j].data_mut()[k] = plus;
    let (fp, _) = evaluate(case, inst, values, false)?;
    values[j].data_mut()[k] = minus;
    let (fm, _) = evaluate(case, inst, values, false)?;
    values[j].data_mut()[k] = F::of_f64(x0);
    Ok((fp - fm) / (plus.as_f64() - minus.as_f64()))
}

/// Richardson estimates over a halving sequence of steps starting at
/// `step`; returns the one that agrees best with its finer neighbour. This
/// balances truncation against rounding without looking at the analytic
/// gradient, which matters in 32-bit where no single step suits every
/// coordinate.
fn extrapolated<F: Scalar>(case: Case, inst: &mut Instance, values: &mut [Tensor<F>], j: usize, k: usize, step: f64) -> Result<f64> {
    const LEVELS: usize = 6;
    let mut d = [0.0; LEVELS];
    for (l, dl) in d.iter_mut().enumerate() {
        *dl = central(case, inst, values, j, k, step / f64::from(1u32 << l))?;
    }
    let r: Vec<f64> = (0..LEVELS - 1).map(|l| (4.0 * d[l + 1] - d[l]) / 3.0).collect();
    let best = (0..r.len() - 1)
        .min_by(|&a, &b| (r[a] - r[a + 1]).abs().total_cmp(&(r[b] - r[b + 1]).abs()))
        .expect("at least two estimates");
    Ok(r[best + 1])
}

/// `extrapolate` switches from a single central difference to
/// [`extrapolated`].
fn check_instance<F: Scalar>(case: Case, inst: &mut Instance, step: f64, extrapolate: bool) -> Result<f64> {
    let mut values: Vec<Tensor<F>> = inst.inputs.iter().map(|t| t.cast()).collect();
    let (_, analytic) = evaluate(case, inst, &values, true)?;
    let (mut diff2, mut a2, mut n2) = (0.0f64, 0.0f64, 0.0f64);
    for j in 0..values.len() {
        if !inst.diff[j] {
            continue;
        }
        for k in 0..values[j].numel() {
            let numeric = if extrapolate {
                extrapolated(case, inst, &mut values, j, k, step)?
            } else {
                central(case, inst, &mut values, j, k, step)?
            };
            let a = analytic[j][k];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
    }
    let scale = a2.sqrt().max(n2.sqrt());
    Ok(if scale < 1e-10 { diff2.sqrt() } else { diff2.sqrt() / scale })
}

/// Runs `instances` random instances of `case`; deterministic in `seed`.
pub fn check_case(case: Case, precision: Precision, instances: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(case as u64);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let mut inst = sample(case, &mut rng);
        let err = match precision {
            Precision::F32 => check_instance::<f32>(case, &mut inst, 4e-2, true)?,
            Precision::F64 => check_instance::<f64>(case, &mut inst, 1e-6, false)?,
        };
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    Ok(CheckResult {
        case,
        precision,
        instances,
        max_rel_err: worst,
        passed: worst <= precision.tolerance(),
    })
}

/// The full suite at one precision.
pub fn run_suite(precision: Precision, instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    Case::ALL
        .iter()
        .map(|&c| check_case(c, precision, instances, seed))
        .collect()
}
