//! Straight-line reference implementations used as oracles. Everything is
//! plain nested loops in f64 over flat row-major buffers, written without
//! the tape so that a shared bug cannot hide.

#![allow(dead_code)]

use whar::autodiff::Mode;
use whar::params::{Ctx, ParamId, ParamStore};
use whar::Tensor;

thread_local! {
    static OPS: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

/// Operations executed by the references on this thread since the last
/// [`reset_ops`], under the analyzer's convention: one per kernel tap
/// (padding included), bias, normalization, activation, residual and
/// softmax entry.
pub fn ops() -> u64 {
    OPS.with(|c| c.get())
}

pub fn reset_ops() {
    OPS.with(|c| c.set(0));
}

fn tick(n: usize) {
    OPS.with(|c| c.set(c.get() + n as u64));
}

pub fn param(store: &ParamStore, id: ParamId) -> Vec<f64> {
    store.get(id).value.data().iter().map(|&v| v as f64).collect()
}

pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

pub fn gelu(x: f64) -> f64 {
    tick(1);
    let k = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (k * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn silu(x: f64) -> f64 {
    tick(1);
    x / (1.0 + (-x).exp())
}

pub fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `|got - want| / max(1, |want|)`, maximised: absolute for unit-scale
/// outputs, relative for large ones.
pub fn max_mixed_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len(), "length mismatch");
    got.iter().zip(want).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

/// Grouped 1-D convolution; returns `(out, out_len)`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d(
    x: &[f64],
    (batch, cin, len): (usize, usize, usize),
    w: &[f64],
    cout: usize,
    kernel: usize,
    bias: Option<&[f64]>,
    (stride, groups, pad_left, pad_right): (usize, usize, usize, usize),
) -> (Vec<f64>, usize) {
    let out_len = (len + pad_left + pad_right - kernel) / stride + 1;
    let (cin_g, cout_g) = (cin / groups, cout / groups);
    let mut out = vec![0.0; batch * cout * out_len];
    for b in 0..batch {
        for o in 0..cout {
            let g = o / cout_g;
            for t in 0..out_len {
                tick(bias.map_or(0, |_| 1));
                let mut acc = bias.map_or(0.0, |bb| bb[o]);
                for i in 0..cin_g {
                    let c = g * cin_g + i;
                    for k in 0..kernel {
                        tick(1);
                        let pos = (t * stride + k) as isize - pad_left as isize;
                        if pos >= 0 && (pos as usize) < len {
                            acc += w[(o * cin_g + i) * kernel + k] * x[(b * cin + c) * len + pos as usize];
                        }
                    }
                }
                out[(b * cout + o) * out_len + t] = acc;
            }
        }
    }
    (out, out_len)
}

/// Depthwise 2-D convolution with "same" zero padding.
pub fn dwconv2d(x: &[f64], (batch, ch, h, w): (usize, usize, usize, usize), wt: &[f64], (kh, kw): (usize, usize), bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    for b in 0..batch {
        for c in 0..ch {
            for i in 0..h {
                for j in 0..w {
                    tick(1);
                    let mut acc = bias[c];
                    for a in 0..kh {
                        for e in 0..kw {
                            tick(1);
                            let (ii, jj) = (i as isize + a as isize - ph, j as isize + e as isize - pw);
                            if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                                acc += wt[(c * kh + a) * kw + e] * x[((b * ch + c) * h + ii as usize) * w + jj as usize];
                            }
                        }
                    }
                    out[((b * ch + c) * h + i) * w + j] = acc;
                }
            }
        }
    }
    out
}

/// Batch norm with biased batch statistics over every axis but 1.
pub fn batchnorm_train(x: &[f64], (batch, ch, inner): (usize, usize, usize), gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = (batch * inner) as f64;
    let mut out = vec![0.0; x.len()];
    for c in 0..ch {
        let vals: Vec<f64> = (0..batch)
            .flat_map(|b| (0..inner).map(move |i| (b * ch + c) * inner + i))
            .map(|i| x[i])
            .collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        for b in 0..batch {
            for i in 0..inner {
                tick(1);
                let idx = (b * ch + c) * inner + i;
                out[idx] = gamma[c] * (x[idx] - mean) / (var + 1e-5).sqrt() + beta[c];
            }
        }
    }
    out
}

/// Linear map on the last axis: `x (rows, fin)`, `w (fout, fin)`.
pub fn linear(x: &[f64], fin: usize, w: &[f64], b: Option<&[f64]>, fout: usize) -> Vec<f64> {
    let rows = x.len() / fin;
    let mut out = vec![0.0; rows * fout];
    for r in 0..rows {
        for o in 0..fout {
            tick(fin + b.map_or(0, |_| 1));
            let mut acc = b.map_or(0.0, |b| b[o]);
            for i in 0..fin {
                acc += w[o * fin + i] * x[r * fin + i];
            }
            out[r * fout + o] = acc;
        }
    }
    out
}

/// The direct recurrence `h = exp(dt a) h + dt b u`, `y = c . h + d u`.
#[allow(clippy::too_many_arguments)]
pub fn selective_scan(
    u: &[f64],
    delta: &[f64],
    a: &[f64],
    bm: &[f64],
    cm: &[f64],
    d: &[f64],
    (batch, e, s, t): (usize, usize, usize, usize),
) -> Vec<f64> {
    let mut y = vec![0.0; batch * e * t];
    for b in 0..batch {
        for ch in 0..e {
            let mut h = vec![0.0; s];
            for step in 0..t {
                let i = (b * e + ch) * t + step;
                let mut acc = d[ch] * u[i];
                for k in 0..s {
                    let bs = (b * s + k) * t + step;
                    h[k] = (delta[i] * a[ch * s + k]).exp() * h[k] + delta[i] * bm[bs] * u[i];
                    acc += cm[bs] * h[k];
                }
                y[i] = acc;
            }
        }
    }
    y
}

/// Runs `f` on a constant copy of `x` in a fresh context of precision `F`
/// and returns the output as f64.
pub fn run_block<F: whar::Scalar>(
    store: &mut ParamStore,
    mode: Mode,
    x: &Tensor,
    f: impl FnOnce(&mut Ctx<'_, F>, whar::Var) -> whar::Result<whar::Var>,
) -> Vec<f64> {
    let mut ctx = Ctx::<F>::new(store, mode);
    let v = ctx.tape.constant(x.cast());
    let y = f(&mut ctx, v).expect("block forward");
    ctx.tape.value(y).data().iter().map(|v| v.as_f64()).collect()
}

pub mod blocks {
    //! References for the model blocks, reading weights from the store.

    use super::*;
    use whar::model::cfb::Cfb;
    use whar::model::config::CcfGrouping;
    use whar::model::csi::Csi;
    use whar::model::gta::Ssm;
    use whar::model::local_temporal::{Ccf, Ltfe};

    pub fn ltfe(blk: &Ltfe, store: &ParamStore, x: &[f64], (b, ch, t): (usize, usize, usize)) -> Vec<f64> {
        let c = &blk.conv;
        let bias = c.bias.map(|id| param(store, id));
        let (y, _) = conv1d(
            x,
            (b, ch, t),
            &param(store, c.weight),
            ch,
            c.kernel,
            bias.as_deref(),
            (1, ch, c.kernel / 2, c.kernel / 2),
        );
        y.into_iter().map(gelu).collect()
    }

    /// Dense per-group matmul of the grouped stage followed by the per-sensor
    /// merge, both with GELU.
    pub fn ccf(blk: &Ccf, store: &ParamStore, x: &[f64], (b, n, m, d, t): (usize, usize, usize, usize, usize), grouping: CcfGrouping) -> Vec<f64> {
        let ch = n * m * d;
        let (w1, b1) = (param(store, blk.group.weight), param(store, blk.group.bias.unwrap()));
        let (w2, b2) = (param(store, blk.merge.weight), param(store, blk.merge.bias.unwrap()));
        let idx = |bi: usize, c: usize, s: usize| (bi * ch + c) * t + s;
        let mut y = vec![0.0; x.len()];
        for bi in 0..b {
            for s in 0..t {
                for sn in 0..n {
                    for v in 0..m {
                        for o in 0..d {
                            let c_out = (sn * m + v) * d + o;
                            let acc = match grouping {
                                CcfGrouping::SensorVariable => {
                                    b1[c_out] + (0..d).map(|i| w1[c_out * d + i] * x[idx(bi, (sn * m + v) * d + i, s)]).sum::<f64>()
                                }
                                CcfGrouping::Variable => {
                                    // group v holds the (sensor, channel) pairs of variable v
                                    let row = v * n * d + sn * d + o;
                                    b1[row]
                                        + (0..n)
                                            .flat_map(|sn2| (0..d).map(move |i| (sn2, i)))
                                            .map(|(sn2, i)| w1[row * n * d + sn2 * d + i] * x[idx(bi, (sn2 * m + v) * d + i, s)])
                                            .sum::<f64>()
                                }
                            };
                            y[idx(bi, c_out, s)] = gelu(acc);
                        }
                    }
                }
            }
        }
        let md = m * d;
        let mut z = vec![0.0; x.len()];
        for bi in 0..b {
            for s in 0..t {
                for sn in 0..n {
                    for j in 0..md {
                        let o = sn * md + j;
                        let acc = b2[o] + (0..md).map(|i| w2[o * md + i] * y[idx(bi, sn * md + i, s)]).sum::<f64>();
                        z[idx(bi, o, s)] = gelu(acc);
                    }
                }
            }
        }
        z
    }

    /// Train-mode block (batch statistics) on `(B, C, H, W)`.
    pub fn cfb(blk: &Cfb, store: &ParamStore, x: &[f64], (b, c, h, w): (usize, usize, usize, usize)) -> Vec<f64> {
        let cm = blk.squeezed;
        let hw = h * w;
        let (sq, _) = conv1d(x, (b, c, hw), &param(store, blk.squeeze.weight), cm, 1, None, (1, 1, 0, 0));
        let z = batchnorm_train(&sq, (b, cm, hw), &param(store, blk.squeeze_bn.gamma), &param(store, blk.squeeze_bn.beta));
        let mut order: Vec<f64> = z.into_iter().map(gelu).collect();
        let mut orders = vec![order.clone()];
        for dw in &blk.recursion {
            let y = dwconv2d(&order, (b, cm, h, w), &param(store, dw.weight), (dw.kh, dw.kw), &param(store, dw.bias));
            order = y.into_iter().map(gelu).collect();
            orders.push(order.clone());
        }
        let k1 = orders.len();
        let mut u = vec![0.0; b * k1 * cm * hw];
        for bi in 0..b {
            for (k, o) in orders.iter().enumerate() {
                for ci in 0..cm {
                    for p in 0..hw {
                        u[((bi * k1 + k) * cm + ci) * hw + p] = o[(bi * cm + ci) * hw + p];
                    }
                }
            }
        }
        let (f, _) = conv1d(&u, (b, k1 * cm, hw), &param(store, blk.fuse.weight), c, 1, None, (1, 1, 0, 0));
        let f = batchnorm_train(&f, (b, c, hw), &param(store, blk.fuse_bn.gamma), &param(store, blk.fuse_bn.beta));
        tick(x.len());
        x.iter().zip(f).map(|(xi, fi)| xi + gelu(fi)).collect()
    }

    /// Explicit double-loop softmax attention with residual; `x (B, N, F)`.
    pub fn csi(blk: &Csi, store: &ParamStore, x: &[f64], (b, n, f): (usize, usize, usize), scaled: bool) -> Vec<f64> {
        let dk = blk.d_k;
        let lin = |l: &whar::layers::Linear, v: &[f64], fin: usize, fout: usize| {
            linear(v, fin, &param(store, l.weight), l.bias.map(|id| param(store, id)).as_deref(), fout)
        };
        let q = lin(&blk.q, x, f, dk);
        let k = lin(&blk.k, x, f, dk);
        let v = lin(&blk.v, x, f, dk);
        let mut mixed = vec![0.0; b * n * dk];
        for bi in 0..b {
            for i in 0..n {
                let mut logits = vec![0.0; n];
                for (j, l) in logits.iter_mut().enumerate() {
                    tick(dk);
                    for e in 0..dk {
                        *l += q[(bi * n + i) * dk + e] * k[(bi * n + j) * dk + e];
                    }
                    if scaled {
                        tick(1);
                        *l /= (dk as f64).sqrt();
                    }
                }
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
                tick(n);
                for j in 0..n {
                    tick(dk);
                    let a = (logits[j] - mx).exp() / z;
                    for e in 0..dk {
                        mixed[(bi * n + i) * dk + e] += a * v[(bi * n + j) * dk + e];
                    }
                }
            }
        }
        let o = lin(&blk.w, &mixed, dk, f);
        tick(x.len());
        x.iter().zip(o).map(|(a, b)| a + b).collect()
    }

    /// Input-dependent maps followed by the direct recurrence; `u (B, E, T)`.
    pub fn ssm(blk: &Ssm, store: &ParamStore, u: &[f64], (b, e, t): (usize, usize, usize)) -> Vec<f64> {
        let s = blk.state;
        let pw = |c: &whar::layers::Conv1d, cout: usize| {
            let bias = c.bias.map(|id| param(store, id));
            conv1d(u, (b, e, t), &param(store, c.weight), cout, 1, bias.as_deref(), (1, 1, 0, 0)).0
        };
        let delta: Vec<f64> = pw(&blk.dt, e).into_iter().map(softplus).collect();
        let bm = pw(&blk.b_proj, s);
        let cm = pw(&blk.c_proj, s);
        let a: Vec<f64> = param(store, blk.a_log).into_iter().map(|v| -v.exp()).collect();
        selective_scan(u, &delta, &a, &bm, &cm, &param(store, blk.d_skip), (b, e, s, t))
    }
}

pub mod oracle {
    //! Random tiny instances of each block, scored against the references.

    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use whar::model::cfb::Cfb;
    use whar::model::config::{CcfGrouping, CfbConfig, CfbKernel, CsiConfig, ModelConfig};
    use whar::model::csi::Csi;
    use whar::model::gta::Ssm;
    use whar::model::local_temporal::{Ccf, Ltfe};

    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub enum Block {
        Cfb,
        Ltfe,
        Ccf,
        Csi,
        Scan,
    }

    impl Block {
        pub const ALL: [Block; 5] = [Block::Cfb, Block::Ltfe, Block::Ccf, Block::Csi, Block::Scan];
    }

    fn dims_cfg(rng: &mut ChaCha8Rng) -> (ModelConfig, usize, usize, usize) {
        let mut cfg = ModelConfig::default();
        cfg.model.sensors = rng.random_range(1..=3);
        cfg.model.variables = rng.random_range(1..=3);
        cfg.mfe.channels = rng.random_range(1..=4);
        cfg.ltfe.kernel = [1, 3, 5, 7][rng.random_range(0..4)];
        (cfg.clone(), cfg.model.sensors, cfg.model.variables, cfg.mfe.channels)
    }

    /// Replaces every trainable tensor (BN affine included) with fresh
    /// noise so no parameter sits at a special value.
    fn scramble(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for p in store.iter_mut().filter(|p| p.trainable) {
            let shape = p.value.shape().to_vec();
            p.value = Tensor::randn(&shape, 0.6, rng);
        }
    }

    /// Largest absolute deviation of one random instance of `block`.
    pub fn instance_error(block: Block, rng: &mut ChaCha8Rng) -> f64 {
        let mut store = ParamStore::new();
        let b = rng.random_range(1..=3);
        let t = rng.random_range(1..=9);
        match block {
            Block::Cfb => {
                let r = [1, 2, 4][rng.random_range(0..3)];
                let c = r * rng.random_range(1..=3);
                let cfg = CfbConfig {
                    r,
                    k: rng.random_range(0..=3),
                    kernel: if rng.random_bool(0.5) { CfbKernel::Square3 } else { CfbKernel::Temporal3 },
                };
                let blk = Cfb::new("cfb", c, &cfg, &mut store, rng).unwrap();
                scramble(&mut store, rng);
                let h = rng.random_range(1..=4);
                let w = t + 1;
                let x = Tensor::randn(&[b, c, h, w], 1.0, rng);
                let got = run_block::<f32>(&mut store, Mode::Train, &x, |ctx, v| blk.forward(ctx, v));
                max_mixed_err(&got, &blocks::cfb(&blk, &store, &to_f64(&x), (b, c, h, w)))
            }
            Block::Ltfe => {
                let (cfg, n, m, d) = dims_cfg(rng);
                let blk = Ltfe::new(&cfg, &mut store, rng).unwrap();
                scramble(&mut store, rng);
                let ch = n * m * d;
                let x = Tensor::randn(&[b, ch, t], 1.0, rng);
                let got = run_block::<f32>(&mut store, Mode::Train, &x, |ctx, v| blk.forward(ctx, v));
                max_mixed_err(&got, &blocks::ltfe(&blk, &store, &to_f64(&x), (b, ch, t)))
            }
            Block::Ccf => {
                let (mut cfg, n, m, d) = dims_cfg(rng);
                let grouping = if rng.random_bool(0.5) { CcfGrouping::SensorVariable } else { CcfGrouping::Variable };
                cfg.ccf.grouping = grouping;
                let blk = Ccf::new(&cfg, &mut store, rng).unwrap();
                scramble(&mut store, rng);
                let x = Tensor::randn(&[b, n * m * d, t], 1.0, rng);
                let got = run_block::<f32>(&mut store, Mode::Train, &x, |ctx, v| blk.forward(ctx, v));
                max_mixed_err(&got, &blocks::ccf(&blk, &store, &to_f64(&x), (b, n, m, d, t), grouping))
            }
            Block::Csi => {
                let n = rng.random_range(1..=5);
                let f = rng.random_range(1..=8);
                let cfg = CsiConfig {
                    d_k: rng.random_range(1..=6),
                    scaled: rng.random_bool(0.5),
                };
                let blk = Csi::new(f, &cfg, &mut store, rng);
                scramble(&mut store, rng);
                let x = Tensor::randn(&[b, n, f], 1.0, rng);
                let got = run_block::<f32>(&mut store, Mode::Train, &x, |ctx, v| blk.forward(ctx, v));
                max_mixed_err(&got, &blocks::csi(&blk, &store, &to_f64(&x), (b, n, f), cfg.scaled))
            }
            Block::Scan => {
                let e = rng.random_range(1..=4);
                let s = rng.random_range(1..=4);
                let blk = Ssm::new("ssm", e, s, &mut store, rng).unwrap();
                scramble(&mut store, rng);
                let x = Tensor::randn(&[b, e, t], 1.0, rng);
                let got = run_block::<f32>(&mut store, Mode::Train, &x, |ctx, v| blk.forward(ctx, v));
                max_mixed_err(&got, &blocks::ssm(&blk, &store, &to_f64(&x), (b, e, t)))
            }
        }
    }

    /// Worst deviation over `instances` random instances.
    pub fn max_error(block: Block, instances: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(block as u64);
        (0..instances).map(|_| instance_error(block, &mut rng)).fold(0.0, f64::max)
    }
}

/// Macro-F1 by scanning the samples once per class; absent classes score 0.
pub fn brute_macro_f1(pred: &[usize], labels: &[usize], classes: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..classes {
        let (mut tp, mut fp, mut fnn) = (0u64, 0u64, 0u64);
        for (&p, &t) in pred.iter().zip(labels) {
            match (p == k, t == k) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
                _ => {}
            }
        }
        let den = 2 * tp + fp + fnn;
        total += if den == 0 { 0.0 } else { (2 * tp) as f64 / den as f64 };
    }
    total / classes as f64
}

/// Random prediction/label vectors for the metrics oracle.
pub fn random_predictions(rng: &mut impl rand::Rng) -> (Vec<usize>, Vec<usize>, usize) {
    let classes = rng.random_range(2..=8);
    let n = rng.random_range(1..=60);
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let pred = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (pred, labels, classes)
}
