//! Grouped 1-D convolution and 2-D depthwise convolution.

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Stride, grouping and (possibly asymmetric) zero padding of a 1-D conv.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvOpts {
    pub stride: usize,
    pub groups: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvOpts {
    pub fn new(stride: usize, groups: usize, padding: usize) -> Self {
        ConvOpts {
            stride,
            groups,
            pad_left: padding,
            pad_right: padding,
        }
    }

    /// Left-only padding so output `t` sees inputs `<= t`.
    pub fn causal(kernel: usize, groups: usize) -> Self {
        ConvOpts {
            stride: 1,
            groups,
            pad_left: kernel - 1,
            pad_right: 0,
        }
    }

    /// `floor((L + pads - P) / stride) + 1`
    pub fn out_len(&self, len: usize, kernel: usize) -> usize {
        (len + self.pad_left + self.pad_right - kernel) / self.stride + 1
    }
}

/// Output positions `t` whose tap `k` reads a real (non-padding) input.
#[inline]
fn valid_range(k: usize, len: usize, out_len: usize, opts: &ConvOpts) -> (usize, usize) {
    let s = opts.stride;
    let lo = if opts.pad_left > k {
        (opts.pad_left - k).div_ceil(s)
    } else {
        0
    };
    if len + opts.pad_left < k + 1 {
        return (0, 0);
    }
    let hi = ((len - 1 + opts.pad_left - k) / s + 1).min(out_len);
    (lo.min(hi), hi)
}

struct Dims {
    batch: usize,
    cin: usize,
    len: usize,
    cout: usize,
    kernel: usize,
    out_len: usize,
    cin_g: usize,
    cout_g: usize,
}

fn conv1d_dims(x: &[usize], w: &[usize], b: Option<&[usize]>, opts: &ConvOpts) -> Result<Dims> {
    let op = "conv1d";
    if x.len() != 3 {
        return Err(Error::shape(op, format!("input must be (batch, channels, length), got {x:?}")));
    }
    if w.len() != 3 {
        return Err(Error::shape(op, format!("weight must be (out, in/groups, kernel), got {w:?}")));
    }
    let (batch, cin, len) = (x[0], x[1], x[2]);
    let (cout, kernel) = (w[0], w[2]);
    let g = opts.groups;
    if g == 0 || opts.stride == 0 {
        return Err(Error::shape(op, "groups and stride must be positive"));
    }
    if cin % g != 0 {
        return Err(Error::shape(op, format!("input channels (axis 1) {cin} not divisible by groups {g}")));
    }
    if cout % g != 0 {
        return Err(Error::shape(op, format!("output channels (weight axis 0) {cout} not divisible by groups {g}")));
    }
    if w[1] != cin / g {
        return Err(Error::shape(
            op,
            format!("weight axis 1 is {} but input channels / groups = {}", w[1], cin / g),
        ));
    }
    if let Some(b) = b {
        if b != [cout] {
            return Err(Error::shape(op, format!("bias must be ({cout}), got {b:?}")));
        }
    }
    if len + opts.pad_left + opts.pad_right < kernel {
        return Err(Error::shape(
            op,
            format!(
                "length (axis 2) {len} plus padding {} is shorter than kernel {kernel}",
                opts.pad_left + opts.pad_right
            ),
        ));
    }
    Ok(Dims {
        batch,
        cin,
        len,
        cout,
        kernel,
        out_len: opts.out_len(len, kernel),
        cin_g: cin / g,
        cout_g: cout / g,
    })
}

fn conv1d_forward<F: Scalar>(x: &[F], w: &[F], b: Option<&[F]>, d: &Dims, opts: &ConvOpts) -> Vec<F> {
    let mut out = vec![F::zero(); d.batch * d.cout * d.out_len];
    for bi in 0..d.batch {
        for o in 0..d.cout {
            let grp = o / d.cout_g;
            let row = &mut out[(bi * d.cout + o) * d.out_len..(bi * d.cout + o + 1) * d.out_len];
            if let Some(b) = b {
                row.iter_mut().for_each(|v| *v = b[o]);
            }
            for ic in 0..d.cin_g {
                let ci = grp * d.cin_g + ic;
                let xrow = &x[(bi * d.cin + ci) * d.len..(bi * d.cin + ci + 1) * d.len];
                for k in 0..d.kernel {
                    let wv = w[(o * d.cin_g + ic) * d.kernel + k];
                    let (t0, t1) = valid_range(k, d.len, d.out_len, opts);
                    if t0 >= t1 {
                        continue;
                    }
                    if opts.stride == 1 {
                        let src = &xrow[t0 + k - opts.pad_left..t1 + k - opts.pad_left];
                        for (acc, &xv) in row[t0..t1].iter_mut().zip(src) {
                            *acc += wv * xv;
                        }
                    } else {
                        for t in t0..t1 {
                            row[t] += wv * xrow[t * opts.stride + k - opts.pad_left];
                        }
                    }
                }
            }
        }
    }
    out
}

type Grads<F> = (Option<Vec<F>>, Option<Vec<F>>, Option<Vec<F>>);

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    opts: &ConvOpts,
    out_shape: &[usize],
    g: &[F],
    want_x: bool,
    want_w: bool,
    want_b: bool,
) -> Grads<F> {
    let d = conv1d_dims(x.shape(), w.shape(), None, opts).expect("validated in forward");
    debug_assert_eq!(out_shape[2], d.out_len);
    let (xd, wd) = (x.data(), w.data());
    let mut gx = want_x.then(|| vec![F::zero(); xd.len()]);
    let mut gw = want_w.then(|| vec![F::zero(); wd.len()]);
    let mut gb = want_b.then(|| vec![F::zero(); d.cout]);
    for bi in 0..d.batch {
        for o in 0..d.cout {
            let grp = o / d.cout_g;
            let grow = &g[(bi * d.cout + o) * d.out_len..(bi * d.cout + o + 1) * d.out_len];
            if let Some(gb) = gb.as_mut() {
                gb[o] += grow.iter().copied().sum();
            }
            for ic in 0..d.cin_g {
                let ci = grp * d.cin_g + ic;
                let base = (bi * d.cin + ci) * d.len;
                for k in 0..d.kernel {
                    let widx = (o * d.cin_g + ic) * d.kernel + k;
                    let (t0, t1) = valid_range(k, d.len, d.out_len, opts);
                    if t0 >= t1 {
                        continue;
                    }
                    let gseg = &grow[t0..t1];
                    if opts.stride == 1 {
                        let lo = base + t0 + k - opts.pad_left;
                        let hi = lo + (t1 - t0);
                        if let Some(gw) = gw.as_mut() {
                            gw[widx] += gseg.iter().zip(&xd[lo..hi]).map(|(&a, &b)| a * b).sum::<F>();
                        }
                        if let Some(gx) = gx.as_mut() {
                            let wv = wd[widx];
                            for (dst, &gv) in gx[lo..hi].iter_mut().zip(gseg) {
                                *dst += wv * gv;
                            }
                        }
                    } else {
                        let start = base + t0 * opts.stride + k - opts.pad_left;
                        if let Some(gw) = gw.as_mut() {
                            let xs = xd[start..].iter().step_by(opts.stride);
                            gw[widx] += gseg.iter().zip(xs).map(|(&a, &b)| a * b).sum::<F>();
                        }
                        if let Some(gx) = gx.as_mut() {
                            let wv = wd[widx];
                            for (dst, &gv) in gx[start..].iter_mut().step_by(opts.stride).zip(gseg) {
                                *dst += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

fn dwconv2d_check(x: &[usize], w: &[usize], b: Option<&[usize]>) -> Result<()> {
    let op = "depthwise_conv2d";
    if x.len() != 4 {
        return Err(Error::shape(op, format!("input must be (batch, channels, height, width), got {x:?}")));
    }
    if w.len() != 3 || w[0] != x[1] {
        return Err(Error::shape(
            op,
            format!("weight must be ({}, kh, kw) for {} input channels, got {w:?}", x[1], x[1]),
        ));
    }
    if w[1].is_multiple_of(2) || w[2].is_multiple_of(2) {
        return Err(Error::shape(op, format!("kernel {}x{} must have odd extents", w[1], w[2])));
    }
    if let Some(b) = b {
        if b != [x[1]] {
            return Err(Error::shape(op, format!("bias must be ({}), got {b:?}", x[1])));
        }
    }
    Ok(())
}

pub(crate) fn dwconv2d_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    g: &[F],
    want_x: bool,
    want_w: bool,
    want_b: bool,
) -> Grads<F> {
    let [batch, ch, h, wd_] = x.shape().try_into().expect("4-d input");
    let (kh, kw) = (w.shape()[1], w.shape()[2]);
    let (ph, pw) = (kh / 2, kw / 2);
    let (xd, wd) = (x.data(), w.data());
    let mut gx = want_x.then(|| vec![F::zero(); xd.len()]);
    let mut gw = want_w.then(|| vec![F::zero(); wd.len()]);
    let mut gb = want_b.then(|| vec![F::zero(); ch]);
    for bi in 0..batch {
        for c in 0..ch {
            let plane = (bi * ch + c) * h * wd_;
            if let Some(gb) = gb.as_mut() {
                gb[c] += g[plane..plane + h * wd_].iter().copied().sum();
            }
            for u in 0..kh {
                for v in 0..kw {
                    let widx = (c * kh + u) * kw + v;
                    let wv = wd[widx];
                    let mut acc = F::zero();
                    for i in 0..h {
                        let si = i + u;
                        if si < ph || si - ph >= h {
                            continue;
                        }
                        for j in 0..wd_ {
                            let sj = j + v;
                            if sj < pw || sj - pw >= wd_ {
                                continue;
                            }
                            let src = plane + (si - ph) * wd_ + (sj - pw);
                            let go = g[plane + i * wd_ + j];
                            acc += go * xd[src];
                            if let Some(gx) = gx.as_mut() {
                                gx[src] += wv * go;
                            }
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

impl<F: Scalar> Tape<F> {
    /// Grouped 1-D convolution: `x (B, Cin, L)`, `w (Cout, Cin/groups, P)`,
    /// optional bias `(Cout)`. Output length is `floor((L + pads - P)/stride) + 1`.
    /// With `groups == Cin == Cout` this is a depthwise convolution.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, opts: ConvOpts) -> Result<Var> {
        let d = conv1d_dims(self.shape(x), self.shape(w), b.map(|b| self.shape(b)), &opts)?;
        let out = conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &d,
            &opts,
        );
        let v = Tensor::new(&[d.batch, d.cout, d.out_len], out)?;
        Ok(self.push(v, Op::Conv1d { x, w, b, opts }))
    }

    /// Kernel-size-1 grouped convolution: a per-timestep grouped linear map.
    pub fn pointwise_conv(&mut self, x: Var, w: Var, b: Option<Var>, groups: usize) -> Result<Var> {
        let ws = self.shape(w);
        if ws.len() != 3 || ws[2] != 1 {
            return Err(Error::shape(
                "pointwise_conv",
                format!("weight must be (out, in/groups, 1), got {ws:?}"),
            ));
        }
        self.conv1d(x, w, b, ConvOpts::new(1, groups, 0))
    }

    /// Depthwise 2-D convolution with "same" zero padding:
    /// `x (B, C, H, W)`, `w (C, kh, kw)` with odd kernel extents.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        dwconv2d_check(self.shape(x), self.shape(w), b.map(|b| self.shape(b)))?;
        let [batch, ch, h, wd_] = self.shape(x).try_into().expect("checked");
        let (kh, kw) = (self.shape(w)[1], self.shape(w)[2]);
        let (ph, pw) = (kh / 2, kw / 2);
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let bd = b.map(|b| self.value(b).data());
        let mut out = vec![F::zero(); xd.len()];
        for bi in 0..batch {
            for c in 0..ch {
                let plane = (bi * ch + c) * h * wd_;
                if let Some(bd) = bd {
                    out[plane..plane + h * wd_].iter_mut().for_each(|v| *v = bd[c]);
                }
                for u in 0..kh {
                    for v in 0..kw {
                        let wv = wd[(c * kh + u) * kw + v];
                        for i in 0..h {
                            let si = i + u;
                            if si < ph || si - ph >= h {
                                continue;
                            }
                            let j0 = pw.saturating_sub(v);
                            let j1 = (wd_ + pw).saturating_sub(v).min(wd_);
                            if j0 >= j1 {
                                continue;
                            }
                            let src = plane + (si - ph) * wd_ + j0 + v - pw;
                            let dst = plane + i * wd_ + j0;
                            for (o, &xv) in out[dst..dst + (j1 - j0)].iter_mut().zip(&xd[src..src + (j1 - j0)]) {
                                *o += wv * xv;
                            }
                        }
                    }
                }
            }
        }
        let v = Tensor::new(&[batch, ch, h, wd_], out)?;
        Ok(self.push(v, Op::DwConv2d { x, w, b }))
    }
}
