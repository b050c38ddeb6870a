//! Layer implementations. Shape conventions: 2-d feature maps are
//! (B, C, H, W), 1-d are (B, C, L), dense activations are (B, F).
//! Stride-2 convolutions use ceil-mode zero padding, out = ceil(in/stride).

use super::{FwdCtx, Mode, Param, ParamSet};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;

fn expect_rank<T: Scalar>(x: &Tensor<T>, rank: usize, context: &str) -> Result<()> {
    if x.shape().len() != rank {
        return Err(Error::shape(
            context,
            format!("rank-{rank} tensor"),
            format!("{:?}", x.shape()),
        ));
    }
    Ok(())
}

/// ceil-mode padding split for one spatial dimension.
fn pad_split(input: usize, kernel: usize, stride: usize) -> (usize, usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2, total)
}

/// Output index range [lo, hi) for which `i·stride + tap − pad` lands in
/// [0, input).
#[inline]
fn strided_range(input: usize, out: usize, stride: usize, tap: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > tap {
        (pad - tap).div_ceil(stride)
    } else {
        0
    };
    let max_pos = input as isize - 1 - tap as isize + pad as isize;
    if max_pos < 0 {
        return (0, 0);
    }
    let hi = ((max_pos as usize) / stride + 1).min(out);
    (lo.min(hi), hi)
}

/// Phase-split copy of an (h, w) plane for stride-s column access: phase p
/// holds the columns ≡ p (mod s), so a stride-s run over the original
/// plane is a contiguous slice of one phase. Identity (no copy) for s = 1.
struct PhaseSplit {
    s: usize,
    h: usize,
    w: usize,
    pw: usize,
}

impl PhaseSplit {
    fn new(s: usize, h: usize, w: usize) -> Self {
        PhaseSplit {
            s,
            h,
            w,
            pw: if s > 1 { w.div_ceil(s) } else { 0 },
        }
    }

    fn scratch<T: Scalar>(&self) -> Vec<T> {
        vec![T::zero(); self.s.saturating_sub(1).min(1) * self.s * self.h * self.pw]
    }

    fn fill<T: Scalar>(&self, plane: &[T], scratch: &mut [T]) {
        if self.s == 1 {
            return;
        }
        for p in 0..self.s {
            let count = (self.w + self.s - 1 - p) / self.s;
            for r in 0..self.h {
                let dst_base = (p * self.h + r) * self.pw;
                let src_base = r * self.w;
                for t in 0..count {
                    scratch[dst_base + t] = plane[src_base + t * self.s + p];
                }
            }
        }
    }

    /// Start offset and length of the run for output columns [j_lo, j_hi):
    /// into the plane itself for s = 1, into the scratch otherwise.
    #[inline]
    fn range(&self, ih: usize, j_lo: usize, j_hi: usize, tap: usize, pad: usize) -> (usize, usize) {
        let n = j_hi - j_lo;
        if self.s == 1 {
            (ih * self.w + j_lo + tap - pad, n)
        } else {
            let start = j_lo * self.s + tap - pad;
            let p = start % self.s;
            let t = start / self.s;
            ((p * self.h + ih) * self.pw + t, n)
        }
    }

    /// Scatter phase-major gradients back into the interleaved plane.
    fn interleave_add<T: Scalar>(&self, scratch: &[T], plane: &mut [T]) {
        for p in 0..self.s {
            let count = (self.w + self.s - 1 - p) / self.s;
            for r in 0..self.h {
                let src_base = (p * self.h + r) * self.pw;
                let dst_base = r * self.w;
                for t in 0..count {
                    plane[dst_base + t * self.s + p] += scratch[src_base + t];
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Conv2d

pub struct Conv2d<T> {
    pub weight: Param<T>, // (O, C, k, k)
    pub bias: Param<T>,   // (O)
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

pub struct Conv2dCache<T> {
    x: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut Stream) -> Self {
        let std = super::he_std(in_ch * kernel * kernel);
        Conv2d {
            weight: Param::new(Tensor::randn(&[out_ch, in_ch, kernel, kernel], std, rng)),
            bias: Param::new(Tensor::zeros(&[out_ch])),
            in_ch,
            out_ch,
            kernel,
            stride,
        }
    }

    pub fn forward(&self, x: Tensor<T>) -> Result<(Tensor<T>, Conv2dCache<T>)> {
        expect_rank(&x, 4, "conv2d input")?;
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        if c != self.in_ch {
            return Err(Error::shape("conv2d channels", self.in_ch, c));
        }
        let (oh, pt, _) = pad_split(h, self.kernel, self.stride);
        let (ow, pl, _) = pad_split(w, self.kernel, self.stride);
        let mut y = Tensor::zeros(&[b, self.out_ch, oh, ow]);
        let k = self.kernel;
        let s = self.stride;
        let xd = x.data();
        let wd = self.weight.w.data();
        let bd = self.bias.w.data();
        // Valid-range hoisting keeps the hot inner loops branch-free, and
        // stride-2 inputs are phase-split per row so every inner loop runs
        // over contiguous memory and vectorizes.
        let phase = PhaseSplit::new(s, h, w);
        let mut scratch: Vec<T> = phase.scratch();
        for bi in 0..b {
            {
                let yd = y.data_mut();
                for o in 0..self.out_ch {
                    let y_base = ((bi * self.out_ch + o) * oh) * ow;
                    for v in &mut yd[y_base..y_base + oh * ow] {
                        *v = bd[o];
                    }
                }
            }
            for ci in 0..c {
                let x_base = (bi * c + ci) * h * w;
                let x_plane = &xd[x_base..x_base + h * w];
                phase.fill(x_plane, &mut scratch);
                let yd = y.data_mut();
                for o in 0..self.out_ch {
                    let y_base = ((bi * self.out_ch + o) * oh) * ow;
                    for u in 0..k {
                        let (i_lo, i_hi) = strided_range(h, oh, s, u, pt);
                        for vk in 0..k {
                            let wv = wd[((o * c + ci) * k + u) * k + vk];
                            let (j_lo, j_hi) = strided_range(w, ow, s, vk, pl);
                            if j_hi <= j_lo {
                                continue;
                            }
                            for i in i_lo..i_hi {
                                let ih = i * s + u - pt;
                                let y_row = y_base + i * ow;
                                let (rs, n) = phase.range(ih, j_lo, j_hi, vk, pl);
                                let src = if s == 1 {
                                    &x_plane[rs..rs + n]
                                } else {
                                    &scratch[rs..rs + n]
                                };
                                let dst = &mut yd[y_row + j_lo..y_row + j_hi];
                                for (d, sv) in dst.iter_mut().zip(src) {
                                    *d += wv * *sv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok((y, Conv2dCache { x }))
    }

    pub fn backward(&mut self, cache: &Conv2dCache<T>, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = &cache.x;
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, pt, _) = pad_split(h, self.kernel, self.stride);
        let (ow, pl, _) = pad_split(w, self.kernel, self.stride);
        if gy.shape() != [b, self.out_ch, oh, ow] {
            return Err(Error::shape(
                "conv2d upstream grad",
                format!("{:?}", [b, self.out_ch, oh, ow]),
                format!("{:?}", gy.shape()),
            ));
        }
        let mut gx = Tensor::zeros(x.shape());
        let k = self.kernel;
        let s = self.stride;
        let xd = x.data();
        let gyd = gy.data();
        let wd = self.weight.w.data();
        let gwd = self.weight.g.data_mut();
        let gbd = self.bias.g.data_mut();
        let gxd = gx.data_mut();
        for bi in 0..b {
            for o in 0..self.out_ch {
                let y_base = ((bi * self.out_ch + o) * oh) * ow;
                let mut db = T::zero();
                for &g in &gyd[y_base..y_base + oh * ow] {
                    db += g;
                }
                gbd[o] += db;
            }
        }
        let phase = PhaseSplit::new(s, h, w);
        let mut scratch: Vec<T> = phase.scratch();
        let mut gx_scratch: Vec<T> = phase.scratch();
        for bi in 0..b {
            for ci in 0..c {
                let x_base = (bi * c + ci) * h * w;
                let x_plane = &xd[x_base..x_base + h * w];
                phase.fill(x_plane, &mut scratch);
                for v in gx_scratch.iter_mut() {
                    *v = T::zero();
                }
                for o in 0..self.out_ch {
                    let y_base = ((bi * self.out_ch + o) * oh) * ow;
                    for u in 0..k {
                        let (i_lo, i_hi) = strided_range(h, oh, s, u, pt);
                        for vk in 0..k {
                            let widx = ((o * c + ci) * k + u) * k + vk;
                            let wv = wd[widx];
                            let (j_lo, j_hi) = strided_range(w, ow, s, vk, pl);
                            if j_hi <= j_lo {
                                continue;
                            }
                            let mut dw = T::zero();
                            for i in i_lo..i_hi {
                                let ih = i * s + u - pt;
                                let y_row = y_base + i * ow;
                                let g_row = &gyd[y_row + j_lo..y_row + j_hi];
                                let (rs, n) = phase.range(ih, j_lo, j_hi, vk, pl);
                                if s == 1 {
                                    let x_part = &xd[x_base + rs..x_base + rs + n];
                                    let gx_part = &mut gxd[x_base + rs..x_base + rs + n];
                                    for ((g, xv), gxv) in
                                        g_row.iter().zip(x_part).zip(gx_part.iter_mut())
                                    {
                                        dw += *g * *xv;
                                        *gxv += wv * *g;
                                    }
                                } else {
                                    let x_part = &scratch[rs..rs + n];
                                    let gx_part = &mut gx_scratch[rs..rs + n];
                                    for ((g, xv), gxv) in
                                        g_row.iter().zip(x_part).zip(gx_part.iter_mut())
                                    {
                                        dw += *g * *xv;
                                        *gxv += wv * *g;
                                    }
                                }
                            }
                            gwd[widx] += dw;
                        }
                    }
                }
                if s > 1 {
                    phase.interleave_add(&gx_scratch, &mut gxd[x_base..x_base + h * w]);
                }
            }
        }
        Ok(gx)
    }

    /// Output spatial size for an input size (ceil-mode).
    pub fn out_size(&self, input: usize) -> usize {
        input.div_ceil(self.stride)
    }
}

impl<T: Scalar> ParamSet<T> for Conv2d<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(format!("{prefix}.w"), &mut self.weight);
        f(format!("{prefix}.b"), &mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// Conv1d (dilated, stride 1, same length, odd kernel)

pub struct Conv1d<T> {
    pub weight: Param<T>, // (O, C, k)
    pub bias: Param<T>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
}

pub struct Conv1dCache<T> {
    x: Tensor<T>,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut Stream,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "conv1d kernel {kernel} must be odd for same-length output"
            )));
        }
        if dilation < 1 {
            return Err(Error::Config(format!("conv1d dilation {dilation} < 1")));
        }
        let std = super::he_std(in_ch * kernel);
        Ok(Conv1d {
            weight: Param::new(Tensor::randn(&[out_ch, in_ch, kernel], std, rng)),
            bias: Param::new(Tensor::zeros(&[out_ch])),
            in_ch,
            out_ch,
            kernel,
            dilation,
        })
    }

    pub fn zero_init(mut self) -> Self {
        self.weight.w.fill(T::zero());
        self
    }

    pub fn forward(&self, x: Tensor<T>) -> Result<(Tensor<T>, Conv1dCache<T>)> {
        expect_rank(&x, 3, "conv1d input")?;
        let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if c != self.in_ch {
            return Err(Error::shape("conv1d channels", self.in_ch, c));
        }
        let mut y = Tensor::zeros(&[b, self.out_ch, l]);
        let half = (self.kernel / 2) as isize;
        let xd = x.data();
        let wd = self.weight.w.data();
        let bd = self.bias.w.data();
        let yd = y.data_mut();
        for bi in 0..b {
            for o in 0..self.out_ch {
                let y_row = (bi * self.out_ch + o) * l;
                for v in &mut yd[y_row..y_row + l] {
                    *v = bd[o];
                }
                for ci in 0..c {
                    let x_row = (bi * c + ci) * l;
                    for t in 0..self.kernel {
                        let wv = wd[(o * c + ci) * self.kernel + t];
                        let off = (t as isize - half) * self.dilation as isize;
                        let (lo, hi) = valid_range(l, off);
                        if hi <= lo {
                            continue;
                        }
                        let src_lo = (x_row as isize + lo as isize + off) as usize;
                        let src_hi = (x_row as isize + hi as isize + off) as usize;
                        let src = &xd[src_lo..src_hi];
                        let dst = &mut yd[y_row + lo..y_row + hi];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * *s;
                        }
                    }
                }
            }
        }
        Ok((y, Conv1dCache { x }))
    }

    pub fn backward(&mut self, cache: &Conv1dCache<T>, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = &cache.x;
        let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if gy.shape() != [b, self.out_ch, l] {
            return Err(Error::shape(
                "conv1d upstream grad",
                format!("{:?}", [b, self.out_ch, l]),
                format!("{:?}", gy.shape()),
            ));
        }
        let mut gx = Tensor::zeros(x.shape());
        let half = (self.kernel / 2) as isize;
        let xd = x.data();
        let gyd = gy.data();
        let wd = self.weight.w.data();
        let gwd = self.weight.g.data_mut();
        let gbd = self.bias.g.data_mut();
        let gxd = gx.data_mut();
        for bi in 0..b {
            for o in 0..self.out_ch {
                let y_row = (bi * self.out_ch + o) * l;
                let mut db = T::zero();
                for &g in &gyd[y_row..y_row + l] {
                    db += g;
                }
                gbd[o] += db;
                for ci in 0..c {
                    let x_row = (bi * c + ci) * l;
                    for t in 0..self.kernel {
                        let widx = (o * c + ci) * self.kernel + t;
                        let wv = wd[widx];
                        let off = (t as isize - half) * self.dilation as isize;
                        let (lo, hi) = valid_range(l, off);
                        let mut dw = T::zero();
                        for idx in lo..hi {
                            let xs = (x_row as isize + idx as isize + off) as usize;
                            let g = gyd[y_row + idx];
                            dw += g * xd[xs];
                            gxd[xs] += wv * g;
                        }
                        gwd[widx] += dw;
                    }
                }
            }
        }
        Ok(gx)
    }
}

/// Output index range [lo, hi) for which `index + off` lands in [0, len).
#[inline]
fn valid_range(len: usize, off: isize) -> (usize, usize) {
    let lo = if off < 0 { (-off) as usize } else { 0 };
    let hi = if off > 0 {
        len.saturating_sub(off as usize)
    } else {
        len
    };
    (lo.min(len), hi.max(lo).min(len))
}

impl<T: Scalar> ParamSet<T> for Conv1d<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(format!("{prefix}.w"), &mut self.weight);
        f(format!("{prefix}.b"), &mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// Linear

pub struct Linear<T> {
    pub weight: Param<T>, // (O, I)
    pub bias: Param<T>,
    pub in_dim: usize,
    pub out_dim: usize,
}

pub struct LinearCache<T> {
    x: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Stream) -> Self {
        Linear {
            weight: Param::new(Tensor::randn(&[out_dim, in_dim], super::he_std(in_dim), rng)),
            bias: Param::new(Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
        }
    }

    pub fn zero_init(mut self) -> Self {
        self.weight.w.fill(T::zero());
        self
    }

    pub fn forward(&self, x: Tensor<T>) -> Result<(Tensor<T>, LinearCache<T>)> {
        expect_rank(&x, 2, "linear input")?;
        let (b, i) = (x.shape()[0], x.shape()[1]);
        if i != self.in_dim {
            return Err(Error::shape("linear input dim", self.in_dim, i));
        }
        let mut y = Tensor::zeros(&[b, self.out_dim]);
        let xd = x.data();
        let wd = self.weight.w.data();
        let bd = self.bias.w.data();
        let yd = y.data_mut();
        for bi in 0..b {
            for o in 0..self.out_dim {
                let mut acc = bd[o];
                let xrow = &xd[bi * i..(bi + 1) * i];
                let wrow = &wd[o * i..(o + 1) * i];
                for (xv, wv) in xrow.iter().zip(wrow) {
                    acc += *xv * *wv;
                }
                yd[bi * self.out_dim + o] = acc;
            }
        }
        Ok((y, LinearCache { x }))
    }

    pub fn backward(&mut self, cache: &LinearCache<T>, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = &cache.x;
        let (b, i) = (x.shape()[0], x.shape()[1]);
        if gy.shape() != [b, self.out_dim] {
            return Err(Error::shape(
                "linear upstream grad",
                format!("{:?}", [b, self.out_dim]),
                format!("{:?}", gy.shape()),
            ));
        }
        let mut gx = Tensor::zeros(x.shape());
        let xd = x.data();
        let gyd = gy.data();
        let wd = self.weight.w.data();
        let gwd = self.weight.g.data_mut();
        let gbd = self.bias.g.data_mut();
        let gxd = gx.data_mut();
        for bi in 0..b {
            for o in 0..self.out_dim {
                let g = gyd[bi * self.out_dim + o];
                gbd[o] += g;
                let xrow = &xd[bi * i..(bi + 1) * i];
                let wrow = &wd[o * i..(o + 1) * i];
                let gwrow = &mut gwd[o * i..(o + 1) * i];
                let gxrow = &mut gxd[bi * i..(bi + 1) * i];
                for k in 0..i {
                    gwrow[k] += g * xrow[k];
                    gxrow[k] += g * wrow[k];
                }
            }
        }
        Ok(gx)
    }
}

impl<T: Scalar> ParamSet<T> for Linear<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(format!("{prefix}.w"), &mut self.weight);
        f(format!("{prefix}.b"), &mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// BatchNorm over (B, C, H, W), statistics per channel

pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    invstd: Vec<T>,
    mode: Mode,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Param::new(Tensor::filled(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        expect_rank(&x, 4, "batchnorm input")?;
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        if c != self.channels {
            return Err(Error::shape("batchnorm channels", self.channels, c));
        }
        let n = (b * h * w) as f64;
        let plane = h * w;
        let mut y = Tensor::zeros(x.shape());
        let mut xhat = Tensor::zeros(x.shape());
        let mut invstds = vec![T::zero(); c];
        for ci in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = 0.0;
                    let mut sumsq = 0.0;
                    for bi in 0..b {
                        let base = (bi * c + ci) * plane;
                        for &v in &x.data()[base..base + plane] {
                            let v = v.as_f64();
                            sum += v;
                            sumsq += v * v;
                        }
                    }
                    let mean = sum / n;
                    let var = (sumsq / n - mean * mean).max(0.0);
                    let m = self.momentum;
                    let rm = self.running_mean.data_mut();
                    rm[ci] = T::of(rm[ci].as_f64() * (1.0 - m) + mean * m);
                    let rv = self.running_var.data_mut();
                    rv[ci] = T::of(rv[ci].as_f64() * (1.0 - m) + var * m);
                    (mean, var)
                }
                Mode::Eval => (
                    self.running_mean.data()[ci].as_f64(),
                    self.running_var.data()[ci].as_f64(),
                ),
            };
            let invstd = 1.0 / (var + self.eps).sqrt();
            invstds[ci] = T::of(invstd);
            let g = self.gamma.w.data()[ci];
            let be = self.beta.w.data()[ci];
            let tm = T::of(mean);
            let ti = T::of(invstd);
            for bi in 0..b {
                let base = (bi * c + ci) * plane;
                for k in 0..plane {
                    let xh = (x.data()[base + k] - tm) * ti;
                    xhat.data_mut()[base + k] = xh;
                    y.data_mut()[base + k] = g * xh + be;
                }
            }
        }
        Ok((
            y,
            BatchNormCache {
                xhat,
                invstd: invstds,
                mode,
            },
        ))
    }

    pub fn backward(&mut self, cache: &BatchNormCache<T>, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let xhat = &cache.xhat;
        let (b, c, h, w) = (
            xhat.shape()[0],
            xhat.shape()[1],
            xhat.shape()[2],
            xhat.shape()[3],
        );
        if gy.shape() != xhat.shape() {
            return Err(Error::shape(
                "batchnorm upstream grad",
                format!("{:?}", xhat.shape()),
                format!("{:?}", gy.shape()),
            ));
        }
        let plane = h * w;
        let n = T::of((b * h * w) as f64);
        let mut gx = Tensor::zeros(xhat.shape());
        for ci in 0..c {
            let g = self.gamma.w.data()[ci];
            let invstd = cache.invstd[ci];
            let mut sum_gy = T::zero();
            let mut sum_gy_xhat = T::zero();
            for bi in 0..b {
                let base = (bi * c + ci) * plane;
                for k in 0..plane {
                    let gv = gy.data()[base + k];
                    sum_gy += gv;
                    sum_gy_xhat += gv * xhat.data()[base + k];
                }
            }
            self.beta.g.data_mut()[ci] += sum_gy;
            self.gamma.g.data_mut()[ci] += sum_gy_xhat;
            match cache.mode {
                Mode::Train => {
                    for bi in 0..b {
                        let base = (bi * c + ci) * plane;
                        for k in 0..plane {
                            let gv = gy.data()[base + k];
                            let xh = xhat.data()[base + k];
                            gx.data_mut()[base + k] =
                                g * invstd * (gv - sum_gy / n - xh * sum_gy_xhat / n);
                        }
                    }
                }
                Mode::Eval => {
                    for bi in 0..b {
                        let base = (bi * c + ci) * plane;
                        for k in 0..plane {
                            gx.data_mut()[base + k] = gy.data()[base + k] * g * invstd;
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

impl<T: Scalar> ParamSet<T> for BatchNorm<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(format!("{prefix}.gamma"), &mut self.gamma);
        f(format!("{prefix}.beta"), &mut self.beta);
    }
}

// ---------------------------------------------------------------------------
// Activations

/// Stores only the pass-through mask; at encoder batch sizes the full
/// input copy would dominate cache memory.
pub struct ReluCache<T> {
    mask: Vec<bool>,
    _marker: std::marker::PhantomData<T>,
}

pub fn relu<T: Scalar>(x: Tensor<T>) -> (Tensor<T>, ReluCache<T>) {
    let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
    let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
    (
        y,
        ReluCache {
            mask,
            _marker: std::marker::PhantomData,
        },
    )
}

pub fn relu_backward<T: Scalar>(cache: &ReluCache<T>, gy: &Tensor<T>) -> Tensor<T> {
    let mut gx = gy.clone();
    for (g, &keep) in gx.data_mut().iter_mut().zip(&cache.mask) {
        if !keep {
            *g = T::zero();
        }
    }
    gx
}

pub struct GeluCache<T> {
    x: Tensor<T>,
}

pub fn gelu<T: Scalar>(x: Tensor<T>) -> (Tensor<T>, GeluCache<T>) {
    let y = x.map(|v| v.gelu());
    (y, GeluCache { x })
}

pub fn gelu_backward<T: Scalar>(cache: &GeluCache<T>, gy: &Tensor<T>) -> Tensor<T> {
    let mut gx = gy.clone();
    for (g, &xv) in gx.data_mut().iter_mut().zip(cache.x.data()) {
        *g = *g * xv.gelu_grad();
    }
    gx
}

// ---------------------------------------------------------------------------
// Global max-pool over the time axis: (B, C, T) -> (B, C)

pub struct MaxPoolTimeCache {
    argmax: Vec<usize>,
    in_shape: Vec<usize>,
}

pub fn maxpool_time<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, MaxPoolTimeCache)> {
    expect_rank(x, 3, "maxpool-time input")?;
    let (b, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if t == 0 {
        return Err(Error::shape("maxpool-time", "non-empty time axis", 0));
    }
    let mut y = Tensor::zeros(&[b, c]);
    let mut argmax = vec![0usize; b * c];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * t;
            let row = &x.data()[base..base + t];
            let (mut best, mut best_v) = (0usize, row[0]);
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best = k;
                    best_v = v;
                }
            }
            y.data_mut()[bi * c + ci] = best_v;
            argmax[bi * c + ci] = base + best;
        }
    }
    Ok((
        y,
        MaxPoolTimeCache {
            argmax,
            in_shape: x.shape().to_vec(),
        },
    ))
}

pub fn maxpool_time_backward<T: Scalar>(cache: &MaxPoolTimeCache, gy: &Tensor<T>) -> Tensor<T> {
    let mut gx = Tensor::zeros(&cache.in_shape);
    for (slot, &g) in cache.argmax.iter().zip(gy.data()) {
        gx.data_mut()[*slot] += g;
    }
    gx
}

// ---------------------------------------------------------------------------
// Dropout (inverted scaling; identity in eval mode)

pub struct Dropout {
    pub rate: f64,
}

pub struct DropoutCache<T> {
    mask: Option<Tensor<T>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout { rate })
    }

    pub fn forward<T: Scalar>(&self, x: Tensor<T>, ctx: &mut FwdCtx) -> (Tensor<T>, DropoutCache<T>) {
        if ctx.mode == Mode::Eval || self.rate == 0.0 {
            return (x, DropoutCache { mask: None });
        }
        let keep = 1.0 - self.rate;
        let scale = T::of(1.0 / keep);
        let mask = Tensor::from_fn(x.shape(), |_| {
            if ctx.rng.gen::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        });
        let mut y = x;
        for (v, &m) in y.data_mut().iter_mut().zip(mask.data()) {
            *v *= m;
        }
        (y, DropoutCache { mask: Some(mask) })
    }

    pub fn backward<T: Scalar>(&self, cache: &DropoutCache<T>, gy: &Tensor<T>) -> Tensor<T> {
        match &cache.mask {
            None => gy.clone(),
            Some(mask) => {
                let mut gx = gy.clone();
                for (g, &m) in gx.data_mut().iter_mut().zip(mask.data()) {
                    *g *= m;
                }
                gx
            }
        }
    }
}

// ---------------------------------------------------------------------------
// FiLM: y = (1 + γ̂)·x + β with per-(batch, channel) modulation, so a
// zero-output conditioning projection starts as the identity map.

pub struct FilmCache<T> {
    x: Tensor<T>,
    gamma: Tensor<T>,
}

impl<T> FilmCache<T> {
    /// Time length of the modulated feature map.
    pub fn x_len(&self) -> usize
    where
        T: Scalar,
    {
        self.x.shape()[2]
    }
}

pub fn film<T: Scalar>(
    x: Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, FilmCache<T>)> {
    expect_rank(&x, 3, "film input")?;
    let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if gamma.shape() != [b, c] || beta.shape() != [b, c] {
        return Err(Error::shape(
            "film modulation",
            format!("[{b}, {c}]"),
            format!("{:?} / {:?}", gamma.shape(), beta.shape()),
        ));
    }
    let mut y = x.clone();
    for bi in 0..b {
        for ci in 0..c {
            let g = T::one() + gamma.data()[bi * c + ci];
            let be = beta.data()[bi * c + ci];
            let base = (bi * c + ci) * l;
            for v in &mut y.data_mut()[base..base + l] {
                *v = g * *v + be;
            }
        }
    }
    Ok((
        y,
        FilmCache {
            x,
            gamma: gamma.clone(),
        },
    ))
}

/// Returns (dx, dgamma, dbeta).
pub fn film_backward<T: Scalar>(
    cache: &FilmCache<T>,
    gy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, c, l) = (
        cache.x.shape()[0],
        cache.x.shape()[1],
        cache.x.shape()[2],
    );
    if gy.shape() != cache.x.shape() {
        return Err(Error::shape(
            "film upstream grad",
            format!("{:?}", cache.x.shape()),
            format!("{:?}", gy.shape()),
        ));
    }
    let mut gx = Tensor::zeros(cache.x.shape());
    let mut dgamma = Tensor::zeros(&[b, c]);
    let mut dbeta = Tensor::zeros(&[b, c]);
    for bi in 0..b {
        for ci in 0..c {
            let g = T::one() + cache.gamma.data()[bi * c + ci];
            let base = (bi * c + ci) * l;
            let mut dg = T::zero();
            let mut db = T::zero();
            for k in 0..l {
                let gv = gy.data()[base + k];
                gx.data_mut()[base + k] = g * gv;
                dg += gv * cache.x.data()[base + k];
                db += gv;
            }
            dgamma.data_mut()[bi * c + ci] = dg;
            dbeta.data_mut()[bi * c + ci] = db;
        }
    }
    Ok((gx, dgamma, dbeta))
}

// ---------------------------------------------------------------------------
// Resampling along the time axis

/// Halve (B, C, L) by averaging adjacent pairs; L must be even.
pub fn avgpool_half<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(x, 3, "avgpool input")?;
    let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if l % 2 != 0 {
        return Err(Error::shape("avgpool length", "even", l));
    }
    let mut y = Tensor::zeros(&[b, c, l / 2]);
    let half = T::of(0.5);
    for row in 0..b * c {
        let xb = row * l;
        let yb = row * (l / 2);
        for k in 0..l / 2 {
            y.data_mut()[yb + k] = (x.data()[xb + 2 * k] + x.data()[xb + 2 * k + 1]) * half;
        }
    }
    Ok(y)
}

pub fn avgpool_half_backward<T: Scalar>(gy: &Tensor<T>) -> Tensor<T> {
    let (b, c, l2) = (gy.shape()[0], gy.shape()[1], gy.shape()[2]);
    let mut gx = Tensor::zeros(&[b, c, 2 * l2]);
    let half = T::of(0.5);
    for row in 0..b * c {
        let gb = row * l2;
        let xb = row * 2 * l2;
        for k in 0..l2 {
            let g = gy.data()[gb + k] * half;
            gx.data_mut()[xb + 2 * k] = g;
            gx.data_mut()[xb + 2 * k + 1] = g;
        }
    }
    gx
}

/// Nearest-neighbor ×2 upsample of (B, C, L).
pub fn upsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut y = Tensor::zeros(&[b, c, 2 * l]);
    for row in 0..b * c {
        let xb = row * l;
        let yb = row * 2 * l;
        for k in 0..l {
            let v = x.data()[xb + k];
            y.data_mut()[yb + 2 * k] = v;
            y.data_mut()[yb + 2 * k + 1] = v;
        }
    }
    y
}

pub fn upsample2_backward<T: Scalar>(gy: &Tensor<T>) -> Tensor<T> {
    let (b, c, l2) = (gy.shape()[0], gy.shape()[1], gy.shape()[2]);
    let l = l2 / 2;
    let mut gx = Tensor::zeros(&[b, c, l]);
    for row in 0..b * c {
        let gb = row * l2;
        let xb = row * l;
        for k in 0..l {
            gx.data_mut()[xb + k] = gy.data()[gb + 2 * k] + gy.data()[gb + 2 * k + 1];
        }
    }
    gx
}

/// Concatenate two (B, C, L) maps along channels.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(a, 3, "concat input")?;
    let (ba, ca, la) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (bb, cb, lb) = (b.shape()[0], b.shape()[1], b.shape()[2]);
    if ba != bb || la != lb {
        return Err(Error::shape(
            "concat",
            format!("batch {ba} x len {la}"),
            format!("batch {bb} x len {lb}"),
        ));
    }
    let mut y = Tensor::zeros(&[ba, ca + cb, la]);
    for bi in 0..ba {
        for ci in 0..ca {
            let src = (bi * ca + ci) * la;
            let dst = (bi * (ca + cb) + ci) * la;
            y.data_mut()[dst..dst + la].copy_from_slice(&a.data()[src..src + la]);
        }
        for ci in 0..cb {
            let src = (bi * cb + ci) * lb;
            let dst = (bi * (ca + cb) + ca + ci) * la;
            y.data_mut()[dst..dst + la].copy_from_slice(&b.data()[src..src + lb]);
        }
    }
    Ok(y)
}

/// Split the channel-concat gradient back into the two parts.
pub fn split_channels<T: Scalar>(gy: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let (b, c, l) = (gy.shape()[0], gy.shape()[1], gy.shape()[2]);
    let cb = c - ca;
    let mut ga = Tensor::zeros(&[b, ca, l]);
    let mut gb = Tensor::zeros(&[b, cb, l]);
    for bi in 0..b {
        for ci in 0..ca {
            let src = (bi * c + ci) * l;
            let dst = (bi * ca + ci) * l;
            ga.data_mut()[dst..dst + l].copy_from_slice(&gy.data()[src..src + l]);
        }
        for ci in 0..cb {
            let src = (bi * c + ca + ci) * l;
            let dst = (bi * cb + ci) * l;
            gb.data_mut()[dst..dst + l].copy_from_slice(&gy.data()[src..src + l]);
        }
    }
    (ga, gb)
}

// ---------------------------------------------------------------------------
// Row-wise L2 normalization for (B, E)

pub struct L2NormCache<T> {
    y: Tensor<T>,
    norms: Vec<T>,
}

pub fn l2_normalize_rows<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, L2NormCache<T>)> {
    expect_rank(x, 2, "l2-normalize input")?;
    let (b, e) = (x.shape()[0], x.shape()[1]);
    let mut y = x.clone();
    let mut norms = vec![T::zero(); b];
    for bi in 0..b {
        let row = &mut y.data_mut()[bi * e..(bi + 1) * e];
        let mut ss = T::zero();
        for v in row.iter() {
            ss += *v * *v;
        }
        let norm = ss.sqrt().max(T::of(1e-12));
        for v in row.iter_mut() {
            *v = *v / norm;
        }
        norms[bi] = norm;
    }
    Ok((y.clone(), L2NormCache { y, norms }))
}

pub fn l2_normalize_backward<T: Scalar>(cache: &L2NormCache<T>, gy: &Tensor<T>) -> Tensor<T> {
    let (b, e) = (cache.y.shape()[0], cache.y.shape()[1]);
    let mut gx = Tensor::zeros(cache.y.shape());
    for bi in 0..b {
        let yrow = &cache.y.data()[bi * e..(bi + 1) * e];
        let grow = &gy.data()[bi * e..(bi + 1) * e];
        let mut dot = T::zero();
        for (y, g) in yrow.iter().zip(grow) {
            dot += *y * *g;
        }
        let inv = T::one() / cache.norms[bi];
        let out = &mut gx.data_mut()[bi * e..(bi + 1) * e];
        for k in 0..e {
            out[k] = (grow[k] - yrow[k] * dot) * inv;
        }
    }
    gx
}
