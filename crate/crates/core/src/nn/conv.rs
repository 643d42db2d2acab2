//! 2D convolution (cross-correlation) and its transpose.
//!
//! Both layers support grouped channels; depthwise convolution is
//! `groups == channels`. Backward passes are written in gather form so each
//! output element is produced by one task with a fixed summation order,
//! keeping results bitwise reproducible under any thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::init::kaiming_uniform;

/// Geometry shared by the convolution ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvSpec {
    pub fn validate(&self, op: &'static str) -> Result<()> {
        if self.groups == 0
            || !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return Err(Error::invalid(
                op,
                format!(
                    "channels ({} -> {}) must divide into {} groups",
                    self.in_channels, self.out_channels, self.groups
                ),
            ));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::invalid(op, "kernel and stride must be positive"));
        }
        Ok(())
    }

    /// floor((extent + 2 pad - kernel) / stride) + 1
    pub fn conv_output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = (h + 2 * self.padding.0).checked_sub(self.kernel.0);
        let ow = (w + 2 * self.padding.1).checked_sub(self.kernel.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok((oh / self.stride.0 + 1, ow / self.stride.1 + 1)),
            _ => Err(Error::shape(
                "conv2d",
                format!("kernel {:?} larger than padded input {h}x{w}", self.kernel),
            )),
        }
    }

    /// (extent - 1) * stride - 2 pad + kernel
    pub fn transposed_output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = ((h - 1) * self.stride.0 + self.kernel.0).checked_sub(2 * self.padding.0);
        let ow = ((w - 1) * self.stride.1 + self.kernel.1).checked_sub(2 * self.padding.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(Error::shape(
                "conv2d_transposed",
                format!("padding {:?} swallows the {h}x{w} output", self.padding),
            )),
        }
    }
}

/// Learnable 2D convolution; weight layout (out, in/groups, kh, kw).
pub struct Conv2d<T: Scalar> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(spec: ConvSpec, rng: &mut DetRng) -> Result<Self> {
        spec.validate("conv2d")?;
        let icpg = spec.in_channels / spec.groups;
        let fan_in = icpg * spec.kernel.0 * spec.kernel.1;
        let n = spec.out_channels * icpg * spec.kernel.0 * spec.kernel.1;
        let weight = Tensor::param(
            kaiming_uniform(n, fan_in, rng),
            &[spec.out_channels, icpg, spec.kernel.0, spec.kernel.1],
        )?;
        let bias = Tensor::param(vec![T::zero(); spec.out_channels], &[spec.out_channels])?;
        Ok(Conv2d { spec, weight, bias })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weight, &self.bias, self.spec)
    }

    pub fn params(&self) -> Vec<(&'static str, Tensor<T>)> {
        vec![("weight", self.weight.clone()), ("bias", self.bias.clone())]
    }
}

/// Learnable transposed convolution; weight layout (in, out/groups, kh, kw),
/// so a `Conv2d` weight can be reused directly as the adjoint map.
pub struct ConvTranspose2d<T: Scalar> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(spec: ConvSpec, rng: &mut DetRng) -> Result<Self> {
        spec.validate("conv2d_transposed")?;
        let ocpg = spec.out_channels / spec.groups;
        // fan_in of the equivalent forward conv: contributions per output.
        let fan_in = ocpg * spec.kernel.0 * spec.kernel.1 / (spec.stride.0 * spec.stride.1).max(1);
        let n = spec.in_channels * ocpg * spec.kernel.0 * spec.kernel.1;
        let weight = Tensor::param(
            kaiming_uniform(n, fan_in.max(1), rng),
            &[spec.in_channels, ocpg, spec.kernel.0, spec.kernel.1],
        )?;
        let bias = Tensor::param(vec![T::zero(); spec.out_channels], &[spec.out_channels])?;
        Ok(ConvTranspose2d { spec, weight, bias })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_transposed(x, &self.weight, &self.bias, self.spec)
    }

    pub fn params(&self) -> Vec<(&'static str, Tensor<T>)> {
        vec![("weight", self.weight.clone()), ("bias", self.bias.clone())]
    }
}

fn check_input<T: Scalar>(op: &'static str, x: &Tensor<T>, spec: ConvSpec) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape(op, format!("expected BCHW input, got {s:?}")));
    }
    if s[1] != spec.in_channels {
        return Err(Error::shape(
            op,
            format!("input has {} channels, layer expects {}", s[1], spec.in_channels),
        ));
    }
    Ok((s[0], s[2], s[3]))
}

/// Cross-correlation with bias. Weight (out, in/groups, kh, kw).
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    spec.validate("conv2d")?;
    let (bsz, h, w) = check_input("conv2d", x, spec)?;
    let (oh, ow) = spec.conv_output_size(h, w)?;
    let (ic, oc) = (spec.in_channels, spec.out_channels);
    let icpg = ic / spec.groups;
    let ocpg = oc / spec.groups;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;

    let mut out = vec![T::zero(); bsz * oc * oh * ow];
    {
        let xd = x.data();
        let wd = weight.data();
        let bd = bias.data();
        out.par_chunks_mut(oh * ow).enumerate().for_each(|(bo, plane)| {
            let b = bo / oc;
            let o = bo % oc;
            let g = o / ocpg;
            plane.iter_mut().for_each(|v| *v = bd[o]);
            for il in 0..icpg {
                let i = g * icpg + il;
                let xp = &xd[(b * ic + i) * h * w..][..h * w];
                let wk = &wd[(o * icpg + il) * kh * kw..][..kh * kw];
                accumulate_conv_plane(plane, xp, wk, h, w, oh, ow, kh, kw, sh, sw, ph, pw);
            }
        });
    }

    let (px, pw_t, pb) = (x.clone(), weight.clone(), bias.clone());
    Ok(Tensor::from_op(
        out,
        vec![bsz, oc, oh, ow],
        "conv2d",
        vec![x.clone(), weight.clone(), bias.clone()],
        move |grad| {
            conv2d_backward(grad, &px, &pw_t, &pb, spec, bsz, h, w, oh, ow);
        },
    ))
}

/// plane[oy,ox] += sum_{ky,kx} wk[ky,kx] * xp[oy*sh+ky-ph, ox*sw+kx-pw]
#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate_conv_plane<T: Scalar>(
    plane: &mut [T],
    xp: &[T],
    wk: &[T],
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
) {
    if kh == 1 && kw == 1 && sh == 1 && sw == 1 && ph == 0 && pw == 0 {
        let wv = wk[0];
        for (o, &xv) in plane.iter_mut().zip(xp.iter()) {
            *o += wv * xv;
        }
        return;
    }
    for oy in 0..oh {
        let orow = &mut plane[oy * ow..][..ow];
        for ky in 0..kh {
            let iy = (oy * sh + ky) as isize - ph as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let xrow = &xp[(iy as usize) * w..][..w];
            for kx in 0..kw {
                let wv = wk[ky * kw + kx];
                if wv == T::zero() {
                    continue;
                }
                if sw == 1 {
                    // valid ox range: 0 <= ox + kx - pw < w
                    let lo = pw.saturating_sub(kx);
                    let hi = (w + pw).saturating_sub(kx).min(ow);
                    if lo >= hi {
                        continue;
                    }
                    let shift = kx as isize - pw as isize;
                    let src = &xrow[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    for (o, &xv) in orow[lo..hi].iter_mut().zip(src) {
                        *o += wv * xv;
                    }
                } else {
                    for (ox, o) in orow.iter_mut().enumerate() {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            *o += wv * xrow[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward<T: Scalar>(
    grad: &[T],
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: ConvSpec,
    bsz: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) {
    let (ic, oc) = (spec.in_channels, spec.out_channels);
    let icpg = ic / spec.groups;
    let ocpg = oc / spec.groups;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;

    if x.requires_grad() {
        let wd = weight.data();
        let mut gx = vec![T::zero(); bsz * ic * h * w];
        gx.par_chunks_mut(h * w).enumerate().for_each(|(bi, plane)| {
            let b = bi / ic;
            let i = bi % ic;
            let g = i / icpg;
            let il = i % icpg;
            for ol in 0..ocpg {
                let o = g * ocpg + ol;
                let gp = &grad[(b * oc + o) * oh * ow..][..oh * ow];
                let wk = &wd[(o * icpg + il) * kh * kw..][..kh * kw];
                // scatter within this task: plane[iy,ix] += wk * gp[oy,ox]
                for oy in 0..oh {
                    let grow = &gp[oy * ow..][..ow];
                    for ky in 0..kh {
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let prow = &mut plane[(iy as usize) * w..][..w];
                        for kx in 0..kw {
                            let wv = wk[ky * kw + kx];
                            if wv == T::zero() {
                                continue;
                            }
                            if sw == 1 {
                                // valid ox range: 0 <= ox + kx - pw < w
                                let lo = pw.saturating_sub(kx);
                                let hi = (w + pw).saturating_sub(kx).min(ow);
                                if lo >= hi {
                                    continue;
                                }
                                let shift = kx as isize - pw as isize;
                                let dst = &mut prow[(lo as isize + shift) as usize
                                    ..(hi as isize + shift) as usize];
                                for (p, &gv) in dst.iter_mut().zip(&grow[lo..hi]) {
                                    *p += wv * gv;
                                }
                            } else {
                                for (ox, &gv) in grow.iter().enumerate() {
                                    let ix = (ox * sw + kx) as isize - pw as isize;
                                    if ix >= 0 && ix < w as isize {
                                        let p = &mut prow[ix as usize];
                                        *p += wv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
        drop(wd);
        x.accumulate_grad(&gx);
    }

    if weight.requires_grad() {
        let xd = x.data();
        let mut gw = vec![T::zero(); oc * icpg * kh * kw];
        gw.par_chunks_mut(icpg * kh * kw).enumerate().for_each(|(o, wslab)| {
            let g = o / ocpg;
            for il in 0..icpg {
                let i = g * icpg + il;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = T::zero();
                        for b in 0..bsz {
                            let gp = &grad[(b * oc + o) * oh * ow..][..oh * ow];
                            let xp = &xd[(b * ic + i) * h * w..][..h * w];
                            for oy in 0..oh {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let xrow = &xp[(iy as usize) * w..][..w];
                                let grow = &gp[oy * ow..][..ow];
                                if sw == 1 {
                                    let lo = pw.saturating_sub(kx);
                                    let hi = (w + pw).saturating_sub(kx).min(ow);
                                    if lo >= hi {
                                        continue;
                                    }
                                    let shift = kx as isize - pw as isize;
                                    let xs = &xrow[(lo as isize + shift) as usize
                                        ..(hi as isize + shift) as usize];
                                    for (&gv, &xv) in grow[lo..hi].iter().zip(xs) {
                                        acc += gv * xv;
                                    }
                                } else {
                                    for (ox, &gv) in grow.iter().enumerate() {
                                        let ix = (ox * sw + kx) as isize - pw as isize;
                                        if ix >= 0 && ix < w as isize {
                                            acc += gv * xrow[ix as usize];
                                        }
                                    }
                                }
                            }
                        }
                        wslab[(il * kh + ky) * kw + kx] = acc;
                    }
                }
            }
        });
        drop(xd);
        weight.accumulate_grad(&gw);
    }

    if bias.requires_grad() {
        let mut gb = vec![T::zero(); oc];
        for b in 0..bsz {
            for (o, gbo) in gb.iter_mut().enumerate() {
                let gp = &grad[(b * oc + o) * oh * ow..][..oh * ow];
                let mut acc = T::zero();
                for &v in gp {
                    acc += v;
                }
                *gbo += acc;
            }
        }
        bias.accumulate_grad(&gb);
    }
}

/// Transposed convolution (adjoint of `conv2d` in its linear part).
/// Weight (in, out/groups, kh, kw).
pub fn conv2d_transposed<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    spec.validate("conv2d_transposed")?;
    let (bsz, h, w) = check_input("conv2d_transposed", x, spec)?;
    let (oh, ow) = spec.transposed_output_size(h, w)?;
    let (ic, oc) = (spec.in_channels, spec.out_channels);
    let icpg = ic / spec.groups;
    let ocpg = oc / spec.groups;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;

    let mut out = vec![T::zero(); bsz * oc * oh * ow];
    {
        let xd = x.data();
        let wd = weight.data();
        let bd = bias.data();
        out.par_chunks_mut(oh * ow).enumerate().for_each(|(bo, plane)| {
            let b = bo / oc;
            let o = bo % oc;
            let g = o / ocpg;
            let ol = o % ocpg;
            plane.iter_mut().for_each(|v| *v = bd[o]);
            for il in 0..icpg {
                let i = g * icpg + il;
                let xp = &xd[(b * ic + i) * h * w..][..h * w];
                let wk = &wd[(i * ocpg + ol) * kh * kw..][..kh * kw];
                // gather: plane[oy,ox] += wk[ky,kx] * xp[iy,ix]
                // where oy = iy*sh + ky - ph, ox = ix*sw + kx - pw.
                for oy in 0..oh {
                    let orow = &mut plane[oy * ow..][..ow];
                    for ky in 0..kh {
                        let t = oy as isize + ph as isize - ky as isize;
                        if t < 0 || t % sh as isize != 0 {
                            continue;
                        }
                        let iy = (t / sh as isize) as usize;
                        if iy >= h {
                            continue;
                        }
                        let xrow = &xp[iy * w..][..w];
                        for kx in 0..kw {
                            let wv = wk[ky * kw + kx];
                            if wv == T::zero() {
                                continue;
                            }
                            for (ox, o) in orow.iter_mut().enumerate() {
                                let t = ox as isize + pw as isize - kx as isize;
                                if t >= 0 && t % sw as isize == 0 {
                                    let ix = (t / sw as isize) as usize;
                                    if ix < w {
                                        *o += wv * xrow[ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }

    let (px, pw_t, pb) = (x.clone(), weight.clone(), bias.clone());
    Ok(Tensor::from_op(
        out,
        vec![bsz, oc, oh, ow],
        "conv2d_transposed",
        vec![x.clone(), weight.clone(), bias.clone()],
        move |grad| {
            transposed_backward(grad, &px, &pw_t, &pb, spec, bsz, h, w, oh, ow);
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn transposed_backward<T: Scalar>(
    grad: &[T],
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: ConvSpec,
    bsz: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) {
    let (ic, oc) = (spec.in_channels, spec.out_channels);
    let icpg = ic / spec.groups;
    let ocpg = oc / spec.groups;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;

    if x.requires_grad() {
        // Gradient wrt input is an ordinary strided convolution of the
        // output gradient with the same kernel.
        let wd = weight.data();
        let mut gx = vec![T::zero(); bsz * ic * h * w];
        gx.par_chunks_mut(h * w).enumerate().for_each(|(bi, plane)| {
            let b = bi / ic;
            let i = bi % ic;
            let g = i / icpg;
            let il = i % icpg;
            let _ = il;
            for ol in 0..ocpg {
                let o = g * ocpg + ol;
                let gp = &grad[(b * oc + o) * oh * ow..][..oh * ow];
                let wk = &wd[(i * ocpg + ol) * kh * kw..][..kh * kw];
                accumulate_conv_plane(plane, gp, wk, oh, ow, h, w, kh, kw, sh, sw, ph, pw);
            }
        });
        drop(wd);
        x.accumulate_grad(&gx);
    }

    if weight.requires_grad() {
        let xd = x.data();
        let mut gw = vec![T::zero(); ic * ocpg * kh * kw];
        gw.par_chunks_mut(ocpg * kh * kw).enumerate().for_each(|(i, wslab)| {
            let g = i / icpg;
            for ol in 0..ocpg {
                let o = g * ocpg + ol;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = T::zero();
                        for b in 0..bsz {
                            let xp = &xd[(b * ic + i) * h * w..][..h * w];
                            let gp = &grad[(b * oc + o) * oh * ow..][..oh * ow];
                            for iy in 0..h {
                                let oy = (iy * sh + ky) as isize - ph as isize;
                                if oy < 0 || oy >= oh as isize {
                                    continue;
                                }
                                let grow = &gp[(oy as usize) * ow..][..ow];
                                let xrow = &xp[iy * w..][..w];
                                for (ix, &xv) in xrow.iter().enumerate() {
                                    let ox = (ix * sw + kx) as isize - pw as isize;
                                    if ox >= 0 && ox < ow as isize {
                                        acc += xv * grow[ox as usize];
                                    }
                                }
                            }
                        }
                        wslab[(ol * kh + ky) * kw + kx] = acc;
                    }
                }
            }
        });
        drop(xd);
        weight.accumulate_grad(&gw);
    }

    if bias.requires_grad() {
        let mut gb = vec![T::zero(); oc];
        for b in 0..bsz {
            for (o, gbo) in gb.iter_mut().enumerate() {
                let gp = &grad[(b * oc + o) * oh * ow..][..oh * ow];
                let mut acc = T::zero();
                for &v in gp {
                    acc += v;
                }
                *gbo += acc;
            }
        }
        bias.accumulate_grad(&gb);
    }
}
