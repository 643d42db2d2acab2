//! Decimated 2D Haar wavelet analysis and synthesis, single- and multi-level.
//!
//! The transform is orthonormal: each disjoint 2x2 block `[[a,b],[c,d]]`
//! (a top-left, b top-right, c bottom-left, d bottom-right) maps to
//!
//! ```text
//! A  = (a+b+c+d)/2      Dh = (a-b+c-d)/2
//! Dv = (a+b-c-d)/2      Dd = (a-b-c+d)/2
//! ```
//!
//! so norms are preserved (Parseval) and the adjoint equals the inverse.
//! Output channels are grouped by subband: [A | Dh | Dv | Dd], each group as
//! wide as the input. Odd extents are zero-padded on the bottom/right to the
//! next even size; the pyramid records the pads so callers can crop after
//! upsampling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-level outputs of a multi-level analysis. Level `l` (1-based) holds a
/// (B, 4C, H_l, W_l) tensor; the approximation channels of level `l` are the
/// input to level `l+1`.
pub struct SubbandPyramid<T: Scalar> {
    pub levels: Vec<Tensor<T>>,
    /// (bottom, right) zero padding applied to each level's input.
    pub pad_record: Vec<(usize, usize)>,
    pub original_size: (usize, usize),
    pub channels: usize,
}

impl<T: Scalar> SubbandPyramid<T> {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Levels needed to reduce (H, W) to 2x2: floor(log2(min(H,W))) - 1.
pub fn compute_levels(h: usize, w: usize) -> Result<usize> {
    let m = h.min(w);
    if m < 4 {
        return Err(Error::invalid(
            "compute_levels",
            format!("minimum extent {m} is below 4"),
        ));
    }
    Ok((usize::BITS - 1 - m.leading_zeros()) as usize - 1)
}

/// analysis of one plane: input (2h x 2w) -> four (h x w) subband planes
#[allow(clippy::too_many_arguments)]
fn analysis_plane<T: Scalar>(
    input: &[T],
    w_in: usize,
    h_out: usize,
    w_out: usize,
    a_p: &mut [T],
    dh_p: &mut [T],
    dv_p: &mut [T],
    dd_p: &mut [T],
) {
    let half = T::from_f64_c(0.5);
    for y in 0..h_out {
        let top = &input[(2 * y) * w_in..][..w_in];
        let bot = &input[(2 * y + 1) * w_in..][..w_in];
        let row = y * w_out;
        for x in 0..w_out {
            let a = top[2 * x];
            let b = top[2 * x + 1];
            let c = bot[2 * x];
            let d = bot[2 * x + 1];
            a_p[row + x] = (a + b + c + d) * half;
            dh_p[row + x] = (a - b + c - d) * half;
            dv_p[row + x] = (a + b - c - d) * half;
            dd_p[row + x] = (a - b - c + d) * half;
        }
    }
}

/// synthesis of one plane: four (h x w) subband planes -> (2h x 2w)
#[allow(clippy::too_many_arguments)]
fn synthesis_plane<T: Scalar>(
    a_p: &[T],
    dh_p: &[T],
    dv_p: &[T],
    dd_p: &[T],
    h_in: usize,
    w_in: usize,
    output: &mut [T],
    w_out: usize,
) {
    let half = T::from_f64_c(0.5);
    for y in 0..h_in {
        let row = y * w_in;
        let (top, bot) = output[2 * y * w_out..].split_at_mut(w_out);
        for x in 0..w_in {
            let av = a_p[row + x];
            let hv = dh_p[row + x];
            let vv = dv_p[row + x];
            let dv = dd_p[row + x];
            top[2 * x] = (av + hv + vv + dv) * half;
            top[2 * x + 1] = (av - hv + vv - dv) * half;
            bot[2 * x] = (av + hv - vv - dv) * half;
            bot[2 * x + 1] = (av - hv - vv + dv) * half;
        }
    }
}

/// Raw even-extent analysis as data; shared by forward and backward paths.
fn analyze_data<T: Scalar>(xd: &[T], bsz: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let plane_in = h * w;
    let plane_out = ho * wo;
    let mut out = vec![T::zero(); bsz * 4 * c * plane_out];
    out.par_chunks_mut(4 * c * plane_out)
        .enumerate()
        .for_each(|(b, block)| {
            let (a_all, rest) = block.split_at_mut(c * plane_out);
            let (dh_all, rest) = rest.split_at_mut(c * plane_out);
            let (dv_all, dd_all) = rest.split_at_mut(c * plane_out);
            for ch in 0..c {
                let xp = &xd[(b * c + ch) * plane_in..][..plane_in];
                analysis_plane(
                    xp,
                    w,
                    ho,
                    wo,
                    &mut a_all[ch * plane_out..][..plane_out],
                    &mut dh_all[ch * plane_out..][..plane_out],
                    &mut dv_all[ch * plane_out..][..plane_out],
                    &mut dd_all[ch * plane_out..][..plane_out],
                );
            }
        });
    out
}

/// Raw synthesis as data; input (B, 4C, h, w) -> (B, C, 2h, 2w).
fn synthesize_data<T: Scalar>(yd: &[T], bsz: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (2 * h, 2 * w);
    let plane_in = h * w;
    let plane_out = ho * wo;
    let mut out = vec![T::zero(); bsz * c * plane_out];
    out.par_chunks_mut(c * plane_out)
        .enumerate()
        .for_each(|(b, block)| {
            let base = b * 4 * c * plane_in;
            for ch in 0..c {
                let a_p = &yd[base + ch * plane_in..][..plane_in];
                let dh_p = &yd[base + (c + ch) * plane_in..][..plane_in];
                let dv_p = &yd[base + (2 * c + ch) * plane_in..][..plane_in];
                let dd_p = &yd[base + (3 * c + ch) * plane_in..][..plane_in];
                synthesis_plane(
                    a_p,
                    dh_p,
                    dv_p,
                    dd_p,
                    h,
                    w,
                    &mut block[ch * plane_out..][..plane_out],
                    wo,
                );
            }
        });
    out
}

/// One analysis level: (B,C,H,W) -> (B,4C,ceil(H/2),ceil(W/2)).
/// Odd extents are zero-padded on the bottom/right first.
pub fn dwt2_level<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("dwt2_level", format!("expected BCHW, got {s:?}")));
    }
    let (pad_b, pad_r) = (s[2] % 2, s[3] % 2);
    let padded = if pad_b + pad_r > 0 {
        x.pad2d([0, pad_b, 0, pad_r])?
    } else {
        x.clone()
    };
    let ps = padded.shape();
    let (bsz, c, h, w) = (ps[0], ps[1], ps[2], ps[3]);
    if h < 2 || w < 2 {
        return Err(Error::shape(
            "dwt2_level",
            format!("padded extent {h}x{w} is below 2x2"),
        ));
    }
    let out = analyze_data(&padded.data(), bsz, c, h, w);
    let parent = padded.clone();
    Ok(Tensor::from_op(
        out,
        vec![bsz, 4 * c, h / 2, w / 2],
        "dwt2_level",
        vec![padded.clone()],
        move |grad| {
            if parent.requires_grad() {
                // Orthonormal transform: adjoint = inverse.
                let contrib = synthesize_data(grad, bsz, c, h / 2, w / 2);
                parent.accumulate_grad(&contrib);
            }
        },
    ))
}

/// Exact inverse of one analysis level: (B,4C,h,w) -> (B,C,2h,2w).
pub fn idwt2_level<T: Scalar>(y: &Tensor<T>) -> Result<Tensor<T>> {
    let s = y.shape();
    if s.len() != 4 {
        return Err(Error::shape("idwt2_level", format!("expected BCHW, got {s:?}")));
    }
    if !s[1].is_multiple_of(4) {
        return Err(Error::shape(
            "idwt2_level",
            format!("channel count {} is not divisible by 4", s[1]),
        ));
    }
    let (bsz, c, h, w) = (s[0], s[1] / 4, s[2], s[3]);
    let out = synthesize_data(&y.data(), bsz, c, h, w);
    let parent = y.clone();
    Ok(Tensor::from_op(
        out,
        vec![bsz, c, 2 * h, 2 * w],
        "idwt2_level",
        vec![y.clone()],
        move |grad| {
            if parent.requires_grad() {
                let contrib = analyze_data(grad, bsz, c, 2 * h, 2 * w);
                parent.accumulate_grad(&contrib);
            }
        },
    ))
}

/// Multi-level analysis: level l transforms the approximation channels of
/// level l-1 and keeps that level's three detail groups alongside its own
/// approximation.
pub fn dwt2_pyramid<T: Scalar>(x: &Tensor<T>, levels: usize) -> Result<SubbandPyramid<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("dwt2_pyramid", format!("expected BCHW, got {s:?}")));
    }
    if levels == 0 {
        return Err(Error::invalid("dwt2_pyramid", "levels must be >= 1"));
    }
    let (h, w) = (s[2], s[3]);
    let need = 1usize << levels;
    let (h_even, w_even) = (h + h % 2, w + w % 2);
    if h_even < need || w_even < need {
        return Err(Error::invalid(
            "dwt2_pyramid",
            format!("{levels} levels need at least {need}x{need} after padding, input is {h}x{w}"),
        ));
    }
    let channels = s[1];
    let mut out = SubbandPyramid {
        levels: Vec::with_capacity(levels),
        pad_record: Vec::with_capacity(levels),
        original_size: (h, w),
        channels,
    };
    let mut current = x.clone();
    for _ in 0..levels {
        let cs = current.shape();
        out.pad_record.push((cs[2] % 2, cs[3] % 2));
        let level = dwt2_level(&current)?;
        current = level.slice_channels(0, channels)?;
        out.levels.push(level);
    }
    Ok(out)
}
