//! 2D redesigns of the FNet and MLP-Mixer blocks, drop-in replacements for
//! the wavelet block in the same model chassis.
//!
//! FNet2d mixes tokens with a parameter-free 2D DFT over (H, W) followed by a
//! 1D DFT over channels, carrying complex intermediates and taking the real
//! part once at the end. MlpMixer2d mixes with dense layers along width,
//! height and channels.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{gelu, BatchNorm2d, Conv2d, ConvSpec, DenseAxis, LayerNormChannels, SpatialAxis};
use crate::rng::DetRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Dense DFT matrix exp(-2 pi i j k / n) split into cos/sin parts.
pub struct DftMatrix<T: Scalar> {
    pub n: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Scalar> DftMatrix<T> {
    pub fn new(n: usize) -> Self {
        let mut cos = vec![T::zero(); n * n];
        let mut sin = vec![T::zero(); n * n];
        for j in 0..n {
            for k in 0..n {
                let theta = 2.0 * std::f64::consts::PI * (j * k % n) as f64 / n as f64;
                cos[j * n + k] = T::from_f64_c(theta.cos());
                sin[j * n + k] = T::from_f64_c(theta.sin());
            }
        }
        DftMatrix { n, cos, sin }
    }
}

struct ComplexBuf<T> {
    re: Vec<T>,
    im: Vec<T>,
}

/// One DFT pass along a strided axis: for each base offset, transform the
/// length-n vector at positions base + i*stride.
fn dft_pass<T: Scalar>(buf: &mut ComplexBuf<T>, dft: &DftMatrix<T>, bases: &[usize], stride: usize) {
    let n = dft.n;
    let mut tre = vec![T::zero(); n];
    let mut tim = vec![T::zero(); n];
    for &base in bases {
        for j in 0..n {
            let row_c = &dft.cos[j * n..][..n];
            let row_s = &dft.sin[j * n..][..n];
            let mut acc_re = T::zero();
            let mut acc_im = T::zero();
            for k in 0..n {
                let re = buf.re[base + k * stride];
                let im = buf.im[base + k * stride];
                // (re + i im)(cos - i sin)
                acc_re = acc_re + re * row_c[k] + im * row_s[k];
                acc_im = acc_im + im * row_c[k] - re * row_s[k];
            }
            tre[j] = acc_re;
            tim[j] = acc_im;
        }
        for j in 0..n {
            buf.re[base + j * stride] = tre[j];
            buf.im[base + j * stride] = tim[j];
        }
    }
}

/// Re(DFT_C(DFT_H(DFT_W(x)))) for one sample block of c*h*w values.
fn mix_sample<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    dh: &DftMatrix<T>,
    dw: &DftMatrix<T>,
    dc: &DftMatrix<T>,
) -> Vec<T> {
    let mut buf = ComplexBuf {
        re: x.to_vec(),
        im: vec![T::zero(); x.len()],
    };
    // along width: contiguous rows
    let row_bases: Vec<usize> = (0..c * h).map(|r| r * w).collect();
    dft_pass(&mut buf, dw, &row_bases, 1);
    // along height: stride w within each channel plane
    let col_bases: Vec<usize> = (0..c)
        .flat_map(|ch| (0..w).map(move |x_| ch * h * w + x_))
        .collect();
    dft_pass(&mut buf, dh, &col_bases, w);
    // along channels: stride h*w
    let chan_bases: Vec<usize> = (0..h * w).collect();
    dft_pass(&mut buf, dc, &chan_bases, h * w);
    buf.re
}

/// FNet-style block: parameter-free spectral token mixing, then feed-forward
/// (1x1 convs with GELU), batch normalization and a residual connection.
pub struct FNet2dBlock<T: Scalar> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    dft_h: DftMatrix<T>,
    dft_w: DftMatrix<T>,
    dft_c: DftMatrix<T>,
    ff1: Conv2d<T>,
    ff2: Conv2d<T>,
    norm: BatchNorm2d<T>,
}

fn conv1x1(cin: usize, cout: usize) -> ConvSpec {
    ConvSpec {
        in_channels: cin,
        out_channels: cout,
        kernel: (1, 1),
        stride: (1, 1),
        padding: (0, 0),
        groups: 1,
    }
}

impl<T: Scalar> FNet2dBlock<T> {
    pub fn new(channels: usize, height: usize, width: usize, expansion: usize, rng: &mut DetRng) -> Result<Self> {
        Ok(FNet2dBlock {
            channels,
            height,
            width,
            dft_h: DftMatrix::new(height),
            dft_w: DftMatrix::new(width),
            dft_c: DftMatrix::new(channels),
            ff1: Conv2d::new(conv1x1(channels, expansion * channels), rng)?,
            ff2: Conv2d::new(conv1x1(expansion * channels, channels), rng)?,
            norm: BatchNorm2d::new(channels),
        })
    }

    /// The fixed spectral mixing stage. Linear in x; its transpose equals
    /// itself (symmetric DFT matrices), so backward reuses the same pass.
    pub fn mix(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels || s[2] != self.height || s[3] != self.width {
            return Err(Error::shape(
                "fnet2d_mix",
                format!(
                    "expected (B,{},{},{}), got {s:?}",
                    self.channels, self.height, self.width
                ),
            ));
        }
        let (bsz, c, h, w) = (s[0], s[1], s[2], s[3]);
        let block = c * h * w;
        let dft_h = DftMatrix::<T> {
            n: self.dft_h.n,
            cos: self.dft_h.cos.clone(),
            sin: self.dft_h.sin.clone(),
        };
        let dft_w = DftMatrix::<T> {
            n: self.dft_w.n,
            cos: self.dft_w.cos.clone(),
            sin: self.dft_w.sin.clone(),
        };
        let dft_c = DftMatrix::<T> {
            n: self.dft_c.n,
            cos: self.dft_c.cos.clone(),
            sin: self.dft_c.sin.clone(),
        };
        let run = move |data: &[T]| -> Vec<T> {
            let mut out = vec![T::zero(); data.len()];
            out.par_chunks_mut(block)
                .zip(data.par_chunks(block))
                .for_each(|(o, xs)| {
                    o.copy_from_slice(&mix_sample(xs, c, h, w, &dft_h, &dft_w, &dft_c));
                });
            out
        };
        let out = run(&x.data());
        let parent = x.clone();
        Ok(Tensor::from_op(
            out,
            vec![bsz, c, h, w],
            "fnet2d_mix",
            vec![x.clone()],
            move |grad| {
                if parent.requires_grad() {
                    parent.accumulate_grad(&run(grad));
                }
            },
        ))
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let mixed = self.mix(x)?;
        let ff = self.ff2.forward(&gelu(&self.ff1.forward(&mixed)?))?;
        self.norm.forward(&ff, training)?.add(x)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for (n, t) in self.ff1.params() {
            out.push((format!("{prefix}.ff1.{n}"), t));
        }
        for (n, t) in self.ff2.params() {
            out.push((format!("{prefix}.ff2.{n}"), t));
        }
        for (n, t) in self.norm.params() {
            out.push((format!("{prefix}.norm.{n}"), t));
        }
    }

    pub fn buffers(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for (n, t) in self.norm.buffers() {
            out.push((format!("{prefix}.norm.{n}"), t));
        }
    }

    pub fn param_count(&self) -> usize {
        let mut v = Vec::new();
        self.params("b", &mut v);
        v.iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Mixer-style block: dense layers along width and height (layer-normalized
/// inputs), then a channel MLP behind batch normalization, one residual
/// around the whole block.
pub struct MlpMixer2dBlock<T: Scalar> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    ln1: LayerNormChannels<T>,
    width_mlp: DenseAxis<T>,
    ln2: LayerNormChannels<T>,
    height_mlp: DenseAxis<T>,
    norm: BatchNorm2d<T>,
    ch1: Conv2d<T>,
    ch2: Conv2d<T>,
}

impl<T: Scalar> MlpMixer2dBlock<T> {
    pub fn new(channels: usize, height: usize, width: usize, expansion: usize, rng: &mut DetRng) -> Result<Self> {
        Ok(MlpMixer2dBlock {
            channels,
            height,
            width,
            ln1: LayerNormChannels::new(channels),
            width_mlp: DenseAxis::new(SpatialAxis::Width, width, rng)?,
            ln2: LayerNormChannels::new(channels),
            height_mlp: DenseAxis::new(SpatialAxis::Height, height, rng)?,
            norm: BatchNorm2d::new(channels),
            ch1: Conv2d::new(conv1x1(channels, expansion * channels), rng)?,
            ch2: Conv2d::new(conv1x1(expansion * channels, channels), rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels || s[2] != self.height || s[3] != self.width {
            return Err(Error::shape(
                "mlpmixer2d_block",
                format!(
                    "expected (B,{},{},{}), got {s:?}",
                    self.channels, self.height, self.width
                ),
            ));
        }
        let t = self.width_mlp.forward(&self.ln1.forward(x)?)?;
        let t = self.height_mlp.forward(&self.ln2.forward(&t)?)?;
        let t = self.norm.forward(&t, training)?;
        let t = self.ch2.forward(&gelu(&self.ch1.forward(&t)?))?;
        t.add(x)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for (n, t) in self.ln1.params() {
            out.push((format!("{prefix}.ln1.{n}"), t));
        }
        for (n, t) in self.width_mlp.params() {
            out.push((format!("{prefix}.width_mlp.{n}"), t));
        }
        for (n, t) in self.ln2.params() {
            out.push((format!("{prefix}.ln2.{n}"), t));
        }
        for (n, t) in self.height_mlp.params() {
            out.push((format!("{prefix}.height_mlp.{n}"), t));
        }
        for (n, t) in self.norm.params() {
            out.push((format!("{prefix}.norm.{n}"), t));
        }
        for (n, t) in self.ch1.params() {
            out.push((format!("{prefix}.ch1.{n}"), t));
        }
        for (n, t) in self.ch2.params() {
            out.push((format!("{prefix}.ch2.{n}"), t));
        }
    }

    pub fn buffers(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for (n, t) in self.norm.buffers() {
            out.push((format!("{prefix}.norm.{n}"), t));
        }
    }

    pub fn param_count(&self) -> usize {
        let mut v = Vec::new();
        self.params("b", &mut v);
        v.iter().map(|(_, t)| t.numel()).sum()
    }
}
