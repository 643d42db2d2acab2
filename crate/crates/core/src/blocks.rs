//! The wavelet token-mixing blocks: learnable processing around a fixed Haar
//! pyramid, shape-preserving with a residual connection.
//!
//! Full block: multi-level pyramid -> per-level channel MLP (1x1 convs with a
//! GELU between) -> per-level transposed-conv upsample back to the input size
//! -> channel concat (back to C) -> depthwise 5x5 -> GELU -> batchnorm ->
//! residual add.
//!
//! Lite block: 1x1 reduction to C/4 -> one DWT level (back to C channels at
//! half size) -> expanding MLP -> transposed-conv upsample -> batchnorm ->
//! residual add.

use crate::dwt::{compute_levels, dwt2_pyramid, dwt2_level};
use crate::error::{Error, Result};
use crate::nn::{gelu, BatchNorm2d, Conv2d, ConvSpec, ConvTranspose2d};
use crate::rng::DetRng;
use crate::scalar::Scalar;
use crate::tensor::{concat_channels, Tensor};

/// Width of the per-level MLP hidden layer as a multiple of the embedding.
pub const DEFAULT_MLP_HIDDEN_MULT: usize = 7;
/// Expansion factor of the Lite block MLP.
pub const DEFAULT_LITE_EXPANSION: usize = 8;

/// Per-level output channels c_l with sum C; the remainder goes to the finest
/// levels, so e.g. C=64, L=5 splits as `[13,13,13,13,12]`.
pub fn level_channel_split(channels: usize, levels: usize) -> Vec<usize> {
    let base = channels / levels;
    let rem = channels % levels;
    (0..levels)
        .map(|l| base + usize::from(l < rem))
        .collect()
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

/// Crop a (B,C,h,w) tensor down to (target_h, target_w) from the top-left,
/// discarding the bottom/right rows introduced by pyramid padding.
fn crop_to<T: Scalar>(x: &Tensor<T>, target_h: usize, target_w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if s[2] == target_h && s[3] == target_w {
        return Ok(x.clone());
    }
    x.crop2d([0, s[2] - target_h, 0, s[3] - target_w])
}

pub struct WaveMixBlock<T: Scalar> {
    pub channels: usize,
    pub levels: usize,
    level_mix1: Vec<Conv2d<T>>,
    level_mix2: Vec<Conv2d<T>>,
    level_up: Vec<ConvTranspose2d<T>>,
    depthwise: Conv2d<T>,
    norm: BatchNorm2d<T>,
}

impl<T: Scalar> WaveMixBlock<T> {
    pub fn new(channels: usize, levels: usize, hidden_mult: usize, rng: &mut DetRng) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Config("wavemix block needs levels >= 1".into()));
        }
        if channels < levels {
            return Err(Error::Config(format!(
                "embedding {channels} cannot be split across {levels} levels"
            )));
        }
        let hidden = hidden_mult * channels;
        let split = level_channel_split(channels, levels);
        let mut level_mix1 = Vec::with_capacity(levels);
        let mut level_mix2 = Vec::with_capacity(levels);
        let mut level_up = Vec::with_capacity(levels);
        for (l, &cl) in split.iter().enumerate() {
            level_mix1.push(Conv2d::new(conv1x1(4 * channels, hidden), rng)?);
            level_mix2.push(Conv2d::new(conv1x1(hidden, cl), rng)?);
            let k = 1usize << (l + 1);
            level_up.push(ConvTranspose2d::new(
                ConvSpec {
                    in_channels: cl,
                    out_channels: cl,
                    kernel: (k, k),
                    stride: (k, k),
                    padding: (0, 0),
                    groups: 1,
                },
                rng,
            )?);
        }
        let depthwise = Conv2d::new(
            ConvSpec {
                in_channels: channels,
                out_channels: channels,
                kernel: (5, 5),
                stride: (1, 1),
                padding: (2, 2),
                groups: channels,
            },
            rng,
        )?;
        Ok(WaveMixBlock {
            channels,
            levels,
            level_mix1,
            level_mix2,
            level_up,
            depthwise,
            norm: BatchNorm2d::new(channels),
        })
    }

    /// Levels chosen from the input size when not fixed by configuration.
    pub fn auto_levels(h: usize, w: usize) -> Result<usize> {
        compute_levels(h, w)
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::shape(
                "wavemix_block",
                format!("expected (B,{},H,W), got {s:?}", self.channels),
            ));
        }
        let (h, w) = (s[2], s[3]);
        let pyramid = dwt2_pyramid(x, self.levels)?;
        let mut parts = Vec::with_capacity(self.levels);
        for (l, level) in pyramid.levels.iter().enumerate() {
            let mixed = self.level_mix2[l].forward(&gelu(&self.level_mix1[l].forward(level)?))?;
            let up = self.level_up[l].forward(&mixed)?;
            parts.push(crop_to(&up, h, w)?);
        }
        let cat = concat_channels(&parts)?;
        let out = self.norm.forward(&gelu(&self.depthwise.forward(&cat)?), training)?;
        out.add(x)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for l in 0..self.levels {
            for (n, t) in self.level_mix1[l].params() {
                out.push((format!("{prefix}.level{}.mix1.{n}", l + 1), t));
            }
            for (n, t) in self.level_mix2[l].params() {
                out.push((format!("{prefix}.level{}.mix2.{n}", l + 1), t));
            }
            for (n, t) in self.level_up[l].params() {
                out.push((format!("{prefix}.level{}.up.{n}", l + 1), t));
            }
        }
        for (n, t) in self.depthwise.params() {
            out.push((format!("{prefix}.depthwise.{n}"), t));
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

pub struct WaveMixLiteBlock<T: Scalar> {
    pub channels: usize,
    reduce: Conv2d<T>,
    mix1: Conv2d<T>,
    mix2: Conv2d<T>,
    up: ConvTranspose2d<T>,
    norm: BatchNorm2d<T>,
}

impl<T: Scalar> WaveMixLiteBlock<T> {
    pub fn new(channels: usize, expansion: usize, rng: &mut DetRng) -> Result<Self> {
        if !channels.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "lite block embedding {channels} must be divisible by 4"
            )));
        }
        Ok(WaveMixLiteBlock {
            channels,
            reduce: Conv2d::new(conv1x1(channels, channels / 4), rng)?,
            mix1: Conv2d::new(conv1x1(channels, expansion * channels), rng)?,
            mix2: Conv2d::new(conv1x1(expansion * channels, channels), rng)?,
            up: ConvTranspose2d::new(
                ConvSpec {
                    in_channels: channels,
                    out_channels: channels,
                    kernel: (2, 2),
                    stride: (2, 2),
                    padding: (0, 0),
                    groups: 1,
                },
                rng,
            )?,
            norm: BatchNorm2d::new(channels),
        })
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::shape(
                "wavemix_lite_block",
                format!("expected (B,{},H,W), got {s:?}", self.channels),
            ));
        }
        let (h, w) = (s[2], s[3]);
        let reduced = self.reduce.forward(x)?;
        let bands = dwt2_level(&reduced)?;
        let mixed = self.mix2.forward(&gelu(&self.mix1.forward(&bands)?))?;
        let up = crop_to(&self.up.forward(&mixed)?, h, w)?;
        self.norm.forward(&up, training)?.add(x)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for (n, t) in self.reduce.params() {
            out.push((format!("{prefix}.reduce.{n}"), t));
        }
        for (n, t) in self.mix1.params() {
            out.push((format!("{prefix}.mix1.{n}"), t));
        }
        for (n, t) in self.mix2.params() {
            out.push((format!("{prefix}.mix2.{n}"), t));
        }
        for (n, t) in self.up.params() {
            out.push((format!("{prefix}.up.{n}"), t));
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
