//! Full classifier assembly: stem convolutions with stride rules, a stack of
//! interchangeable mixing blocks, and the pooled classification head.

use crate::baselines::{FNet2dBlock, MlpMixer2dBlock};
use crate::blocks::{WaveMixBlock, WaveMixLiteBlock, DEFAULT_LITE_EXPANSION, DEFAULT_MLP_HIDDEN_MULT};
use crate::dwt::compute_levels;
use crate::error::{Error, Result};
use crate::nn::{dropout, gelu, global_avg_pool, topk_correct, Conv2d, ConvSpec, Linear};
use crate::rng::DetRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    WaveMix,
    WaveMixLite,
    FNet2d,
    MlpMixer2d,
}

impl BlockKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "wavemix" => Ok(BlockKind::WaveMix),
            "wavemix-lite" | "wavemix_lite" => Ok(BlockKind::WaveMixLite),
            "fnet2d" => Ok(BlockKind::FNet2d),
            "mlpmixer2d" => Ok(BlockKind::MlpMixer2d),
            other => Err(Error::Config(format!(
                "unknown model kind `{other}` (expected wavemix|wavemix-lite|fnet2d|mlpmixer2d)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BlockKind::WaveMix => "wavemix",
            BlockKind::WaveMixLite => "wavemix-lite",
            BlockKind::FNet2d => "fnet2d",
            BlockKind::MlpMixer2d => "mlpmixer2d",
        }
    }
}

/// Default block family for an embedding width: the lite block above 64.
pub fn select_block_variant(embedding: usize) -> BlockKind {
    if embedding > 64 {
        BlockKind::WaveMixLite
    } else {
        BlockKind::WaveMix
    }
}

/// Minimal power-of-two stem strides (s1, s2) bringing the stem output to at
/// most 64x64. Inputs below 64 keep stride 1; 256 needs (2, 2).
pub fn stem_strides(h: usize, w: usize) -> (usize, usize) {
    let out = |e: usize, s: usize| (e - 1) / s + 1;
    let candidates = [(1, 1), (2, 1), (2, 2), (4, 2), (4, 4), (8, 4), (8, 8)];
    for (s1, s2) in candidates {
        let oh = out(out(h, s1), s2);
        let ow = out(out(w, s1), s2);
        if oh.max(ow) <= 64 {
            return (s1, s2);
        }
    }
    (8, 8)
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub block_kind: BlockKind,
    pub embedding: usize,
    pub depth: usize,
    /// Wavelet levels; `None` selects from the stem output size.
    pub levels: Option<usize>,
    pub input_size: (usize, usize),
    pub in_channels: usize,
    pub num_classes: usize,
    pub dropout: f64,
    /// `None` applies the stride rule.
    pub stem_strides: Option<(usize, usize)>,
    pub lite_expansion: usize,
    pub mlp_hidden_mult: usize,
    /// Feed-forward expansion of the fnet2d / mlpmixer2d baselines.
    pub ff_expansion: usize,
}

impl ModelConfig {
    /// Model-C/N with everything else defaulted for a given input.
    pub fn new(block_kind: BlockKind, embedding: usize, depth: usize) -> Self {
        ModelConfig {
            block_kind,
            embedding,
            depth,
            levels: None,
            input_size: (32, 32),
            in_channels: 3,
            num_classes: 10,
            dropout: 0.5,
            stem_strides: None,
            lite_expansion: DEFAULT_LITE_EXPANSION,
            mlp_hidden_mult: DEFAULT_MLP_HIDDEN_MULT,
            ff_expansion: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding < 2 || !self.embedding.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "embedding {} must be even and >= 2 (the stem widens in two stages)",
                self.embedding
            )));
        }
        if self.block_kind == BlockKind::WaveMixLite && !self.embedding.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "lite blocks need embedding divisible by 4, got {}",
                self.embedding
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }
}

enum BlockStack<T: Scalar> {
    WaveMix(Vec<WaveMixBlock<T>>),
    Lite(Vec<WaveMixLiteBlock<T>>),
    FNet(Vec<FNet2dBlock<T>>),
    Mixer(Vec<MlpMixer2dBlock<T>>),
}

pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    /// Spatial size after the stem; the size every block sees.
    pub stem_output: (usize, usize),
    /// Resolved wavelet levels (wavemix blocks only, 0 otherwise).
    pub levels: usize,
    stem1: Conv2d<T>,
    stem2: Conv2d<T>,
    blocks: BlockStack<T>,
    head_conv: Conv2d<T>,
    head_linear: Linear<T>,
}

fn conv3x3(cin: usize, cout: usize, stride: usize) -> ConvSpec {
    ConvSpec {
        in_channels: cin,
        out_channels: cout,
        kernel: (3, 3),
        stride: (stride, stride),
        padding: (1, 1),
        groups: 1,
    }
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

pub fn build_model<T: Scalar>(config: ModelConfig, rng: &mut DetRng) -> Result<Model<T>> {
    config.validate()?;
    let c = config.embedding;
    let (h, w) = config.input_size;
    let (s1, s2) = config.stem_strides.unwrap_or_else(|| stem_strides(h, w));
    let out = |e: usize, s: usize| (e - 1) / s + 1;
    let stem_output = (out(out(h, s1), s2), out(out(w, s1), s2));
    if stem_output.0.max(stem_output.1) > 64 {
        return Err(Error::Config(format!(
            "stem output {}x{} exceeds 64; increase the stem strides",
            stem_output.0, stem_output.1
        )));
    }

    let stem1 = Conv2d::new(conv3x3(config.in_channels, c / 2, s1), rng)?;
    let stem2 = Conv2d::new(conv3x3(c / 2, c, s2), rng)?;

    let levels = match config.block_kind {
        BlockKind::WaveMix => match config.levels {
            Some(l) => l,
            None => compute_levels(stem_output.0, stem_output.1)?,
        },
        _ => 0,
    };

    let blocks = match config.block_kind {
        BlockKind::WaveMix => BlockStack::WaveMix(
            (0..config.depth)
                .map(|_| WaveMixBlock::new(c, levels, config.mlp_hidden_mult, rng))
                .collect::<Result<_>>()?,
        ),
        BlockKind::WaveMixLite => BlockStack::Lite(
            (0..config.depth)
                .map(|_| WaveMixLiteBlock::new(c, config.lite_expansion, rng))
                .collect::<Result<_>>()?,
        ),
        BlockKind::FNet2d => BlockStack::FNet(
            (0..config.depth)
                .map(|_| FNet2dBlock::new(c, stem_output.0, stem_output.1, config.ff_expansion, rng))
                .collect::<Result<_>>()?,
        ),
        BlockKind::MlpMixer2d => BlockStack::Mixer(
            (0..config.depth)
                .map(|_| MlpMixer2dBlock::new(c, stem_output.0, stem_output.1, config.ff_expansion, rng))
                .collect::<Result<_>>()?,
        ),
    };

    let head_conv = Conv2d::new(conv1x1(c, c), rng)?;
    let head_linear = Linear::new(c, config.num_classes, rng)?;
    Ok(Model {
        config,
        stem_output,
        levels,
        stem1,
        stem2,
        blocks,
        head_conv,
        head_linear,
    })
}

impl<T: Scalar> Model<T> {
    fn forward_inner(&self, images: &Tensor<T>, training: bool, rng: Option<&mut DetRng>) -> Result<Tensor<T>> {
        let s = images.shape();
        if s.len() != 4
            || s[1] != self.config.in_channels
            || (s[2], s[3]) != self.config.input_size
        {
            return Err(Error::shape(
                "model_forward",
                format!(
                    "expected (B,{},{},{}) images, got {s:?}",
                    self.config.in_channels, self.config.input_size.0, self.config.input_size.1
                ),
            ));
        }
        let mut t = gelu(&self.stem1.forward(images)?);
        t = self.stem2.forward(&t)?;
        match &self.blocks {
            BlockStack::WaveMix(bs) => {
                for b in bs {
                    t = b.forward(&t, training)?;
                }
            }
            BlockStack::Lite(bs) => {
                for b in bs {
                    t = b.forward(&t, training)?;
                }
            }
            BlockStack::FNet(bs) => {
                for b in bs {
                    t = b.forward(&t, training)?;
                }
            }
            BlockStack::Mixer(bs) => {
                for b in bs {
                    t = b.forward(&t, training)?;
                }
            }
        }
        t = gelu(&self.head_conv.forward(&t)?);
        if training {
            let rng = rng.ok_or_else(|| Error::invalid("model_forward", "training forward needs an RNG"))?;
            t = dropout(&t, self.config.dropout, true, rng)?;
        }
        let pooled = global_avg_pool(&t)?;
        self.head_linear.forward(&pooled)
    }

    pub fn forward_train(&self, images: &Tensor<T>, rng: &mut DetRng) -> Result<Tensor<T>> {
        self.forward_inner(images, true, Some(rng))
    }

    pub fn forward_eval(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_inner(images, false, None)
    }

    /// All learnable parameters, named.
    pub fn params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (n, t) in self.stem1.params() {
            out.push((format!("stem.conv1.{n}"), t));
        }
        for (n, t) in self.stem2.params() {
            out.push((format!("stem.conv2.{n}"), t));
        }
        match &self.blocks {
            BlockStack::WaveMix(bs) => {
                for (i, b) in bs.iter().enumerate() {
                    b.params(&format!("blocks.{}", i + 1), &mut out);
                }
            }
            BlockStack::Lite(bs) => {
                for (i, b) in bs.iter().enumerate() {
                    b.params(&format!("blocks.{}", i + 1), &mut out);
                }
            }
            BlockStack::FNet(bs) => {
                for (i, b) in bs.iter().enumerate() {
                    b.params(&format!("blocks.{}", i + 1), &mut out);
                }
            }
            BlockStack::Mixer(bs) => {
                for (i, b) in bs.iter().enumerate() {
                    b.params(&format!("blocks.{}", i + 1), &mut out);
                }
            }
        }
        for (n, t) in self.head_conv.params() {
            out.push((format!("head.conv.{n}"), t));
        }
        for (n, t) in self.head_linear.params() {
            out.push((format!("head.linear.{n}"), t));
        }
        out
    }

    /// Non-learnable buffers (batchnorm running statistics), named.
    pub fn buffers(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        match &self.blocks {
            BlockStack::WaveMix(bs) => {
                for (i, b) in bs.iter().enumerate() {
                    b.buffers(&format!("blocks.{}", i + 1), &mut out);
                }
            }
            BlockStack::Lite(bs) => {
                for (i, b) in bs.iter().enumerate() {
                    b.buffers(&format!("blocks.{}", i + 1), &mut out);
                }
            }
            BlockStack::FNet(bs) => {
                for (i, b) in bs.iter().enumerate() {
                    b.buffers(&format!("blocks.{}", i + 1), &mut out);
                }
            }
            BlockStack::Mixer(bs) => {
                for (i, b) in bs.iter().enumerate() {
                    b.buffers(&format!("blocks.{}", i + 1), &mut out);
                }
            }
        }
        out
    }

    pub fn count_params(&self) -> ParamReport {
        let params = self.params();
        let group_of = |name: &str| -> String {
            if let Some(rest) = name.strip_prefix("blocks.") {
                let idx: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
                format!("blocks.{idx}")
            } else if name.starts_with("stem.") {
                "stem".to_string()
            } else {
                "head".to_string()
            }
        };
        let mut groups: Vec<(String, usize)> = Vec::new();
        for (name, t) in &params {
            let g = group_of(name);
            match groups.iter_mut().find(|(n, _)| *n == g) {
                Some((_, c)) => *c += t.numel(),
                None => groups.push((g, t.numel())),
            }
        }
        let total = params.iter().map(|(_, t)| t.numel()).sum();
        ParamReport { groups, total }
    }
}

/// Grouped learnable-scalar counts (running statistics excluded).
#[derive(Debug, Clone)]
pub struct ParamReport {
    pub groups: Vec<(String, usize)>,
    pub total: usize,
}

impl ParamReport {
    pub fn millions(&self) -> f64 {
        self.total as f64 / 1e6
    }
}

/// Top-1/top-5 accuracy of logits against labels, as fractions.
pub fn accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> (f64, f64) {
    let k = logits.shape()[1];
    let d = logits.data();
    let n = labels.len().max(1) as f64;
    let top1 = topk_correct(&d, k, labels, 1) as f64 / n;
    let top5 = topk_correct(&d, k, labels, 5.min(k)) as f64 / n;
    (top1, top5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::softmax_rows;

    #[test]
    fn stride_rule_reference_points() {
        assert_eq!(stem_strides(32, 32), (1, 1));
        assert_eq!(stem_strides(28, 28), (1, 1));
        assert_eq!(stem_strides(64, 64), (1, 1));
        assert_eq!(stem_strides(96, 96), (2, 1));
        assert_eq!(stem_strides(256, 256), (2, 2));
        for size in [28usize, 32, 64, 96, 256] {
            let (s1, s2) = stem_strides(size, size);
            let out = |e: usize, s: usize| (e - 1) / s + 1;
            assert!(out(out(size, s1), s2) <= 64);
        }
    }

    #[test]
    fn variant_selection_threshold() {
        assert_eq!(select_block_variant(128), BlockKind::WaveMixLite);
        assert_eq!(select_block_variant(256), BlockKind::WaveMixLite);
        assert_eq!(select_block_variant(64), BlockKind::WaveMix);
        assert_eq!(select_block_variant(16), BlockKind::WaveMix);
    }

    #[test]
    fn auto_levels_from_input() {
        let mut rng = DetRng::new(1);
        let cfg = ModelConfig::new(BlockKind::WaveMix, 8, 2);
        let m: Model<f64> = build_model(cfg, &mut rng).unwrap();
        assert_eq!(m.levels, 4);
        let mut cfg28 = ModelConfig::new(BlockKind::WaveMix, 8, 2);
        cfg28.input_size = (28, 28);
        cfg28.in_channels = 1;
        let m28: Model<f64> = build_model(cfg28, &mut rng).unwrap();
        assert_eq!(m28.levels, 3);
    }

    #[test]
    fn forward_shapes_and_softmax_rows() {
        let mut rng = DetRng::new(2);
        let cfg = ModelConfig::new(BlockKind::WaveMix, 8, 2);
        let m: Model<f64> = build_model(cfg, &mut rng).unwrap();
        let n: usize = 4 * 3 * 32 * 32;
        let images = Tensor::from_vec(
            (0..n).map(|_| rng.normal::<f64>()).collect(),
            &[4, 3, 32, 32],
        )
        .unwrap();
        let logits = m.forward_eval(&images).unwrap();
        assert_eq!(logits.shape(), &[4, 10]);
        let probs = softmax_rows(&logits.to_vec(), 10);
        for row in probs.chunks_exact(10) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn untrained_loss_near_ln_k() {
        let mut rng = DetRng::new(3);
        let cfg = ModelConfig::new(BlockKind::WaveMix, 8, 2);
        let m: Model<f64> = build_model(cfg, &mut rng).unwrap();
        let bsz = 40usize;
        let images = Tensor::from_vec(
            (0..bsz * 3 * 32 * 32).map(|_| rng.normal::<f64>()).collect(),
            &[bsz, 3, 32, 32],
        )
        .unwrap();
        let labels: Vec<usize> = (0..bsz).map(|i| i % 10).collect();
        let logits = m.forward_eval(&images).unwrap();
        let loss = crate::nn::softmax_cross_entropy(&logits, &labels).unwrap().item();
        let lnk = (10f64).ln();
        assert!(
            (loss - lnk).abs() / lnk < 0.10,
            "loss {loss} not within 10% of ln 10"
        );
    }

    #[test]
    fn count_invariant_to_input_size_with_fixed_levels_and_strides() {
        let mut rng = DetRng::new(4);
        let mut a = ModelConfig::new(BlockKind::WaveMix, 8, 2);
        a.levels = Some(3);
        a.stem_strides = Some((1, 1));
        let mut b = a.clone();
        b.input_size = (28, 28);
        let ma: Model<f64> = build_model(a, &mut rng).unwrap();
        let mb: Model<f64> = build_model(b, &mut rng).unwrap();
        assert_eq!(ma.count_params().total, mb.count_params().total);
    }

    #[test]
    fn linear_head_count() {
        let mut rng = DetRng::new(5);
        let lin = Linear::<f64>::new(16, 10, &mut rng).unwrap();
        let n: usize = lin.params().iter().map(|(_, t)| t.numel()).sum();
        assert_eq!(n, 16 * 10 + 10);
    }

    #[test]
    fn depth_zero_is_stem_plus_head() {
        let mut rng = DetRng::new(6);
        let cfg = ModelConfig::new(BlockKind::WaveMix, 8, 0);
        let m: Model<f64> = build_model(cfg, &mut rng).unwrap();
        let c = 8usize;
        let stem = (c / 2) * 3 * 9 + c / 2 + c * (c / 2) * 9 + c;
        let head = c * c + c + c * 10 + 10;
        assert_eq!(m.count_params().total, stem + head);
    }

    #[test]
    fn every_block_kind_assembles_and_forwards() {
        for kind in [
            BlockKind::WaveMix,
            BlockKind::WaveMixLite,
            BlockKind::FNet2d,
            BlockKind::MlpMixer2d,
        ] {
            let mut rng = DetRng::new(11);
            let cfg = ModelConfig::new(kind, 8, 2);
            let m: Model<f64> = build_model(cfg, &mut rng).unwrap();
            let images = Tensor::from_vec(
                (0..2 * 3 * 32 * 32).map(|_| rng.normal()).collect(),
                &[2, 3, 32, 32],
            )
            .unwrap();
            let logits = m.forward_eval(&images).unwrap();
            assert_eq!(logits.shape(), &[2, 10], "{}", kind.name());
            assert!(logits.to_vec().iter().all(|v| v.is_finite()));
            let loss = crate::nn::softmax_cross_entropy(&logits, &[0, 1]).unwrap();
            loss.backward().unwrap();
            for (name, p) in m.params() {
                if let Some(g) = p.grad() {
                    assert!(g.iter().all(|v| v.is_finite()), "{name} grad not finite");
                }
            }
        }
    }

    #[test]
    fn eval_forward_is_safe_from_multiple_threads() {
        let mut rng = DetRng::new(8);
        let cfg = ModelConfig::new(BlockKind::WaveMix, 8, 1);
        let m: Model<f64> = build_model(cfg, &mut rng).unwrap();
        let mk = |seed: u64| {
            let mut r = DetRng::new(seed);
            Tensor::<f64>::from_vec(
                (0..2 * 3 * 32 * 32).map(|_| r.normal()).collect(),
                &[2, 3, 32, 32],
            )
            .unwrap()
        };
        let (a, b) = (mk(1), mk(2));
        let (ra, rb) = std::thread::scope(|s| {
            let ha = s.spawn(|| m.forward_eval(&a).unwrap().to_vec());
            let hb = s.spawn(|| m.forward_eval(&b).unwrap().to_vec());
            (ha.join().unwrap(), hb.join().unwrap())
        });
        // same inputs sequentially give the same answers
        assert_eq!(ra, m.forward_eval(&a).unwrap().to_vec());
        assert_eq!(rb, m.forward_eval(&b).unwrap().to_vec());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut rng = DetRng::new(7);
        let mut cfg = ModelConfig::new(BlockKind::WaveMixLite, 6, 1);
        cfg.embedding = 6; // not divisible by 4
        assert!(build_model::<f64>(cfg, &mut rng).is_err());
        let mut cfg2 = ModelConfig::new(BlockKind::WaveMix, 8, 1);
        cfg2.dropout = 1.5;
        assert!(build_model::<f64>(cfg2, &mut rng).is_err());
    }
}
