//! Batch normalization over (B,H,W) and layer normalization over channels.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 2D batch normalization with running statistics.
///
/// Training mode normalizes each channel over (B,H,W) with the biased batch
/// variance and updates the running statistics as an exponential moving
/// average (unbiased variance, PyTorch convention). Eval mode is a pure
/// affine map from the running statistics.
pub struct BatchNorm2d<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    /// Buffers, not learnable: updated in place during training forward.
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: T,
    pub epsilon: T,
    channels: usize,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::param(vec![T::one(); channels], &[channels]).expect("gamma"),
            beta: Tensor::param(vec![T::zero(); channels], &[channels]).expect("beta"),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: T::from_f64_c(0.1),
            epsilon: T::from_f64_c(1e-5),
            channels,
        }
    }

    pub fn params(&self) -> Vec<(&'static str, Tensor<T>)> {
        vec![("gamma", self.gamma.clone()), ("beta", self.beta.clone())]
    }

    pub fn buffers(&self) -> Vec<(&'static str, Tensor<T>)> {
        vec![
            ("running_mean", self.running_mean.clone()),
            ("running_var", self.running_var.clone()),
        ]
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::shape(
                "batchnorm2d",
                format!("expected (B,{},H,W), got {s:?}", self.channels),
            ));
        }
        let (bsz, c, h, w) = (s[0], s[1], s[2], s[3]);
        let n = bsz * h * w;
        if training {
            if n < 2 {
                return Err(Error::invalid(
                    "batchnorm2d",
                    format!("training mode needs B*H*W >= 2, got {n}"),
                ));
            }
            self.forward_train(x, bsz, c, h, w)
        } else {
            self.forward_eval(x, bsz, c, h, w)
        }
    }

    fn forward_train(&self, x: &Tensor<T>, bsz: usize, c: usize, h: usize, w: usize) -> Result<Tensor<T>> {
        let plane = h * w;
        let n = bsz * plane;
        let nf = T::from_f64_c(n as f64);
        let xd = x.data();

        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut acc = T::zero();
            for b in 0..bsz {
                let p = &xd[(b * c + ch) * plane..][..plane];
                for &v in p {
                    acc += v;
                }
            }
            mean[ch] = acc / nf;
            let mut sq = T::zero();
            for b in 0..bsz {
                let p = &xd[(b * c + ch) * plane..][..plane];
                for &v in p {
                    let d = v - mean[ch];
                    sq += d * d;
                }
            }
            var[ch] = sq / nf;
        }

        // Running stats: r <- (1-m) r + m * batch, unbiased variance.
        let m = self.momentum;
        let unbias = nf / T::from_f64_c((n - 1) as f64);
        let mut rm = self.running_mean.to_vec();
        let mut rv = self.running_var.to_vec();
        for ch in 0..c {
            rm[ch] = (T::one() - m) * rm[ch] + m * mean[ch];
            rv[ch] = (T::one() - m) * rv[ch] + m * var[ch] * unbias;
        }
        self.running_mean.set_data(&rm);
        self.running_var.set_data(&rv);

        let inv_std: Vec<T> = var.iter().map(|&v| (v + self.epsilon).sqrt().recip()).collect();
        let gd = self.gamma.data();
        let bd = self.beta.data();
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..bsz {
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                let (mu, is, g, be) = (mean[ch], inv_std[ch], gd[ch], bd[ch]);
                for i in 0..plane {
                    out[base + i] = (xd[base + i] - mu) * is * g + be;
                }
            }
        }
        drop(xd);
        drop(gd);
        drop(bd);

        let (px, pg, pb) = (x.clone(), self.gamma.clone(), self.beta.clone());
        let shape = vec![bsz, c, h, w];
        Ok(Tensor::from_op(
            out,
            shape,
            "batchnorm2d",
            vec![x.clone(), self.gamma.clone(), self.beta.clone()],
            move |grad| {
                let xd = px.data();
                let gd = pg.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = if px.requires_grad() {
                    vec![T::zero(); xd.len()]
                } else {
                    Vec::new()
                };
                for ch in 0..c {
                    let (mu, is) = (mean[ch], inv_std[ch]);
                    let mut sum_g = T::zero();
                    let mut sum_gx = T::zero();
                    for b in 0..bsz {
                        let base = (b * c + ch) * plane;
                        for i in 0..plane {
                            let g = grad[base + i];
                            let xh = (xd[base + i] - mu) * is;
                            sum_g += g;
                            sum_gx += g * xh;
                        }
                    }
                    dbeta[ch] = sum_g;
                    dgamma[ch] = sum_gx;
                    if px.requires_grad() {
                        let scale = gd[ch] * is;
                        let mean_g = sum_g / nf;
                        let mean_gx = sum_gx / nf;
                        for b in 0..bsz {
                            let base = (b * c + ch) * plane;
                            for i in 0..plane {
                                let g = grad[base + i];
                                let xh = (xd[base + i] - mu) * is;
                                dx[base + i] = scale * (g - mean_g - xh * mean_gx);
                            }
                        }
                    }
                }
                drop(xd);
                drop(gd);
                if px.requires_grad() {
                    px.accumulate_grad(&dx);
                }
                if pg.requires_grad() {
                    pg.accumulate_grad(&dgamma);
                }
                if pb.requires_grad() {
                    pb.accumulate_grad(&dbeta);
                }
            },
        ))
    }

    fn forward_eval(&self, x: &Tensor<T>, bsz: usize, c: usize, h: usize, w: usize) -> Result<Tensor<T>> {
        let plane = h * w;
        let xd = x.data();
        let rm = self.running_mean.to_vec();
        let rv = self.running_var.to_vec();
        let gd = self.gamma.data();
        let bd = self.beta.data();
        let inv_std: Vec<T> = rv.iter().map(|&v| (v + self.epsilon).sqrt().recip()).collect();
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..bsz {
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                let (mu, is, g, be) = (rm[ch], inv_std[ch], gd[ch], bd[ch]);
                for i in 0..plane {
                    out[base + i] = (xd[base + i] - mu) * is * g + be;
                }
            }
        }
        drop(xd);
        drop(gd);
        drop(bd);

        let (px, pg, pb) = (x.clone(), self.gamma.clone(), self.beta.clone());
        Ok(Tensor::from_op(
            out,
            vec![bsz, c, h, w],
            "batchnorm2d_eval",
            vec![x.clone(), self.gamma.clone(), self.beta.clone()],
            move |grad| {
                let xd = px.data();
                let gd = pg.data();
                if px.requires_grad() {
                    let mut dx = vec![T::zero(); xd.len()];
                    for b in 0..bsz {
                        for ch in 0..c {
                            let base = (b * c + ch) * plane;
                            let scale = gd[ch] * inv_std[ch];
                            for i in 0..plane {
                                dx[base + i] = grad[base + i] * scale;
                            }
                        }
                    }
                    px.accumulate_grad(&dx);
                }
                if pg.requires_grad() || pb.requires_grad() {
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    for b in 0..bsz {
                        for ch in 0..c {
                            let base = (b * c + ch) * plane;
                            for i in 0..plane {
                                let g = grad[base + i];
                                dbeta[ch] += g;
                                dgamma[ch] += g * (xd[base + i] - rm[ch]) * inv_std[ch];
                            }
                        }
                    }
                    if pg.requires_grad() {
                        pg.accumulate_grad(&dgamma);
                    }
                    if pb.requires_grad() {
                        pb.accumulate_grad(&dbeta);
                    }
                }
            },
        ))
    }
}

/// Layer normalization across the channel axis of a BCHW tensor, with a
/// per-channel affine. Each spatial position (b,h,w) is normalized over C.
pub struct LayerNormChannels<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub epsilon: T,
    channels: usize,
}

impl<T: Scalar> LayerNormChannels<T> {
    pub fn new(channels: usize) -> Self {
        LayerNormChannels {
            gamma: Tensor::param(vec![T::one(); channels], &[channels]).expect("gamma"),
            beta: Tensor::param(vec![T::zero(); channels], &[channels]).expect("beta"),
            epsilon: T::from_f64_c(1e-5),
            channels,
        }
    }

    pub fn params(&self) -> Vec<(&'static str, Tensor<T>)> {
        vec![("gamma", self.gamma.clone()), ("beta", self.beta.clone())]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::shape(
                "layernorm_channels",
                format!("expected (B,{},H,W), got {s:?}", self.channels),
            ));
        }
        let (bsz, c, h, w) = (s[0], s[1], s[2], s[3]);
        let plane = h * w;
        let cf = T::from_f64_c(c as f64);
        let eps = self.epsilon;
        let xd = x.data();
        let gd = self.gamma.data();
        let bd = self.beta.data();

        let mut out = vec![T::zero(); xd.len()];
        let mut mean = vec![T::zero(); bsz * plane];
        let mut inv_std = vec![T::zero(); bsz * plane];
        for b in 0..bsz {
            for p in 0..plane {
                let mut acc = T::zero();
                for ch in 0..c {
                    acc += xd[(b * c + ch) * plane + p];
                }
                let mu = acc / cf;
                let mut sq = T::zero();
                for ch in 0..c {
                    let d = xd[(b * c + ch) * plane + p] - mu;
                    sq += d * d;
                }
                let is = (sq / cf + eps).sqrt().recip();
                mean[b * plane + p] = mu;
                inv_std[b * plane + p] = is;
                for ch in 0..c {
                    let i = (b * c + ch) * plane + p;
                    out[i] = (xd[i] - mu) * is * gd[ch] + bd[ch];
                }
            }
        }
        drop(xd);
        drop(gd);
        drop(bd);

        let (px, pg, pb) = (x.clone(), self.gamma.clone(), self.beta.clone());
        Ok(Tensor::from_op(
            out,
            vec![bsz, c, h, w],
            "layernorm_channels",
            vec![x.clone(), self.gamma.clone(), self.beta.clone()],
            move |grad| {
                let xd = px.data();
                let gd = pg.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = if px.requires_grad() {
                    vec![T::zero(); xd.len()]
                } else {
                    Vec::new()
                };
                for b in 0..bsz {
                    for p in 0..plane {
                        let mu = mean[b * plane + p];
                        let is = inv_std[b * plane + p];
                        let mut sum_g = T::zero();
                        let mut sum_gx = T::zero();
                        for ch in 0..c {
                            let i = (b * c + ch) * plane + p;
                            let xh = (xd[i] - mu) * is;
                            let gy = grad[i] * gd[ch];
                            dbeta[ch] += grad[i];
                            dgamma[ch] += grad[i] * xh;
                            sum_g += gy;
                            sum_gx += gy * xh;
                        }
                        if px.requires_grad() {
                            for ch in 0..c {
                                let i = (b * c + ch) * plane + p;
                                let xh = (xd[i] - mu) * is;
                                let gy = grad[i] * gd[ch];
                                dx[i] = is * (gy - sum_g / cf - xh * sum_gx / cf);
                            }
                        }
                    }
                }
                drop(xd);
                drop(gd);
                if px.requires_grad() {
                    px.accumulate_grad(&dx);
                }
                if pg.requires_grad() {
                    pg.accumulate_grad(&dgamma);
                }
                if pb.requires_grad() {
                    pb.accumulate_grad(&dbeta);
                }
            },
        ))
    }
}
