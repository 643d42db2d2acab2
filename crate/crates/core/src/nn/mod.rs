//! Neural network layers: convolutions, normalization, activation, pooling,
//! dropout, linear classifier and the softmax cross-entropy loss.

mod conv;
mod norm;

pub use conv::{conv2d, conv2d_transposed, Conv2d, ConvSpec, ConvTranspose2d};
pub use norm::{BatchNorm2d, LayerNormChannels};

use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub mod init {
    use super::*;

    /// Kaiming-uniform fan-in initialization with the standard leaky slope
    /// (a = sqrt(5)), giving U(-b, b) with b = 1 / sqrt(fan_in). Keeps
    /// activations from growing through layers that have no nonlinearity, so
    /// an untrained classifier predicts near-uniform probabilities.
    pub fn kaiming_uniform<T: Scalar>(n: usize, fan_in: usize, rng: &mut DetRng) -> Vec<T> {
        let bound = T::from_f64_c((1.0 / fan_in as f64).sqrt());
        (0..n).map(|_| rng.uniform(-bound, bound)).collect()
    }
}

use init::kaiming_uniform;

/// Exact GELU: x * Phi(x) with Phi the standard normal CDF (erf form).
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let half = T::from_f64_c(0.5);
    let inv_sqrt2 = T::from_f64_c(std::f64::consts::FRAC_1_SQRT_2);
    let inv_sqrt_2pi = T::from_f64_c(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    let phi = move |v: T| half * (T::one() + (v * inv_sqrt2).erf());
    x.map(
        "gelu",
        move |v| v * phi(v),
        move |v| phi(v) + v * inv_sqrt_2pi * (-v * v * half).exp(),
    )
}

/// Inverted dropout: zero with probability `rate`, scale survivors by
/// 1/(1-rate). Identity in eval mode.
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    training: bool,
    rng: &mut DetRng,
) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(
            "dropout",
            format!("rate {rate} outside [0, 1)"),
        ));
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let keep_scale = T::from_f64_c(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.numel())
        .map(|_| {
            if rng.gen_f64() < rate {
                T::zero()
            } else {
                keep_scale
            }
        })
        .collect();
    let out: Vec<T> = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    let shape = x.shape().to_vec();
    let parent = x.clone();
    Ok(Tensor::from_op(out, shape, "dropout", vec![x.clone()], move |grad| {
        if parent.requires_grad() {
            let contrib: Vec<T> = grad.iter().zip(&mask).map(|(&g, &m)| g * m).collect();
            parent.accumulate_grad(&contrib);
        }
    }))
}

/// Per-(b,c) spatial mean: (B,C,H,W) -> (B,C).
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("global_avg_pool", format!("expected BCHW, got {s:?}")));
    }
    let (bsz, c, h, w) = (s[0], s[1], s[2], s[3]);
    let plane = h * w;
    let pf = T::from_f64_c(plane as f64);
    let d = x.data();
    let mut out = Vec::with_capacity(bsz * c);
    for bc in 0..bsz * c {
        let p = &d[bc * plane..][..plane];
        let mut acc = T::zero();
        for &v in p {
            acc += v;
        }
        out.push(acc / pf);
    }
    drop(d);
    let parent = x.clone();
    Ok(Tensor::from_op(
        out,
        vec![bsz, c],
        "global_avg_pool",
        vec![x.clone()],
        move |grad| {
            if parent.requires_grad() {
                parent.with_grad_mut(|buf| {
                    for (bc, &g) in grad.iter().enumerate() {
                        let gv = g / pf;
                        for v in buf[bc * plane..][..plane].iter_mut() {
                            *v += gv;
                        }
                    }
                });
            }
        },
    ))
}

/// Fully connected layer; weight (out, in), bias (out).
pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub in_features: usize,
    pub out_features: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut DetRng) -> Result<Self> {
        let weight = Tensor::param(
            kaiming_uniform(out_features * in_features, in_features, rng),
            &[out_features, in_features],
        )?;
        let bias = Tensor::param(vec![T::zero(); out_features], &[out_features])?;
        Ok(Linear {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    pub fn params(&self) -> Vec<(&'static str, Tensor<T>)> {
        vec![("weight", self.weight.clone()), ("bias", self.bias.clone())]
    }

    /// x (B, in) -> (B, out)
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 2 || s[1] != self.in_features {
            return Err(Error::shape(
                "linear",
                format!("expected (B,{}), got {s:?}", self.in_features),
            ));
        }
        let (bsz, cin, cout) = (s[0], self.in_features, self.out_features);
        let xd = x.data();
        let wd = self.weight.data();
        let bd = self.bias.data();
        let mut out = vec![T::zero(); bsz * cout];
        for b in 0..bsz {
            let xrow = &xd[b * cin..][..cin];
            for o in 0..cout {
                let wrow = &wd[o * cin..][..cin];
                let mut acc = bd[o];
                for (xv, wv) in xrow.iter().zip(wrow) {
                    acc += *xv * *wv;
                }
                out[b * cout + o] = acc;
            }
        }
        drop(xd);
        drop(wd);
        drop(bd);
        let (px, pw, pb) = (x.clone(), self.weight.clone(), self.bias.clone());
        Ok(Tensor::from_op(
            out,
            vec![bsz, cout],
            "linear",
            vec![x.clone(), self.weight.clone(), self.bias.clone()],
            move |grad| {
                if px.requires_grad() {
                    let wd = pw.data();
                    let mut dx = vec![T::zero(); bsz * cin];
                    for b in 0..bsz {
                        for o in 0..cout {
                            let g = grad[b * cout + o];
                            let wrow = &wd[o * cin..][..cin];
                            let xrow = &mut dx[b * cin..];
                            for (xg, wv) in xrow.iter_mut().zip(wrow) {
                                *xg += g * *wv;
                            }
                        }
                    }
                    drop(wd);
                    px.accumulate_grad(&dx);
                }
                if pw.requires_grad() {
                    let xd = px.data();
                    let mut dw = vec![T::zero(); cout * cin];
                    for b in 0..bsz {
                        let xrow = &xd[b * cin..][..cin];
                        for o in 0..cout {
                            let g = grad[b * cout + o];
                            let wrow = &mut dw[o * cin..];
                            for (wg, xv) in wrow.iter_mut().zip(xrow) {
                                *wg += g * *xv;
                            }
                        }
                    }
                    drop(xd);
                    pw.accumulate_grad(&dw);
                }
                if pb.requires_grad() {
                    let mut db = vec![T::zero(); cout];
                    for b in 0..bsz {
                        for (o, d) in db.iter_mut().enumerate() {
                            *d += grad[b * cout + o];
                        }
                    }
                    pb.accumulate_grad(&db);
                }
            },
        ))
    }
}

/// Axis a spatial dense layer acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialAxis {
    Height,
    Width,
}

/// Dense layer applied along one spatial axis of a BCHW tensor, shared across
/// every other index. Weight (n, n), bias (n) with n the axis length.
pub struct DenseAxis<T: Scalar> {
    pub axis: SpatialAxis,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub size: usize,
}

impl<T: Scalar> DenseAxis<T> {
    pub fn new(axis: SpatialAxis, size: usize, rng: &mut DetRng) -> Result<Self> {
        Ok(DenseAxis {
            axis,
            weight: Tensor::param(kaiming_uniform(size * size, size, rng), &[size, size])?,
            bias: Tensor::param(vec![T::zero(); size], &[size])?,
            size,
        })
    }

    pub fn params(&self) -> Vec<(&'static str, Tensor<T>)> {
        vec![("weight", self.weight.clone()), ("bias", self.bias.clone())]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::shape("dense_axis", format!("expected BCHW, got {s:?}")));
        }
        let (bsz, c, h, w) = (s[0], s[1], s[2], s[3]);
        let n = self.size;
        let axis_len = match self.axis {
            SpatialAxis::Height => h,
            SpatialAxis::Width => w,
        };
        if axis_len != n {
            return Err(Error::shape(
                "dense_axis",
                format!("axis length {axis_len} does not match dense size {n}"),
            ));
        }
        let axis = self.axis;
        let xd = x.data();
        let wd = self.weight.data();
        let bd = self.bias.data();
        let mut out = vec![T::zero(); xd.len()];
        match axis {
            SpatialAxis::Width => {
                for row in 0..bsz * c * h {
                    let xrow = &xd[row * w..][..w];
                    let orow = &mut out[row * w..][..w];
                    for j in 0..n {
                        let wrow = &wd[j * n..][..n];
                        let mut acc = bd[j];
                        for (xv, wv) in xrow.iter().zip(wrow) {
                            acc += *xv * *wv;
                        }
                        orow[j] = acc;
                    }
                }
            }
            SpatialAxis::Height => {
                for bc in 0..bsz * c {
                    let xp = &xd[bc * h * w..][..h * w];
                    let op = &mut out[bc * h * w..][..h * w];
                    for j in 0..n {
                        let wrow = &wd[j * n..][..n];
                        for x_ in 0..w {
                            let mut acc = bd[j];
                            for (i, wv) in wrow.iter().enumerate() {
                                acc += *wv * xp[i * w + x_];
                            }
                            op[j * w + x_] = acc;
                        }
                    }
                }
            }
        }
        drop(xd);
        drop(wd);
        drop(bd);
        let (px, pw, pb) = (x.clone(), self.weight.clone(), self.bias.clone());
        Ok(Tensor::from_op(
            out,
            vec![bsz, c, h, w],
            "dense_axis",
            vec![x.clone(), self.weight.clone(), self.bias.clone()],
            move |grad| {
                let wd = pw.data();
                let xd = px.data();
                let mut dx = if px.requires_grad() {
                    vec![T::zero(); xd.len()]
                } else {
                    Vec::new()
                };
                let mut dw = vec![T::zero(); n * n];
                let mut db = vec![T::zero(); n];
                match axis {
                    SpatialAxis::Width => {
                        for row in 0..bsz * c * h {
                            let grow = &grad[row * w..][..w];
                            let xrow = &xd[row * w..][..w];
                            for (j, &g) in grow.iter().enumerate() {
                                db[j] += g;
                                let wrow = &wd[j * n..][..n];
                                let dwrow = &mut dw[j * n..];
                                for i in 0..n {
                                    dwrow[i] += g * xrow[i];
                                }
                                if px.requires_grad() {
                                    let dxrow = &mut dx[row * w..];
                                    for i in 0..n {
                                        dxrow[i] += g * wrow[i];
                                    }
                                }
                            }
                        }
                    }
                    SpatialAxis::Height => {
                        for bc in 0..bsz * c {
                            let gp = &grad[bc * h * w..][..h * w];
                            let xp = &xd[bc * h * w..][..h * w];
                            for j in 0..n {
                                let wrow = &wd[j * n..][..n];
                                for x_ in 0..w {
                                    let g = gp[j * w + x_];
                                    db[j] += g;
                                    let dwrow = &mut dw[j * n..];
                                    for i in 0..n {
                                        dwrow[i] += g * xp[i * w + x_];
                                    }
                                    if px.requires_grad() {
                                        for i in 0..n {
                                            dx[bc * h * w + i * w + x_] += g * wrow[i];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                drop(wd);
                drop(xd);
                if px.requires_grad() {
                    px.accumulate_grad(&dx);
                }
                if pw.requires_grad() {
                    pw.accumulate_grad(&dw);
                }
                if pb.requires_grad() {
                    pb.accumulate_grad(&db);
                }
            },
        ))
    }
}

/// Mean over the batch of `-log softmax(logits)[label]`, stabilized by
/// max-subtraction. Logits (B,K), labels length B with values in [0,K).
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.len() != 2 {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("expected (B,K) logits, got {s:?}"),
        ));
    }
    let (bsz, k) = (s[0], s[1]);
    if labels.len() != bsz {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} labels for batch of {}", labels.len(), bsz),
        ));
    }
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::LabelOutOfRange {
                label: l as u32,
                num_classes: k,
                index: i,
            });
        }
    }
    let d = logits.data();
    let mut probs = vec![T::zero(); bsz * k];
    let mut total = T::zero();
    for b in 0..bsz {
        let row = &d[b * k..][..k];
        let mut m = row[0];
        for &v in row.iter() {
            if v > m {
                m = v;
            }
        }
        let mut denom = T::zero();
        for &v in row.iter() {
            denom += (v - m).exp();
        }
        let log_denom = denom.ln();
        for (j, &v) in row.iter().enumerate() {
            probs[b * k + j] = (v - m - log_denom).exp();
        }
        total += log_denom - (row[labels[b]] - m);
    }
    drop(d);
    let loss = total / T::from_f64_c(bsz as f64);
    let labels: Vec<usize> = labels.to_vec();
    let parent = logits.clone();
    Ok(Tensor::from_op(
        vec![loss],
        vec![],
        "softmax_cross_entropy",
        vec![logits.clone()],
        move |grad| {
            if parent.requires_grad() {
                let g = grad[0] / T::from_f64_c(bsz as f64);
                let mut dx = vec![T::zero(); bsz * k];
                for b in 0..bsz {
                    for j in 0..k {
                        let indicator = if j == labels[b] { T::one() } else { T::zero() };
                        dx[b * k + j] = g * (probs[b * k + j] - indicator);
                    }
                }
                parent.accumulate_grad(&dx);
            }
        },
    ))
}

/// Row softmax of raw values, for inspection and tests (no autodiff).
pub fn softmax_rows<T: Scalar>(rows: &[T], k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows.len()];
    for (row, orow) in rows.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        let mut m = row[0];
        for &v in row {
            if v > m {
                m = v;
            }
        }
        let mut denom = T::zero();
        for &v in row {
            denom += (v - m).exp();
        }
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - m).exp() / denom;
        }
    }
    out
}

/// Count of rows whose label appears in the top-k logits.
pub fn topk_correct<T: Scalar>(logits: &[T], k_classes: usize, labels: &[usize], k: usize) -> usize {
    let mut correct = 0usize;
    for (row, &label) in logits.chunks_exact(k_classes).zip(labels) {
        let target = row[label];
        if target.is_nan() {
            continue;
        }
        // rank = how many classes strictly beat the target, ties broken by index
        let mut beat = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > target || (v == target && j < label) {
                beat += 1;
            }
        }
        if beat < k {
            correct += 1;
        }
    }
    correct
}
