//! Core differentiable tensor operations.
//!
//! Elementwise binary ops broadcast only over the batch (leading) axis, which
//! is all the architecture needs. Reductions accumulate left to right so the
//! results are bitwise reproducible regardless of thread count.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How the batch axis lines up for a binary elementwise op.
#[derive(Clone, Copy)]
struct Broadcast {
    out_len: usize,
    block: usize,
    a_broadcast: bool,
    b_broadcast: bool,
}

fn broadcast_spec<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(Vec<usize>, Broadcast)> {
    let sa = a.shape();
    let sb = b.shape();
    if sa == sb {
        return Ok((
            sa.to_vec(),
            Broadcast {
                out_len: a.numel(),
                block: a.numel(),
                a_broadcast: false,
                b_broadcast: false,
            },
        ));
    }
    if sa.len() == sb.len() && !sa.is_empty() && sa[1..] == sb[1..] && (sa[0] == 1 || sb[0] == 1) {
        let rest: usize = sa[1..].iter().product();
        let batch = sa[0].max(sb[0]);
        let mut out_shape = sa.to_vec();
        out_shape[0] = batch;
        return Ok((
            out_shape,
            Broadcast {
                out_len: batch * rest,
                block: rest,
                a_broadcast: sa[0] == 1,
                b_broadcast: sb[0] == 1,
            },
        ));
    }
    Err(Error::shape(
        op,
        format!("{sa:?} and {sb:?} do not match (batch-axis broadcast only)"),
    ))
}

/// Reduce a full-size gradient back onto a batch-broadcast operand.
fn reduce_to_operand<T: Scalar>(grad: &[T], block: usize, broadcast: bool) -> Vec<T> {
    if !broadcast {
        return grad.to_vec();
    }
    let mut out = vec![T::zero(); block];
    for chunk in grad.chunks_exact(block) {
        for (o, g) in out.iter_mut().zip(chunk) {
            *o += *g;
        }
    }
    out
}

impl<T: Scalar> Tensor<T> {
    fn binary(
        &self,
        other: &Tensor<T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
        // df wrt a and b given (a, b)
        dfa: impl Fn(T, T) -> T + Send + Sync + 'static,
        dfb: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> Result<Tensor<T>> {
        let (out_shape, spec) = broadcast_spec(op, self, other)?;
        let a = self.data();
        let b = other.data();
        let mut out = Vec::with_capacity(spec.out_len);
        for i in 0..spec.out_len {
            let av = a[if spec.a_broadcast { i % spec.block } else { i }];
            let bv = b[if spec.b_broadcast { i % spec.block } else { i }];
            out.push(f(av, bv));
        }
        drop(a);
        drop(b);
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            out,
            out_shape,
            op,
            vec![self.clone(), other.clone()],
            move |grad| {
                let a = pa.data();
                let b = pb.data();
                if pa.requires_grad() {
                    let mut ga = vec![T::zero(); grad.len()];
                    for (i, g) in grad.iter().enumerate() {
                        let av = a[if spec.a_broadcast { i % spec.block } else { i }];
                        let bv = b[if spec.b_broadcast { i % spec.block } else { i }];
                        ga[i] = *g * dfa(av, bv);
                    }
                    let ga = reduce_to_operand(&ga, spec.block, spec.a_broadcast);
                    drop(a);
                    pa.accumulate_grad(&ga);
                } else {
                    drop(a);
                }
                if pb.requires_grad() {
                    let a = pa.data();
                    let mut gb = vec![T::zero(); grad.len()];
                    for (i, g) in grad.iter().enumerate() {
                        let av = a[if spec.a_broadcast { i % spec.block } else { i }];
                        let bv = b[if spec.b_broadcast { i % spec.block } else { i }];
                        gb[i] = *g * dfb(av, bv);
                    }
                    let gb = reduce_to_operand(&gb, spec.block, spec.b_broadcast);
                    drop(a);
                    drop(b);
                    pb.accumulate_grad(&gb);
                }
            },
        ))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "add", |a, b| a + b, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "sub", |a, b| a - b, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    /// Elementwise map with analytic derivative `df(x)`.
    pub(crate) fn map(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T) -> T + Send + Sync + 'static,
    ) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|&v| f(v)).collect();
        let shape = self.shape().to_vec();
        let parent = self.clone();
        Tensor::from_op(out, shape, op, vec![self.clone()], move |grad| {
            if parent.requires_grad() {
                let x = parent.data();
                let contrib: Vec<T> = grad.iter().zip(x.iter()).map(|(&g, &v)| g * df(v)).collect();
                drop(x);
                parent.accumulate_grad(&contrib);
            }
        })
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        self.map("scale", move |v| v * c, move |_| c)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-T::one())
    }

    /// Sum of all elements, left-to-right, producing a rank-0 tensor.
    pub fn sum(&self) -> Tensor<T> {
        let d = self.data();
        let mut acc = T::zero();
        for &v in d.iter() {
            acc += v;
        }
        drop(d);
        let parent = self.clone();
        Tensor::from_op(vec![acc], vec![], "sum", vec![self.clone()], move |grad| {
            if parent.requires_grad() {
                parent.with_grad_mut(|buf| {
                    for b in buf.iter_mut() {
                        *b += grad[0];
                    }
                });
            }
        })
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = T::from_f64_c(self.numel() as f64);
        self.sum().scale(T::one() / n)
    }

    /// Matrix product of a (m,k) and b (k,n).
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(
                "matmul",
                format!("expected (m,k) x (k,n), got {sa:?} x {sb:?}"),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let a = self.data();
        let b = other.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            for j in 0..n {
                let mut acc = T::zero();
                for (p, &av) in arow.iter().enumerate() {
                    acc += av * b[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        drop(a);
        drop(b);
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            "matmul",
            vec![self.clone(), other.clone()],
            move |grad| {
                if pa.requires_grad() {
                    let b = pb.data();
                    let mut ga = vec![T::zero(); m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = T::zero();
                            for j in 0..n {
                                acc += grad[i * n + j] * b[p * n + j];
                            }
                            ga[i * k + p] = acc;
                        }
                    }
                    drop(b);
                    pa.accumulate_grad(&ga);
                }
                if pb.requires_grad() {
                    let a = pa.data();
                    let mut gb = vec![T::zero(); k * n];
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = T::zero();
                            for i in 0..m {
                                acc += a[i * k + p] * grad[i * n + j];
                            }
                            gb[p * n + j] = acc;
                        }
                    }
                    drop(a);
                    pb.accumulate_grad(&gb);
                }
            },
        ))
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<T>> {
        if new_shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {new_shape:?}", self.shape()),
            ));
        }
        let out = self.to_vec();
        let parent = self.clone();
        Ok(Tensor::from_op(
            out,
            new_shape.to_vec(),
            "reshape",
            vec![self.clone()],
            move |grad| {
                if parent.requires_grad() {
                    parent.accumulate_grad(grad);
                }
            },
        ))
    }

    /// Channels `[start, end)` of a BCHW tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::shape("slice_channels", format!("expected BCHW, got {s:?}")));
        }
        let (bsz, c, h, w) = (s[0], s[1], s[2], s[3]);
        if start >= end || end > c {
            return Err(Error::invalid(
                "slice_channels",
                format!("range {start}..{end} out of {c} channels"),
            ));
        }
        let cs = end - start;
        let plane = h * w;
        let d = self.data();
        let mut out = Vec::with_capacity(bsz * cs * plane);
        for b in 0..bsz {
            let base = (b * c + start) * plane;
            out.extend_from_slice(&d[base..base + cs * plane]);
        }
        drop(d);
        let parent = self.clone();
        Ok(Tensor::from_op(
            out,
            vec![bsz, cs, h, w],
            "slice_channels",
            vec![self.clone()],
            move |grad| {
                if parent.requires_grad() {
                    parent.with_grad_mut(|buf| {
                        for b in 0..bsz {
                            let src = b * cs * plane;
                            let dst = (b * c + start) * plane;
                            for i in 0..cs * plane {
                                buf[dst + i] += grad[src + i];
                            }
                        }
                    });
                }
            },
        ))
    }

    /// Zero padding of the spatial axes; `pad` is [top, bottom, left, right].
    pub fn pad2d(&self, pad: [usize; 4]) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::shape("pad2d", format!("expected BCHW, got {s:?}")));
        }
        let [top, bottom, left, right] = pad;
        let (bsz, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h + top + bottom, w + left + right);
        let d = self.data();
        let mut out = vec![T::zero(); bsz * c * oh * ow];
        for bc in 0..bsz * c {
            for y in 0..h {
                let src = (bc * h + y) * w;
                let dst = (bc * oh + y + top) * ow + left;
                out[dst..dst + w].copy_from_slice(&d[src..src + w]);
            }
        }
        drop(d);
        let parent = self.clone();
        Ok(Tensor::from_op(
            out,
            vec![bsz, c, oh, ow],
            "pad2d",
            vec![self.clone()],
            move |grad| {
                if parent.requires_grad() {
                    parent.with_grad_mut(|buf| {
                        for bc in 0..bsz * c {
                            for y in 0..h {
                                let dst = (bc * h + y) * w;
                                let src = (bc * oh + y + top) * ow + left;
                                for x in 0..w {
                                    buf[dst + x] += grad[src + x];
                                }
                            }
                        }
                    });
                }
            },
        ))
    }

    /// Remove borders from the spatial axes; `crop` is [top, bottom, left, right].
    pub fn crop2d(&self, crop: [usize; 4]) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::shape("crop2d", format!("expected BCHW, got {s:?}")));
        }
        let [top, bottom, left, right] = crop;
        let (bsz, c, h, w) = (s[0], s[1], s[2], s[3]);
        if top + bottom >= h || left + right >= w {
            return Err(Error::invalid(
                "crop2d",
                format!("crop {crop:?} swallows the whole {h}x{w} extent"),
            ));
        }
        let (oh, ow) = (h - top - bottom, w - left - right);
        let d = self.data();
        let mut out = Vec::with_capacity(bsz * c * oh * ow);
        for bc in 0..bsz * c {
            for y in 0..oh {
                let src = (bc * h + y + top) * w + left;
                out.extend_from_slice(&d[src..src + ow]);
            }
        }
        drop(d);
        let parent = self.clone();
        Ok(Tensor::from_op(
            out,
            vec![bsz, c, oh, ow],
            "crop2d",
            vec![self.clone()],
            move |grad| {
                if parent.requires_grad() {
                    parent.with_grad_mut(|buf| {
                        for bc in 0..bsz * c {
                            for y in 0..oh {
                                let dst = (bc * h + y + top) * w + left;
                                let src = (bc * oh + y) * ow;
                                for x in 0..ow {
                                    buf[dst + x] += grad[src + x];
                                }
                            }
                        }
                    });
                }
            },
        ))
    }
}

/// Concatenate BCHW tensors along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return Err(Error::invalid("concat_channels", "no tensors given"));
    }
    let s0 = parts[0].shape().to_vec();
    if s0.len() != 4 {
        return Err(Error::shape("concat_channels", format!("expected BCHW, got {s0:?}")));
    }
    let (bsz, h, w) = (s0[0], s0[2], s0[3]);
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let s = p.shape();
        if s.len() != 4 || s[0] != bsz || s[2] != h || s[3] != w {
            return Err(Error::shape(
                "concat_channels",
                format!("{s:?} does not align with {s0:?} outside the channel axis"),
            ));
        }
        channels.push(s[1]);
    }
    let c_total: usize = channels.iter().sum();
    let plane = h * w;
    let mut out = Vec::with_capacity(bsz * c_total * plane);
    for b in 0..bsz {
        for (p, &cp) in parts.iter().zip(&channels) {
            let d = p.data();
            out.extend_from_slice(&d[b * cp * plane..(b + 1) * cp * plane]);
        }
    }
    let parents: Vec<Tensor<T>> = parts.to_vec();
    let handles: Vec<Tensor<T>> = parts.to_vec();
    let channels_bw = channels.clone();
    Ok(Tensor::from_op(
        out,
        vec![bsz, c_total, h, w],
        "concat_channels",
        parents,
        move |grad| {
            let mut offset = 0usize;
            for (p, &cp) in handles.iter().zip(&channels_bw) {
                if p.requires_grad() {
                    let mut contrib = Vec::with_capacity(bsz * cp * plane);
                    for b in 0..bsz {
                        let src = (b * c_total + offset) * plane;
                        contrib.extend_from_slice(&grad[src..src + cp * plane]);
                    }
                    p.accumulate_grad(&contrib);
                }
                offset += cp;
            }
        },
    ))
}
