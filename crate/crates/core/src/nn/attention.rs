//! Structured attention over packed neighbor lists, plus a dense reference.
//!
//! The packed form gathers, for every query row `i`, the keys and values of
//! the `m` slots listed in its neighbor row. Padded slots contribute a zero
//! key and value and get a logit of `-inf`, so they receive zero weight.
//! Every slot is processed, which makes the work exactly `n * m * d`
//! multiply-accumulates per logit pass and per value pass.

use crate::error::{Error, Result};
use crate::mask::{AttentionMask, PackedMask, PAD};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

/// Multiply-accumulate counts of attention passes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub logit_macs: u64,
    pub value_macs: u64,
}

impl OpCounter {
    pub fn total(&self) -> u64 {
        self.logit_macs + self.value_macs
    }
}

fn check_qkv<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, heads: usize) -> Result<(usize, usize)> {
    let (n, d) = (q.rows(), q.cols());
    if k.rows() != n || v.rows() != n || k.cols() != d || v.cols() != d {
        return Err(Error::Shape(format!(
            "Q {:?}, K {:?}, V {:?} must all be n x d",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Shape(format!("{heads} heads do not divide d = {d}")));
    }
    Ok((n, d))
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Forward pass. Returns the output (`n x d`) and the attention weights laid
/// out as `[row][head][slot]`.
pub(crate) fn packed_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    n: usize,
    d: usize,
    heads: usize,
    packed: &PackedMask,
    scale: T,
    counter: Option<&mut OpCounter>,
) -> (Vec<T>, Vec<T>) {
    let m = packed.m();
    let dh = d / heads;
    let zero_row = vec![T::zero(); dh];
    let mut out = vec![T::zero(); n * d];
    let mut weights = vec![T::zero(); n * heads * m];
    let neg_inf = T::neg_infinity();
    for i in 0..n {
        let slots = packed.row(i);
        for h in 0..heads {
            let qi = &q[i * d + h * dh..i * d + (h + 1) * dh];
            let w = &mut weights[(i * heads + h) * m..(i * heads + h + 1) * m];
            let mut max = neg_inf;
            for (s, &j) in slots.iter().enumerate() {
                let kj = if j == PAD {
                    &zero_row[..]
                } else {
                    &k[j * d + h * dh..j * d + (h + 1) * dh]
                };
                let logit = dot(qi, kj) * scale;
                w[s] = if j == PAD { neg_inf } else { logit };
                if w[s] > max {
                    max = w[s];
                }
            }
            if max == neg_inf {
                // a row with no allowed slot attends to nothing
                w.fill(T::zero());
            } else {
                let mut total = T::zero();
                for ws in w.iter_mut() {
                    *ws = (*ws - max).exp();
                    total += *ws;
                }
                for ws in w.iter_mut() {
                    *ws /= total;
                }
            }
            let oi = &mut out[i * d + h * dh..i * d + (h + 1) * dh];
            for (s, &j) in slots.iter().enumerate() {
                let vj = if j == PAD {
                    &zero_row[..]
                } else {
                    &v[j * d + h * dh..j * d + (h + 1) * dh]
                };
                let ws = w[s];
                for (o, &x) in oi.iter_mut().zip(vj) {
                    *o += ws * x;
                }
            }
        }
    }
    if let Some(c) = counter {
        let work = (n * m * d) as u64;
        c.logit_macs += work;
        c.value_macs += work;
    }
    (out, weights)
}

/// Backward pass; accumulates into `dq`, `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn packed_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    weights: &[T],
    dout: &[T],
    n: usize,
    d: usize,
    heads: usize,
    packed: &PackedMask,
    scale: T,
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
) {
    let m = packed.m();
    let dh = d / heads;
    let mut dw = vec![T::zero(); m];
    for i in 0..n {
        let slots = packed.row(i);
        for h in 0..heads {
            let w = &weights[(i * heads + h) * m..(i * heads + h + 1) * m];
            let go = &dout[i * d + h * dh..i * d + (h + 1) * dh];
            let mut inner = T::zero();
            for (s, &j) in slots.iter().enumerate() {
                if j == PAD {
                    dw[s] = T::zero();
                    continue;
                }
                let base = j * d + h * dh;
                dw[s] = dot(go, &v[base..base + dh]);
                inner += w[s] * dw[s];
                let ws = w[s];
                for (g, &o) in dv[base..base + dh].iter_mut().zip(go) {
                    *g += ws * o;
                }
            }
            let qi_base = i * d + h * dh;
            for (s, &j) in slots.iter().enumerate() {
                if j == PAD {
                    continue;
                }
                let du = w[s] * (dw[s] - inner) * scale;
                if du == T::zero() {
                    continue;
                }
                let base = j * d + h * dh;
                for c in 0..dh {
                    dq[qi_base + c] += du * k[base + c];
                    dk[base + c] += du * q[qi_base + c];
                }
            }
        }
    }
}

fn default_scale<T: Scalar>(d: usize, heads: usize, scale: bool) -> T {
    if scale {
        T::one() / T::of((d / heads) as f64).sqrt()
    } else {
        T::one()
    }
}

/// Single-head packed attention.
pub fn packed_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    packed: &PackedMask,
    scale: bool,
) -> Result<Tensor<T>> {
    packed_attention_heads(q, k, v, packed, 1, scale, None)
}

/// Multi-head packed attention; all heads share the mask.
pub fn packed_attention_heads<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    packed: &PackedMask,
    heads: usize,
    scale: bool,
    counter: Option<&mut OpCounter>,
) -> Result<Tensor<T>> {
    let (n, d) = check_qkv(q, k, v, heads)?;
    if packed.n() != n {
        return Err(Error::Shape(format!("mask has {} rows, inputs have {n}", packed.n())));
    }
    let s = default_scale(d, heads, scale);
    let (out, _) = packed_forward(q.data(), k.data(), v.data(), n, d, heads, packed, s, counter);
    Tensor::matrix(n, d, out)
}

/// Reference implementation: full `n x n` logits with disallowed entries at
/// `-inf`, then a row softmax.
pub fn dense_masked_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: &AttentionMask,
    heads: usize,
    scale: bool,
    counter: Option<&mut OpCounter>,
) -> Result<Tensor<T>> {
    let (n, d) = check_qkv(q, k, v, heads)?;
    if mask.n() != n {
        return Err(Error::Shape(format!("mask has {} rows, inputs have {n}", mask.n())));
    }
    let s: T = default_scale(d, heads, scale);
    let dh = d / heads;
    let mut out = Tensor::zeros(&[n, d]);
    let mut logits = vec![T::zero(); n];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n {
            let qi = &q.row(i)[cols.clone()];
            for (j, l) in logits.iter_mut().enumerate() {
                let raw = dot(qi, &k.row(j)[cols.clone()]) * s;
                *l = if mask.get(i, j) { raw } else { T::neg_infinity() };
            }
            let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                continue;
            }
            let total: T = logits.iter().map(|&l| (l - max).exp()).sum();
            let oi = &mut out.row_mut(i)[cols.clone()];
            for (j, &l) in logits.iter().enumerate() {
                let w = (l - max).exp() / total;
                for (o, &x) in oi.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *o += w * x;
                }
            }
        }
    }
    if let Some(c) = counter {
        let work = (n * n * d) as u64;
        c.logit_macs += work;
        c.value_macs += work;
    }
    Ok(out)
}
