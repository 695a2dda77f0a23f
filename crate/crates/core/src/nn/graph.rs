//! Reverse-mode tape over coarse tensor operations.
//!
//! A [`Graph`] records every operation of one forward computation together
//! with its output value. Parameters are read in place from a borrowed
//! [`ParameterStore`]; [`Graph::backward`] returns their gradients.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mask::PackedMask;
use crate::nn::attention::{packed_backward, packed_forward, OpCounter};
use crate::nn::params::{Gradients, ParamId, ParameterStore};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Gelu { x: Var, th: Vec<T> },
    LayerNorm { x: Var, inv_std: Vec<T> },
    Gather { table: Var, idx: Vec<Option<usize>> },
    Scatter { parts: Vec<(Var, Vec<usize>)> },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        mask: Arc<PackedMask>,
        heads: usize,
        scale: T,
        weights: Vec<T>,
    },
    Mse { pred: Var, target: Vec<T>, weight: Vec<T>, denom: T },
    Sum(Vec<Var>),
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
}

pub struct Graph<'p, T> {
    store: &'p ParameterStore<T>,
    nodes: Vec<Node<T>>,
    pub counter: OpCounter,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(store: &'p ParameterStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            counter: OpCounter::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            (None, _) => unreachable!("non-parameter nodes own their value"),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let id = self.store.expect_id(name)?;
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `x (r x k) * w (k x c)`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (a, b) = (self.value(x), self.value(w));
        let (r, k, c) = (a.rows(), a.cols(), b.cols());
        if b.rows() != k {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut out = vec![T::zero(); r * c];
        T::gemm(r, k, c, T::one(), a.data(), k as isize, 1, b.data(), c as isize, 1, T::zero(), &mut out, c as isize, 1);
        let t = Tensor::matrix(r, c, out)?;
        Ok(self.push(t, Op::MatMul(x, w)))
    }

    /// Adds the bias vector `b` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.len() != xv.cols() {
            return Err(Error::Shape(format!(
                "bias {:?} for rows of width {}",
                bv.shape(),
                xv.cols()
            )));
        }
        let mut out = xv.clone();
        let c = xv.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv.data()[i % c];
        }
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() || av.cols() != bv.cols() {
            return Err(Error::Shape(format!("add {:?} + {:?}", av.shape(), bv.shape())));
        }
        let mut out = av.clone();
        for (o, &y) in out.data_mut().iter_mut().zip(bv.data()) {
            *o += y;
        }
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let (c, a) = (T::of(GELU_C), T::of(GELU_A));
        let half = T::of(0.5);
        let mut out = self.value(x).clone();
        let mut th = Vec::with_capacity(out.len());
        for o in out.data_mut() {
            let v = *o;
            let t = (c * (v + a * v * v * v)).tanh();
            th.push(t);
            *o = half * v * (T::one() + t);
        }
        self.push(out, Op::Gelu { x, th })
    }

    /// Normalizes every row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.rows());
        let cf = T::of(c as f64);
        for row in out.data_mut().chunks_mut(c) {
            let mean = row.iter().copied().sum::<T>() / cf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cf;
            let s = T::one() / (var + T::of(LN_EPS)).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * s;
            }
            inv_std.push(s);
        }
        self.push(out, Op::LayerNorm { x, inv_std })
    }

    /// Row `r` of the output is row `idx[r]` of `table`, or zeros for `None`.
    pub fn gather_rows(&mut self, table: Var, idx: Vec<Option<usize>>) -> Result<Var> {
        let tv = self.value(table);
        let c = tv.cols();
        let rows = tv.rows();
        let mut out = vec![T::zero(); idx.len() * c];
        for (r, i) in idx.iter().enumerate() {
            if let Some(i) = *i {
                if i >= rows {
                    return Err(Error::Shape(format!("gather row {i} of {rows}")));
                }
                out[r * c..(r + 1) * c].copy_from_slice(tv.row(i));
            }
        }
        let t = Tensor::matrix(idx.len(), c, out)?;
        Ok(self.push(t, Op::Gather { table, idx }))
    }

    /// Places the rows of each part at the listed output rows of a zero
    /// `total x cols` matrix. Target rows must be disjoint across parts.
    pub fn scatter_rows(&mut self, parts: Vec<(Var, Vec<usize>)>, total: usize, cols: usize) -> Result<Var> {
        let mut out = vec![T::zero(); total * cols];
        let mut used = vec![false; total];
        for (v, rows) in &parts {
            let pv = self.value(*v);
            if pv.cols() != cols || pv.rows() != rows.len() {
                return Err(Error::Shape(format!(
                    "scatter part {:?} into {} rows of width {cols}",
                    pv.shape(),
                    rows.len()
                )));
            }
            for (r, &target) in rows.iter().enumerate() {
                if target >= total || std::mem::replace(&mut used[target], true) {
                    return Err(Error::Shape(format!("scatter target row {target} invalid or repeated")));
                }
                out[target * cols..(target + 1) * cols].copy_from_slice(pv.row(r));
            }
        }
        let t = Tensor::matrix(total, cols, out)?;
        Ok(self.push(t, Op::Scatter { parts }))
    }

    /// Multi-head structured attention over a packed mask.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: Arc<PackedMask>, heads: usize, scale: bool) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = (qv.rows(), qv.cols());
        if kv.rows() != n || vv.rows() != n || kv.cols() != d || vv.cols() != d {
            return Err(Error::Shape("attention inputs must share n x d".into()));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!("{heads} heads do not divide d = {d}")));
        }
        if mask.n() != n {
            return Err(Error::Shape(format!("mask has {} rows, inputs have {n}", mask.n())));
        }
        let s = if scale {
            T::one() / T::of((d / heads) as f64).sqrt()
        } else {
            T::one()
        };
        let mut counter = self.counter;
        let (out, weights) = packed_forward(qv.data(), kv.data(), vv.data(), n, d, heads, &mask, s, Some(&mut counter));
        self.counter = counter;
        let t = Tensor::matrix(n, d, out)?;
        Ok(self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                mask,
                heads,
                scale: s,
                weights,
            },
        ))
    }

    /// `sum(weight * (pred - target)^2) / denom`.
    pub fn mse(&mut self, pred: Var, target: Vec<T>, weight: Vec<T>, denom: T) -> Result<Var> {
        let pv = self.value(pred);
        if target.len() != pv.len() || weight.len() != pv.len() {
            return Err(Error::Shape(format!(
                "mse over {} predictions with {} targets and {} weights",
                pv.len(),
                target.len(),
                weight.len()
            )));
        }
        let mut total = T::zero();
        for ((&p, &y), &w) in pv.data().iter().zip(&target).zip(&weight) {
            total += w * (p - y) * (p - y);
        }
        let t = Tensor::scalar(total / denom);
        Ok(self.push(
            t,
            Op::Mse {
                pred,
                target,
                weight,
                denom,
            },
        ))
    }

    /// Sum of scalar nodes.
    pub fn sum(&mut self, terms: Vec<Var>) -> Result<Var> {
        let mut total = T::zero();
        for &v in &terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(Error::Shape("sum expects scalar terms".into()));
            }
            total += t.data()[0];
        }
        Ok(self.push(Tensor::scalar(total), Op::Sum(terms)))
    }

    /// Reverse pass from a scalar; returns the gradient of every node.
    pub fn node_gradients(&self, loss: Var) -> Result<Vec<Option<Vec<T>>>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::Autodiff("backward called before any forward computation".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Autodiff("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    /// Gradients of a scalar loss with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let node_grads = self.node_gradients(loss)?;
        let mut out: Vec<Option<Tensor<T>>> = (0..self.store.len()).map(|_| None).collect();
        for (node, g) in self.nodes.iter().zip(node_grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                let shape = self.store.value(*id).shape().to_vec();
                match &mut out[id.0] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(g) {
                            *a += v;
                        }
                    }
                    slot => *slot = Some(Tensor::new(&shape, g)?),
                }
            }
        }
        Ok(Gradients(out))
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        fn target<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
            grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
        }
        match &self.nodes[i].op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(x, w) => {
                let (a, b) = (self.value(*x), self.value(*w));
                let (r, k, c) = (a.rows(), a.cols(), b.cols());
                let da = target(grads, *x, a.len());
                // dA += dY * B^T
                T::gemm(r, c, k, T::one(), g, c as isize, 1, b.data(), 1, c as isize, T::one(), da, k as isize, 1);
                let db = target(grads, *w, b.len());
                // dB += A^T * dY
                T::gemm(k, r, c, T::one(), a.data(), 1, k as isize, g, c as isize, 1, T::one(), db, c as isize, 1);
            }
            Op::AddBias(x, b) => {
                let c = self.value(*x).cols();
                let dx = target(grads, *x, g.len());
                for (d, &v) in dx.iter_mut().zip(g) {
                    *d += v;
                }
                let db = target(grads, *b, c);
                for row in g.chunks(c) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    let d = target(grads, v, g.len());
                    for (d, &x) in d.iter_mut().zip(g) {
                        *d += x;
                    }
                }
            }
            Op::Gelu { x, th } => {
                let xv = self.value(*x).data();
                let (c, a) = (T::of(GELU_C), T::of(GELU_A));
                let half = T::of(0.5);
                let three = T::of(3.0);
                let dx = target(grads, *x, g.len());
                for (((d, &gi), &v), &th) in dx.iter_mut().zip(g).zip(xv).zip(th) {
                    let deriv = half * (T::one() + th)
                        + half * v * (T::one() - th * th) * c * (T::one() + three * a * v * v);
                    *d += gi * deriv;
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let y = self.nodes[i].value.as_ref().expect("owned value");
                let c = y.cols();
                let cf = T::of(c as f64);
                let dx = target(grads, *x, g.len());
                for (r, &s) in inv_std.iter().enumerate() {
                    let gy = &g[r * c..(r + 1) * c];
                    let yr = y.row(r);
                    let mean_g = gy.iter().copied().sum::<T>() / cf;
                    let mean_gy = gy.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / cf;
                    for ((d, &gi), &yi) in dx[r * c..(r + 1) * c].iter_mut().zip(gy).zip(yr) {
                        *d += s * (gi - mean_g - yi * mean_gy);
                    }
                }
            }
            Op::Gather { table, idx } => {
                let tv = self.value(*table);
                let c = tv.cols();
                let dt = target(grads, *table, tv.len());
                for (r, i) in idx.iter().enumerate() {
                    if let Some(i) = *i {
                        for (d, &v) in dt[i * c..(i + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]) {
                            *d += v;
                        }
                    }
                }
            }
            Op::Scatter { parts } => {
                for (v, rows) in parts {
                    let pv = self.value(*v);
                    let c = pv.cols();
                    let dp = target(grads, *v, pv.len());
                    for (r, &t) in rows.iter().enumerate() {
                        for (d, &x) in dp[r * c..(r + 1) * c].iter_mut().zip(&g[t * c..(t + 1) * c]) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                mask,
                heads,
                scale,
                weights,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (n, d) = (qv.rows(), qv.cols());
                let mut dq = vec![T::zero(); n * d];
                let mut dk = vec![T::zero(); n * d];
                let mut dv = vec![T::zero(); n * d];
                packed_backward(
                    qv.data(),
                    kv.data(),
                    vv.data(),
                    weights,
                    g,
                    n,
                    d,
                    *heads,
                    mask,
                    *scale,
                    &mut dq,
                    &mut dk,
                    &mut dv,
                );
                for (var, local) in [(*q, dq), (*k, dk), (*v, dv)] {
                    let t = target(grads, var, n * d);
                    for (a, b) in t.iter_mut().zip(local) {
                        *a += b;
                    }
                }
            }
            Op::Mse {
                pred,
                target: y,
                weight,
                denom,
            } => {
                let pv = self.value(*pred).data();
                let scale = g[0] * T::of(2.0) / *denom;
                let dp = target(grads, *pred, pv.len());
                for (((d, &p), &t), &w) in dp.iter_mut().zip(pv).zip(y).zip(weight) {
                    *d += scale * w * (p - t);
                }
            }
            Op::Sum(terms) => {
                for &v in terms {
                    target(grads, v, 1)[0] += g[0];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{pack, random_mask};
    use crate::nn::gradcheck::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(entries: &[(&str, &[usize])], seed: u64) -> ParameterStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParameterStore::new();
        for (name, shape) in entries {
            s.insert(name, Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0)))
                .unwrap();
        }
        s
    }

    /// Random projection of an output so that every entry matters.
    fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = g.value(out).len();
        let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weight: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        g.mse(out, target, weight, 1.0).unwrap()
    }

    #[test]
    fn identity_linear_is_identity() {
        let mut s = ParameterStore::<f32>::new();
        s.insert("w", Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        s.insert("b", Tensor::zeros(&[2])).unwrap();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let (w, b) = (g.param("w").unwrap(), g.param("b").unwrap());
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let s = store(&[("w", &[3, 4]), ("b", &[4]), ("x", &[5, 3])], 1);
        let report = grad_check(&s, 1e-6, |g| {
            let (x, w, b) = (g.param("x")?, g.param("w")?, g.param("b")?);
            let y = g.linear(x, w, Some(b))?;
            Ok(project(g, y, 2))
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }

    #[test]
    fn elementwise_ops_gradients() {
        let s = store(&[("x", &[4, 6]), ("t", &[3, 6])], 3);
        let report = grad_check(&s, 1e-6, |g| {
            let x = g.param("x")?;
            let t = g.param("t")?;
            let n = g.layer_norm(x);
            let a = g.gelu(n);
            let gathered = g.gather_rows(t, vec![Some(2), None, Some(0), Some(2)])?;
            let s = g.add(a, gathered)?;
            let top = g.gather_rows(s, vec![Some(3), Some(1)])?;
            let bottom = g.gather_rows(s, vec![Some(0), Some(2)])?;
            let merged = g.scatter_rows(vec![(top, vec![0, 3]), (bottom, vec![1, 2])], 4, 6)?;
            let l1 = project(g, merged, 4);
            let l2 = project(g, x, 5);
            g.sum(vec![l1, l2])
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mask = Arc::new(pack(&random_mask(9, 3, 11).unwrap()));
        let s = store(&[("q", &[9, 8]), ("k", &[9, 8]), ("v", &[9, 8])], 6);
        let report = grad_check(&s, 1e-6, |g| {
            let (q, k, v) = (g.param("q")?, g.param("k")?, g.param("v")?);
            let o = g.attention(q, k, v, mask.clone(), 2, true)?;
            Ok(project(g, o, 7))
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-5, "{report:?}");
    }

    #[test]
    fn backward_requires_a_forward_pass() {
        let s = ParameterStore::<f64>::new();
        let g = Graph::new(&s);
        assert!(matches!(g.backward(Var(0)), Err(Error::Autodiff(_))));
    }

    #[test]
    fn shared_inputs_accumulate() {
        let s = store(&[("x", &[2, 3])], 8);
        let report = grad_check(&s, 1e-6, |g| {
            let x = g.param("x")?;
            let mask = Arc::new(pack(&crate::mask::AttentionMask::full(2)));
            let o = g.attention(x, x, x, mask, 1, false)?;
            let y = g.add(o, x)?;
            Ok(project(g, y, 9))
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }
}
