//! Forward noising, the denoising loss, ancestral sampling and the value codec.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, DenoiserInput, Structure};
use crate::error::{Error, Result};
use crate::graph_model::{Domain, GraphicalModel, Layout};
use crate::nn::{Graph, Var};
use crate::scalar::Scalar;

/// Noise schedule; index `t - 1` holds step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.005,
        }
    }
}

impl DiffusionSchedule {
    /// Linear schedule from `beta_start` at `t = 1` to `beta_end` at `t = T`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn from_config(c: &ScheduleConfig) -> Result<Self> {
        Self::linear(c.steps, c.beta_start, c.beta_end)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!("t = {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Coefficients `(c0, ct, var)` of the reverse step:
    /// `x_{t-1} ~ N(c0 x0_hat + ct x_t, var)`.
    pub fn posterior(&self, t: usize) -> (f64, f64, f64) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let beta = self.beta(t);
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let var = (1.0 - ab_prev) / (1.0 - ab) * beta;
        (c0, ct, var)
    }
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn q_sample<T: Scalar>(x0: &[T], t: usize, eps: &[T], schedule: &DiffusionSchedule) -> Result<Vec<T>> {
    schedule.check(t)?;
    if x0.len() != eps.len() {
        return Err(Error::Shape(format!("{} values with {} noise draws", x0.len(), eps.len())));
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (T::of(ab.sqrt()), T::of((1.0 - ab).sqrt()));
    Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
}

/// One reverse step. Entries flagged in `fixed` are copied unchanged.
pub fn p_sample_step<T: Scalar>(
    x_t: &[T],
    t: usize,
    x0_hat: &[T],
    schedule: &DiffusionSchedule,
    noise: &[T],
    fixed: &[bool],
) -> Result<Vec<T>> {
    schedule.check(t)?;
    if x0_hat.len() != x_t.len() || noise.len() != x_t.len() || fixed.len() != x_t.len() {
        return Err(Error::Shape("reverse step inputs differ in length".into()));
    }
    let (c0, ct, var) = schedule.posterior(t);
    let sd = if t > 1 { var.sqrt() } else { 0.0 };
    let (c0, ct, sd) = (T::of(c0), T::of(ct), T::of(sd));
    Ok((0..x_t.len())
        .map(|i| {
            if fixed[i] {
                x_t[i]
            } else {
                c0 * x0_hat[i] + ct * x_t[i] + sd * noise[i]
            }
        })
        .collect())
}

/// Affine map `(x - shift) / scale` of a continuous array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub shift: f64,
    pub scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self { shift: 0.0, scale: 1.0 }
    }
}

/// Encoded one-hot levels of a `c`-way variable: zero mean, unit mean square.
pub fn one_hot_levels(c: usize) -> (f64, f64) {
    let s = ((c - 1) as f64).sqrt();
    (s, -1.0 / s)
}

/// Maps task values (reals, or class indices stored as floats) to the flat
/// continuous state and back.
#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    domains: Vec<Domain>,
    norms: Vec<Normalization>,
    layout: Layout,
}

impl Codec {
    /// `norms` gives the normalization of continuous arrays by name; missing names use the identity.
    pub fn new(model: &GraphicalModel, norms: &HashMap<String, Normalization>) -> Self {
        let mut per_node = Vec::with_capacity(model.len());
        for array in model.arrays() {
            let n = norms.get(&array.name).copied().unwrap_or_default();
            per_node.extend(std::iter::repeat_n(n, array.len()));
        }
        Self {
            domains: model.domains(),
            norms: per_node,
            layout: model.layout(),
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn encode<T: Scalar>(&self, values: &[f64]) -> Result<Vec<T>> {
        if values.len() != self.domains.len() {
            return Err(Error::Shape(format!("{} values for {} nodes", values.len(), self.domains.len())));
        }
        let mut out = Vec::with_capacity(self.layout.total);
        for (i, (&v, &dom)) in values.iter().zip(&self.domains).enumerate() {
            match dom {
                Domain::Continuous => {
                    let n = self.norms[i];
                    out.push(T::of((v - n.shift) / n.scale));
                }
                Domain::Discrete(c) => {
                    if v.fract() != 0.0 || v < 0.0 || v >= c as f64 {
                        return Err(Error::InvalidArgument(format!("node {i}: {v} is not a class of a {c}-way domain")));
                    }
                    let (on, off) = one_hot_levels(c);
                    let k = v as usize;
                    out.extend((0..c).map(|j| T::of(if j == k { on } else { off })));
                }
            }
        }
        Ok(out)
    }

    /// Inverse normalization and per-node argmax.
    pub fn decode<T: Scalar>(&self, state: &[T]) -> Result<Vec<f64>> {
        if state.len() != self.layout.total {
            return Err(Error::Shape(format!("state of length {} for layout {}", state.len(), self.layout.total)));
        }
        let mut out = Vec::with_capacity(self.domains.len());
        for (i, &dom) in self.domains.iter().enumerate() {
            let chunk = &state[self.layout.range(i)];
            match dom {
                Domain::Continuous => {
                    let n = self.norms[i];
                    out.push(chunk[0].f64() * n.scale + n.shift);
                }
                Domain::Discrete(_) => {
                    let mut best = 0;
                    for (j, v) in chunk.iter().enumerate() {
                        if *v > chunk[best] {
                            best = j;
                        }
                    }
                    out.push(best as f64);
                }
            }
        }
        Ok(out)
    }

    /// Clamps discrete entries into the encoded one-hot range.
    pub fn clamp<T: Scalar>(&self, state: &mut [T]) {
        for (i, &dom) in self.domains.iter().enumerate() {
            if let Domain::Discrete(c) = dom {
                let (on, off) = one_hot_levels(c);
                for v in &mut state[self.layout.range(i)] {
                    *v = v.max(T::of(off)).min(T::of(on));
                }
            }
        }
    }
}

/// Expands per-node flags to per-entry flags.
pub fn entry_flags(layout: &Layout, nodes: &[bool]) -> Vec<bool> {
    let mut out = vec![false; layout.total];
    for (i, &f) in nodes.iter().enumerate() {
        for e in layout.range(i) {
            out[e] = f;
        }
    }
    out
}

/// Rule choosing which nodes are observed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionPolicy {
    /// Exactly the named arrays are observed.
    Arrays(Vec<String>),
    /// `n_o ~ U{0..n-1}` nodes chosen uniformly at random are observed.
    UniformCount,
    /// A fixed number of uniformly chosen nodes are observed.
    FixedCount(usize),
}

pub fn sample_partition(model: &GraphicalModel, policy: &PartitionPolicy, rng: &mut impl Rng) -> Result<Vec<bool>> {
    let n = model.len();
    match policy {
        PartitionPolicy::Arrays(names) => {
            let mut obs = vec![false; n];
            for name in names {
                let (_, a) = model
                    .array_by_name(name)
                    .ok_or_else(|| Error::InvalidArgument(format!("no array named {name}")))?;
                for id in a.ids() {
                    obs[id] = true;
                }
            }
            Ok(obs)
        }
        PartitionPolicy::UniformCount => {
            let k = rng.gen_range(0..n);
            Ok(choose(n, k, rng))
        }
        PartitionPolicy::FixedCount(k) => {
            if *k > n {
                return Err(Error::InvalidArgument(format!("cannot observe {k} of {n} nodes")));
            }
            Ok(choose(n, *k, rng))
        }
    }
}

fn choose(n: usize, k: usize, rng: &mut impl Rng) -> Vec<bool> {
    let mut obs = vec![false; n];
    for i in rand::seq::index::sample(rng, n, k) {
        obs[i] = true;
    }
    obs
}

/// One training example: clean encoded state, partition, time and noise.
#[derive(Debug, Clone)]
pub struct TrainItem<'a, T> {
    pub structure: &'a Structure,
    pub x0: Vec<T>,
    pub observed: Vec<bool>,
    pub t: usize,
    pub eps: Vec<T>,
}

/// Records the denoising loss of a batch: mean squared error between the
/// prediction and the clean state over latent entries. Returns `None` when
/// no entry is latent.
pub fn training_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    denoiser: &Denoiser<T>,
    items: &[TrainItem<'_, T>],
    schedule: &DiffusionSchedule,
) -> Result<Option<Var>> {
    let mut states = Vec::with_capacity(items.len());
    let mut fixed = Vec::with_capacity(items.len());
    let mut count = 0usize;
    for it in items {
        let flags = entry_flags(&it.structure.layout, &it.observed);
        let noisy = q_sample(&it.x0, it.t, &it.eps, schedule)?;
        let x: Vec<T> = (0..it.x0.len()).map(|e| if flags[e] { it.x0[e] } else { noisy[e] }).collect();
        count += flags.iter().filter(|f| !**f).count();
        states.push(x);
        fixed.push(flags);
    }
    if count == 0 {
        return Ok(None);
    }
    let batch: Vec<DenoiserInput<'_, T>> = items
        .iter()
        .zip(&states)
        .map(|(it, x)| DenoiserInput {
            structure: it.structure,
            values: x,
            observed: &it.observed,
            t: it.t,
        })
        .collect();
    let out = denoiser.forward(g, &batch)?;
    let denom = T::of(count as f64);
    let mut terms = Vec::with_capacity(out.parts.len());
    for (_, var, rows) in &out.parts {
        let mut target = Vec::new();
        let mut weight = Vec::new();
        for &(b, node) in rows {
            let range = items[b].structure.layout.range(node);
            for e in range {
                target.push(items[b].x0[e]);
                weight.push(if fixed[b][e] { T::zero() } else { T::one() });
            }
        }
        terms.push(g.mse(*var, target, weight, denom)?);
    }
    Ok(Some(g.sum(terms)?))
}

/// Anything that predicts clean states for a batch of noisy inputs.
pub trait Predictor<T: Scalar> {
    fn predict_batch(&self, batch: &[DenoiserInput<'_, T>]) -> Result<Vec<Vec<T>>>;
}

impl<T: Scalar> Predictor<T> for Denoiser<T> {
    fn predict_batch(&self, batch: &[DenoiserInput<'_, T>]) -> Result<Vec<Vec<T>>> {
        self.predict(batch)
    }
}

/// Returns fixed clean states, one per batch position.
#[derive(Debug, Clone)]
pub struct OraclePredictor<T> {
    pub truths: Vec<Vec<T>>,
}

impl<T: Scalar> Predictor<T> for OraclePredictor<T> {
    fn predict_batch(&self, batch: &[DenoiserInput<'_, T>]) -> Result<Vec<Vec<T>>> {
        if batch.len() > self.truths.len() {
            return Err(Error::InvalidArgument("oracle has fewer truths than chains".into()));
        }
        Ok(self.truths[..batch.len()].to_vec())
    }
}

/// One reverse-diffusion chain.
#[derive(Debug, Clone)]
pub struct Chain<'a, T> {
    pub structure: &'a Structure,
    /// Encoded clean values; only observed entries are read.
    pub condition: Vec<T>,
    pub observed: Vec<bool>,
    pub seed: u64,
}

/// Runs every chain from `t = T` to `t = 1` in lockstep and returns the final
/// encoded states. Observed entries keep their conditioning values.
pub fn sample_chains<T: Scalar>(
    predictor: &dyn Predictor<T>,
    chains: &[Chain<'_, T>],
    schedule: &DiffusionSchedule,
    clamp: Option<&[Codec]>,
) -> Result<Vec<Vec<T>>> {
    let mut rngs: Vec<ChaCha8Rng> = chains.iter().map(|c| ChaCha8Rng::seed_from_u64(c.seed)).collect();
    let mut flags = Vec::with_capacity(chains.len());
    let mut states = Vec::with_capacity(chains.len());
    for (c, rng) in chains.iter().zip(&mut rngs) {
        let f = entry_flags(&c.structure.layout, &c.observed);
        if c.condition.len() != f.len() {
            return Err(Error::Shape("condition length differs from the layout".into()));
        }
        let x: Vec<T> = (0..f.len())
            .map(|e| {
                let z: f64 = rng.sample(StandardNormal);
                if f[e] {
                    c.condition[e]
                } else {
                    T::of(z)
                }
            })
            .collect();
        flags.push(f);
        states.push(x);
    }
    for t in (1..=schedule.steps()).rev() {
        let batch: Vec<DenoiserInput<'_, T>> = chains
            .iter()
            .zip(&states)
            .map(|(c, x)| DenoiserInput {
                structure: c.structure,
                values: x,
                observed: &c.observed,
                t,
            })
            .collect();
        let mut preds = predictor.predict_batch(&batch)?;
        for (b, x) in states.iter_mut().enumerate() {
            if let Some(codecs) = clamp {
                codecs[b].clamp(&mut preds[b]);
            }
            let noise: Vec<T> = (0..x.len())
                .map(|_| T::of(rngs[b].sample::<f64, _>(StandardNormal)))
                .collect();
            *x = p_sample_step(x, t, &preds[b], schedule, &noise, &flags[b])?;
        }
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_model::EdgeKind;
    use approx::assert_relative_eq;

    #[test]
    fn default_schedule_endpoints() {
        let s = DiffusionSchedule::from_config(&ScheduleConfig::default()).unwrap();
        assert_eq!(s.steps(), 1000);
        assert_relative_eq!(s.beta(1), 1e-4, epsilon = 1e-15);
        assert_relative_eq!(s.beta(1000), 0.005, epsilon = 1e-15);
        let direct: f64 = (1..=1000).map(|t| 1.0 - s.beta(t)).product();
        assert!((s.alpha_bar(1000) - direct).abs() < 1e-12);
        assert!(s.alpha_bar(1000) < 0.1);
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(DiffusionSchedule::linear(10, 0.0, 0.1).is_err());
        assert!(DiffusionSchedule::linear(10, 0.2, 0.1).is_err());
        assert!(DiffusionSchedule::linear(10, 0.1, 1.0).is_err());
        assert!(DiffusionSchedule::linear(0, 0.1, 0.2).is_err());
        let one = DiffusionSchedule::linear(1, 0.3, 0.3).unwrap();
        assert_relative_eq!(one.alpha_bar(1), 0.7);
    }

    #[test]
    fn single_step_sample_is_the_estimate() {
        let s = DiffusionSchedule::linear(1, 0.02, 0.02).unwrap();
        let out = p_sample_step(&[0.3f64, -2.0], 1, &[1.5, 0.25], &s, &[9.0, 9.0], &[false, false]).unwrap();
        assert_relative_eq!(out[0], 1.5, epsilon = 1e-12);
        assert_relative_eq!(out[1], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn q_sample_without_noise_scales() {
        let s = DiffusionSchedule::linear(100, 1e-3, 2e-2).unwrap();
        let x = q_sample(&[2.0f64], 50, &[0.0], &s).unwrap();
        assert_relative_eq!(x[0], 2.0 * s.alpha_bar(50).sqrt(), epsilon = 1e-12);
        assert!(q_sample(&[2.0f64], 0, &[0.0], &s).is_err());
        assert!(q_sample(&[2.0f64], 101, &[0.0], &s).is_err());
    }

    fn mixed() -> GraphicalModel {
        let mut m = GraphicalModel::new();
        m.add_array("x", &[2], Domain::Continuous, &[]).unwrap();
        m.add_array("c", &[1], Domain::Discrete(9), &[]).unwrap();
        m.add_edge(0, 2, EdgeKind::Directed).unwrap();
        m
    }

    #[test]
    fn codec_round_trip_and_levels() {
        let m = mixed();
        let norms = HashMap::from([("x".to_string(), Normalization { shift: 0.5, scale: 0.5 })]);
        let codec = Codec::new(&m, &norms);
        for v in 0..9 {
            let vals = [0.25, 1.0, v as f64];
            let enc: Vec<f64> = codec.encode(&vals).unwrap();
            assert_eq!(enc.len(), 11);
            assert_relative_eq!(enc[0], -0.5);
            assert_relative_eq!(enc[1], 1.0);
            let dec = codec.decode(&enc).unwrap();
            assert_relative_eq!(dec[0], 0.25);
            assert_eq!(dec[2], v as f64);
        }
        assert!(codec.encode::<f64>(&[0.0, 0.0, 9.0]).is_err());
        assert!(codec.encode::<f64>(&[0.0, 0.0, 1.5]).is_err());
        let (on, off) = one_hot_levels(2);
        assert_relative_eq!(on, 1.0);
        assert_relative_eq!(off, -1.0);
        for c in 2..12 {
            let (on, off) = one_hot_levels(c);
            assert!((on + (c - 1) as f64 * off).abs() < 1e-12);
            assert!(((on * on + (c - 1) as f64 * off * off) / c as f64 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_survives_small_perturbations() {
        let m = mixed();
        let codec = Codec::new(&m, &HashMap::new());
        let (on, off) = one_hot_levels(9);
        let gap = on - off;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for v in 0..9 {
            for _ in 0..50 {
                let mut enc: Vec<f64> = codec.encode(&[0.0, 0.0, v as f64]).unwrap();
                for e in &mut enc[2..] {
                    *e += rng.gen_range(-0.49..0.49) * gap;
                }
                assert_eq!(codec.decode(&enc).unwrap()[2], v as f64);
            }
        }
    }

    #[test]
    fn partitions() {
        let m = mixed();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obs = sample_partition(&m, &PartitionPolicy::Arrays(vec!["c".into()]), &mut rng).unwrap();
        assert_eq!(obs, vec![false, false, true]);
        assert_eq!(sample_partition(&m, &PartitionPolicy::FixedCount(0), &mut rng).unwrap(), vec![false; 3]);
        for _ in 0..50 {
            let o = sample_partition(&m, &PartitionPolicy::UniformCount, &mut rng).unwrap();
            assert!(o.iter().filter(|b| **b).count() < 3);
        }
        assert!(sample_partition(&m, &PartitionPolicy::Arrays(vec!["q".into()]), &mut rng).is_err());
    }
}
