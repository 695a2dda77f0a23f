//! The structured transformer denoiser.
//!
//! Every graphical-model node becomes one token. A token's initial embedding
//! is the sum of an input map of its (noisy or observed) value, a node
//! embedding that depends on the embedding scheme, and a shared observation
//! embedding when the node is observed. Each layer applies a per-token
//! residual MLP conditioned on the diffusion time, followed by masked
//! multi-head attention with a residual connection. One affine head per
//! array maps final embeddings back to the encoded value space.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_model::{Domain, GraphicalModel, Layout};
use crate::mask::{compile_mask, pack, AttentionMask, MaskOptions, PackedMask};
use crate::nn::{Graph, ParameterStore, Tensor, Var};
use crate::scalar::Scalar;

/// How node embeddings are shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EmbeddingScheme {
    /// One learned vector per node.
    #[serde(rename = "IE")]
    Independent,
    /// A learned vector per array plus sinusoidal codes of every axis index.
    #[serde(rename = "AE")]
    Array,
    /// As `Array`, without codes on exchangeable axes.
    #[serde(rename = "EE")]
    Exchangeable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub embedding: EmbeddingScheme,
    /// Layer normalization before the MLP, before attention and before the heads.
    pub normalize: bool,
    /// Scale attention logits by `1/sqrt(d/H)`.
    pub logit_scale: bool,
    /// Hidden width of the residual MLP as a multiple of `dim`.
    pub mlp_ratio: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            dim: 32,
            heads: 2,
            embedding: EmbeddingScheme::Exchangeable,
            normalize: true,
            logit_scale: true,
            mlp_ratio: 2,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        if self.dim == 0 || !self.dim.is_multiple_of(2) {
            return Err(Error::Config(format!("dim must be positive and even, got {}", self.dim)));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("{} heads do not divide dim {}", self.heads, self.dim)));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::Config("mlp_ratio must be at least 1".into()));
        }
        Ok(())
    }
}

/// One array the denoiser was built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySlot {
    pub name: String,
    pub domain: Domain,
    pub shape: Vec<usize>,
}

/// Sinusoidal code of position `p` on `axis` of a rank-`rank` array.
///
/// Axis `a` uses frequencies `10000^{-(k r + a) / (r d / 2)}`, so different
/// axes occupy interleaved, disjoint frequency bands.
fn axis_code(p: usize, axis: usize, rank: usize, d: usize, out: &mut [f64]) {
    let half = d / 2;
    let denom = (rank * half) as f64;
    for k in 0..half {
        let w = 10000f64.powf(-((k * rank + axis) as f64) / denom);
        let x = p as f64 * w;
        out[2 * k] += x.sin();
        out[2 * k + 1] += x.cos();
    }
}

/// Sinusoidal code of the diffusion time.
pub fn time_code(t: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    axis_code(t, 0, 1, d, &mut out);
    out
}

/// Which learned table the node embeddings index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnedTable {
    PerNode,
    PerArray,
}

/// Node embedding layout of one model under one scheme.
///
/// The learned part is stored once per row of a parameter table; nodes refer
/// to rows by index, so nodes sharing a row share storage.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables {
    pub scheme: EmbeddingScheme,
    pub table: LearnedTable,
    /// Learned-table row of every node.
    pub rows: Vec<usize>,
    /// Fixed sinusoidal component, `n x d` row-major.
    pub positional: Vec<f64>,
    pub dim: usize,
}

impl EmbeddingTables {
    /// Number of distinct node embeddings (learned row plus fixed code).
    pub fn distinct(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        for (i, &r) in self.rows.iter().enumerate() {
            let code: Vec<u64> = self.positional[i * self.dim..(i + 1) * self.dim]
                .iter()
                .map(|v| v.to_bits())
                .collect();
            seen.insert((r, code));
        }
        seen.len()
    }

    /// True when nodes `i` and `j` receive the same embedding.
    pub fn shared(&self, i: usize, j: usize) -> bool {
        let d = self.dim;
        self.rows[i] == self.rows[j] && self.positional[i * d..(i + 1) * d] == self.positional[j * d..(j + 1) * d]
    }
}

/// Builds node embedding layouts. `slot_of_array[a]` is the learned row used
/// by array `a` under AE/EE.
pub fn build_embeddings(
    model: &GraphicalModel,
    config: &DenoiserConfig,
    slot_of_array: &[usize],
) -> EmbeddingTables {
    let d = config.dim;
    let n = model.len();
    let mut positional = vec![0.0; n * d];
    let mut rows = Vec::with_capacity(n);
    let table = match config.embedding {
        EmbeddingScheme::Independent => LearnedTable::PerNode,
        _ => LearnedTable::PerArray,
    };
    for node in model.nodes() {
        let array = model.array(node.array);
        match config.embedding {
            EmbeddingScheme::Independent => rows.push(node.id),
            scheme => {
                rows.push(slot_of_array[node.array.0]);
                let out = &mut positional[node.id * d..(node.id + 1) * d];
                for (axis, &p) in node.index.iter().enumerate() {
                    if scheme == EmbeddingScheme::Exchangeable && array.exchangeable_axes.contains(&axis) {
                        continue;
                    }
                    axis_code(p, axis, array.rank(), d, out);
                }
            }
        }
    }
    EmbeddingTables {
        scheme: config.embedding,
        table,
        rows,
        positional,
        dim: d,
    }
}

/// Everything about one model instance that the forward pass needs besides values.
#[derive(Debug, Clone)]
pub struct Structure {
    pub model: Arc<GraphicalModel>,
    pub mask: Arc<PackedMask>,
    pub embeddings: EmbeddingTables,
    pub layout: Layout,
    /// Denoiser array slot of every node.
    pub node_slot: Vec<usize>,
}

impl Structure {
    pub fn len(&self) -> usize {
        self.model.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model.is_empty()
    }
}

/// One input token set: encoded values, observation flags and time.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserInput<'a, T> {
    pub structure: &'a Structure,
    /// Flat encoded state in layout order; observed nodes hold clean values.
    pub values: &'a [T],
    pub observed: &'a [bool],
    pub t: usize,
}

/// Output heads of one forward pass.
pub struct ForwardOutput {
    /// Per slot: the head output and the `(instance, node)` of each row.
    pub parts: Vec<(usize, Var, Vec<(usize, usize)>)>,
}

impl ForwardOutput {
    /// Per-instance flat predictions in layout order.
    pub fn collect<T: Scalar>(&self, g: &Graph<'_, T>, batch: &[DenoiserInput<'_, T>]) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = batch.iter().map(|b| vec![T::zero(); b.structure.layout.total]).collect();
        for (_, var, rows) in &self.parts {
            let v = g.value(*var);
            for (r, &(b, node)) in rows.iter().enumerate() {
                let range = batch[b].structure.layout.range(node);
                out[b][range].copy_from_slice(v.row(r));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Denoiser<T> {
    pub config: DenoiserConfig,
    pub arrays: Vec<ArraySlot>,
    pub params: ParameterStore<T>,
    /// Node count of the template model (size of the IE table).
    pub template_nodes: usize,
}

fn uniform_init<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(&[rows, cols], |_| T::of(rng.gen_range(-bound..bound)))
}

impl<T: Scalar> Denoiser<T> {
    /// Builds a denoiser for the arrays of `template`.
    pub fn new(config: DenoiserConfig, template: &GraphicalModel, seed: u64) -> Result<Self> {
        config.validate()?;
        template.check()?;
        let arrays: Vec<ArraySlot> = template
            .arrays()
            .iter()
            .map(|a| ArraySlot {
                name: a.name.clone(),
                domain: a.domain,
                shape: a.shape.clone(),
            })
            .collect();
        let mut denoiser = Self {
            config,
            arrays,
            params: ParameterStore::new(),
            template_nodes: template.len(),
        };
        denoiser.init_params(seed)?;
        Ok(denoiser)
    }

    /// Rebuilds a denoiser around an existing parameter store.
    pub fn from_parts(
        config: DenoiserConfig,
        arrays: Vec<ArraySlot>,
        template_nodes: usize,
        params: ParameterStore<T>,
    ) -> Result<Self> {
        config.validate()?;
        let mut fresh = Self {
            config,
            arrays,
            params: ParameterStore::new(),
            template_nodes,
        };
        fresh.init_params(0)?;
        for (name, t) in fresh.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::Arity(format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::Arity(format!("missing parameter {name}"))),
            }
        }
        if params.len() != fresh.params.len() {
            return Err(Error::Arity("parameter set does not match the configuration".into()));
        }
        fresh.params = params;
        Ok(fresh)
    }

    fn init_params(&mut self, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.config.dim;
        let h = d * self.config.mlp_ratio;
        let normal = Normal::new(0.0, 0.5).expect("valid std");
        let p = &mut self.params;
        let table_rows = match self.config.embedding {
            EmbeddingScheme::Independent => self.template_nodes,
            _ => self.arrays.len(),
        };
        p.insert("embed.node", Tensor::from_fn(&[table_rows, d], |_| T::of(normal.sample(&mut rng))))?;
        p.insert("embed.obs", Tensor::from_fn(&[1, d], |_| T::of(normal.sample(&mut rng))))?;
        for (s, slot) in self.arrays.iter().enumerate() {
            let w = slot.domain.width();
            p.insert(&format!("input.{s}.w"), uniform_init(&mut rng, w, d, w))?;
            p.insert(&format!("input.{s}.b"), Tensor::zeros(&[d]))?;
        }
        for l in 0..self.config.layers {
            p.insert(&format!("layer{l}.time.w"), uniform_init(&mut rng, d, d, d))?;
            p.insert(&format!("layer{l}.time.b"), Tensor::zeros(&[d]))?;
            p.insert(&format!("layer{l}.mlp1.w"), uniform_init(&mut rng, d, h, d))?;
            p.insert(&format!("layer{l}.mlp1.b"), Tensor::zeros(&[h]))?;
            p.insert(&format!("layer{l}.mlp2.w"), Tensor::zeros(&[h, d]))?;
            p.insert(&format!("layer{l}.mlp2.b"), Tensor::zeros(&[d]))?;
            for name in ["q", "k", "v"] {
                p.insert(&format!("layer{l}.{name}.w"), uniform_init(&mut rng, d, d, d))?;
            }
        }
        for (s, slot) in self.arrays.iter().enumerate() {
            let w = slot.domain.width();
            p.insert(&format!("head.{s}.w"), Tensor::zeros(&[d, w]))?;
            p.insert(&format!("head.{s}.b"), Tensor::zeros(&[w]))?;
        }
        Ok(())
    }

    /// Overwrites every parameter with `U(-scale, scale)` noise.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            for v in self.params.value_mut(id).data_mut() {
                *v = T::of(rng.gen_range(-scale..scale));
            }
        }
    }

    /// Same architecture and values in another scalar type.
    pub fn cast<U: Scalar>(&self) -> Denoiser<U> {
        Denoiser {
            config: self.config.clone(),
            arrays: self.arrays.clone(),
            params: self.params.cast(),
            template_nodes: self.template_nodes,
        }
    }

    /// Matches `model` against the denoiser's arrays, enforcing the arity
    /// rules of the embedding scheme.
    pub fn structure(&self, model: Arc<GraphicalModel>, mask: &AttentionMask) -> Result<Structure> {
        model.check()?;
        if mask.n() != model.len() {
            return Err(Error::Arity(format!(
                "mask has {} nodes, model has {}",
                mask.n(),
                model.len()
            )));
        }
        let by_name: HashMap<&str, usize> = self.arrays.iter().enumerate().map(|(i, a)| (a.name.as_str(), i)).collect();
        let mut slot_of_array = Vec::with_capacity(model.arrays().len());
        for array in model.arrays() {
            let Some(&s) = by_name.get(array.name.as_str()) else {
                return Err(Error::Arity(format!("array {} is unknown to this denoiser", array.name)));
            };
            let slot = &self.arrays[s];
            if slot.domain != array.domain {
                return Err(Error::Arity(format!(
                    "array {} has domain {}, denoiser expects {}",
                    array.name, array.domain, slot.domain
                )));
            }
            if slot.shape.len() != array.shape.len() {
                return Err(Error::Arity(format!("array {} has rank {}, expected {}", array.name, array.rank(), slot.shape.len())));
            }
            let ok = match self.config.embedding {
                EmbeddingScheme::Independent => slot.shape == array.shape,
                EmbeddingScheme::Array => array.shape.iter().zip(&slot.shape).all(|(a, b)| a <= b),
                EmbeddingScheme::Exchangeable => true,
            };
            if !ok {
                return Err(Error::Arity(format!(
                    "array {} has shape {:?}; a {:?} denoiser built for {:?} cannot evaluate it",
                    array.name, array.shape, self.config.embedding, slot.shape
                )));
            }
            slot_of_array.push(s);
        }
        if self.config.embedding == EmbeddingScheme::Independent && model.len() != self.template_nodes {
            return Err(Error::Arity("IE denoiser requires the template's exact node set".into()));
        }
        let embeddings = build_embeddings(&model, &self.config, &slot_of_array);
        let node_slot = model.nodes().iter().map(|n| slot_of_array[n.array.0]).collect();
        Ok(Structure {
            layout: model.layout(),
            mask: Arc::new(pack(mask)),
            embeddings,
            node_slot,
            model,
        })
    }

    /// [`Denoiser::structure`] with the model's default compiled mask.
    pub fn compile(&self, model: Arc<GraphicalModel>) -> Result<Structure> {
        let mask = compile_mask(&model, MaskOptions::default())?;
        self.structure(model, &mask)
    }

    /// Records the forward pass of a batch on `g`.
    pub fn forward(&self, g: &mut Graph<'_, T>, batch: &[DenoiserInput<'_, T>]) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let d = cfg.dim;
        let mut total = 0;
        for (b, inst) in batch.iter().enumerate() {
            let s = inst.structure;
            if inst.values.len() != s.layout.total || inst.observed.len() != s.len() {
                return Err(Error::Shape(format!(
                    "instance {b}: {} values and {} flags for {} nodes of total width {}",
                    inst.values.len(),
                    inst.observed.len(),
                    s.len(),
                    s.layout.total
                )));
            }
            if inst.t == 0 {
                return Err(Error::InvalidArgument("diffusion time starts at 1".into()));
            }
            total += s.len();
        }
        if total == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }

        let slots = self.arrays.len();
        let mut slot_rows: Vec<Vec<usize>> = vec![Vec::new(); slots];
        let mut slot_src: Vec<Vec<(usize, usize)>> = vec![Vec::new(); slots];
        let mut slot_vals: Vec<Vec<T>> = vec![Vec::new(); slots];
        let mut learned_idx = Vec::with_capacity(total);
        let mut obs_idx = Vec::with_capacity(total);
        let mut inst_idx = Vec::with_capacity(total);
        let mut positional = Vec::with_capacity(total * d);
        let mut time = Vec::with_capacity(batch.len() * d);
        let mut masks = Vec::with_capacity(batch.len());
        let mut row = 0;
        for (b, inst) in batch.iter().enumerate() {
            let s = inst.structure;
            for node in 0..s.len() {
                let slot = s.node_slot[node];
                slot_rows[slot].push(row);
                slot_src[slot].push((b, node));
                slot_vals[slot].extend_from_slice(&inst.values[s.layout.range(node)]);
                learned_idx.push(Some(s.embeddings.rows[node]));
                obs_idx.push(inst.observed[node].then_some(0));
                inst_idx.push(Some(b));
                row += 1;
            }
            positional.extend(s.embeddings.positional.iter().map(|&v| T::of(v)));
            time.extend(time_code(inst.t, d).into_iter().map(T::of));
            masks.push(s.mask.as_ref());
        }
        let mask = Arc::new(PackedMask::concat(&masks));

        let mut parts = Vec::new();
        for s in 0..slots {
            if slot_rows[s].is_empty() {
                continue;
            }
            let w = self.arrays[s].domain.width();
            let x = g.input(Tensor::matrix(slot_rows[s].len(), w, std::mem::take(&mut slot_vals[s]))?);
            let wv = g.param(&format!("input.{s}.w"))?;
            let bv = g.param(&format!("input.{s}.b"))?;
            let y = g.linear(x, wv, Some(bv))?;
            parts.push((y, slot_rows[s].clone()));
        }
        let mut e = g.scatter_rows(parts, total, d)?;
        let table = g.param("embed.node")?;
        let learned = g.gather_rows(table, learned_idx)?;
        e = g.add(e, learned)?;
        let pos = g.input(Tensor::matrix(total, d, positional)?);
        e = g.add(e, pos)?;
        let obs_table = g.param("embed.obs")?;
        let obs = g.gather_rows(obs_table, obs_idx)?;
        e = g.add(e, obs)?;
        let temb = g.input(Tensor::matrix(batch.len(), d, time)?);

        for l in 0..cfg.layers {
            let h = if cfg.normalize { g.layer_norm(e) } else { e };
            let tw = g.param(&format!("layer{l}.time.w"))?;
            let tb = g.param(&format!("layer{l}.time.b"))?;
            let tp = g.linear(temb, tw, Some(tb))?;
            let tn = g.gather_rows(tp, inst_idx.clone())?;
            let u = g.add(h, tn)?;
            let w1 = g.param(&format!("layer{l}.mlp1.w"))?;
            let b1 = g.param(&format!("layer{l}.mlp1.b"))?;
            let z = g.linear(u, w1, Some(b1))?;
            let z = g.gelu(z);
            let w2 = g.param(&format!("layer{l}.mlp2.w"))?;
            let b2 = g.param(&format!("layer{l}.mlp2.b"))?;
            let z = g.linear(z, w2, Some(b2))?;
            let r = g.add(e, z)?;
            let rn = if cfg.normalize { g.layer_norm(r) } else { r };
            let wq = g.param(&format!("layer{l}.q.w"))?;
            let wk = g.param(&format!("layer{l}.k.w"))?;
            let wv = g.param(&format!("layer{l}.v.w"))?;
            let q = g.matmul(rn, wq)?;
            let k = g.matmul(rn, wk)?;
            let v = g.matmul(rn, wv)?;
            let a = g.attention(q, k, v, Arc::clone(&mask), cfg.heads, cfg.logit_scale)?;
            e = g.add(r, a)?;
        }
        let fin = if cfg.normalize { g.layer_norm(e) } else { e };

        let mut out = Vec::new();
        for s in 0..slots {
            if slot_rows[s].is_empty() {
                continue;
            }
            let rows = g.gather_rows(fin, slot_rows[s].iter().map(|&r| Some(r)).collect())?;
            let hw = g.param(&format!("head.{s}.w"))?;
            let hb = g.param(&format!("head.{s}.b"))?;
            let y = g.linear(rows, hw, Some(hb))?;
            out.push((s, y, std::mem::take(&mut slot_src[s])));
        }
        Ok(ForwardOutput { parts: out })
    }

    /// Predicted clean encoded state of every instance.
    pub fn predict(&self, batch: &[DenoiserInput<'_, T>]) -> Result<Vec<Vec<T>>> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, batch)?;
        Ok(out.collect(&g, batch))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_model::EdgeKind;

    fn chain(n: usize) -> GraphicalModel {
        let mut m = GraphicalModel::new();
        m.add_array("x", &[n], Domain::Continuous, &[]).unwrap();
        m.add_array("y", &[1], Domain::Discrete(3), &[]).unwrap();
        for i in 0..n - 1 {
            m.add_edge(i, i + 1, EdgeKind::Directed).unwrap();
        }
        m.add_edge(n - 1, n, EdgeKind::Directed).unwrap();
        m
    }

    fn config(scheme: EmbeddingScheme) -> DenoiserConfig {
        DenoiserConfig {
            layers: 2,
            dim: 8,
            heads: 2,
            embedding: scheme,
            ..DenoiserConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(DenoiserConfig { heads: 3, ..config(EmbeddingScheme::Array) }.validate().is_err());
        assert!(DenoiserConfig { layers: 0, ..config(EmbeddingScheme::Array) }.validate().is_err());
        assert!(config(EmbeddingScheme::Array).validate().is_ok());
    }

    #[test]
    fn output_width_matches_layout() {
        let model = Arc::new(chain(4));
        let den = Denoiser::<f64>::new(config(EmbeddingScheme::Array), &model, 1).unwrap();
        let s = den.compile(Arc::clone(&model)).unwrap();
        let vals = vec![0.1; s.layout.total];
        let obs = vec![false; s.len()];
        let out = den
            .predict(&[DenoiserInput { structure: &s, values: &vals, observed: &obs, t: 5 }])
            .unwrap();
        assert_eq!(out[0].len(), 4 + 3);
    }

    #[test]
    fn embedding_sharing_per_scheme() {
        let mut m = GraphicalModel::new();
        m.add_array("p", &[3, 4], Domain::Continuous, &[1]).unwrap();
        let ie = build_embeddings(&m, &config(EmbeddingScheme::Independent), &[0]);
        assert_eq!(ie.distinct(), 12);
        let ae = build_embeddings(&m, &config(EmbeddingScheme::Array), &[0]);
        assert_eq!(ae.distinct(), 12);
        let ee = build_embeddings(&m, &config(EmbeddingScheme::Exchangeable), &[0]);
        assert_eq!(ee.distinct(), 3);
        assert!(ee.shared(0, 3));
        assert!(!ee.shared(0, 4));
    }

    #[test]
    fn axis_codes_differ_between_axes() {
        let mut a = vec![0.0; 8];
        let mut b = vec![0.0; 8];
        axis_code(1, 0, 2, 8, &mut a);
        axis_code(1, 1, 2, 8, &mut b);
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-3));
    }

    #[test]
    fn arity_rules() {
        let small = Arc::new(chain(3));
        let big = Arc::new(chain(5));
        for (scheme, smaller_ok, bigger_ok) in [
            (EmbeddingScheme::Independent, false, false),
            (EmbeddingScheme::Array, true, false),
            (EmbeddingScheme::Exchangeable, true, true),
        ] {
            let den = Denoiser::<f32>::new(config(scheme), &chain(4), 0).unwrap();
            let r = den.compile(Arc::clone(&small));
            assert_eq!(r.is_ok(), smaller_ok, "{scheme:?}");
            if let Err(e) = r {
                assert!(matches!(e, Error::Arity(_)));
            }
            assert_eq!(den.compile(Arc::clone(&big)).is_ok(), bigger_ok, "{scheme:?}");
        }
    }

    #[test]
    fn observation_flag_changes_output() {
        let model = Arc::new(chain(3));
        let mut den = Denoiser::<f64>::new(config(EmbeddingScheme::Array), &model, 3).unwrap();
        den.randomize(4, 0.5);
        let s = den.compile(Arc::clone(&model)).unwrap();
        let vals: Vec<f64> = (0..s.layout.total).map(|i| i as f64 * 0.1).collect();
        let mut obs = vec![false; s.len()];
        let a = den.predict(&[DenoiserInput { structure: &s, values: &vals, observed: &obs, t: 10 }]).unwrap();
        obs[1] = true;
        let b = den.predict(&[DenoiserInput { structure: &s, values: &vals, observed: &obs, t: 10 }]).unwrap();
        assert!(a[0].iter().zip(&b[0]).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn batching_matches_separate_passes() {
        let m1 = Arc::new(chain(3));
        let m2 = Arc::new(chain(2));
        let mut den = Denoiser::<f64>::new(config(EmbeddingScheme::Exchangeable), &m1, 3).unwrap();
        den.randomize(9, 0.4);
        let s1 = den.compile(m1).unwrap();
        let s2 = den.compile(m2).unwrap();
        let v1: Vec<f64> = (0..s1.layout.total).map(|i| (i as f64).sin()).collect();
        let v2: Vec<f64> = (0..s2.layout.total).map(|i| (i as f64).cos()).collect();
        let o1 = vec![true, false, false, false];
        let o2 = vec![false, true, false];
        let i1 = DenoiserInput { structure: &s1, values: &v1, observed: &o1, t: 7 };
        let i2 = DenoiserInput { structure: &s2, values: &v2, observed: &o2, t: 300 };
        let joint = den.predict(&[i1, i2]).unwrap();
        let a = den.predict(&[i1]).unwrap();
        let b = den.predict(&[i2]).unwrap();
        for (x, y) in joint[0].iter().zip(&a[0]).chain(joint[1].iter().zip(&b[0])) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_mlp_residual_is_identity() {
        let mut store = ParameterStore::<f64>::new();
        store.insert("w1", Tensor::from_fn(&[2, 4], |i| i as f64 * 0.3 - 1.0)).unwrap();
        store.insert("w2", Tensor::zeros(&[4, 2])).unwrap();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::matrix(1, 2, vec![0.7, -0.2]).unwrap());
        let w1 = g.param("w1").unwrap();
        let w2 = g.param("w2").unwrap();
        let h = g.layer_norm(x);
        let z = g.linear(h, w1, None).unwrap();
        let z = g.gelu(z);
        let z = g.linear(z, w2, None).unwrap();
        let r = g.add(x, z).unwrap();
        assert_eq!(g.value(r).data(), &[0.7, -0.2]);
    }
}
