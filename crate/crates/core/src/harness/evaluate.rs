//! Batch evaluation of a denoiser, the exact-x0 oracle and the prior baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::diffusion::{entry_flags, sample_chains, sample_partition, Chain, DiffusionSchedule, OraclePredictor, PartitionPolicy, Predictor};
use crate::error::{Error, Result};
use crate::harness::config::MaskKind;
use crate::harness::{dims_label, stream_rng, stream_seed, streams, Prepared, StructureCache};
use crate::scalar::Scalar;
use crate::tasks::{TaskConfig, TaskInstance};

/// Source of the clean-state estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// The trained denoiser.
    #[default]
    Model,
    /// Returns the true clean state at every step.
    Oracle,
    /// Ignores the observations: latents come from a fresh prior draw.
    Prior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub mode: PredictorKind,
    pub instances: usize,
    pub seed: u64,
    /// Observe exactly this many random nodes instead of the task's default partition.
    pub observe: Option<usize>,
    /// Fixed dims; sampled per instance when `None`.
    pub dims: Option<Vec<usize>>,
    /// Chains sampled together.
    pub chunk: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: PredictorKind::Model,
            instances: 16,
            seed: 0,
            observe: None,
            dims: None,
            chunk: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub instance: usize,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalTable {
    pub metrics: Vec<String>,
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    fn column(&self, metric: &str) -> Option<Vec<f64>> {
        let k = self.metrics.iter().position(|m| m == metric)?;
        Some(self.rows.iter().map(|r| r.values[k]).collect())
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        let col = self.column(metric)?;
        (!col.is_empty()).then(|| col.iter().sum::<f64>() / col.len() as f64)
    }

    /// Standard error of the mean.
    pub fn stderr(&self, metric: &str) -> Option<f64> {
        let col = self.column(metric)?;
        let n = col.len();
        if n < 2 {
            return Some(0.0);
        }
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Some((var / n as f64).sqrt())
    }

    /// Per-instance rows followed by `mean` and `stderr` rows.
    pub fn to_csv(&self) -> String {
        let mut out = format!("instance,dims,{}\n", self.metrics.join(","));
        for r in &self.rows {
            let vals: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
            out += &format!("{},{},{}\n", r.instance, dims_label(&r.dims), vals.join(","));
        }
        for (label, f) in [("mean", Self::mean as fn(&Self, &str) -> Option<f64>), ("stderr", Self::stderr)] {
            let vals: Vec<String> = self
                .metrics
                .iter()
                .map(|m| f(self, m).map(|v| v.to_string()).unwrap_or_default())
                .collect();
            out += &format!("{label},,{}\n", vals.join(","));
        }
        out
    }
}

struct Case {
    index: usize,
    prep: Prepared,
    inst: TaskInstance,
    observed: Vec<bool>,
    x0: Vec<f64>,
}

/// Samples `opts.instances` conditional completions and scores them with the
/// task metrics. Instance `i` depends only on `(opts.seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<T: Scalar>(
    denoiser: &Denoiser<T>,
    task: &TaskConfig,
    mask: MaskKind,
    mask_seed: u64,
    schedule: &DiffusionSchedule,
    opts: &EvalOptions,
    cache: &mut StructureCache,
) -> Result<EvalTable> {
    if opts.chunk == 0 {
        return Err(Error::InvalidArgument("chunk must be positive".into()));
    }
    let mut table = EvalTable::default();
    let ids: Vec<usize> = (0..opts.instances).collect();
    for block in ids.chunks(opts.chunk) {
        let mut cases = Vec::with_capacity(block.len());
        for &i in block {
            let mut rng = stream_rng(opts.seed, streams::EVAL_DATA, i as u64);
            let dims = match &opts.dims {
                Some(d) => d.clone(),
                None => task.sample_dims(&mut rng),
            };
            let prep = cache.get(task, &dims, denoiser, mask, mask_seed)?;
            let inst = task.sample(prep.model.clone(), &dims, &mut rng)?;
            let policy = match opts.observe {
                Some(k) => PartitionPolicy::FixedCount(k),
                None => task.policy(),
            };
            let observed = sample_partition(&prep.model, &policy, &mut rng)?;
            let x0 = prep.codec.encode::<f64>(&inst.values)?;
            cases.push(Case {
                index: i,
                prep,
                inst,
                observed,
                x0,
            });
        }
        let finals: Vec<Vec<f64>> = match opts.mode {
            PredictorKind::Prior => cases
                .iter()
                .map(|c| prior_state(task, c, opts.seed))
                .collect::<Result<_>>()?,
            PredictorKind::Model | PredictorKind::Oracle => {
                let chains: Vec<Chain<'_, T>> = cases
                    .iter()
                    .map(|c| Chain {
                        structure: &c.prep.structure,
                        condition: c.x0.iter().map(|&v| T::of(v)).collect(),
                        observed: c.observed.clone(),
                        seed: stream_seed(opts.seed, streams::EVAL_NOISE, c.index as u64),
                    })
                    .collect();
                let oracle;
                let predictor: &dyn Predictor<T> = if opts.mode == PredictorKind::Oracle {
                    oracle = OraclePredictor {
                        truths: chains.iter().map(|c| c.condition.clone()).collect(),
                    };
                    &oracle
                } else {
                    denoiser
                };
                sample_chains(predictor, &chains, schedule, None)?
                    .into_iter()
                    .map(|s| s.into_iter().map(|v| v.f64()).collect())
                    .collect()
            }
        };
        for (c, state) in cases.iter().zip(finals) {
            let decoded = c.prep.codec.decode(&state)?;
            let metrics = task.metrics(&c.inst, &decoded, &state, c.prep.codec.layout())?;
            if table.metrics.is_empty() {
                table.metrics = metrics.iter().map(|(k, _)| k.clone()).collect();
            }
            table.rows.push(EvalRow {
                instance: c.index,
                dims: c.inst.dims.clone(),
                values: metrics.into_iter().map(|(_, v)| v).collect(),
            });
        }
    }
    Ok(table)
}

/// Final state of the prior baseline: observed entries from the instance,
/// latent entries from an independent draw of the same task.
fn prior_state(task: &TaskConfig, c: &Case, seed: u64) -> Result<Vec<f64>> {
    let mut rng = stream_rng(seed, streams::EVAL_PRIOR, c.index as u64);
    let fresh = task.sample(c.prep.model.clone(), &c.inst.dims, &mut rng)?;
    let mut state = c.prep.codec.encode::<f64>(&fresh.values)?;
    let flags = entry_flags(c.prep.codec.layout(), &c.observed);
    for (e, &f) in flags.iter().enumerate() {
        if f {
            state[e] = c.x0[e];
        }
    }
    Ok(state)
}

/// Observed values for [`sample_conditioned`]: per-array values in row-major
/// order, class indices for discrete arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub dims: Vec<usize>,
    #[serde(default)]
    pub observed: BTreeMap<String, Vec<f64>>,
}

/// Draws one sample of every array given the observed arrays.
pub fn sample_conditioned<T: Scalar>(
    denoiser: &Denoiser<T>,
    task: &TaskConfig,
    mask: MaskKind,
    mask_seed: u64,
    schedule: &DiffusionSchedule,
    condition: &Condition,
    seed: u64,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut cache = StructureCache::default();
    let prep = cache.get(task, &condition.dims, denoiser, mask, mask_seed)?;
    let model = &prep.model;
    let mut values = vec![0.0; model.len()];
    let mut observed = vec![false; model.len()];
    for (name, vals) in &condition.observed {
        let (_, a) = model
            .array_by_name(name)
            .ok_or_else(|| Error::InvalidArgument(format!("task has no array named {name}")))?;
        if vals.len() != a.len() {
            return Err(Error::Shape(format!("array {name} has {} entries, got {}", a.len(), vals.len())));
        }
        for (id, &v) in a.ids().zip(vals) {
            if let crate::graph_model::Domain::Discrete(c) = a.domain {
                if v.fract() != 0.0 || v < 0.0 || v >= c as f64 {
                    return Err(Error::InvalidArgument(format!("{name}: {v} is not a class in 0..{c}")));
                }
            }
            values[id] = v;
            observed[id] = true;
        }
    }
    let chain = Chain {
        structure: &prep.structure,
        condition: prep.codec.encode::<T>(&values)?,
        observed,
        seed,
    };
    let state = sample_chains(denoiser, &[chain], schedule, None)?.remove(0);
    let decoded = prep.codec.decode(&state)?;
    Ok(model
        .arrays()
        .iter()
        .map(|a| (a.name.clone(), decoded[a.ids()].to_vec()))
        .collect())
}
