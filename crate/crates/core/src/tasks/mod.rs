//! Task generators, graphical-model builders and metrics.

pub mod bcmf;
pub mod boolean;
pub mod sorting;
pub mod sudoku;

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Normalization, PartitionPolicy};
use crate::error::{Error, Result};
use crate::graph_model::{GraphicalModel, Layout};

pub use bcmf::{bcmf_build, bcmf_rmse, bcmf_sample, constant_baseline_rmse, prior_baseline_rmse, BcmfVariant};
pub use boolean::{boolean_accuracy, CircuitSpec, Gate};
pub use sorting::{perm_mismatch, sorting_build, sorting_sample, SortConstraint};
pub use sudoku::{sudoku_build, sudoku_sample, sudoku_valid};

/// One data point.
#[derive(Debug, Clone)]
pub struct TaskInstance {
    pub model: Arc<GraphicalModel>,
    /// One value per node: reals, or class indices for discrete nodes.
    pub values: Vec<f64>,
    /// Default observation flags.
    pub observed: Vec<bool>,
    pub dims: Vec<usize>,
}

/// A fixed extent or an inclusive range sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimSpec {
    Fixed(usize),
    Range([usize; 2]),
}

impl DimSpec {
    pub fn sample(self, rng: &mut impl Rng) -> usize {
        match self {
            DimSpec::Fixed(v) => v,
            DimSpec::Range([lo, hi]) => rng.gen_range(lo..=hi),
        }
    }

    pub fn max(self) -> usize {
        match self {
            DimSpec::Fixed(v) => v,
            DimSpec::Range([_, hi]) => hi,
        }
    }

    fn check(self, name: &str, min: usize) -> Result<()> {
        let ok = match self {
            DimSpec::Fixed(v) => v >= min,
            DimSpec::Range([lo, hi]) => lo >= min && lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("dimension {name} must be >= {min} (and lo <= hi)")))
        }
    }
}

fn yes() -> bool {
    true
}

fn nine() -> usize {
    9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Boolean {
        depth: usize,
        #[serde(default)]
        circuit_seed: u64,
        #[serde(default = "yes")]
        intermediates: bool,
    },
    Sorting {
        n: DimSpec,
        #[serde(default)]
        constraint: SortConstraint,
        #[serde(default = "yes")]
        intermediates: bool,
    },
    Bcmf {
        m: DimSpec,
        n: DimSpec,
        k: DimSpec,
        #[serde(default)]
        variant: BcmfVariant,
    },
    Sudoku {
        #[serde(default = "nine")]
        grid: usize,
    },
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::Boolean { .. } => "boolean",
            TaskConfig::Sorting { .. } => "sorting",
            TaskConfig::Bcmf { .. } => "bcmf",
            TaskConfig::Sudoku { .. } => "sudoku",
        }
    }

    /// Command-line name accepted by [`TaskConfig::from_name`].
    pub fn label(&self) -> &'static str {
        match self {
            TaskConfig::Boolean { intermediates: true, .. } => "boolean",
            TaskConfig::Boolean { .. } => "boolean-nointer",
            TaskConfig::Sorting { intermediates: true, .. } => "sorting",
            TaskConfig::Sorting { .. } => "sorting-nointer",
            TaskConfig::Bcmf { variant, .. } => match variant {
                BcmfVariant::Default => "bcmf",
                BcmfVariant::NoIntermediates => "bcmf-nointer",
                BcmfVariant::Unconditional => "bcmf-uncond",
                BcmfVariant::MatrixInversion => "bcmf-inverse",
            },
            TaskConfig::Sudoku { .. } => "sudoku",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TaskConfig::Boolean { depth, .. } => {
                if *depth == 0 || *depth > 16 {
                    return Err(Error::Config(format!("boolean depth must be in 1..=16, got {depth}")));
                }
            }
            TaskConfig::Sorting { n, .. } => n.check("n", 2)?,
            TaskConfig::Bcmf { m, n, k, .. } => {
                m.check("m", 1)?;
                n.check("n", 1)?;
                k.check("k", 1)?;
            }
            TaskConfig::Sudoku { grid } => {
                if *grid != 4 && *grid != 9 {
                    return Err(Error::Config(format!("sudoku grid must be 4 or 9, got {grid}")));
                }
            }
        }
        Ok(())
    }

    /// Parses a task name plus comma-separated dims, as used on the command line.
    pub fn from_name(name: &str, dims: &[usize]) -> Result<Self> {
        let want = |k: usize| {
            if dims.len() == k {
                Ok(())
            } else {
                Err(Error::Config(format!("task {name} takes {k} dims, got {}", dims.len())))
            }
        };
        let cfg = match name {
            "boolean" | "boolean-nointer" => {
                want(1)?;
                TaskConfig::Boolean {
                    depth: dims[0],
                    circuit_seed: 0,
                    intermediates: name == "boolean",
                }
            }
            "sorting" | "sorting-nointer" => {
                want(1)?;
                TaskConfig::Sorting {
                    n: DimSpec::Fixed(dims[0]),
                    constraint: SortConstraint::Adjacent,
                    intermediates: name == "sorting",
                }
            }
            "bcmf" | "bcmf-nointer" | "bcmf-uncond" | "bcmf-inverse" => {
                want(3)?;
                let variant = match name {
                    "bcmf" => BcmfVariant::Default,
                    "bcmf-nointer" => BcmfVariant::NoIntermediates,
                    "bcmf-uncond" => BcmfVariant::Unconditional,
                    _ => BcmfVariant::MatrixInversion,
                };
                TaskConfig::Bcmf {
                    m: DimSpec::Fixed(dims[0]),
                    n: DimSpec::Fixed(dims[1]),
                    k: DimSpec::Fixed(dims[2]),
                    variant,
                }
            }
            "sudoku" => {
                want(1)?;
                TaskConfig::Sudoku { grid: dims[0] }
            }
            _ => return Err(Error::Config(format!("unknown task {name}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The same task pinned to the given dims.
    pub fn with_dims(&self, dims: &[usize]) -> Result<Self> {
        let fixed = |i: usize| dims.get(i).copied().map(DimSpec::Fixed).ok_or_else(|| Error::Config("too few dims".into()));
        let out = match self.clone() {
            TaskConfig::Boolean { circuit_seed, intermediates, .. } => TaskConfig::Boolean {
                depth: *dims.first().ok_or_else(|| Error::Config("too few dims".into()))?,
                circuit_seed,
                intermediates,
            },
            TaskConfig::Sorting { constraint, intermediates, .. } => TaskConfig::Sorting {
                n: fixed(0)?,
                constraint,
                intermediates,
            },
            TaskConfig::Bcmf { variant, .. } => TaskConfig::Bcmf {
                m: fixed(0)?,
                n: fixed(1)?,
                k: fixed(2)?,
                variant,
            },
            TaskConfig::Sudoku { .. } => TaskConfig::Sudoku {
                grid: *dims.first().ok_or_else(|| Error::Config("too few dims".into()))?,
            },
        };
        out.validate()?;
        Ok(out)
    }

    pub fn sample_dims(&self, rng: &mut impl Rng) -> Vec<usize> {
        match self {
            TaskConfig::Boolean { depth, .. } => vec![*depth],
            TaskConfig::Sorting { n, .. } => vec![n.sample(rng)],
            TaskConfig::Bcmf { m, n, k, .. } => vec![m.sample(rng), n.sample(rng), k.sample(rng)],
            TaskConfig::Sudoku { grid } => vec![*grid],
        }
    }

    /// Largest dims the configuration can produce.
    pub fn max_dims(&self) -> Vec<usize> {
        match self {
            TaskConfig::Boolean { depth, .. } => vec![*depth],
            TaskConfig::Sorting { n, .. } => vec![n.max()],
            TaskConfig::Bcmf { m, n, k, .. } => vec![m.max(), n.max(), k.max()],
            TaskConfig::Sudoku { grid } => vec![*grid],
        }
    }

    fn dims3(dims: &[usize]) -> Result<(usize, usize, usize)> {
        match dims {
            [m, n, k] => Ok((*m, *n, *k)),
            _ => Err(Error::InvalidArgument(format!("expected 3 dims, got {dims:?}"))),
        }
    }

    fn dim1(dims: &[usize]) -> Result<usize> {
        match dims {
            [n] => Ok(*n),
            _ => Err(Error::InvalidArgument(format!("expected 1 dim, got {dims:?}"))),
        }
    }

    pub fn build(&self, dims: &[usize]) -> Result<GraphicalModel> {
        match self {
            TaskConfig::Boolean { circuit_seed, intermediates, .. } => {
                CircuitSpec::random(Self::dim1(dims)?, *circuit_seed)?.model(*intermediates)
            }
            TaskConfig::Sorting { constraint, intermediates, .. } => {
                sorting_build(Self::dim1(dims)?, *constraint, *intermediates)
            }
            TaskConfig::Bcmf { variant, .. } => {
                let (m, n, k) = Self::dims3(dims)?;
                bcmf_build(m, n, k, *variant)
            }
            TaskConfig::Sudoku { .. } => sudoku_build(Self::dim1(dims)?),
        }
    }

    pub fn sample(&self, model: Arc<GraphicalModel>, dims: &[usize], rng: &mut impl Rng) -> Result<TaskInstance> {
        match self {
            TaskConfig::Boolean { circuit_seed, intermediates, .. } => {
                CircuitSpec::random(Self::dim1(dims)?, *circuit_seed)?.sample(model, *intermediates, rng)
            }
            TaskConfig::Sorting { intermediates, .. } => sorting_sample(model, Self::dim1(dims)?, *intermediates, rng),
            TaskConfig::Bcmf { variant, .. } => bcmf_sample(model, Self::dims3(dims)?, *variant, rng),
            TaskConfig::Sudoku { .. } => sudoku_sample(model, Self::dim1(dims)?, rng),
        }
    }

    /// Affine normalization of continuous arrays.
    pub fn normalizations(&self) -> HashMap<String, Normalization> {
        let norm = |shift, scale| Normalization { shift, scale };
        match self {
            TaskConfig::Bcmf { variant: BcmfVariant::MatrixInversion, .. } => HashMap::new(),
            TaskConfig::Bcmf { .. } => HashMap::from([
                ("A".to_string(), norm(0.5, 0.5)),
                ("C".to_string(), norm(0.0, 0.5)),
                ("E".to_string(), norm(0.0, 0.5)),
            ]),
            _ => HashMap::new(),
        }
    }

    /// Training-time observation rule.
    pub fn policy(&self) -> PartitionPolicy {
        let arrays = |names: &[&str]| PartitionPolicy::Arrays(names.iter().map(|s| s.to_string()).collect());
        match self {
            TaskConfig::Boolean { .. } => arrays(&["input"]),
            TaskConfig::Sorting { .. } => arrays(&["u"]),
            TaskConfig::Bcmf { variant, .. } => arrays(variant.observed_arrays()),
            TaskConfig::Sudoku { .. } => PartitionPolicy::UniformCount,
        }
    }

    /// Task metrics of one sample. `decoded` holds one value per node and
    /// `encoded` the final continuous state in `layout` order.
    pub fn metrics(&self, inst: &TaskInstance, decoded: &[f64], encoded: &[f64], layout: &Layout) -> Result<Vec<(String, f64)>> {
        let model = &inst.model;
        let slice = |name: &str, vals: &[f64]| -> Result<Vec<f64>> {
            let (_, a) = model
                .array_by_name(name)
                .ok_or_else(|| Error::InvalidArgument(format!("no array {name}")))?;
            Ok(vals[a.ids()].to_vec())
        };
        match self {
            TaskConfig::Boolean { intermediates, .. } => {
                let out = model.len() - 1;
                let mut m = vec![("accuracy".to_string(), if decoded[out] == inst.values[out] { 1.0 } else { 0.0 })];
                if *intermediates {
                    let pred: Vec<bool> = slice("gate", decoded)?.iter().map(|&v| v > 0.5).collect();
                    let truth: Vec<bool> = slice("gate", &inst.values)?.iter().map(|&v| v > 0.5).collect();
                    m.push(("gate_accuracy".to_string(), boolean_accuracy(&pred, &truth)?));
                }
                Ok(m)
            }
            TaskConfig::Sorting { .. } => {
                let n = Self::dim1(&inst.dims)?;
                let (_, p) = model.array_by_name("P").expect("sorting model has P");
                let truth = inst.values[p.ids()].to_vec();
                let scores: Vec<f64> = p
                    .ids()
                    .map(|id| {
                        let r = layout.range(id);
                        encoded[r.start + 1] - encoded[r.start]
                    })
                    .collect();
                Ok(vec![("perm_mismatch".to_string(), perm_mismatch(&truth, &scores, n)?)])
            }
            TaskConfig::Bcmf { .. } => {
                let (m, n, k) = Self::dims3(&inst.dims)?;
                let a = slice("A", decoded)?;
                let r = slice("R", decoded)?;
                let e = slice("E", decoded)?;
                Ok(vec![("rmse".to_string(), bcmf_rmse(&a, &r, &e, m, n, k)?)])
            }
            TaskConfig::Sudoku { grid } => {
                let cells: Vec<usize> = decoded.iter().map(|&v| v as usize).collect();
                Ok(vec![("valid".to_string(), if sudoku_valid(&cells, *grid) { 1.0 } else { 0.0 })])
            }
        }
    }
}
