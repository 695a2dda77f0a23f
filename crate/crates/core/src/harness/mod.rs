//! Configuration, training, checkpoints, evaluation and file formats.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod formats;
pub mod train;

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::denoiser::{Denoiser, Structure};
use crate::diffusion::Codec;
use crate::error::Result;
use crate::graph_model::GraphicalModel;
use crate::mask::{compile_mask, random_mask, AttentionMask, MaskOptions};
use crate::scalar::Scalar;
use crate::tasks::TaskConfig;

pub use bench::{bench_attention, BenchRow};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Manifest};
pub use config::{Direction, MaskKind, OptimConfig, RunConfig, StopRule, ValidationConfig};
pub use evaluate::{evaluate, sample_conditioned, Condition, EvalOptions, EvalTable, PredictorKind};
pub use train::{TrainSummary, Trainer};

/// Independent random streams.
pub mod streams {
    pub const TRAIN: u64 = 1;
    pub const EVAL_DATA: u64 = 2;
    pub const EVAL_NOISE: u64 = 3;
    pub const EVAL_PRIOR: u64 = 4;
    pub const MASK: u64 = 5;
    pub const INIT: u64 = 6;
}

/// Generator for item `index` of `stream`; distinct `(stream, index)` pairs
/// give independent sequences.
pub fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream << 48) | (index & ((1 << 48) - 1)));
    rng
}

/// A `u64` seed drawn from a stream.
pub fn stream_seed(seed: u64, stream: u64, index: u64) -> u64 {
    use rand::RngCore;
    stream_rng(seed, stream, index).next_u64()
}

/// Attention mask of a model under a mask kind.
pub fn build_mask(kind: MaskKind, model: &GraphicalModel, seed: u64) -> Result<AttentionMask> {
    match kind {
        MaskKind::Structured => compile_mask(model, MaskOptions::default()),
        MaskKind::Unsymmetrized => compile_mask(
            model,
            MaskOptions {
                symmetrize: false,
                self_edges: true,
            },
        ),
        MaskKind::Dense => Ok(AttentionMask::full(model.len())),
        MaskKind::Random { per_row } => {
            let n = model.len();
            random_mask(n, per_row.min(n - 1), stream_seed(seed, streams::MASK, n as u64))
        }
    }
}

/// Model, structure and codec of one dims tuple.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: Arc<GraphicalModel>,
    pub structure: Arc<Structure>,
    pub codec: Codec,
}

/// Per-dims cache of prepared structures.
#[derive(Debug, Default)]
pub struct StructureCache {
    entries: HashMap<Vec<usize>, Prepared>,
}

impl StructureCache {
    pub fn get<T: Scalar>(
        &mut self,
        task: &TaskConfig,
        dims: &[usize],
        denoiser: &Denoiser<T>,
        mask: MaskKind,
        seed: u64,
    ) -> Result<Prepared> {
        if let Some(p) = self.entries.get(dims) {
            return Ok(p.clone());
        }
        let model = Arc::new(task.build(dims)?);
        let m = build_mask(mask, &model, seed)?;
        let structure = Arc::new(denoiser.structure(Arc::clone(&model), &m)?);
        let codec = Codec::new(&model, &task.normalizations());
        let p = Prepared {
            model,
            structure,
            codec,
        };
        self.entries.insert(dims.to_vec(), p.clone());
        Ok(p)
    }
}

/// `6x6x3`-style label.
pub fn dims_label(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}
