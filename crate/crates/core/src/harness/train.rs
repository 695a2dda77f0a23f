//! Training loop with validation, early stopping, checkpoints and resume.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::denoiser::Denoiser;
use crate::diffusion::{sample_partition, training_loss, DiffusionSchedule, TrainItem};
use crate::error::{Error, Result};
use crate::harness::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::harness::config::RunConfig;
use crate::harness::evaluate::{evaluate, EvalOptions, EvalTable, PredictorKind};
use crate::harness::{dims_label, stream_rng, stream_seed, streams, StructureCache};
use crate::nn::{AdamState, Graph};

pub const METRICS_HEADER: &str = "iteration,split,metric,value,dims,seed";

/// Notifications emitted by [`Trainer::run`].
#[derive(Debug, Clone)]
pub enum Event<'a> {
    Step { iteration: usize, loss: Option<f64> },
    Validation { iteration: usize, table: &'a EvalTable },
    Checkpoint { iteration: usize, path: &'a Path },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub iteration: usize,
    /// Iteration at which the stop rule fired.
    pub stopped_at: Option<usize>,
    pub last_validation: Option<Vec<(String, f64)>>,
    pub final_checkpoint: PathBuf,
}

pub struct Trainer {
    pub config: RunConfig,
    pub schedule: DiffusionSchedule,
    pub denoiser: Denoiser<f32>,
    pub adam: AdamState<f32>,
    /// Completed optimizer steps.
    pub iteration: usize,
    cache: StructureCache,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let schedule = DiffusionSchedule::from_config(&config.schedule)?;
        let template = config.task.build(&config.task.max_dims())?;
        let denoiser = Denoiser::new(config.model.clone(), &template, stream_seed(config.seed, streams::INIT, 0))?;
        let mut adam = AdamState::new(&denoiser.params, config.optim.lr);
        adam.clip = Some(config.optim.clip);
        Ok(Self {
            config,
            schedule,
            denoiser,
            adam,
            iteration: 0,
            cache: StructureCache::default(),
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let config = ckpt.manifest.config.clone();
        config.validate()?;
        Ok(Self {
            schedule: DiffusionSchedule::from_config(&config.schedule)?,
            config,
            denoiser: ckpt.denoiser,
            adam: ckpt.adam,
            iteration: ckpt.manifest.iteration as usize,
            cache: StructureCache::default(),
        })
    }

    pub fn resume(path: &Path) -> Result<Self> {
        Self::from_checkpoint(load_checkpoint(path)?)
    }

    /// One optimizer step. Returns the loss and the dims of the batch, or
    /// `None` for the loss when every sampled node was observed.
    pub fn step(&mut self) -> Result<(Option<f64>, Vec<usize>)> {
        let cfg = &self.config;
        let mut rng = stream_rng(cfg.seed, streams::TRAIN, self.iteration as u64);
        let dims = cfg.task.sample_dims(&mut rng);
        let prep = self.cache.get(&cfg.task, &dims, &self.denoiser, cfg.mask, cfg.seed)?;
        let policy = cfg.task.policy();
        let mut items = Vec::with_capacity(cfg.optim.batch_size);
        for _ in 0..cfg.optim.batch_size {
            let inst = cfg.task.sample(prep.model.clone(), &dims, &mut rng)?;
            let observed = sample_partition(&prep.model, &policy, &mut rng)?;
            let x0 = prep.codec.encode::<f32>(&inst.values)?;
            let t = rng.gen_range(1..=self.schedule.steps());
            let eps = (0..x0.len()).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
            items.push(TrainItem {
                structure: &prep.structure,
                x0,
                observed,
                t,
                eps,
            });
        }
        let (loss, grads) = {
            let mut g = Graph::new(&self.denoiser.params);
            match training_loss(&mut g, &self.denoiser, &items, &self.schedule)? {
                Some(loss) => (Some(g.value(loss).data()[0] as f64), Some(g.backward(loss)?)),
                None => (None, None),
            }
        };
        if let Some(grads) = grads {
            if !loss.is_some_and(f64::is_finite) {
                return Err(Error::Autodiff(format!("non-finite loss at iteration {}", self.iteration)));
            }
            self.denoiser.params.zero_grad();
            self.denoiser.params.accumulate(&grads);
            self.adam.step(&mut self.denoiser.params);
        }
        self.iteration += 1;
        Ok((loss, dims))
    }

    /// Samples the fixed validation set with the current weights.
    pub fn validate(&mut self) -> Result<EvalTable> {
        let cfg = &self.config;
        let opts = EvalOptions {
            mode: PredictorKind::Model,
            instances: cfg.validation.instances,
            seed: cfg.seed,
            observe: cfg.validation.observe,
            dims: None,
            chunk: cfg.optim.batch_size,
        };
        evaluate(&self.denoiser, &cfg.task, cfg.mask, cfg.seed, &self.schedule, &opts, &mut self.cache)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, &self.config, self.iteration as u64, &self.denoiser, &self.adam)
    }

    /// Trains until `config.iterations` or until the stop rule fires. Writes
    /// `config.json`, appends to `metrics.csv` and stores checkpoints under
    /// `checkpoints/`.
    pub fn run(&mut self, out: &Path, mut on_event: impl FnMut(Event<'_>)) -> Result<TrainSummary> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let cfg_path = out.join("config.json");
        std::fs::write(&cfg_path, self.config.to_json()).map_err(|e| Error::io(&cfg_path, e))?;
        let csv_path = out.join("metrics.csv");
        let fresh = !csv_path.exists();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&csv_path)
            .map_err(|e| Error::io(&csv_path, e))?;
        let mut csv = std::io::BufWriter::new(file);
        let io = |e| Error::io(&csv_path, e);
        if fresh {
            writeln!(csv, "{METRICS_HEADER}").map_err(io)?;
        }
        let seed = self.config.seed;
        let mut stopped_at = None;
        let mut last_validation = None;
        while self.iteration < self.config.iterations {
            let (loss, dims) = self.step()?;
            let it = self.iteration;
            if let Some(l) = loss {
                writeln!(csv, "{it},train,loss,{l},{},{seed}", dims_label(&dims)).map_err(io)?;
            }
            on_event(Event::Step { iteration: it, loss });
            let cadence = self.config.validation.cadence;
            if cadence > 0 && it.is_multiple_of(cadence) {
                let table = self.validate()?;
                let mut means = Vec::new();
                for m in &table.metrics {
                    let mean = table.mean(m).unwrap_or(f64::NAN);
                    let se = table.stderr(m).unwrap_or(f64::NAN);
                    writeln!(csv, "{it},val,{m},{mean},,{seed}").map_err(io)?;
                    writeln!(csv, "{it},val,{m}_stderr,{se},,{seed}").map_err(io)?;
                    means.push((m.clone(), mean));
                }
                csv.flush().map_err(io)?;
                on_event(Event::Validation { iteration: it, table: &table });
                let stop = self.config.validation.stop.as_ref().is_some_and(|rule| {
                    means.iter().any(|(m, v)| *m == rule.metric && rule.met(*v))
                });
                last_validation = Some(means);
                if stop {
                    stopped_at = Some(it);
                    break;
                }
            }
            let every = self.config.checkpoint_every;
            if every > 0 && it.is_multiple_of(every) && it < self.config.iterations {
                csv.flush().map_err(io)?;
                let dir = checkpoint_path(out, it);
                self.save(&dir)?;
                on_event(Event::Checkpoint { iteration: it, path: &dir });
            }
        }
        csv.flush().map_err(io)?;
        let dir = checkpoint_path(out, self.iteration);
        self.save(&dir)?;
        on_event(Event::Checkpoint {
            iteration: self.iteration,
            path: &dir,
        });
        Ok(TrainSummary {
            iteration: self.iteration,
            stopped_at,
            last_validation,
            final_checkpoint: dir,
        })
    }
}

pub fn checkpoint_path(out: &Path, iteration: usize) -> PathBuf {
    out.join("checkpoints").join(format!("iter-{iteration:07}"))
}
