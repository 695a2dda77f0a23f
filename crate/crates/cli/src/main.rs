use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use gsdm::denoiser::{Denoiser, DenoiserConfig};
use gsdm::diffusion::DiffusionSchedule;
use gsdm::harness::bench::{bench_attention, bench_csv};
use gsdm::harness::formats::{mask_pgm, read_mask, write_graph, write_mask};
use gsdm::harness::train::Event;
use gsdm::harness::{
    build_mask, evaluate, load_checkpoint, sample_conditioned, Condition, EvalOptions, MaskKind, PredictorKind,
    RunConfig, StructureCache, Trainer,
};
use gsdm::mask::{compile_mask, MaskOptions};
use gsdm::ppl::compile_source;
use gsdm::tasks::TaskConfig;

#[derive(Parser)]
#[command(name = "gsdm", version, about = "Graphically structured diffusion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Model,
    Oracle,
    Prior,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Structured,
    Unsymmetrized,
    Dense,
}

#[derive(Subcommand)]
enum Command {
    /// Train a denoiser from a JSON run configuration.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint directory; its configuration is reused.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the iteration budget.
        #[arg(long)]
        iterations: Option<usize>,
        /// Print the loss every this many iterations.
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Sample conditional completions and write a metrics CSV.
    Evaluate {
        /// Required for `--mode model`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Task name; defaults to the checkpoint's task.
        #[arg(long)]
        task: Option<String>,
        /// Comma-separated dims; sampled from the task configuration when omitted.
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        #[arg(long, default_value_t = 16)]
        n_instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::Model)]
        mode: Mode,
        /// Observe exactly this many random nodes.
        #[arg(long)]
        observe: Option<usize>,
        #[arg(long, default_value_t = 16)]
        chunk: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw one sample given observed arrays from a JSON file.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON object with `dims` and `observed` (array name to values).
        #[arg(long)]
        condition: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a task's graphical model and write its attention mask.
    CompileMask {
        #[arg(long)]
        task: String,
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = MaskArg::Structured)]
        mask: MaskArg,
        /// Also write the graph file.
        #[arg(long)]
        graph_out: Option<PathBuf>,
    },
    /// Compile a probabilistic program into a graph file.
    CompilePpl {
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the symmetrized attention mask.
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Time packed and dense attention on random masks.
    BenchAttention {
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        m: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        d: usize,
        /// Skip the dense pass above this many nodes.
        #[arg(long, default_value_t = 4096)]
        dense_limit: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a mask file as a PGM image.
    RenderMask {
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pixels per mask entry.
        #[arg(long, default_value_t = 4)]
        scale: usize,
    },
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn train(
    config: Option<PathBuf>,
    out: PathBuf,
    seed: Option<u64>,
    resume: Option<PathBuf>,
    iterations: Option<usize>,
    log_every: usize,
) -> Result<()> {
    let mut trainer = match (resume, config) {
        (Some(ckpt), _) => Trainer::resume(&ckpt)?,
        (None, Some(path)) => {
            let mut cfg = RunConfig::load(&path)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            Trainer::new(cfg)?
        }
        (None, None) => bail!("train needs --config or --resume"),
    };
    if let Some(n) = iterations {
        trainer.config.iterations = n;
    }
    let summary = trainer.run(&out, |ev| match ev {
        Event::Step { iteration, loss } => {
            if log_every > 0 && iteration % log_every == 0 {
                match loss {
                    Some(l) => eprintln!("iter {iteration:>7}  loss {l:.5}"),
                    None => eprintln!("iter {iteration:>7}  (no latent entries)"),
                }
            }
        }
        Event::Validation { iteration, table } => {
            let parts: Vec<String> = table
                .metrics
                .iter()
                .map(|m| format!("{m} {:.4}", table.mean(m).unwrap_or(f64::NAN)))
                .collect();
            eprintln!("iter {iteration:>7}  validation  {}", parts.join("  "));
        }
        Event::Checkpoint { path, .. } => eprintln!("checkpoint {}", path.display()),
    })?;
    if let Some(it) = summary.stopped_at {
        eprintln!("stop rule met at iteration {it}");
    }
    println!("{}", summary.final_checkpoint.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_evaluate(
    checkpoint: Option<PathBuf>,
    task: Option<String>,
    dims: Option<Vec<usize>>,
    n_instances: usize,
    seed: u64,
    mode: Mode,
    observe: Option<usize>,
    chunk: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    let ckpt = checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let mode = match mode {
        Mode::Model => PredictorKind::Model,
        Mode::Oracle => PredictorKind::Oracle,
        Mode::Prior => PredictorKind::Prior,
    };
    let trained = ckpt.as_ref().map(|c| &c.manifest.config);
    let task = match (&task, trained, &dims) {
        (Some(name), Some(cfg), Some(d)) if cfg.task.label() == name => cfg.task.with_dims(d)?,
        (Some(name), _, Some(d)) => TaskConfig::from_name(name, d)?,
        (Some(_), _, None) => bail!("--task needs --dims"),
        (None, Some(cfg), Some(d)) => cfg.task.with_dims(d)?,
        (None, Some(cfg), None) => cfg.task.clone(),
        (None, None, _) => bail!("evaluate needs --task or --checkpoint"),
    };
    let (denoiser, mask, schedule, mask_seed) = match ckpt {
        Some(c) => {
            let cfg = c.manifest.config;
            (c.denoiser, cfg.mask, DiffusionSchedule::from_config(&cfg.schedule)?, cfg.seed)
        }
        None => {
            if matches!(mode, PredictorKind::Model) {
                bail!("--mode model needs --checkpoint");
            }
            let template = task.build(&task.max_dims())?;
            let cfg = RunConfig::new(task.clone());
            let den = Denoiser::new(DenoiserConfig::default(), &template, 0)?;
            (den, MaskKind::Structured, DiffusionSchedule::from_config(&cfg.schedule)?, 0)
        }
    };
    let opts = EvalOptions {
        mode,
        instances: n_instances,
        seed,
        observe,
        dims: None,
        chunk,
    };
    let table = evaluate(&denoiser, &task, mask, mask_seed, &schedule, &opts, &mut StructureCache::default())?;
    for m in &table.metrics {
        eprintln!(
            "{m}: {:.4} ± {:.4}",
            table.mean(m).unwrap_or(f64::NAN),
            table.stderr(m).unwrap_or(f64::NAN)
        );
    }
    write_out(out.as_deref(), &table.to_csv())
}

fn sample(checkpoint: PathBuf, condition: PathBuf, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let ckpt = load_checkpoint(&checkpoint)?;
    let cond: Condition =
        serde_json::from_str(&read(&condition)?).with_context(|| format!("parsing {}", condition.display()))?;
    let cfg = &ckpt.manifest.config;
    let task = cfg.task.with_dims(&cond.dims)?;
    let schedule = DiffusionSchedule::from_config(&cfg.schedule)?;
    let arrays = sample_conditioned(&ckpt.denoiser, &task, cfg.mask, cfg.seed, &schedule, &cond, seed)?;
    let json = serde_json::json!({ "dims": cond.dims, "arrays": arrays });
    write_out(out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&json)?))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            config,
            out,
            seed,
            resume,
            iterations,
            log_every,
        } => train(config, out, seed, resume, iterations, log_every),
        Command::Evaluate {
            checkpoint,
            task,
            dims,
            n_instances,
            seed,
            mode,
            observe,
            chunk,
            out,
        } => run_evaluate(checkpoint, task, dims, n_instances, seed, mode, observe, chunk, out),
        Command::Sample {
            checkpoint,
            condition,
            seed,
            out,
        } => sample(checkpoint, condition, seed, out),
        Command::CompileMask {
            task,
            dims,
            out,
            mask,
            graph_out,
        } => {
            let cfg = TaskConfig::from_name(&task, &dims)?;
            let model = cfg.build(&dims)?;
            let kind = match mask {
                MaskArg::Structured => MaskKind::Structured,
                MaskArg::Unsymmetrized => MaskKind::Unsymmetrized,
                MaskArg::Dense => MaskKind::Dense,
            };
            let m = build_mask(kind, &model, 0)?;
            std::fs::write(&out, write_mask(&m)).with_context(|| format!("writing {}", out.display()))?;
            if let Some(g) = graph_out {
                std::fs::write(&g, write_graph(&model)).with_context(|| format!("writing {}", g.display()))?;
            }
            eprintln!("{} nodes, {} allowed pairs", m.n(), m.nnz());
            Ok(())
        }
        Command::CompilePpl { src, out, mask_out } => {
            let compiled = compile_source(&read(&src)?).with_context(|| format!("compiling {}", src.display()))?;
            std::fs::write(&out, write_graph(&compiled.model)).with_context(|| format!("writing {}", out.display()))?;
            if let Some(p) = mask_out {
                let m = compile_mask(&compiled.model, MaskOptions::default())?;
                std::fs::write(&p, write_mask(&m)).with_context(|| format!("writing {}", p.display()))?;
            }
            let counts: Vec<String> = compiled
                .model
                .arrays()
                .iter()
                .map(|a| format!("{}={}", a.name, a.len()))
                .collect();
            eprintln!("{} nodes ({})", compiled.model.len(), counts.join(", "));
            Ok(())
        }
        Command::BenchAttention {
            n,
            m,
            d,
            dense_limit,
            seed,
            out,
        } => {
            let rows = bench_attention(&n, &m, d, dense_limit, seed)?;
            write_out(out.as_deref(), &bench_csv(&rows))
        }
        Command::RenderMask { mask, out, scale } => {
            if scale == 0 {
                bail!("--scale must be positive");
            }
            let m = read_mask(&read(&mask)?, &mask)?;
            std::fs::write(&out, mask_pgm(&m, scale)).with_context(|| format!("writing {}", out.display()))?;
            Ok(())
        }
    }
}
