//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 7, 8 and 9 train for tens of minutes to hours on one core and
//! run only with `GSDM_ACCEPTANCE_LONG=1`; `GSDM_ACCEPTANCE_ONLY=1,5,12`
//! restricts the run to the listed criteria.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use gsdm::denoiser::{Denoiser, DenoiserConfig, DenoiserInput, EmbeddingScheme};
use gsdm::diffusion::{sample_partition, training_loss, Codec, DiffusionSchedule, PartitionPolicy, TrainItem};
use gsdm::graph_model::{EdgeKind, GraphicalModel};
use gsdm::harness::bench::bench_attention;
use gsdm::harness::train::Event;
use gsdm::harness::{
    evaluate, load_checkpoint, Direction, EvalOptions, MaskKind, PredictorKind, RunConfig, StopRule, StructureCache,
    Trainer,
};
use gsdm::mask::{compile_mask, graph_diameter, pack, AttentionMask, MaskOptions};
use gsdm::nn::{dense_masked_attention, grad_check, packed_attention_heads, Tensor};
use gsdm::ppl::{compile_graph, parse, BCMF_PROGRAM};
use gsdm::tasks::{bcmf_build, prior_baseline_rmse, sudoku_build, BcmfVariant, DimSpec, SortConstraint, TaskConfig};
use petgraph::algo::is_isomorphic_matching;
use petgraph::graph::UnGraph;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, detail: String) -> Check {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// 1 ---------------------------------------------------------------------------

fn packed_attention_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=64);
        let heads = rng.gen_range(1..=2);
        let d = heads * rng.gen_range(1..=16 / heads);
        let mut model = GraphicalModel::new();
        model.add_array("x", &[n], gsdm::graph_model::Domain::Continuous, &[]).map_err(err)?;
        let p = rng.gen_range(0.0..0.3);
        for a in 0..n {
            for b in 0..n {
                if a != b && rng.gen_bool(p) {
                    model.add_edge(a, b, EdgeKind::Directed).map_err(err)?;
                }
            }
        }
        let mask = compile_mask(&model, MaskOptions::default()).map_err(err)?;
        let packed = pack(&mask);
        let mut t = || Tensor::<f32>::from_fn(&[n, d], |_| rng.gen_range(-2.0..2.0));
        let (q, k, v) = (t(), t(), t());
        let a = packed_attention_heads(&q, &k, &v, &packed, heads, true, None).map_err(err)?;
        let b = dense_masked_attention(&q, &k, &v, &mask, heads, true, None).map_err(err)?;
        let scale = b.data().iter().fold(0.0f64, |m, x| m.max(x.abs() as f64)).max(1e-6);
        worst = worst.max(a.max_abs_diff(&b) / scale);
    }
    let elapsed = start.elapsed();
    ensure(
        worst <= 1e-5 && elapsed < Duration::from_secs(60),
        format!("200 instances, max rel err {worst:.2e} (limit 1e-5), {}", secs(elapsed)),
    )
}

// 2 ---------------------------------------------------------------------------

fn denoiser_gradients() -> Check {
    let start = Instant::now();
    let model = Arc::new(bcmf_build(2, 2, 1, BcmfVariant::Default).map_err(err)?);
    let cfg = DenoiserConfig {
        layers: 2,
        dim: 16,
        heads: 2,
        ..DenoiserConfig::default()
    };
    let mut den = Denoiser::<f64>::new(cfg, &model, 4).map_err(err)?;
    den.randomize(5, 0.3);
    let structure = den.compile(Arc::clone(&model)).map_err(err)?;
    let sched = DiffusionSchedule::linear(1000, 1e-4, 0.005).map_err(err)?;
    let task = TaskConfig::from_name("bcmf", &[2, 2, 1]).map_err(err)?;
    let codec = Codec::new(&model, &task.normalizations());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut items: Vec<TrainItem<'_, f64>> = Vec::new();
    for t in [40usize, 700] {
        let inst = task.sample(Arc::clone(&model), &[2, 2, 1], &mut rng).map_err(err)?;
        items.push(TrainItem {
            structure: &structure,
            x0: codec.encode(&inst.values).map_err(err)?,
            observed: sample_partition(&model, &PartitionPolicy::FixedCount(4), &mut rng).map_err(err)?,
            t,
            eps: (0..structure.layout.total).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        });
    }
    let report = grad_check(&den.params, 1e-5, |g| {
        training_loss(g, &den, &items, &sched)?.ok_or_else(|| gsdm::Error::InvalidArgument("no latent".into()))
    })
    .map_err(err)?;
    let elapsed = start.elapsed();
    ensure(
        report.max_rel_error <= 1e-5 && elapsed < Duration::from_secs(300),
        format!(
            "{} nodes, {} scalars checked, max rel err {:.2e} (limit 1e-5), {}",
            model.len(),
            report.checked,
            report.max_rel_error,
            secs(elapsed)
        ),
    )
}

// 3 ---------------------------------------------------------------------------

fn equivariance() -> Check {
    let start = Instant::now();
    let model = Arc::new(bcmf_build(3, 3, 2, BcmfVariant::Default).map_err(err)?);
    let mut den = Denoiser::<f32>::new(DenoiserConfig::default(), &model, 7).map_err(err)?;
    den.randomize(8, 0.3);
    if den.config.embedding != EmbeddingScheme::Exchangeable {
        return Err("default embedding is not EE".into());
    }
    let structure = den.compile(Arc::clone(&model)).map_err(err)?;
    let layout = &structure.layout;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f32 = 0.0;
    let mut count = 0;
    for plate in model.plates() {
        for _ in 0..20 {
            let x: Vec<f32> = (0..layout.total).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let obs: Vec<bool> = (0..model.len()).map(|_| rng.gen_bool(0.3)).collect();
            let t = rng.gen_range(1..=1000);
            let mut perm: Vec<usize> = (0..plate.extent).collect();
            perm.shuffle(&mut rng);
            let map = model.plate_permutation(&plate.label, &perm).map_err(err)?;
            let mut px = vec![0.0; x.len()];
            let mut pobs = vec![false; obs.len()];
            for (old, &new) in map.iter().enumerate() {
                pobs[new] = obs[old];
                px[layout.range(new)].copy_from_slice(&x[layout.range(old)]);
            }
            let run = |values: &[f32], observed: &[bool]| {
                den.predict(&[DenoiserInput {
                    structure: &structure,
                    values,
                    observed,
                    t,
                }])
                .map(|mut v| v.remove(0))
            };
            let y = run(&x, &obs).map_err(err)?;
            let py = run(&px, &pobs).map_err(err)?;
            for (old, &new) in map.iter().enumerate() {
                for (a, b) in layout.range(old).zip(layout.range(new)) {
                    worst = worst.max((y[a] - py[b]).abs());
                }
            }
            count += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(
        worst <= 1e-5 && elapsed < Duration::from_secs(60),
        format!("{count} plate permutations, max diff {worst:.2e} (limit 1e-5), {}", secs(elapsed)),
    )
}

// 4 ---------------------------------------------------------------------------

fn sudoku_peers(g: usize, b: usize) -> AttentionMask {
    let mut m = AttentionMask::empty(g * g);
    for a in 0..g * g {
        for c in 0..g * g {
            let (ra, ca, rc, cc) = (a / g, a % g, c / g, c % g);
            if ra == rc || ca == cc || (ra / b == rc / b && ca / b == cc / b) {
                m.set(a, c, true);
            }
        }
    }
    m
}

/// Adjacency of BCMF with per-term intermediates from index arithmetic:
/// nodes A[i,k], R[k,j], C[i,j,k], E[i,j] in that order.
fn bcmf_adjacency(m: usize, n: usize, k: usize) -> AttentionMask {
    let a = |i: usize, kk: usize| i * k + kk;
    let r = |kk: usize, j: usize| m * k + kk * n + j;
    let c = |i: usize, j: usize, kk: usize| m * k + k * n + (i * n + j) * k + kk;
    let e = |i: usize, j: usize| m * k + k * n + m * n * k + i * n + j;
    let total = m * k + k * n + m * n * k + m * n;
    let mut mask = AttentionMask::diagonal(total);
    for i in 0..m {
        for j in 0..n {
            for kk in 0..k {
                for (x, y) in [(a(i, kk), c(i, j, kk)), (r(kk, j), c(i, j, kk)), (c(i, j, kk), e(i, j))] {
                    mask.set(x, y, true);
                    mask.set(y, x, true);
                }
            }
        }
    }
    mask
}

fn mask_goldens() -> Check {
    let sudoku = compile_mask(&sudoku_build(9).map_err(err)?, MaskOptions::default()).map_err(err)?;
    let counts = sudoku.row_counts();
    let dia = graph_diameter(&sudoku);
    let sudoku_ok = counts.iter().all(|&c| c == 21) && dia.connected && dia.longest == 2 && sudoku == sudoku_peers(9, 3);

    let model = bcmf_build(6, 5, 2, BcmfVariant::Default).map_err(err)?;
    let mask = compile_mask(&model, MaskOptions::default()).map_err(err)?;
    let (_, c) = model.array_by_name("C").ok_or("no C array")?;
    let c_rows: BTreeSet<usize> = c.ids().map(|i| mask.row_counts()[i]).collect();
    let m = pack(&mask).m();
    let bcmf_ok = mask.n() == 112 && c_rows == BTreeSet::from([4]) && m == 7 && mask == bcmf_adjacency(6, 5, 2);
    ensure(
        sudoku_ok && bcmf_ok,
        format!(
            "sudoku rows {:?}, diameter {}, oracle match {}; bcmf n={} C densities {:?} packed m={}, oracle match {}",
            counts.iter().collect::<BTreeSet<_>>(),
            dia.longest,
            sudoku == sudoku_peers(9, 3),
            mask.n(),
            c_rows,
            m,
            mask == bcmf_adjacency(6, 5, 2)
        ),
    )
}

// 5 ---------------------------------------------------------------------------

fn labelled(model: &GraphicalModel, mask: &AttentionMask) -> UnGraph<String, ()> {
    let mut g = UnGraph::new_undirected();
    let ids: Vec<_> = model.nodes().iter().map(|v| g.add_node(model.array(v.array).name.clone())).collect();
    for i in 0..mask.n() {
        for j in mask.neighbors(i).filter(|&j| j >= i) {
            g.add_edge(ids[i], ids[j], ());
        }
    }
    g
}

fn ppl_equivalence() -> Check {
    let compiled = compile_graph(&parse(BCMF_PROGRAM).map_err(err)?).map_err(err)?;
    let counts = compiled.address_counts();
    let want = [("A", 6), ("R", 6), ("C", 18), ("E", 9)];
    let counts_ok = counts.len() == 4 && counts.iter().zip(want).all(|((a, n), (b, m))| a == b && *n == m);
    let hand = bcmf_build(3, 3, 2, BcmfVariant::Default).map_err(err)?;
    let opts = MaskOptions::default();
    let g1 = labelled(&compiled.model, &compile_mask(&compiled.model, opts).map_err(err)?);
    let g2 = labelled(&hand, &compile_mask(&hand, opts).map_err(err)?);
    let iso = is_isomorphic_matching(&g1, &g2, |a, b| a == b, |_, _| true);
    ensure(
        compiled.model.len() == 39 && counts_ok && iso,
        format!("{} nodes {:?}, isomorphic to hand-built graph: {iso}", compiled.model.len(), counts),
    )
}

// training helpers -------------------------------------------------------------

fn small_run(task: TaskConfig, mask: MaskKind, seed: u64, iterations: usize, cadence: usize, stop: Option<StopRule>) -> RunConfig {
    let mut c = RunConfig::new(task);
    c.mask = mask;
    c.iterations = iterations;
    c.validation.cadence = cadence;
    c.validation.instances = 16;
    c.validation.stop = stop;
    c.seed = seed;
    c
}

fn stop(metric: &str, threshold: f64, direction: Direction) -> Option<StopRule> {
    Some(StopRule {
        metric: metric.into(),
        threshold,
        direction,
    })
}

/// Trains in a temporary directory; returns the stop iteration (if any), the
/// validation means over time and the trainer.
fn train(cfg: RunConfig, metric: &str) -> Result<(Option<usize>, Vec<(usize, f64)>, Trainer), String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut trainer = Trainer::new(cfg).map_err(err)?;
    let mut curve = Vec::new();
    let summary = trainer
        .run(dir.path(), |ev| {
            if let Event::Validation { iteration, table } = ev {
                curve.push((iteration, table.mean(metric).unwrap_or(f64::NAN)));
            }
        })
        .map_err(err)?;
    Ok((summary.stopped_at, curve, trainer))
}

// 6 ---------------------------------------------------------------------------

fn boolean_trend() -> Check {
    let start = Instant::now();
    let full = stop("accuracy", 1.0, Direction::AtLeast);
    let task2 = TaskConfig::from_name("boolean", &[2]).map_err(err)?;
    let (hit2, _, _) = train(small_run(task2, MaskKind::Structured, 0, 20_000, 500, full.clone()), "accuracy")?;
    let n2_ok = hit2.is_some();
    let mut detail = format!("n=2 structured+intermediates: 100% at {hit2:?}");

    let mut ordered = true;
    let (mut sum_s, mut sum_d) = (0, 0);
    for seed in 0..3 {
        let cap = 40_000;
        let s = TaskConfig::from_name("boolean", &[3]).map_err(err)?;
        let d = TaskConfig::from_name("boolean-nointer", &[3]).map_err(err)?;
        let (hs, _, _) = train(small_run(s, MaskKind::Structured, seed, cap, 500, full.clone()), "accuracy")?;
        let (hd, _, _) = train(small_run(d, MaskKind::Dense, seed, cap, 500, full.clone()), "accuracy")?;
        // a run that never reaches 100% counts as one cadence past the cap
        let (is, id) = (hs.unwrap_or(cap + 500), hd.unwrap_or(cap + 500));
        ordered &= hs.is_some() && is < id;
        sum_s += is;
        sum_d += id;
        detail += &format!("; n=3 seed {seed}: structured {hs:?} vs dense/no-inter {hd:?}");
    }
    detail += &format!(" (mean {:.0} vs {:.0}), {}", sum_s as f64 / 3.0, sum_d as f64 / 3.0, secs(start.elapsed()));
    ensure(n2_ok && ordered, detail)
}

// 7 ---------------------------------------------------------------------------

fn sorting_trend() -> Check {
    let start = Instant::now();
    let cap = 100_000;
    let every = 10_000;
    let task = |inter| TaskConfig::Sorting {
        n: DimSpec::Fixed(8),
        constraint: SortConstraint::Adjacent,
        intermediates: inter,
    };
    let mut reached = true;
    let mut structured: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut baseline: Vec<Vec<(usize, f64)>> = Vec::new();
    for seed in 0..3 {
        let (hit, curve, _) = train(
            small_run(task(true), MaskKind::Structured, seed, cap, every, stop("perm_mismatch", 0.05, Direction::AtMost)),
            "perm_mismatch",
        )?;
        reached &= hit.is_some();
        let last = curve.last().map_or(0, |c| c.0);
        structured.push(curve);
        let (_, curve, _) = train(small_run(task(false), MaskKind::Dense, seed, last.max(every), every, None), "perm_mismatch")?;
        baseline.push(curve);
    }
    // a structured run that stopped keeps its final value at later checkpoints
    let mut violations = 0;
    let mut rows = Vec::new();
    for step in (every..=cap).step_by(every) {
        let at = |curves: &[Vec<(usize, f64)>]| -> Option<f64> {
            let mut vals = Vec::new();
            for c in curves {
                let v = c.iter().rfind(|p| p.0 <= step)?;
                vals.push(v.1);
            }
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let b_has = baseline.iter().all(|c| c.iter().any(|p| p.0 == step));
        if !b_has {
            continue;
        }
        if let (Some(s), Some(b)) = (at(&structured), at(&baseline)) {
            if s > b {
                violations += 1;
            }
            rows.push(format!("{}k: {s:.3} vs {b:.3}", step / 1000));
        }
    }
    ensure(
        reached && violations <= 1,
        format!(
            "perm_mismatch <= 0.05 reached by all seeds: {reached}; mean mismatch structured vs dense/no-inter [{}], {violations} violations (max 1), {}",
            rows.join(", "),
            secs(start.elapsed())
        ),
    )
}

// 8 ---------------------------------------------------------------------------

fn eval_rmse(trainer: &Trainer, dims: &[usize], instances: usize, seed: u64) -> Result<(f64, f64), String> {
    let task = trainer.config.task.with_dims(dims).map_err(err)?;
    let opts = EvalOptions {
        mode: PredictorKind::Model,
        instances,
        seed,
        observe: None,
        dims: Some(dims.to_vec()),
        chunk: 16,
    };
    let table = evaluate(
        &trainer.denoiser,
        &task,
        trainer.config.mask,
        trainer.config.seed,
        &trainer.schedule,
        &opts,
        &mut StructureCache::default(),
    )
    .map_err(err)?;
    Ok((table.mean("rmse").unwrap_or(f64::NAN), table.stderr("rmse").unwrap_or(f64::NAN)))
}

fn bcmf_trend() -> Check {
    let start = Instant::now();
    let iterations = 10_000;
    let dims = [6, 6, 3];
    let mut out = Vec::new();
    for name in ["bcmf", "bcmf-nointer"] {
        let task = TaskConfig::from_name(name, &dims).map_err(err)?;
        let (_, _, trainer) = train(small_run(task, MaskKind::Structured, 0, iterations, 0, None), "rmse")?;
        out.push(eval_rmse(&trainer, &dims, 64, 1000)?);
    }
    let (prior, prior_se) = prior_baseline_rmse(6, 6, 3, 100_000, &mut ChaCha8Rng::seed_from_u64(11));
    let (with, without) = (out[0], out[1]);
    ensure(
        with.0 <= 0.5 * prior && with.0 < without.0,
        format!(
            "after {iterations} iterations: with intermediates {:.3}±{:.3}, without {:.3}±{:.3}, prior {prior:.3}±{prior_se:.3} (bar {:.3}), {}",
            with.0,
            with.1,
            without.0,
            without.1,
            0.5 * prior,
            secs(start.elapsed())
        ),
    )
}

// 9 ---------------------------------------------------------------------------

fn dimension_generalization() -> Check {
    let start = Instant::now();
    let iterations = 10_000;
    let task = TaskConfig::Bcmf {
        m: DimSpec::Range([1, 4]),
        n: DimSpec::Range([1, 4]),
        k: DimSpec::Range([1, 4]),
        variant: BcmfVariant::Default,
    };
    let (_, _, trainer) = train(small_run(task, MaskKind::Structured, 0, iterations, 0, None), "rmse")?;
    let (rmse, se) = eval_rmse(&trainer, &[8, 8, 3], 32, 2000)?;
    let (prior, prior_se) = prior_baseline_rmse(8, 8, 3, 100_000, &mut ChaCha8Rng::seed_from_u64(12));
    ensure(
        rmse < prior,
        format!(
            "trained on U{{1..4}}^3 for {iterations} iterations; at (8,8,3) rmse {rmse:.3}±{se:.3} vs prior {prior:.3}±{prior_se:.3}, {}",
            secs(start.elapsed())
        ),
    )
}

// 10 --------------------------------------------------------------------------

fn sudoku_samples() -> Check {
    let start = Instant::now();
    let budget = Duration::from_secs(2 * 3600);
    let masks = mask_goldens().is_ok();
    let task = TaskConfig::Sudoku { grid: 4 };
    let mut cfg = small_run(task, MaskKind::Structured, 0, 200_000, 1000, stop("valid", 0.8, Direction::AtLeast));
    cfg.validation.instances = 32;
    cfg.validation.observe = Some(0);
    let dir = tempfile::tempdir().map_err(err)?;
    let mut trainer = Trainer::new(cfg).map_err(err)?;
    let mut over = false;
    let t0 = Instant::now();
    // stop at the first validation after the budget runs out
    let summary = trainer
        .run(dir.path(), |ev| {
            if let Event::Validation { .. } = ev {
                over = t0.elapsed() > budget;
            }
        })
        .map_err(err)?;
    let train_time = t0.elapsed();
    let opts = EvalOptions {
        mode: PredictorKind::Model,
        instances: 100,
        seed: 3000,
        observe: Some(0),
        dims: None,
        chunk: 25,
    };
    let table = evaluate(
        &trainer.denoiser,
        &trainer.config.task,
        trainer.config.mask,
        trainer.config.seed,
        &trainer.schedule,
        &opts,
        &mut StructureCache::default(),
    )
    .map_err(err)?;
    let valid = table.mean("valid").unwrap_or(0.0);
    ensure(
        masks && summary.stopped_at.is_some() && train_time <= budget && !over && valid >= 0.8,
        format!(
            "4x4 stop rule met at {:?} after {}; {:.0}% of 100 fresh unconditional samples valid (bar 80%); 9x9 masks pass: {masks}; {}",
            summary.stopped_at,
            secs(train_time),
            100.0 * valid,
            secs(start.elapsed())
        ),
    )
}

// 11 --------------------------------------------------------------------------

fn complexity() -> Check {
    let (m, d) = (8usize, 16usize);
    let ns = [64, 128, 256, 512, 1024];
    let rows = bench_attention(&ns, &[m], d, 1024, 13).map_err(err)?;
    let per_pass: Vec<f64> = rows.iter().map(|r| r.packed_macs as f64 / 2.0).collect();
    let slopes: Vec<f64> = per_pass.windows(2).zip(ns.windows(2)).map(|(p, n)| (p[1] - p[0]) / (n[1] - n[0]) as f64).collect();
    let target = (m * d) as f64;
    let linear = slopes.iter().all(|s| (s - target).abs() <= 0.05 * target);
    let dense: Vec<f64> = rows
        .iter()
        .map(|r| r.dense_macs.unwrap_or(0) as f64 / 2.0 / (r.n * r.n * d) as f64)
        .collect();
    let quadratic = dense.iter().all(|&x| (x - 1.0).abs() < 1e-12);
    ensure(
        linear && quadratic,
        format!(
            "packed slope per pass {:?} vs m*d = {target}; dense MACs / (n^2 d) per pass {:?}",
            slopes,
            dense
        ),
    )
}

// 12 --------------------------------------------------------------------------

fn determinism() -> Check {
    let mut cfg = RunConfig::new(TaskConfig::from_name("bcmf", &[2, 3, 2]).map_err(err)?);
    cfg.task = TaskConfig::Bcmf {
        m: DimSpec::Range([1, 3]),
        n: DimSpec::Range([1, 3]),
        k: DimSpec::Range([1, 2]),
        variant: BcmfVariant::Default,
    };
    cfg.model = DenoiserConfig {
        layers: 2,
        dim: 16,
        heads: 2,
        ..DenoiserConfig::default()
    };
    cfg.schedule.steps = 50;
    cfg.optim.batch_size = 4;
    cfg.iterations = 40;
    cfg.validation.cadence = 20;
    cfg.validation.instances = 4;
    cfg.checkpoint_every = 20;
    cfg.seed = 77;
    let dir = tempfile::tempdir().map_err(err)?;
    let run = |name: &str, cfg: RunConfig| -> Result<Trainer, String> {
        let mut t = Trainer::new(cfg).map_err(err)?;
        t.run(&dir.path().join(name), |_| {}).map_err(err)?;
        Ok(t)
    };
    let read = |p: &Path| std::fs::read(p).map_err(err);
    let a = run("a", cfg.clone())?;
    run("b", cfg.clone())?;
    let csv_same = read(&dir.path().join("a/metrics.csv"))? == read(&dir.path().join("b/metrics.csv"))?;

    let ckpt = load_checkpoint(&dir.path().join("a/checkpoints/iter-0000040")).map_err(err)?;
    let params_same = a.denoiser.params.iter().zip(ckpt.denoiser.params.iter()).all(|(x, y)| x.0 == y.0 && x.1 == y.1);
    let moments_same = a.adam.m == ckpt.adam.m && a.adam.v == ckpt.adam.v && a.adam.step == ckpt.adam.step;

    let mut resumed = Trainer::resume(&dir.path().join("a/checkpoints/iter-0000020")).map_err(err)?;
    let (next_loss, _) = resumed.step().map_err(err)?;
    let csv = String::from_utf8(read(&dir.path().join("a/metrics.csv"))?).map_err(err)?;
    let logged: Option<f64> = csv
        .lines()
        .find(|l| l.starts_with("21,train,loss,"))
        .and_then(|l| l.split(',').nth(3))
        .and_then(|v| v.parse().ok());
    let next_same = next_loss.is_some() && next_loss.map(|l| l as f32) == logged.map(|l| l as f32);
    let mut resumed = Trainer::resume(&dir.path().join("a/checkpoints/iter-0000020")).map_err(err)?;
    resumed.run(&dir.path().join("c"), |_| {}).map_err(err)?;
    let resume_same = a.denoiser.params.iter().zip(resumed.denoiser.params.iter()).all(|(x, y)| x.1 == y.1);
    ensure(
        csv_same && params_same && moments_same && next_same && resume_same,
        format!(
            "metric CSVs identical {csv_same}; checkpoint params {params_same}, optimizer state {moments_same}; next loss after resume {next_same}; resumed weights {resume_same}"
        ),
    )
}

// -----------------------------------------------------------------------------

fn main() {
    let long = std::env::var("GSDM_ACCEPTANCE_LONG").is_ok_and(|v| v == "1");
    let only: Option<BTreeSet<u32>> = std::env::var("GSDM_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(u32, &str, bool, fn() -> Check); 12] = [
        (1, "packed attention oracle", false, packed_attention_oracle),
        (2, "denoiser gradient check", false, denoiser_gradients),
        (3, "plate equivariance", false, equivariance),
        (4, "mask golden tests", false, mask_goldens),
        (5, "program compiler equivalence", false, ppl_equivalence),
        (6, "boolean circuit trend", false, boolean_trend),
        (7, "sorting trend", true, sorting_trend),
        (8, "matrix factorization trend", true, bcmf_trend),
        (9, "dimension generalization", true, dimension_generalization),
        (10, "sudoku sample validity", false, sudoku_samples),
        (11, "attention complexity", false, complexity),
        (12, "determinism and persistence", false, determinism),
    ];
    let mut failed = Vec::new();
    for (id, name, is_long, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        if is_long && !long && only.is_none() {
            println!("SKIP {id:>2} {name}: long training run, set GSDM_ACCEPTANCE_LONG=1");
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail}"),
            Err(detail) => {
                println!("FAIL {id:>2} {name}: {detail}");
                failed.push(id);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
