//! Training loops for the history-injection model and the bitemporal
//! baseline, sweep and persistence evaluations, throughput benchmarking,
//! and the whole-model gradient check.
//!
//! Determinism contract: every function here is a pure function of
//! (configuration, seed, dataset). Randomness flows only through labeled
//! streams derived from the run seed; gradient accumulation is sequential
//! and in fixed order, so repeated runs produce bit-identical logs.

use crate::config::AppConfig;
use crate::CliError;
use hit_core::config::ModelConfig;
use hit_core::data::{corrupt_frame, TileSeries};
use hit_core::encoder::AttnMask;
use hit_core::gradcheck::{central_diff_at, relative_error, relative_error_norm, DEFAULT_H};
use hit_core::metrics::{confusion, mean_std, ConfusionCounts};
use hit_core::model::{BaselineModel, HitModel};
use hit_core::optim::{adamw_step, cosine_lr, AdamWConfig, AdamWState};
use hit_core::params::ParamSet;
use hit_core::rng::Rng;
use hit_core::synth::GenConfig;
use hit_core::wire;
use hit_core::{Error, Tensor};
use rayon::prelude::*;
use std::time::Instant;

pub const F1_THRESHOLD: f64 = 0.5;
/// Training-split F1 is evaluated on a fixed subsample to keep epochs cheap.
const TRAIN_EVAL_CAP: usize = 32;

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Everything a finished run hands back to the caller.
pub struct TrainOutcome {
    pub best_f1: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Serialized checkpoint of the best-validation-F1 parameters.
    pub checkpoint: Vec<u8>,
    /// The same parameters, live, for in-process evaluation.
    pub best_params: ParamSet<f32>,
    /// Append-only `epoch,split,loss,f1` lines.
    pub log: String,
}

fn lr_for(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> Result<f64, CliError> {
    // 0-based step over a schedule whose last step lands exactly on lr_min.
    let total = total_steps.saturating_sub(1).max(1);
    Ok(cosine_lr(step.min(total), total, lr_max, lr_min)?)
}

/// Aggregated change-class F1 of final-prefix predictions over a set.
pub fn eval_hit_f1(
    model: &HitModel<f32>,
    ps: &ParamSet<f32>,
    set: &[TileSeries<f32>],
) -> Result<f64, CliError> {
    let mut counts = ConfusionCounts::default();
    for series in set {
        let n = series.len();
        let seg = model.predict_prefix_post(ps, series, n)?;
        let mask = series.branch_mask(n)?;
        counts.merge(&confusion(&seg.probabilities, &mask, F1_THRESHOLD)?);
    }
    Ok(counts.f1())
}

/// Same protocol for the baseline: the last pre frame paired with post.
pub fn eval_baseline_f1(
    model: &BaselineModel<f32>,
    ps: &ParamSet<f32>,
    set: &[TileSeries<f32>],
) -> Result<f64, CliError> {
    let mut counts = ConfusionCounts::default();
    for series in set {
        let n = series.len();
        let (seg, _) = model.forward(ps, &series.frames[n - 1].bands, &series.post.bands)?;
        let mask = series.branch_mask(n)?;
        counts.merge(&confusion(&seg.probabilities, &mask, F1_THRESHOLD)?);
    }
    Ok(counts.f1())
}

/// Optionally degrades one random pre frame of a series (returning a copy);
/// the original dataset is never touched.
fn maybe_corrupt(
    series: &TileSeries<f32>,
    prob: f64,
    rng: &mut Rng,
) -> Option<TileSeries<f32>> {
    if prob <= 0.0 || !rng.chance(prob) {
        return None;
    }
    let mut copy = series.clone();
    let idx = rng.below(copy.frames.len());
    corrupt_frame(&mut copy.frames[idx].bands, rng);
    Some(copy)
}

fn abort_on_bad_loss(loss: f32, epoch: usize, batch: usize) -> Result<(), CliError> {
    if !loss.is_finite() {
        return Err(CliError::Runtime(format!(
            "non-finite loss in epoch {epoch}, batch {batch}: aborting"
        )));
    }
    Ok(())
}

/// Trains the history-injection model. Logs two `epoch,split,loss,f1`
/// lines per epoch (train and val), keeps the checkpoint with the best
/// validation change-class F1, and optionally stops early once that F1
/// reaches `train.early_stop_f1`.
pub fn train_hit(
    app: &AppConfig,
    seed: u64,
    train_set: &[TileSeries<f32>],
    val_set: &[TileSeries<f32>],
) -> Result<TrainOutcome, CliError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(CliError::Usage("training needs nonempty splits".to_string()));
    }
    let (model, mut ps) = HitModel::<f32>::new(app.model.clone(), seed)?;
    let t = &app.train;
    let batches_per_epoch = train_set.len().div_ceil(t.batch_size);
    let total_steps = t.epochs * batches_per_epoch;
    let mut opt = AdamWState::new(&ps);
    let mut opt_cfg = AdamWConfig::default();

    let eval_slice = &train_set[..train_set.len().min(TRAIN_EVAL_CAP)];
    let mut out = TrainOutcome {
        best_f1: -1.0,
        best_epoch: 0,
        epochs_run: 0,
        checkpoint: Vec::new(),
        best_params: ps.clone(),
        log: String::new(),
    };
    let mut step = 0usize;
    for epoch in 1..=t.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        Rng::derive(seed, 0xe70c_0000 + epoch as u64).shuffle(&mut order);
        let mut aug_rng = Rng::derive(seed, 0xc042_0000 + epoch as u64);
        let mut epoch_loss = 0.0f64;
        for (b, batch) in order.chunks(t.batch_size).enumerate() {
            let mut grads = ps.zero_grads();
            for &i in batch {
                let series = &train_set[i];
                let loss = match maybe_corrupt(series, t.corrupt_prob, &mut aug_rng) {
                    Some(corrupted) => model.series_loss_and_grad(&ps, &corrupted, &mut grads),
                    None => model.series_loss_and_grad(&ps, series, &mut grads),
                }?;
                abort_on_bad_loss(loss, epoch, b)?;
                epoch_loss += loss as f64;
            }
            grads.scale_in_place(1.0 / batch.len() as f32);
            opt_cfg.lr = lr_for(step, total_steps, t.lr_max, t.lr_min)?;
            adamw_step(&mut ps, &grads, &mut opt, &opt_cfg)?;
            step += 1;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let train_f1 = eval_hit_f1(&model, &ps, eval_slice)?;
        let mut val_loss = 0.0f64;
        for series in val_set {
            val_loss += model.series_loss(&ps, series)?.0 as f64;
        }
        val_loss /= val_set.len() as f64;
        let val_f1 = eval_hit_f1(&model, &ps, val_set)?;
        out.log.push_str(&format!(
            "{epoch},train,{train_loss:.6},{train_f1:.6}\n{epoch},val,{val_loss:.6},{val_f1:.6}\n"
        ));
        out.epochs_run = epoch;
        if val_f1 > out.best_f1 {
            out.best_f1 = val_f1;
            out.best_epoch = epoch;
            out.checkpoint = wire::encode_checkpoint(&ps);
            out.best_params = ps.clone();
        }
        if t.early_stop_f1 > 0.0 && val_f1 >= t.early_stop_f1 {
            break;
        }
    }
    Ok(out)
}

/// All training pairs a series contributes to the bitemporal baseline:
/// every pre frame against post, plus consecutive pre frames.
fn baseline_pairs<'a>(
    series: &'a TileSeries<f32>,
) -> Result<Vec<(&'a Tensor<f32>, &'a Tensor<f32>, Tensor<f32>)>, Error> {
    let n = series.len();
    let mut pairs = Vec::with_capacity(2 * n - 1);
    for i in 1..=n {
        pairs.push((
            &series.frames[i - 1].bands,
            &series.post.bands,
            series.mask_between(i, n + 1)?,
        ));
    }
    for i in 1..n {
        pairs.push((
            &series.frames[i - 1].bands,
            &series.frames[i].bands,
            series.mask_between(i, i + 1)?,
        ));
    }
    Ok(pairs)
}

/// Trains the bitemporal baseline with the same schedule, logging, and
/// checkpoint-selection rules as [`train_hit`].
pub fn train_baseline(
    app: &AppConfig,
    seed: u64,
    train_set: &[TileSeries<f32>],
    val_set: &[TileSeries<f32>],
) -> Result<TrainOutcome, CliError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(CliError::Usage("training needs nonempty splits".to_string()));
    }
    let (model, mut ps) = BaselineModel::<f32>::new(app.model.clone(), seed)?;
    let t = &app.train;
    let batches_per_epoch = train_set.len().div_ceil(t.batch_size);
    let total_steps = t.epochs * batches_per_epoch;
    let mut opt = AdamWState::new(&ps);
    let mut opt_cfg = AdamWConfig::default();

    let eval_slice = &train_set[..train_set.len().min(TRAIN_EVAL_CAP)];
    let mut out = TrainOutcome {
        best_f1: -1.0,
        best_epoch: 0,
        epochs_run: 0,
        checkpoint: Vec::new(),
        best_params: ps.clone(),
        log: String::new(),
    };
    let mut step = 0usize;
    for epoch in 1..=t.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        Rng::derive(seed, 0xe70c_0000 + epoch as u64).shuffle(&mut order);
        let mut aug_rng = Rng::derive(seed, 0xc042_0000 + epoch as u64);
        let mut epoch_loss = 0.0f64;
        for (b, batch) in order.chunks(t.batch_size).enumerate() {
            let mut grads = ps.zero_grads();
            let mut pair_count = 0usize;
            let mut batch_loss = 0.0f64;
            for &i in batch {
                let storage;
                let series = match maybe_corrupt(&train_set[i], t.corrupt_prob, &mut aug_rng) {
                    Some(corrupted) => {
                        storage = corrupted;
                        &storage
                    }
                    None => &train_set[i],
                };
                for (pre, post, mask) in baseline_pairs(series)? {
                    let loss = model.pair_loss_and_grad(&ps, pre, post, &mask, &mut grads)?;
                    abort_on_bad_loss(loss, epoch, b)?;
                    batch_loss += loss as f64;
                    pair_count += 1;
                }
            }
            epoch_loss += batch_loss;
            grads.scale_in_place(1.0 / pair_count as f32);
            opt_cfg.lr = lr_for(step, total_steps, t.lr_max, t.lr_min)?;
            adamw_step(&mut ps, &grads, &mut opt, &opt_cfg)?;
            step += 1;
        }
        let pairs_per_series = 2 * app.data.series_len - 1;
        let train_loss = epoch_loss / (train_set.len() * pairs_per_series) as f64;
        let train_f1 = eval_baseline_f1(&model, &ps, eval_slice)?;
        let mut val_loss = 0.0f64;
        for series in val_set {
            let n = series.len();
            let (seg, _) = model.forward(&ps, &series.frames[n - 1].bands, &series.post.bands)?;
            let mask = series.branch_mask(n)?;
            let (l, _) =
                hit_core::loss::composite_loss(&seg.logits, &seg.probabilities, &mask)?;
            val_loss += l as f64;
        }
        val_loss /= val_set.len() as f64;
        let val_f1 = eval_baseline_f1(&model, &ps, val_set)?;
        out.log.push_str(&format!(
            "{epoch},train,{train_loss:.6},{train_f1:.6}\n{epoch},val,{val_loss:.6},{val_f1:.6}\n"
        ));
        out.epochs_run = epoch;
        if val_f1 > out.best_f1 {
            out.best_f1 = val_f1;
            out.best_epoch = epoch;
            out.checkpoint = wire::encode_checkpoint(&ps);
            out.best_params = ps.clone();
        }
        if t.early_stop_f1 > 0.0 && val_f1 >= t.early_stop_f1 {
            break;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    FuseStage,
    HeDim,
    HeGrid,
}

impl SweepParam {
    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "fuse" => Ok(Self::FuseStage),
            "dim" => Ok(Self::HeDim),
            "grid" => Ok(Self::HeGrid),
            other => Err(CliError::Usage(format!(
                "unknown sweep parameter {other:?} (expected fuse, dim, or grid)"
            ))),
        }
    }

    pub fn apply(self, cfg: &mut ModelConfig, value: usize) {
        match self {
            Self::FuseStage => cfg.fuse_stage = value,
            Self::HeDim => cfg.he_dim = value,
            Self::HeGrid => cfg.he_grid = value,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::FuseStage => "fuse_stage",
            Self::HeDim => "he_dim",
            Self::HeGrid => "he_grid",
        }
    }
}

/// One forward+backward at each sweep value, checking that every derived
/// shape holds. Fast configuration-space coverage without training.
pub fn sweep_shapes(
    base: &ModelConfig,
    param: SweepParam,
    values: &[usize],
    seed: u64,
) -> Result<String, CliError> {
    let mut report = String::from("value\ttokens\tparams\tloss\n");
    for &value in values {
        let mut cfg = base.clone();
        param.apply(&mut cfg, value);
        cfg.validate()?;
        let (model, ps) = HitModel::<f32>::new(cfg.clone(), seed)?;
        let gen = GenConfig {
            tile_size: cfg.image_size,
            series_len: 2,
            event_prob: 1.0,
            noise_level: 0.01,
            water_prob: 0.5,
        };
        let series = hit_core::synth::synth_series::<f32>(&gen, seed ^ value as u64)?;
        let mut grads = ps.zero_grads();
        let loss = model.series_loss_and_grad(&ps, &series, &mut grads)?;
        if !loss.is_finite() {
            return Err(CliError::Runtime(format!(
                "non-finite loss at sweep value {value}"
            )));
        }
        // Shape invariants: the embedding round-trips r^2 x d, and the
        // prediction covers the full tile.
        let he = model.initial_he(&ps, "sweep");
        let (step, _) = model.hit_step(&ps, &series.frames[0].bands, &he, 1, AttnMask::None)?;
        let r2 = cfg.he_grid * cfg.he_grid;
        if step.he_next.values.shape() != [r2, cfg.he_dim] {
            return Err(CliError::Runtime(format!(
                "sweep value {value}: embedding shape {:?} != [{r2}, {}]",
                step.he_next.values.shape(),
                cfg.he_dim
            )));
        }
        if step.seg.probabilities.shape() != [1, cfg.image_size, cfg.image_size] {
            return Err(CliError::Runtime(format!(
                "sweep value {value}: prediction shape {:?}",
                step.seg.probabilities.shape()
            )));
        }
        report.push_str(&format!(
            "{value}\t{r2}\t{}\t{loss:.4}\n",
            ps.total_elements()
        ));
    }
    Ok(report)
}

/// Full sweep: trains `runs` models per value and aggregates best F1.
/// Returns (table text, plot-data TSV).
pub fn sweep_train(
    app: &AppConfig,
    param: SweepParam,
    values: &[usize],
    seed: u64,
) -> Result<(String, String), CliError> {
    let (train_set, val_set) = crate::dataset::generate_splits(&app.data, seed)?;
    let mut table = format!("{}\tmean_f1\tstd_f1\truns\n", param.label());
    let mut plot = format!("{}\trun\tf1\n", param.label());
    for &value in values {
        let mut cfg = app.clone();
        param.apply(&mut cfg.model, value);
        cfg.model.validate()?;
        let mut scores = Vec::new();
        for run in 0..app.train.runs {
            let run_seed = Rng::derive(seed, 0x53ee_0000 + run as u64).next_u64();
            let outcome = train_hit(&cfg, run_seed, &train_set, &val_set)?;
            plot.push_str(&format!("{value}\t{run}\t{:.6}\n", outcome.best_f1));
            scores.push(outcome.best_f1);
        }
        let (mean, std) = mean_std(&scores);
        table.push_str(&format!(
            "{value}\t{mean:.4}\t{std:.4}\t{}\n",
            app.train.runs
        ));
    }
    Ok((table, plot))
}

// ---------------------------------------------------------------------------
// Temporal-persistence evaluation
// ---------------------------------------------------------------------------

/// Baseline protocol: every pre frame paired with post; per-index F1 delta
/// to the per-scene best; the index with the most negative mean delta is
/// flagged.
pub struct BaselinePersistence {
    pub mean_delta: Vec<f64>,
    pub std_delta: Vec<f64>,
    /// 1-based pre-frame index with the worst mean delta.
    pub flagged_index: usize,
    pub table: String,
}

pub fn eval_persistence_baseline(
    model: &BaselineModel<f32>,
    ps: &ParamSet<f32>,
    scenes: &[TileSeries<f32>],
) -> Result<BaselinePersistence, CliError> {
    let n = scenes
        .first()
        .ok_or_else(|| CliError::Usage("persistence evaluation needs scenes".to_string()))?
        .len();
    let mut deltas: Vec<Vec<f64>> = vec![Vec::new(); n];
    for scene in scenes {
        if scene.len() != n {
            return Err(CliError::Usage(
                "persistence scenes must share a series length".to_string(),
            ));
        }
        let mut f1s = Vec::with_capacity(n);
        for i in 1..=n {
            let (seg, _) = model.forward(ps, &scene.frames[i - 1].bands, &scene.post.bands)?;
            let mask = scene.mask_between(i, n + 1)?;
            f1s.push(confusion(&seg.probabilities, &mask, F1_THRESHOLD)?.f1());
        }
        let best = f1s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (i, f1) in f1s.iter().enumerate() {
            deltas[i].push(f1 - best);
        }
    }
    let mut mean_delta = Vec::with_capacity(n);
    let mut std_delta = Vec::with_capacity(n);
    for d in &deltas {
        let (m, s) = mean_std(d);
        mean_delta.push(m);
        std_delta.push(s);
    }
    let flagged_index = 1 + mean_delta
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite deltas"))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut table = String::from("index\tmean_delta\tstd_delta\tflag\n");
    for i in 0..n {
        let flag = if i + 1 == flagged_index { "<-- worst" } else { "" };
        table.push_str(&format!(
            "{}\t{:+.4}\t{:.4}\t{flag}\n",
            i + 1,
            mean_delta[i],
            std_delta[i]
        ));
    }
    Ok(BaselinePersistence {
        mean_delta,
        std_delta,
        flagged_index,
        table,
    })
}

/// History-model protocol: for each sub-series size `s`, fold frames
/// `1..=s` and predict against post. Pure forks only; the stored
/// trajectory is never advanced by evaluation.
pub struct HitPersistence {
    /// `per_scene[scene][s-1]` = F1 at sub-series size `s`.
    pub per_scene: Vec<Vec<f64>>,
    pub mean_per_size: Vec<f64>,
    pub table: String,
}

pub fn eval_persistence_hit(
    model: &HitModel<f32>,
    ps: &ParamSet<f32>,
    scenes: &[TileSeries<f32>],
) -> Result<HitPersistence, CliError> {
    let n = scenes
        .first()
        .ok_or_else(|| CliError::Usage("persistence evaluation needs scenes".to_string()))?
        .len();
    let mut per_scene = Vec::with_capacity(scenes.len());
    let mut table = String::from("scene");
    for s in 1..=n {
        table.push_str(&format!("\tf1@{s}"));
    }
    table.push('\n');
    for (idx, scene) in scenes.iter().enumerate() {
        let mut row = Vec::with_capacity(n);
        table.push_str(&format!("{idx}"));
        for s in 1..=n {
            let seg = model.predict_prefix_post(ps, scene, s)?;
            let mask = scene.branch_mask(s)?;
            let f1 = confusion(&seg.probabilities, &mask, F1_THRESHOLD)?.f1();
            table.push_str(&format!("\t{f1:.4}"));
            row.push(f1);
        }
        table.push('\n');
        per_scene.push(row);
    }
    let mut mean_per_size = Vec::with_capacity(n);
    for s in 0..n {
        let col: Vec<f64> = per_scene.iter().map(|r| r[s]).collect();
        mean_per_size.push(mean_std(&col).0);
    }
    Ok(HitPersistence {
        per_scene,
        mean_per_size,
        table,
    })
}

// ---------------------------------------------------------------------------
// Throughput benchmark
// ---------------------------------------------------------------------------

pub struct BenchReport {
    pub median_ms: f64,
    pub p95_ms: f64,
    pub fps_single: f64,
    pub fps_multi: f64,
    pub cores: usize,
    pub text: String,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Times one observation step (encode + inject + decode) on random full-size
/// tiles, single-threaded and in parallel across independent tiles.
pub fn bench_throughput(
    cfg: &ModelConfig,
    warmup: usize,
    iters: usize,
    seed: u64,
) -> Result<BenchReport, CliError> {
    if iters < 10 {
        return Err(CliError::Usage("bench needs at least 10 iterations".to_string()));
    }
    let (model, ps) = HitModel::<f32>::new(cfg.clone(), seed)?;
    let mut rng = Rng::derive(seed, 0xbe9c);
    let pixels = cfg.bands * cfg.image_size * cfg.image_size;
    let tiles: Vec<(Tensor<f32>, _)> = (0..iters)
        .map(|i| {
            let image = Tensor::new(
                vec![cfg.bands, cfg.image_size, cfg.image_size],
                (0..pixels).map(|_| rng.uniform() as f32).collect(),
            )
            .expect("bench image shape");
            (image, model.initial_he(&ps, &format!("bench-{i}")))
        })
        .collect();

    // Single-thread latencies.
    let mut latencies = Vec::with_capacity(iters);
    for round in 0..warmup + iters {
        let (image, he) = &tiles[round % iters];
        let start = Instant::now();
        let out = model.hit_step(&ps, image, he, round as u64, AttnMask::None)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(&out);
        if round >= warmup {
            latencies.push(elapsed);
        }
    }
    latencies.sort_by(|a, b| a.partial_cmp(b).expect("finite latency"));
    let median_ms = percentile(&latencies, 0.5);
    let p95_ms = percentile(&latencies, 0.95);
    let fps_single = 1e3 / median_ms;

    // Multi-thread throughput across independent tiles.
    let run_parallel = || -> Result<f64, CliError> {
        let start = Instant::now();
        let results: Result<Vec<_>, Error> = tiles
            .par_iter()
            .enumerate()
            .map(|(i, (image, he))| {
                model
                    .hit_step(&ps, image, he, i as u64, AttnMask::None)
                    .map(|out| out.0.he_next.step_count)
            })
            .collect();
        results?;
        Ok(iters as f64 / start.elapsed().as_secs_f64())
    };
    run_parallel()?; // warmup round for the pool
    let fps_multi = run_parallel()?;

    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let text = format!(
        "hardware: {} {} with {cores} logical cores\n\
         config: fuse_stage {}, he_grid {}, he_dim {} ({} tiles, {warmup} warmup excluded)\n\
         single-thread: median {median_ms:.1} ms, p95 {p95_ms:.1} ms, {fps_single:.2} FPS\n\
         multi-thread ({cores} threads): {fps_multi:.2} FPS\n",
        std::env::consts::OS,
        std::env::consts::ARCH,
        cfg.fuse_stage,
        cfg.he_grid,
        cfg.he_dim,
        iters,
    );
    Ok(BenchReport {
        median_ms,
        p95_ms,
        fps_single,
        fps_multi,
        cores,
        text,
    })
}

// ---------------------------------------------------------------------------
// Whole-model gradient check
// ---------------------------------------------------------------------------

/// Small but structurally complete model used for exhaustive finite-
/// difference verification: every module is present (multi-tap decoder,
/// history injection at an interior stage, learned initial embedding) while
/// the parameter count stays tractable for a full sweep.
pub fn gradcheck_toy_config() -> ModelConfig {
    ModelConfig {
        image_size: 32,
        patch_size: 16,
        bands: 6,
        embed_dim: 16,
        depth: 3,
        heads: 2,
        mlp_ratio: 2.0,
        fuse_stage: 2,
        he_grid: 2,
        he_dim: 4,
        decoder_taps: vec![1, 2, 3],
        decoder_channels: 8,
        learned_initial_he: true,
    }
}

pub struct GradcheckOutcome {
    pub max_rel_err: f64,
    pub worst: String,
    pub elements: usize,
    pub text: String,
}

/// Central-difference sweep over every parameter of the full model against
/// the analytic series gradient, in f64. Elements are probed in parallel;
/// each worker owns a private copy of the parameters, so the sweep is
/// deterministic and race-free.
///
/// The probe point redraws every parameter at a moderate order-one scale
/// rather than using the training initialization: at the tiny init scale
/// several tensors (attention biases, the adapter norm, the learned initial
/// embedding) receive gradients of order 1e-8, which central differences at
/// h = 1e-4 cannot resolve to five significant digits no matter how correct
/// the backward pass is. A generic parameter point keeps every tensor's
/// gradient well above the difference quotient's truncation floor while
/// keeping attention scores and logits unsaturated.
pub fn gradcheck_full(
    cfg: &ModelConfig,
    series: &TileSeries<f64>,
    seed: u64,
) -> Result<GradcheckOutcome, CliError> {
    let (model, mut ps) = HitModel::<f64>::new(cfg.clone(), seed)?;
    let mut redraw = Rng::derive(seed, 0x9cad_c4ec);
    let names: Vec<String> = ps.iter().map(|(n, _)| n.to_string()).collect();
    for name in &names {
        let id = ps.id_of(name).expect("listed parameter exists");
        for v in ps.get_mut(id).data_mut() {
            *v = redraw.uniform_range(-0.3, 0.3);
        }
    }
    let mut grads = ps.zero_grads();
    model.series_loss_and_grad(&ps, series, &mut grads)?;

    let layout: Vec<(String, usize)> = ps
        .iter()
        .map(|(name, t)| (name.to_string(), t.numel()))
        .collect();
    let jobs: Vec<(usize, usize)> = layout
        .iter()
        .enumerate()
        .flat_map(|(p, (_, numel))| (0..*numel).map(move |e| (p, e)))
        .collect();
    let elements = jobs.len();

    let chunk = elements.div_ceil(rayon::current_num_threads().max(1) * 4).max(1);
    let numeric: Result<Vec<Vec<f64>>, CliError> = jobs
        .par_chunks(chunk)
        .map(|batch| {
            let mut local = ps.clone();
            let mut f =
                |p: &ParamSet<f64>| model.series_loss(p, series).map(|(loss, _)| loss);
            batch
                .iter()
                .map(|&(p, e)| {
                    let id = local
                        .id_of(&layout[p].0)
                        .expect("layout lists existing parameters");
                    Ok(central_diff_at(&mut local, &mut f, id, e, DEFAULT_H)?)
                })
                .collect()
        })
        .collect();
    let numeric: Vec<f64> = numeric?.into_iter().flatten().collect();

    // Gate on the per-tensor norm error; keep the worst element-wise
    // figure as a diagnostic (see the gradcheck module documentation for
    // why the element-wise quotient is not the gate).
    let mut max_rel_err = 0.0f64;
    let mut worst_elem_err = 0.0f64;
    let mut worst = String::from("(none)");
    let mut per_param: Vec<(String, f64)> = Vec::new();
    let mut cursor = 0usize;
    for (name, numel) in &layout {
        let id = ps.id_of(name).expect("layout lists existing parameters");
        let analytic = grads.get(id).data();
        let numeric_slice = &numeric[cursor..cursor + numel];
        let rel_norm = relative_error_norm(analytic, numeric_slice);
        if rel_norm > max_rel_err {
            max_rel_err = rel_norm;
        }
        for (e, (&a, &nm)) in analytic.iter().zip(numeric_slice).enumerate() {
            let rel = relative_error(a, nm);
            if rel > worst_elem_err {
                worst_elem_err = rel;
                worst = format!("{name}[{e}]: analytic {a:.6e}, numeric {nm:.6e}");
            }
        }
        per_param.push((name.clone(), rel_norm));
        cursor += numel;
    }
    per_param.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite errors"));
    let mut text = format!(
        "checked {elements} parameter elements against central differences (h = {DEFAULT_H:.0e})\n\
         max per-tensor relative error: {max_rel_err:.3e}\n\
         worst single element (diagnostic): {worst} (rel {worst_elem_err:.3e})\n\
         highest per-tensor errors:\n"
    );
    for (name, err) in per_param.iter().take(5) {
        text.push_str(&format!("  {name}: {err:.3e}\n"));
    }
    let _ = &mut ps;
    Ok(GradcheckOutcome {
        max_rel_err,
        worst,
        elements,
        text,
    })
}

// ---------------------------------------------------------------------------
// Checkpoint plumbing shared by subcommands
// ---------------------------------------------------------------------------

/// Restores trained values into a freshly initialized parameter set.
pub fn load_params_into(ps: &mut ParamSet<f32>, bytes: &[u8]) -> Result<(), CliError> {
    wire::load_checkpoint(ps, bytes)?;
    Ok(())
}
