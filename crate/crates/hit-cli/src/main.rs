//! `hit` — command-line front end for the history-injection change
//! detector: synthetic data generation, training for both model families,
//! ablation sweeps, single-tile inference against a persistent embedding
//! store, storage accounting, persistence evaluation, throughput
//! benchmarking, and a whole-model gradient check.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use hit_cli::config::AppConfig;
use hit_cli::harness::{self, F1_THRESHOLD};
use hit_cli::manifest::{replay_line, RunManifest};
use hit_cli::store::HeStore;
use hit_cli::{dataset, CliError};
use hit_core::encoder::AttnMask;
use hit_core::footprint::{
    footprint, format_bytes, format_percent, savings_percent, FOOTPRINT_SWEEP,
};
use hit_core::model::{BaselineModel, HitModel};
use hit_core::rng::Rng;
use hit_core::synth::synth_dataset;
use hit_core::wire;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hit",
    version,
    about = "Continuous change detection with stored history embeddings"
)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Inline override, e.g. `--set model.embed_dim=32`. Repeatable;
    /// applied after the configuration file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run seed. Every random draw derives from it.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic train/val dataset onto disk.
    Synth,
    /// Train the history-injection model.
    Train,
    /// Train the bitemporal baseline.
    TrainBaseline,
    /// Sweep one architecture parameter over a list of values.
    Sweep {
        /// `fuse`, `dim`, or `grid`.
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. `3,5,7,11`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        /// Only run forward/backward shape checks, no training.
        #[arg(long)]
        shapes_only: bool,
    },
    /// One observation step for a single tile against the embedding store.
    Infer {
        #[arg(long, value_name = "FILE")]
        ckpt: PathBuf,
        /// Input raster (`.hitr`, f32, `bands x size x size`).
        #[arg(long, value_name = "FILE")]
        image: PathBuf,
        /// Embedding store directory (created on first use).
        #[arg(long, value_name = "DIR")]
        store: PathBuf,
        /// Tile key, e.g. `E031N042`.
        #[arg(long)]
        tile: String,
        #[arg(long, default_value_t = 1)]
        timestamp: u64,
    },
    /// Storage accounting for stored embeddings at continental scale.
    Footprint {
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        tokens: Option<usize>,
        /// Print the full geometry sweep table.
        #[arg(long)]
        table: bool,
    },
    /// Compare temporal persistence of both trained models.
    EvalPersistence {
        #[arg(long, value_name = "FILE")]
        hit_ckpt: PathBuf,
        #[arg(long, value_name = "FILE")]
        baseline_ckpt: PathBuf,
        /// Number of evaluation scenes to generate.
        #[arg(long, default_value_t = 16)]
        scenes: usize,
    },
    /// Latency / throughput of one observation step.
    Bench {
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long, default_value_t = 20)]
        iters: usize,
    },
    /// Exhaustive finite-difference check of the full analytic gradient.
    Gradcheck {
        /// Series length of the probe scene.
        #[arg(long, default_value_t = 2)]
        frames: usize,
        /// Maximum acceptable relative error.
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code: u8 = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<AppConfig, CliError> {
    let mut app = AppConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        app.apply(&text)?;
    }
    for item in &cli.overrides {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("--set expects KEY=VALUE, got {item:?}"))
        })?;
        app.set(key.trim(), value.trim())?;
    }
    Ok(app)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))
}

fn write_manifest(
    cli: &Cli,
    app: &AppConfig,
    command: &str,
    dataset_hash: u64,
) -> Result<(), CliError> {
    let argv: Vec<String> = std::env::args().collect();
    RunManifest {
        command: command.to_string(),
        replay: replay_line(&argv),
        seed: cli.seed,
        dataset_hash,
        config: app.clone(),
    }
    .write(&cli.out)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::Synth => cmd_synth(&cli),
        Cmd::Train => cmd_train(&cli, false),
        Cmd::TrainBaseline => cmd_train(&cli, true),
        Cmd::Sweep {
            param,
            values,
            shapes_only,
        } => cmd_sweep(&cli, param, values, *shapes_only),
        Cmd::Infer {
            ckpt,
            image,
            store,
            tile,
            timestamp,
        } => cmd_infer(&cli, ckpt, image, store, tile, *timestamp),
        Cmd::Footprint { dim, tokens, table } => cmd_footprint(*dim, *tokens, *table),
        Cmd::EvalPersistence {
            hit_ckpt,
            baseline_ckpt,
            scenes,
        } => cmd_eval_persistence(&cli, hit_ckpt, baseline_ckpt, *scenes),
        Cmd::Bench { warmup, iters } => cmd_bench(&cli, *warmup, *iters),
        Cmd::Gradcheck { frames, tolerance } => cmd_gradcheck(&cli, *frames, *tolerance),
    }
}

fn cmd_synth(cli: &Cli) -> Result<(), CliError> {
    let app = resolve_config(cli)?;
    app.validate()?;
    write_manifest(cli, &app, "synth", dataset::generated_hash(&app.data, cli.seed))?;
    let (train, val) = dataset::generate_splits(&app.data, cli.seed)?;
    let settings = app.serialize();
    let train_hash = dataset::write_dataset(&cli.out.join("dataset/train"), &train, &settings)?;
    let val_hash = dataset::write_dataset(&cli.out.join("dataset/val"), &val, &settings)?;
    println!(
        "wrote {} train series ({train_hash:016x}) and {} val series ({val_hash:016x}) under {}",
        train.len(),
        val.len(),
        cli.out.join("dataset").display()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, baseline: bool) -> Result<(), CliError> {
    let app = resolve_config(cli)?;
    app.validate()?;
    let command = if baseline { "train-baseline" } else { "train" };
    write_manifest(cli, &app, command, dataset::generated_hash(&app.data, cli.seed))?;
    let (train, val) = dataset::generate_splits(&app.data, cli.seed)?;
    let outcome = if baseline {
        harness::train_baseline(&app, cli.seed, &train, &val)?
    } else {
        harness::train_hit(&app, cli.seed, &train, &val)?
    };
    let stem = if baseline { "baseline" } else { "model" };
    write_text(&cli.out.join(format!("metrics-{stem}.csv")), &outcome.log)?;
    std::fs::write(cli.out.join(format!("{stem}.ckpt")), &outcome.checkpoint)
        .map_err(|e| CliError::Runtime(format!("cannot write checkpoint: {e}")))?;
    println!(
        "{command}: best val F1 {:.4} at epoch {} ({} epochs run); artifacts in {}",
        outcome.best_f1,
        outcome.best_epoch,
        outcome.epochs_run,
        cli.out.display()
    );
    Ok(())
}

fn cmd_sweep(cli: &Cli, param: &str, values: &[usize], shapes_only: bool) -> Result<(), CliError> {
    let app = resolve_config(cli)?;
    app.validate()?;
    let param = harness::SweepParam::parse(param)?;
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".to_string()));
    }
    write_manifest(cli, &app, "sweep", dataset::generated_hash(&app.data, cli.seed))?;
    if shapes_only {
        let report = harness::sweep_shapes(&app.model, param, values, cli.seed)?;
        write_text(&cli.out.join("sweep.txt"), &report)?;
        print!("{report}");
    } else {
        let (table, plot) = harness::sweep_train(&app, param, values, cli.seed)?;
        write_text(&cli.out.join("sweep.txt"), &table)?;
        write_text(&cli.out.join("sweep-plot.tsv"), &plot)?;
        print!("{table}");
    }
    Ok(())
}

fn cmd_infer(
    cli: &Cli,
    ckpt: &Path,
    image: &Path,
    store_dir: &Path,
    tile: &str,
    timestamp: u64,
) -> Result<(), CliError> {
    let app = resolve_config(cli)?;
    app.model.validate()?;
    write_manifest(cli, &app, "infer", 0)?;
    let (model, mut ps) = HitModel::<f32>::new(app.model.clone(), cli.seed)?;
    harness::load_params_into(&mut ps, &read_bytes(ckpt)?)?;
    let input = {
        let bytes = read_bytes(image)?;
        wire::decode_raster(&bytes)?
    };
    let expect = [app.model.bands, app.model.image_size, app.model.image_size];
    if input.shape() != expect {
        return Err(CliError::Usage(format!(
            "input raster shape {:?} does not match configured {:?}",
            input.shape(),
            expect
        )));
    }
    let store = HeStore::create(store_dir, app.model.hash())?;
    let he = if store.keys()?.iter().any(|k| k == tile) {
        store.get(tile)?
    } else {
        model.initial_he(&ps, tile)
    };
    let (step, _) = model.hit_step(&ps, &input, &he, timestamp, AttnMask::None)?;
    store.put(&step.he_next)?;
    let prob_path = cli.out.join(format!("{tile}-t{timestamp}.hitr"));
    let bytes = wire::encode_raster(&step.seg.probabilities, wire::RasterDtype::F32)?;
    std::fs::write(&prob_path, bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", prob_path.display())))?;
    let flagged = step
        .seg
        .probabilities
        .data()
        .iter()
        .filter(|&&p| p as f64 > F1_THRESHOLD)
        .count();
    println!(
        "tile {tile}: step {} at timestamp {}, {flagged} changed pixels ({:.2}%), map {}",
        step.he_next.step_count,
        step.he_next.timestamp,
        100.0 * flagged as f64 / step.seg.probabilities.numel() as f64,
        prob_path.display()
    );
    Ok(())
}

fn small_bytes(bytes: u64) -> String {
    if bytes < 1_000_000 {
        format!("{:.2} KB", bytes as f64 / 1e3)
    } else if bytes < 1_000_000_000 {
        format!("{:.2} MB", bytes as f64 / 1e6)
    } else {
        format_bytes(bytes)
    }
}

fn footprint_row(dim: usize, tokens: usize) -> String {
    let r = footprint(dim, tokens);
    format!(
        "dim {dim:>3} x {tokens:>3} tokens: {:>10} per tile | {}",
        small_bytes(r.bytes_per_tile),
        r.summary_line()
    )
}

fn cmd_footprint(dim: Option<usize>, tokens: Option<usize>, table: bool) -> Result<(), CliError> {
    match (dim, tokens) {
        (Some(d), Some(t)) => {
            if d == 0 || t == 0 {
                return Err(CliError::Usage("dim and tokens must be positive".to_string()));
            }
            let r = footprint(d, t);
            println!("{}", footprint_row(d, t));
            println!(
                "covering Europe needs {} tiles, the global land mass {} tiles",
                r.europe_tiles, r.world_tiles
            );
            println!(
                "storing the embedding instead of the raw tile saves {:.2}% ({}% of image size)",
                savings_percent(d, t),
                format_percent(r.percent_of_image())
            );
        }
        (None, None) => {
            for (d, t) in FOOTPRINT_SWEEP {
                println!("{}", footprint_row(d, t));
            }
            if !table {
                // The sweep is the default output; --table is accepted for
                // symmetry but implied when no geometry is given.
            }
        }
        _ => {
            return Err(CliError::Usage(
                "--dim and --tokens must be given together".to_string(),
            ))
        }
    }
    if table && dim.is_some() {
        for (d, t) in FOOTPRINT_SWEEP {
            println!("{}", footprint_row(d, t));
        }
    }
    Ok(())
}

fn cmd_eval_persistence(
    cli: &Cli,
    hit_ckpt: &Path,
    baseline_ckpt: &Path,
    scenes: usize,
) -> Result<(), CliError> {
    let app = resolve_config(cli)?;
    app.validate()?;
    if scenes == 0 {
        return Err(CliError::Usage("need at least one scene".to_string()));
    }
    write_manifest(cli, &app, "eval-persistence", 0)?;
    let gen = app.data.gen_config();
    let scenes = synth_dataset::<f32>(&gen, Rng::derive(cli.seed, 0x5ce7e5).next_u64(), scenes)?;

    let (hit, mut hit_ps) = HitModel::<f32>::new(app.model.clone(), cli.seed)?;
    harness::load_params_into(&mut hit_ps, &read_bytes(hit_ckpt)?)?;
    let (base, mut base_ps) = BaselineModel::<f32>::new(app.model.clone(), cli.seed)?;
    harness::load_params_into(&mut base_ps, &read_bytes(baseline_ckpt)?)?;

    let bp = harness::eval_persistence_baseline(&base, &base_ps, &scenes)?;
    let hp = harness::eval_persistence_hit(&hit, &hit_ps, &scenes)?;
    let mut text = String::from("bitemporal baseline: F1 delta by pre-frame index\n");
    text.push_str(&bp.table);
    text.push_str(&format!(
        "older pre frames degrade the baseline; index {} is worst ({:+.4} mean F1)\n\n",
        bp.flagged_index, bp.mean_delta[bp.flagged_index - 1]
    ));
    text.push_str("history model: F1 by folded sub-series size\n");
    text.push_str(&hp.table);
    text.push_str("mean");
    for m in &hp.mean_per_size {
        text.push_str(&format!("\t{m:.4}"));
    }
    text.push('\n');
    write_text(&cli.out.join("persistence.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_bench(cli: &Cli, warmup: usize, iters: usize) -> Result<(), CliError> {
    let app = resolve_config(cli)?;
    app.model.validate()?;
    write_manifest(cli, &app, "bench", 0)?;
    let report = harness::bench_throughput(&app.model, warmup, iters, cli.seed)?;
    write_text(&cli.out.join("bench.txt"), &report.text)?;
    print!("{}", report.text);
    Ok(())
}

fn cmd_gradcheck(cli: &Cli, frames: usize, tolerance: f64) -> Result<(), CliError> {
    if frames == 0 {
        return Err(CliError::Usage("need at least one frame".to_string()));
    }
    let cfg = harness::gradcheck_toy_config();
    let app = {
        let mut app = resolve_config(cli)?;
        app.model = cfg.clone();
        app
    };
    write_manifest(cli, &app, "gradcheck", 0)?;
    let gen = hit_core::synth::GenConfig {
        tile_size: cfg.image_size,
        series_len: frames,
        event_prob: 1.0,
        noise_level: 0.01,
        water_prob: 0.5,
    };
    let series = hit_core::synth::synth_series::<f64>(&gen, cli.seed)?;
    let out = harness::gradcheck_full(&cfg, &series, cli.seed)?;
    write_text(&cli.out.join("gradcheck.txt"), &out.text)?;
    print!("{}", out.text);
    if out.max_rel_err < tolerance {
        println!("PASS: max relative error {:.3e} < {tolerance:.0e}", out.max_rel_err);
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "FAIL: max relative error {:.3e} >= {tolerance:.0e}",
            out.max_rel_err
        )))
    }
}
