//! End-to-end tests of the `hit` binary: exit-code contract, usage
//! diagnostics, the storage-accounting output, configuration round trips,
//! and bit-exact replay of a run manifest.

use hit_cli::config::AppConfig;
use std::path::Path;
use std::process::{Command, Output};

fn hit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hit"))
}

fn run(args: &[&str]) -> Output {
    hit().args(args).output().expect("binary should spawn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process should exit normally")
}

/// A configuration small enough that `train` finishes in well under a
/// second, written as a file body.
const TINY_CONFIG: &str = "\
model.image_size = 16
model.patch_size = 4
model.embed_dim = 8
model.depth = 2
model.heads = 2
model.mlp_ratio = 2
model.fuse_stage = 1
model.he_grid = 2
model.he_dim = 4
model.decoder_taps = 1,2
model.decoder_channels = 4
train.epochs = 2
train.batch_size = 3
data.tile_size = 16
data.series_len = 3
data.train_count = 4
data.val_count = 2
";

#[test]
fn no_arguments_is_a_usage_error_with_exit_code_1() {
    let out = run(&[]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("Usage"), "expected usage text, got: {err}");
    assert!(err.contains("footprint"), "usage should list subcommands: {err}");
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    let out = run(&["--help"]);
    let text = stdout(&out);
    for sub in ["synth", "train", "sweep", "infer", "footprint", "bench", "gradcheck"] {
        assert!(text.contains(sub), "help should mention {sub}: {text}");
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = run(&["frobnicate"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn unknown_configuration_key_names_the_offending_token() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "model.bogus_knob=3",
        "synth",
    ]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(
        err.contains("model.bogus_knob"),
        "error should name the bad key: {err}"
    );
}

#[test]
fn malformed_override_without_equals_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "model.embed_dim",
        "synth",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("model.embed_dim"));
}

#[test]
fn footprint_prints_the_published_deployment_numbers() {
    let out = run(&["footprint", "--dim", "24", "--tokens", "64"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("0.391%"), "percent-of-image: {text}");
    assert!(text.contains("4.85 GB"), "Europe total: {text}");
    assert!(text.contains("139.69 GB"), "global total: {text}");
    assert!(text.contains("saves 99.61%"), "savings figure: {text}");
    assert!(text.contains("790000 tiles"), "Europe tile count: {text}");
}

#[test]
fn footprint_with_half_a_geometry_is_a_usage_error() {
    for args in [&["footprint", "--dim", "24"][..], &["footprint", "--tokens", "64"][..]] {
        let out = run(args);
        assert_eq!(code(&out), 1, "args {args:?}");
        assert!(stderr(&out).contains("together"));
    }
}

#[test]
fn footprint_without_geometry_prints_the_sweep_table() {
    let out = run(&["footprint"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.lines().count() >= 10, "sweep should have many rows: {text}");
    assert!(text.contains("dim  24 x  64 tokens"));
}

#[test]
fn invalid_model_geometry_is_rejected_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    // patch size does not divide the image size
    let out = run(&[
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "model.image_size=30",
        "synth",
    ]);
    assert_eq!(code(&out), 1);
}

fn write_tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, TINY_CONFIG).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn manifest_records_the_merged_configuration_as_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out = run(&[
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "model.embed_dim=12",
        "synth",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let manifest = std::fs::read_to_string(dir.path().join("run.txt")).unwrap();
    assert!(manifest.contains("command = synth"));
    // the inline override must win over the file
    assert!(manifest.contains("model.embed_dim = 12"), "{manifest}");
    assert!(manifest.contains("data.train_count = 4"), "{manifest}");

    // the configuration block parses back to exactly the same serialization
    let block = manifest
        .split("# configuration\n")
        .nth(1)
        .expect("manifest should carry a configuration block");
    let reparsed = AppConfig::parse(block).unwrap();
    assert_eq!(reparsed.serialize(), block);
}

#[test]
fn replaying_a_manifest_reproduces_training_outputs_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out_dir = dir.path().join("run");
    let out = run(&[
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "7",
        "train",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let metrics_path = out_dir.join("metrics-model.csv");
    let ckpt_path = out_dir.join("model.ckpt");
    let first_metrics = std::fs::read(&metrics_path).unwrap();
    let first_ckpt = std::fs::read(&ckpt_path).unwrap();
    let manifest = std::fs::read_to_string(out_dir.join("run.txt")).unwrap();

    let replay = manifest
        .lines()
        .find_map(|l| l.strip_prefix("replay = "))
        .expect("manifest should carry a replay line")
        .to_string();
    // arguments in this test contain no whitespace, so the quoted replay
    // line splits cleanly; skip argv[0] and re-spawn the same binary
    let args: Vec<&str> = replay.split_whitespace().skip(1).collect();
    assert!(args.contains(&"train"), "replay line: {replay}");
    let again = hit().args(&args).output().unwrap();
    assert_eq!(code(&again), 0, "stderr: {}", stderr(&again));

    assert_eq!(first_metrics, std::fs::read(&metrics_path).unwrap());
    assert_eq!(first_ckpt, std::fs::read(&ckpt_path).unwrap());
}

#[test]
fn gradcheck_usage_error_on_zero_frames() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "--out",
        dir.path().to_str().unwrap(),
        "gradcheck",
        "--frames",
        "0",
    ]);
    assert_eq!(code(&out), 1);
}
