//! End-to-end tests that drive the `ldm` binary: exit codes, determinism,
//! file formats, and command chaining through the filesystem.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ldm_cli::image::{read_field, write_netpbm, BitDepth};
use ldm_core::Field;

fn ldm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn ldm")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL_SAMPLE_CONFIG: &str = r#"
seed = 7

[dataset]
source = "synthetic-gmm"
channels = 1
height = 4
width = 4
count = 16

[[denoiser.gmm]]
weight = 1.0
mean = 0.1
var = 0.25

[sampler]
steps = [8]
integrator = "heun"
chains = 2

[output]
directory = "out"
format = "pgm16"
"#;

#[test]
fn verify_selector_runs_only_the_named_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = ldm(
        dir.path(),
        &["verify", "pyramid_roundtrip", "switch_identity"],
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    let pass_lines: Vec<&str> = text.lines().filter(|l| l.starts_with("PASS ")).collect();
    assert_eq!(pass_lines.len(), 2, "stdout: {text}");
    assert!(pass_lines[0].contains("pyramid_roundtrip"));
    assert!(pass_lines[1].contains("switch_identity"));
    assert!(text.contains("all 2 check(s) passed"));
}

#[test]
fn unknown_check_name_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = ldm(dir.path(), &["verify", "no_such_check"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("no_such_check"), "stderr: {err}");
    assert!(err.contains("pyramid_roundtrip"), "stderr: {err}");
}

#[test]
fn unknown_config_key_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "not_a_key = 3\n").unwrap();
    let out = ldm(dir.path(), &["sample", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("not_a_key"));
}

#[test]
fn missing_input_file_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = ldm(dir.path(), &["decompose", "absent.pgm"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_of(&out).contains("absent.pgm"));
}

#[test]
fn step_count_must_match_the_stage_count() {
    let dir = tempfile::tempdir().unwrap();
    let config = "\n[process]\nlevels = 2\nt_star = [0.7]\n";
    fs::write(dir.path().join("run.toml"), config).unwrap();
    let out = ldm(dir.path(), &["sample", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("sampler.steps"));
}

#[test]
fn multi_stage_plans_need_the_dataset_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"
[process]
levels = 2
t_star = [0.7]

[[denoiser.gmm]]
weight = 1.0
mean = 0.0
var = 0.01

[denoiser]
kind = "gmm"

[sampler]
steps = [8, 8]
"#;
    fs::write(dir.path().join("run.toml"), config).unwrap();
    let out = ldm(dir.path(), &["sample", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("dataset-oracle"), "stderr: {}", stderr_of(&out));
}

#[test]
fn sample_bytes_depend_on_the_seed_and_nothing_else() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL_SAMPLE_CONFIG).unwrap();

    let first = ldm(dir.path(), &["sample", "--config", "run.toml", "--out", "a"]);
    assert_eq!(first.status.code(), Some(0), "stderr: {}", stderr_of(&first));
    let rerun = ldm(
        dir.path(),
        &["sample", "--config", "run.toml", "--out", "a", "--threads", "1"],
    );
    assert_eq!(rerun.status.code(), Some(0));
    let other_seed = ldm(
        dir.path(),
        &["sample", "--config", "run.toml", "--out", "b", "--seed", "8"],
    );
    assert_eq!(other_seed.status.code(), Some(0));

    let chain_a = fs::read(dir.path().join("a/chain_0000.lraw")).unwrap();
    let chain_b = fs::read(dir.path().join("b/chain_0000.lraw")).unwrap();
    assert_ne!(chain_a, chain_b, "a different seed must change the samples");

    let manifest = fs::read_to_string(dir.path().join("a/manifest.toml")).unwrap();
    assert!(manifest.contains("config_sha256"));
    assert!(manifest.contains("chain_0000.lraw"));
}

#[test]
fn rerunning_a_sample_reproduces_every_output_byte() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL_SAMPLE_CONFIG).unwrap();

    let first = ldm(dir.path(), &["sample", "--config", "run.toml"]);
    assert_eq!(first.status.code(), Some(0), "stderr: {}", stderr_of(&first));
    let out_dir = dir.path().join("out");
    let mut snapshots = Vec::new();
    for entry in fs::read_dir(&out_dir).unwrap() {
        let path = entry.unwrap().path();
        snapshots.push((path.clone(), fs::read(&path).unwrap()));
    }
    assert!(snapshots.len() >= 5, "expected chains plus manifest");

    let second = ldm(dir.path(), &["sample", "--config", "run.toml", "--threads", "2"]);
    assert_eq!(second.status.code(), Some(0));
    for (path, bytes) in snapshots {
        let reread = fs::read(&path).unwrap();
        assert_eq!(reread, bytes, "{} changed across reruns", path.display());
    }
}

#[test]
fn decompose_writes_each_band_and_reconstructs_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let input = Field::from_fn(1, 8, 8, |_, y, x| ((y / 2 + x / 2) % 2) as f64).unwrap();
    write_netpbm(&input, &dir.path().join("input.pgm"), BitDepth::Sixteen).unwrap();
    let config = "\n[process]\nlevels = 2\nt_star = [0.7]\n\n[sampler]\nsteps = [8, 8]\n";
    fs::write(dir.path().join("run.toml"), config).unwrap();

    let out = ldm(
        dir.path(),
        &["decompose", "input.pgm", "--config", "run.toml", "--out", "bands"],
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("max reconstruction error: 0.000e0"), "stdout: {text}");
    assert!(dir.path().join("bands/band_1_values.lraw").exists());

    let residual = read_field(&dir.path().join("bands/band_1_values.lraw")).unwrap();
    assert_eq!(residual.shape(), (1, 8, 8));
    let coarse = read_field(&dir.path().join("bands/band_2.lraw")).unwrap();
    assert_eq!(coarse.shape(), (1, 4, 4));
}

#[test]
fn forward_at_time_zero_reproduces_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = Field::from_fn(1, 8, 8, |_, y, x| (y as f64 * 8.0 + x as f64) / 64.0).unwrap();
    write_netpbm(&input, &dir.path().join("input.pgm"), BitDepth::Sixteen).unwrap();
    let config = "\n[forward]\ntimes = [0.0]\n";
    fs::write(dir.path().join("run.toml"), config).unwrap();

    let out = ldm(
        dir.path(),
        &["forward", "input.pgm", "--config", "run.toml", "--out", "noised"],
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let quantized = read_field(&dir.path().join("input.pgm")).unwrap();
    let noised = read_field(&dir.path().join("noised/forward_00.lraw")).unwrap();
    assert_eq!(noised.values(), quantized.values());
}

#[test]
fn train_then_sample_with_the_saved_denoiser() {
    let dir = tempfile::tempdir().unwrap();
    let train_config = r#"
seed = 3

[dataset]
source = "synthetic-gmm"
channels = 1
height = 4
width = 4
count = 128

[[denoiser.gmm]]
weight = 1.0
mean = 0.0
var = 0.25

[denoiser.train]
pairs = 2000
buckets = 6
eval_pairs = 400
eval_sigmas = [0.5]
"#;
    fs::write(dir.path().join("train.toml"), train_config).unwrap();
    let trained = ldm(
        dir.path(),
        &["train-linear", "--config", "train.toml", "--out", "model"],
    );
    assert_eq!(trained.status.code(), Some(0), "stderr: {}", stderr_of(&trained));
    assert!(dir.path().join("model/denoiser.bin").exists());
    assert!(dir.path().join("model/losses.csv").exists());
    let report = fs::read_to_string(dir.path().join("model/report.txt")).unwrap();
    assert!(report.contains("sigma"), "report: {report}");

    let sample_config = r#"
seed = 9

[dataset]
source = "synthetic-gmm"
channels = 1
height = 4
width = 4
count = 16

[[denoiser.gmm]]
weight = 1.0
mean = 0.0
var = 0.25

[denoiser]
kind = "linear"
file = "model/denoiser.bin"

[sampler]
steps = [8]
chains = 2

[output]
directory = "samples"
"#;
    fs::write(dir.path().join("sample.toml"), sample_config).unwrap();
    let sampled = ldm(dir.path(), &["sample", "--config", "sample.toml"]);
    assert_eq!(sampled.status.code(), Some(0), "stderr: {}", stderr_of(&sampled));
    let chain = read_field(&dir.path().join("samples/chain_0000.lraw")).unwrap();
    assert_eq!(chain.shape(), (1, 4, 4));
    assert!(chain.max_abs() < 3.0, "linear endpoint should stay near the data scale");
}

#[test]
fn trajectory_files_track_sigma_down_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{SMALL_SAMPLE_CONFIG}trajectories = true\n");
    fs::write(dir.path().join("run.toml"), config).unwrap();
    let out = ldm(dir.path(), &["sample", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let csv = fs::read_to_string(dir.path().join("out/trajectory_0000.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("step,sigma,level,field_norm,nearest_atom_distance")
    );
    let last = lines.last().unwrap();
    let sigma: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(sigma, 0.0, "last row: {last}");
}
