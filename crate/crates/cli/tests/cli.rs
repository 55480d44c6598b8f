//! End-to-end tests of the `tbnlab` binary: exit codes, file outputs and
//! reproducibility of the command pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tbnlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tbnlab"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tbnlab-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn ok(output: &Output) -> String {
    assert!(
        output.status.success(),
        "command failed ({}):\n{}\n{}",
        output.status,
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

/// Small dataset shared by the pipeline tests.
fn gen_dataset(dir: &Path, seed: u64) {
    let output = tbnlab()
        .args([
            "gen",
            "--out",
            dir.to_str().unwrap(),
            "--seed",
            &seed.to_string(),
            "--classes",
            "4",
            "--samples-per-class",
            "10",
            "--test-samples-per-class",
            "3",
            "--duration",
            "2.5",
        ])
        .output()
        .unwrap();
    ok(&output);
}

fn train_epochs(data_dir: &Path, out_dir: &Path, epochs: &str, extra: &[&str]) -> Output {
    let manifest = data_dir.join("train.jsonl");
    let mut args = vec![
        "train".to_string(),
        "--manifest".into(),
        manifest.to_str().unwrap().into(),
        "--out".into(),
        out_dir.to_str().unwrap().into(),
        "--seed".into(),
        "7".into(),
        "--epochs".into(),
        epochs.into(),
        "--batch-size".into(),
        "10".into(),
        "--feature-dim".into(),
        "12".into(),
        "--hidden-dim".into(),
        "12".into(),
        "--fused-dim".into(),
        "24".into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    tbnlab().args(&args).output().unwrap()
}

fn train_small(data_dir: &Path, out_dir: &Path, extra: &[&str]) -> Output {
    train_epochs(data_dir, out_dir, "2", extra)
}

fn dir_snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn gen_is_reproducible_and_counts_match() {
    let a = tmp_dir("gen-a");
    let b = tmp_dir("gen-b");
    gen_dataset(&a, 42);
    gen_dataset(&b, 42);
    assert_eq!(dir_snapshot(&a), dir_snapshot(&b));

    let manifest = fs::read_to_string(a.join("train.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 40); // 4 classes x 10 samples
    let test_manifest = fs::read_to_string(a.join("test.jsonl")).unwrap();
    assert_eq!(test_manifest.lines().count(), 12);
    for dir in [a, b] {
        fs::remove_dir_all(&dir).unwrap();
    }
}

#[test]
fn gen_creates_missing_output_directory() {
    let base = tmp_dir("gen-nested");
    let nested = base.join("deep/noch/deeper");
    let output = tbnlab()
        .args([
            "gen",
            "--out",
            nested.to_str().unwrap(),
            "--classes",
            "2",
            "--samples-per-class",
            "2",
            "--test-samples-per-class",
            "1",
            "--duration",
            "2.0",
        ])
        .output()
        .unwrap();
    ok(&output);
    assert!(nested.join("train.jsonl").is_file());
    fs::remove_dir_all(&base).unwrap();
}

#[test]
fn train_writes_checkpoint_log_and_config() {
    let data = tmp_dir("train-data");
    gen_dataset(&data, 1);
    let run = tmp_dir("train-run");
    ok(&train_small(&data, &run, &[]));
    assert!(run.join("checkpoint.tbn").is_file());
    assert!(run.join("config.json").is_file());
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,split,loss,verb_top1,noun_top1,action_top1"));
    assert_eq!(log.lines().count(), 3); // header + 2 epochs
    for dir in [data, run] {
        fs::remove_dir_all(&dir).unwrap();
    }
}

#[test]
fn rerunning_from_the_effective_config_reproduces_outputs() {
    let data = tmp_dir("repro-data");
    gen_dataset(&data, 2);
    let first = tmp_dir("repro-first");
    ok(&train_small(&data, &first, &[]));
    let second = tmp_dir("repro-second");
    let output = tbnlab()
        .args([
            "train",
            "--config",
            first.join("config.json").to_str().unwrap(),
            "--out",
            second.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    ok(&output);
    assert_eq!(
        fs::read(first.join("checkpoint.tbn")).unwrap(),
        fs::read(second.join("checkpoint.tbn")).unwrap()
    );
    assert_eq!(
        fs::read(first.join("train_log.csv")).unwrap(),
        fs::read(second.join("train_log.csv")).unwrap()
    );
    for dir in [data, first, second] {
        fs::remove_dir_all(&dir).unwrap();
    }
}

#[test]
fn zero_learning_rate_checkpoint_is_training_invariant() {
    let data = tmp_dir("lr0-data");
    gen_dataset(&data, 3);
    let short = tmp_dir("lr0-short");
    ok(&train_epochs(&data, &short, "1", &["--lr", "0"]));
    let long = tmp_dir("lr0-long");
    ok(&train_epochs(&data, &long, "4", &["--lr", "0"]));
    assert_eq!(
        fs::read(short.join("checkpoint.tbn")).unwrap(),
        fs::read(long.join("checkpoint.tbn")).unwrap()
    );
    for dir in [data, short, long] {
        fs::remove_dir_all(&dir).unwrap();
    }
}

#[test]
fn single_modality_training_works() {
    let data = tmp_dir("single-data");
    gen_dataset(&data, 4);
    let run = tmp_dir("single-run");
    ok(&train_small(&data, &run, &["--modalities", "rgb"]));
    assert!(run.join("checkpoint.tbn").is_file());
    for dir in [data, run] {
        fs::remove_dir_all(&dir).unwrap();
    }
}

#[test]
fn eval_writes_results_and_single_member_ensemble_matches_plain() {
    let data = tmp_dir("eval-data");
    gen_dataset(&data, 5);
    let run = tmp_dir("eval-run");
    ok(&train_small(&data, &run, &[]));
    let ckpt = run.join("checkpoint.tbn");
    let manifest = data.join("test.jsonl");

    let plain_out = tmp_dir("eval-plain");
    let output = tbnlab()
        .args([
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--manifest",
            manifest.to_str().unwrap(),
            "--out",
            plain_out.to_str().unwrap(),
            "--anchors",
            "7",
            "--score",
            "softmax",
        ])
        .output()
        .unwrap();
    ok(&output);
    assert!(plain_out.join("eval.json").is_file());
    assert!(plain_out.join("eval_verb_confusion.csv").is_file());
    assert!(plain_out.join("eval_noun_confusion.csv").is_file());

    let ens_out = tmp_dir("eval-ens");
    let output = tbnlab()
        .args([
            "eval",
            "--manifest",
            manifest.to_str().unwrap(),
            "--out",
            ens_out.to_str().unwrap(),
            "--anchors",
            "7",
            "--score",
            "softmax",
            "--ensemble",
            ckpt.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    ok(&output);
    assert_eq!(
        fs::read_to_string(plain_out.join("eval.json")).unwrap(),
        fs::read_to_string(ens_out.join("eval.json")).unwrap()
    );
    for dir in [data, run, plain_out, ens_out] {
        fs::remove_dir_all(&dir).unwrap();
    }
}

#[test]
fn eval_with_unknown_subset_tag_exits_one() {
    let data = tmp_dir("tag-data");
    gen_dataset(&data, 6);
    let run = tmp_dir("tag-run");
    ok(&train_small(&data, &run, &[]));
    let output = tbnlab()
        .args([
            "eval",
            "--checkpoint",
            run.join("checkpoint.tbn").to_str().unwrap(),
            "--manifest",
            data.join("test.jsonl").to_str().unwrap(),
            "--out",
            tmp_dir("tag-out").to_str().unwrap(),
            "--anchors",
            "5",
            "--subset-tag",
            "nonexistent-tag",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("nonexistent-tag"));
    for dir in [data, run] {
        fs::remove_dir_all(&dir).unwrap();
    }
}

#[test]
fn eval_rejects_checkpoint_manifest_class_mismatch() {
    let data = tmp_dir("mismatch-data");
    gen_dataset(&data, 7);
    let run = tmp_dir("mismatch-run");
    ok(&train_small(&data, &run, &[]));
    // A dataset with a different class count.
    let other = tmp_dir("mismatch-other");
    let output = tbnlab()
        .args([
            "gen",
            "--out",
            other.to_str().unwrap(),
            "--classes",
            "3",
            "--samples-per-class",
            "4",
            "--test-samples-per-class",
            "2",
            "--duration",
            "2.5",
        ])
        .output()
        .unwrap();
    ok(&output);
    let result = tbnlab()
        .args([
            "eval",
            "--checkpoint",
            run.join("checkpoint.tbn").to_str().unwrap(),
            "--manifest",
            other.join("test.jsonl").to_str().unwrap(),
            "--out",
            tmp_dir("mismatch-out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(1));
    for dir in [data, run, other] {
        fs::remove_dir_all(&dir).unwrap();
    }
}

#[test]
fn sweep_emits_csv_and_svg_with_default_widths() {
    let data = tmp_dir("sweep-data");
    gen_dataset(&data, 8);
    let run = tmp_dir("sweep-run");
    ok(&train_small(&data, &run, &[]));
    let out = tmp_dir("sweep-out");
    let output = tbnlab()
        .args([
            "sweep-b",
            "--checkpoint",
            run.join("checkpoint.tbn").to_str().unwrap(),
            "--manifest",
            data.join("test.jsonl").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--runs",
            "2",
        ])
        .output()
        .unwrap();
    ok(&output);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    // Header plus the default widths: sync and the seven fractions.
    assert_eq!(lines.len(), 9);
    assert!(lines[1].starts_with("sync,"));
    for label in ["T/60", "T/30", "T/25", "T/15", "T/10", "T/5", "T/3"] {
        assert!(csv.contains(&format!("{label},")), "missing {label}");
    }
    let svg = fs::read_to_string(out.join("sweep.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    for dir in [data, run, out] {
        fs::remove_dir_all(&dir).unwrap();
    }
}

#[test]
fn sweep_single_run_at_sync_reports_zero_std() {
    let data = tmp_dir("std0-data");
    gen_dataset(&data, 9);
    let run = tmp_dir("std0-run");
    ok(&train_small(&data, &run, &[]));
    let out = tmp_dir("std0-out");
    let output = tbnlab()
        .args([
            "sweep-b",
            "--checkpoint",
            run.join("checkpoint.tbn").to_str().unwrap(),
            "--manifest",
            data.join("test.jsonl").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--widths",
            "sync",
            "--runs",
            "1",
        ])
        .output()
        .unwrap();
    ok(&output);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    // verb_std, noun_std, action_std are all exactly zero for a single run.
    assert_eq!(fields[4], "0.000000");
    assert_eq!(fields[6], "0.000000");
    assert_eq!(fields[8], "0.000000");
    for dir in [data, run, out] {
        fs::remove_dir_all(&dir).unwrap();
    }
}

#[test]
fn sweep_rejects_empty_width_list() {
    let data = tmp_dir("nowidth-data");
    gen_dataset(&data, 10);
    let run = tmp_dir("nowidth-run");
    ok(&train_small(&data, &run, &[]));
    let output = tbnlab()
        .args([
            "sweep-b",
            "--checkpoint",
            run.join("checkpoint.tbn").to_str().unwrap(),
            "--manifest",
            data.join("test.jsonl").to_str().unwrap(),
            "--out",
            tmp_dir("nowidth-out").to_str().unwrap(),
            "--widths",
            "",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    for dir in [data, run] {
        fs::remove_dir_all(&dir).unwrap();
    }
}

#[test]
fn gradcheck_passes_and_reports_per_operation_errors() {
    let output = tbnlab().args(["gradcheck", "--seed", "3"]).output().unwrap();
    let stdout = ok(&output);
    assert!(stdout.contains("affine"));
    assert!(stdout.contains("softmax_xent"));
    assert!(stdout.contains("forward_loss"));
    assert!(stdout.contains("max rel err"));
    assert!(stdout.contains("all") && stdout.contains("passed"));
}

#[test]
fn corrupted_gradcheck_exits_nonzero() {
    let output = tbnlab()
        .args(["gradcheck", "--seed", "3", "--corrupt"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = tmp_dir("badcfg");
    let path = dir.join("config.json");
    fs::write(&path, r#"{"seeed": 4}"#).unwrap();
    let output = tbnlab()
        .args(["gradcheck", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn missing_manifest_is_an_io_error_exit_two() {
    let output = tbnlab()
        .args([
            "train",
            "--manifest",
            "/nonexistent/train.jsonl",
            "--out",
            tmp_dir("io-out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn dump_writes_a_256_by_256_spectrogram() {
    let data = tmp_dir("dump-data");
    // A dataset with a real waveform modality.
    let config_path = data.join("gen.json");
    fs::write(
        &config_path,
        r#"{
  "synth": {
    "n_classes": 2,
    "samples_per_class": 1,
    "test_samples_per_class": 0,
    "duration": 2.0,
    "frame_dim": 12,
    "modalities": [
      {"id": "rgb", "rate": 30.0, "kind": "vector-frame"},
      {"id": "mic", "rate": 24000.0, "kind": "audio-waveform"}
    ]
  }
}"#,
    )
    .unwrap();
    let output = tbnlab()
        .args([
            "gen",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            data.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    ok(&output);
    let wave = data.join("streams/tr00000.mic.f32");
    assert!(wave.is_file());
    let out = data.join("spec.f32");
    let output = tbnlab()
        .args([
            "dump",
            "--input",
            wave.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
            "--center",
            "1.0",
        ])
        .output()
        .unwrap();
    ok(&output);
    let bytes = fs::read(&out).unwrap();
    assert_eq!(bytes.len(), 256 * 256 * 4);
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("spec.f32.json")).unwrap()).unwrap();
    assert_eq!(sidecar["rows"], 256);
    assert_eq!(sidecar["cols"], 256);
    fs::remove_dir_all(&data).unwrap();
}
