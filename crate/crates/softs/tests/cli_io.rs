//! End-to-end tests of the compiled binary: train/evaluate/forecast/bench
//! flows on a synthetic dataset, JSON report shapes, exit codes, and the
//! no-partial-output guarantee.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn softs() -> Command {
    Command::new(env!("CARGO_BIN_EXE_softs"))
}

fn write_wave_csv(dir: &Path, rows: usize) -> PathBuf {
    let path = dir.join("wave.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "date,a,b,c").unwrap();
    for t in 0..rows {
        let ft = t as f32;
        writeln!(
            f,
            "r{t},{},{},{}",
            (ft * 0.7).sin() * 2.0 + 1.0,
            (ft * 0.3).cos() - 0.5,
            ft * 0.01
        )
        .unwrap();
    }
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary should spawn")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout should be one JSON document")
}

fn train_args(data: &Path, out: &Path, seed: u64) -> Vec<String> {
    [
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--lookback",
        "8",
        "--horizon",
        "4",
        "--hidden",
        "8",
        "--core",
        "4",
        "--layers",
        "1",
        "--pooling",
        "mean",
        "--epochs",
        "2",
        "--batch-size",
        "16",
    ]
    .into_iter()
    .map(str::to_string)
    .chain(["--seed".to_string(), seed.to_string()])
    .collect()
}

#[test]
fn train_writes_checkpoint_history_and_json_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_wave_csv(dir.path(), 200);
    let ckpt = dir.path().join("run.ckpt");
    let out = run(softs().args(train_args(&data, &ckpt, 3)));
    let summary = stdout_json(&out);

    assert_eq!(summary["command"], "train");
    assert!(ckpt.exists());
    assert!(dir.path().join("run.history.jsonl").exists());
    assert!(summary["best_val_mse"].as_f64().unwrap().is_finite());
    assert_eq!(summary["epochs_run"], 2);
    assert!(summary["test"]["mse"].as_f64().unwrap().is_finite());
}

#[test]
fn evaluate_reproduces_the_recorded_best_val_mse() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_wave_csv(dir.path(), 200);
    let ckpt = dir.path().join("run.ckpt");
    let summary = stdout_json(&run(softs().args(train_args(&data, &ckpt, 3))));
    let best = summary["best_val_mse"].as_f64().unwrap();

    let eval = stdout_json(&run(softs().args([
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--split",
        "val",
    ])));
    assert_eq!(eval["mse"].as_f64().unwrap(), best);
    assert_eq!(eval["split"], "val");
}

#[test]
fn forecast_emits_h_csv_rows_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_wave_csv(dir.path(), 200);
    let ckpt = dir.path().join("run.ckpt");
    run(softs().args(train_args(&data, &ckpt, 3)));

    let out = run(softs().args([
        "forecast",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--last-window",
    ]));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines.len(),
        5,
        "header plus one row per horizon step:\n{text}"
    );
    assert_eq!(lines[0], "date,a,b,c");
    assert!(lines[1].starts_with("t+1,"));
    for line in &lines[1..] {
        for cell in line.split(',').skip(1) {
            cell.parse::<f32>().expect("forecast cells are numeric");
        }
    }
}

#[test]
fn forecast_standardized_and_raw_units_conflict() {
    let out = run(softs().args([
        "forecast",
        "--checkpoint",
        "m.ckpt",
        "--raw-units",
        "--standardized",
    ]));
    assert_eq!(out.status.code(), Some(2), "clap usage errors exit 2");
}

#[test]
fn same_seed_produces_byte_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_wave_csv(dir.path(), 200);
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    run(softs().args(train_args(&data, &a, 11)));
    run(softs().args(train_args(&data, &b, 11)));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let c = dir.path().join("c.ckpt");
    run(softs().args(train_args(&data, &c, 12)));
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn missing_data_file_exits_one_with_json_error_line() {
    let out = run(softs().args(["train", "--data", "/nonexistent/x.csv"]));
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(
        lines.len(),
        1,
        "stderr should be one JSON line, got: {stderr}"
    );
    let err: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("x.csv"));
}

#[test]
fn malformed_csv_exits_one_and_names_the_cell() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "date,a\nr0,1.0\nr1,oops\n").unwrap();
    let out = run(softs().args(["train", "--data", path.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8(out.stderr).unwrap().trim()).unwrap();
    assert_eq!(err["error"], "csv_value");
    let message = err["message"].as_str().unwrap().to_string();
    assert!(
        message.contains("row 3") && message.contains("a"),
        "got: {message}"
    );
}

#[test]
fn failed_run_writes_nothing_to_the_out_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_wave_csv(dir.path(), 30);
    let ckpt = dir.path().join("never.ckpt");
    // 30 rows cannot host lookback 8 + horizon 4 in a 10% validation split.
    let out = run(softs().args(train_args(&data, &ckpt, 1)));
    assert_eq!(out.status.code(), Some(1));
    assert!(!ckpt.exists());
    assert!(!dir.path().join("never.history.jsonl").exists());
    assert!(!dir.path().join("never.ckpt.tmp").exists());
}

#[test]
fn corrupted_checkpoint_is_reported_as_such() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_wave_csv(dir.path(), 200);
    let ckpt = dir.path().join("run.ckpt");
    run(softs().args(train_args(&data, &ckpt, 3)));
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let len = bytes.len();
    bytes[len - 20] ^= 0xFF;
    std::fs::write(&ckpt, bytes).unwrap();

    let out = run(softs().args([
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8(out.stderr).unwrap().trim()).unwrap();
    assert_eq!(err["error"], "checkpoint");
}

#[test]
fn config_file_drives_training_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_wave_csv(dir.path(), 200);
    let ckpt = dir.path().join("cfg.ckpt");
    let cfg_path = dir.path().join("run.json");
    let cfg = serde_json::json!({
        "data": data,
        "out": ckpt,
        "lookback": 8,
        "horizon": 4,
        "hidden": 8,
        "core": 4,
        "layers": 1,
        "pooling": "mean",
        "epochs": 5,
        "batch_size": 16,
        "seed": 3,
    });
    std::fs::write(&cfg_path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();

    let summary = stdout_json(&run(softs().args([
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--epochs",
        "2",
    ])));
    assert_eq!(
        summary["epochs_run"], 2,
        "the flag should override the file's 5"
    );
    assert!(ckpt.exists());
}

#[test]
fn unknown_config_key_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.json");
    std::fs::write(&cfg_path, br#"{"learning_rat": 0.1}"#).unwrap();
    let out = run(softs().args(["train", "--config", cfg_path.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8(out.stderr).unwrap().trim()).unwrap();
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("learning_rat"));
}

#[test]
fn bench_prints_one_json_row_per_channel_count() {
    let out = run(softs().args(["bench", "--channels", "2,4,8", "--repeat", "1"]));
    let report = stdout_json(&out);
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let counts: Vec<u64> = rows
        .iter()
        .map(|r| r["channels"].as_u64().unwrap())
        .collect();
    assert_eq!(counts, vec![2, 4, 8]);
    assert!(report["r_squared"].is_number());
}
