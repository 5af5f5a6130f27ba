//! Subcommand implementations: train, evaluate, and forecast.
//!
//! Each returns the data it would print; the front end decides between
//! stdout and `--out`. All file writes go through the atomic writer so a
//! failing command never leaves a partial artifact.

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::cli::checkpoint;
use crate::cli::config::RunConfig;
use crate::data::{self, apply_scaler, load_csv, PreparedData, RawDataset, Split};
use crate::error::{Result, SoftsError};
use crate::model::{ModelConfig, SoftsModel};
use crate::tensor::Tensor;
use crate::train::{evaluate, fit};

fn require_data(cfg: &RunConfig) -> Result<&Path> {
    cfg.data
        .as_deref()
        .ok_or_else(|| SoftsError::config("no dataset: pass --data or set data in the config file"))
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

/// Rejects shape flags that contradict a loaded checkpoint. Only explicitly
/// set fields are compared; unset ones defer to the checkpoint.
fn check_shape_overrides(cfg: &RunConfig, trained: &ModelConfig) -> Result<()> {
    let pairs = [
        ("lookback", cfg.lookback, trained.lookback),
        ("horizon", cfg.horizon, trained.horizon),
        ("channels", cfg.channels, trained.channels),
    ];
    for (name, requested, actual) in pairs {
        if let Some(r) = requested {
            if r != actual {
                return Err(SoftsError::config(format!(
                    "checkpoint was trained with {name} {actual}, got {name} {r}"
                )));
            }
        }
    }
    Ok(())
}

fn channel_check(raw: &RawDataset, trained: &ModelConfig) -> Result<()> {
    if raw.num_channels() != trained.channels {
        return Err(SoftsError::data(format!(
            "dataset has {} channels, checkpoint expects {}",
            raw.num_channels(),
            trained.channels
        )));
    }
    Ok(())
}

/// Trains from scratch, writes the checkpoint and a JSON-lines epoch history
/// next to it, and reports final standardized-space metrics.
pub fn cmd_train(cfg: &RunConfig) -> Result<serde_json::Value> {
    let data_path = require_data(cfg)?.to_path_buf();
    let raw = load_csv(&data_path)?;
    let resolved = cfg.resolve(Some(raw.num_channels()))?;
    let prepared = data::prepare(
        &raw,
        &resolved.split,
        resolved.model.lookback,
        resolved.model.horizon,
    )?;
    let mut model = SoftsModel::<f32>::init(&resolved.model)?;
    let report = fit(&mut model, &prepared, &resolved.train)?;
    let val = evaluate(&model, &prepared, Split::Val, resolved.train.batch_size)?;
    let test = evaluate(&model, &prepared, Split::Test, resolved.train.batch_size)?;

    let out = resolved
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("softs.ckpt"));
    checkpoint::save(&out, &model, &prepared.scaler)?;
    let history_path = out.with_extension("history.jsonl");
    let mut lines = String::new();
    for record in &report.history {
        lines.push_str(
            &serde_json::to_string(record)
                .map_err(|e| SoftsError::config(format!("history serialization: {e}")))?,
        );
        lines.push('\n');
    }
    checkpoint::write_atomic(&history_path, lines.as_bytes())?;

    Ok(json!({
        "command": "train",
        "data": data_path,
        "checkpoint": out,
        "history": history_path,
        "params": model.count_params(),
        "epochs_run": report.history.len(),
        "best_epoch": report.best_epoch,
        "best_val_mse": report.best_val_mse,
        "stopped_early": report.stopped_early,
        "val": val,
        "test": test,
    }))
}

/// Evaluates a checkpoint on one split of a dataset, reusing the stored
/// scaler so the numbers land in the same standardized space as training.
pub fn cmd_evaluate(cfg: &RunConfig, ckpt_path: &Path, split: Split) -> Result<serde_json::Value> {
    let (model, scaler) = checkpoint::load(ckpt_path)?;
    check_shape_overrides(cfg, &model.config)?;
    let data_path = require_data(cfg)?.to_path_buf();
    let raw = load_csv(&data_path)?;
    channel_check(&raw, &model.config)?;

    let split_spec = cfg.split.clone().unwrap_or_default();
    let lookback = model.config.lookback;
    let horizon = model.config.horizon;
    let ranges = data::split(raw.num_rows(), &split_spec, lookback)?;
    let range = ranges.get(split);
    if range.len() < lookback + horizon {
        return Err(SoftsError::data(format!(
            "{} split has {} usable rows, needs lookback {lookback} + horizon {horizon}",
            split_name(split),
            range.len()
        )));
    }
    let prepared = PreparedData {
        ds: apply_scaler(&raw, &scaler),
        scaler,
        ranges,
        lookback,
        horizon,
    };
    let batch_size = cfg.batch_size.unwrap_or(32);
    let report = evaluate(&model, &prepared, split, batch_size)?;
    Ok(json!({
        "command": "evaluate",
        "checkpoint": ckpt_path,
        "data": data_path,
        "split": split_name(split),
        "mse": report.mse,
        "mae": report.mae,
        "windows": report.windows,
    }))
}

/// Forecasts H steps from the last lookback window of the CSV. Output is a
/// CSV that parses back through the dataset loader; values are raw units
/// unless `standardized` keeps them in model space.
pub fn cmd_forecast(cfg: &RunConfig, ckpt_path: &Path, standardized: bool) -> Result<String> {
    let (model, scaler) = checkpoint::load(ckpt_path)?;
    check_shape_overrides(cfg, &model.config)?;
    let data_path = require_data(cfg)?;
    let raw = load_csv(data_path)?;
    channel_check(&raw, &model.config)?;

    let l = model.config.lookback;
    let c = model.config.channels;
    let h = model.config.horizon;
    if raw.num_rows() < l {
        return Err(SoftsError::data(format!(
            "dataset has {} rows, forecasting needs a lookback window of {l}",
            raw.num_rows()
        )));
    }
    let ds = apply_scaler(&raw, &scaler);
    let start = ds.num_rows() - l;
    let mut window = Vec::with_capacity(l * c);
    for t in start..ds.num_rows() {
        window.extend_from_slice(ds.row(t));
    }
    let x = Tensor::from_vec(&[1, l, c], window)?;
    let pred = model.predict(&x)?;

    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["date".to_string()];
    header.extend(raw.channel_names.iter().cloned());
    writer
        .write_record(&header)
        .map_err(|e| SoftsError::data(format!("forecast serialization: {e}")))?;
    for row in 0..h {
        let mut record = vec![format!("t+{}", row + 1)];
        for ci in 0..c {
            let v = pred.data()[row * c + ci];
            let v = if standardized {
                v
            } else {
                scaler.invert_value(ci, v)
            };
            record.push(format!("{v}"));
        }
        writer
            .write_record(&record)
            .map_err(|e| SoftsError::data(format!("forecast serialization: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| SoftsError::data(format!("forecast serialization: {e}")))?;
    String::from_utf8(bytes).map_err(|e| SoftsError::data(format!("forecast encoding: {e}")))
}
