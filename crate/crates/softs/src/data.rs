//! CSV ingestion, train-statistics standardization, chronological splitting
//! with the benchmark border convention, and sliding-window batch sampling.
//!
//! The border convention extends the validation and test ranges backward by
//! one lookback length so their first targets start right after the
//! preceding split; split sizes then count forecastable windows, matching
//! the published benchmark layout.

use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SoftsError};
use crate::tensor::Tensor;

/// A fully parsed dataset: T rows of C channels plus row timestamps.
#[derive(Clone, Debug)]
pub struct RawDataset {
    pub timestamps: Vec<String>,
    pub channel_names: Vec<String>,
    /// Row-major T×C values.
    values: Vec<f32>,
}

impl RawDataset {
    pub fn new(
        timestamps: Vec<String>,
        channel_names: Vec<String>,
        values: Vec<f32>,
    ) -> Result<Self> {
        if timestamps.len() * channel_names.len() != values.len() {
            return Err(SoftsError::data(format!(
                "{} rows × {} channels does not match {} values",
                timestamps.len(),
                channel_names.len(),
                values.len()
            )));
        }
        Ok(RawDataset {
            timestamps,
            channel_names,
            values,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn num_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn row(&self, t: usize) -> &[f32] {
        let c = self.num_channels();
        &self.values[t * c..(t + 1) * c]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Reads a UTF-8 CSV with a header whose first column is `date` and whose
/// remaining columns are numeric channels, rows in time order.
pub fn load_csv(path: &Path) -> Result<RawDataset> {
    let file = std::fs::File::open(path).map_err(|e| SoftsError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let headers = reader
        .headers()
        .map_err(|e| SoftsError::CsvFormat {
            path: path.into(),
            detail: format!("unreadable header: {e}"),
        })?
        .clone();
    if headers.is_empty() || headers.get(0) != Some("date") {
        return Err(SoftsError::CsvFormat {
            path: path.into(),
            detail: format!(
                "first header column must be \"date\", got {:?}",
                headers.get(0).unwrap_or("")
            ),
        });
    }
    if headers.len() < 2 {
        return Err(SoftsError::CsvFormat {
            path: path.into(),
            detail: "no channel columns after \"date\"".to_string(),
        });
    }
    let channel_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let expected_fields = headers.len();

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    // Rows are addressed by CSV line number; the header is line 1.
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| SoftsError::CsvFormat {
            path: path.into(),
            detail: format!("row {row}: {e}"),
        })?;
        if record.len() != expected_fields {
            return Err(SoftsError::CsvFormat {
                path: path.into(),
                detail: format!(
                    "row {row} has {} fields, expected {expected_fields}",
                    record.len()
                ),
            });
        }
        timestamps.push(record.get(0).unwrap_or("").to_string());
        for (k, cell) in record.iter().skip(1).enumerate() {
            let column = channel_names[k].clone();
            let trimmed = cell.trim();
            if trimmed.is_empty() {
                return Err(SoftsError::CsvValue {
                    path: path.into(),
                    row,
                    column,
                    detail: "blank cell".to_string(),
                });
            }
            let parsed: f32 = trimmed.parse().map_err(|_| SoftsError::CsvValue {
                path: path.into(),
                row,
                column: column.clone(),
                detail: format!("cannot parse {trimmed:?} as a number"),
            })?;
            if !parsed.is_finite() {
                return Err(SoftsError::CsvValue {
                    path: path.into(),
                    row,
                    column,
                    detail: format!("non-finite value {trimmed:?}"),
                });
            }
            values.push(parsed);
        }
    }
    if timestamps.is_empty() {
        return Err(SoftsError::CsvFormat {
            path: path.into(),
            detail: "no data rows".to_string(),
        });
    }
    RawDataset::new(timestamps, channel_names, values)
}

/// How to carve the series into train/validation/test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum SplitSpec {
    /// Explicit window counts per split.
    Counts {
        train: usize,
        val: usize,
        test: usize,
    },
    /// Fractions of the total row count; train and val floor, test takes the
    /// remainder.
    Ratios { train: f64, val: f64, test: f64 },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Ratios {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

/// Window-source row ranges per split. Validation and test reach back by one
/// lookback length into the preceding split.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    pub fn get(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }
}

/// Which split an operation should read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = SoftsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(SoftsError::config(format!(
                "unknown split {other:?}, expected train, val, or test"
            ))),
        }
    }
}

/// Resolves a split spec over `t_total` rows into window-source ranges using
/// the border convention.
pub fn split(t_total: usize, spec: &SplitSpec, lookback: usize) -> Result<SplitRanges> {
    let (c1, c2, c3) = match spec {
        SplitSpec::Counts { train, val, test } => (*train, *val, *test),
        SplitSpec::Ratios { train, val, test } => {
            for (name, r) in [("train", train), ("val", val), ("test", test)] {
                if !(0.0..=1.0).contains(r) {
                    return Err(SoftsError::config(format!(
                        "split ratio {name}={r} outside [0, 1]"
                    )));
                }
            }
            if train + val + test > 1.0 + 1e-9 {
                return Err(SoftsError::config(format!(
                    "split ratios sum to {} > 1",
                    train + val + test
                )));
            }
            let c1 = (t_total as f64 * train).floor() as usize;
            let c2 = (t_total as f64 * val).floor() as usize;
            let used = (t_total as f64 * (train + val + test)).floor() as usize;
            let c3 = used.min(t_total).saturating_sub(c1 + c2);
            (c1, c2, c3)
        }
    };
    if c1 == 0 || c2 == 0 || c3 == 0 {
        return Err(SoftsError::data(format!(
            "every split needs rows, got train={c1}, val={c2}, test={c3}"
        )));
    }
    if c1 + c2 + c3 > t_total {
        return Err(SoftsError::data(format!(
            "splits need {} rows, dataset has {t_total}",
            c1 + c2 + c3
        )));
    }
    if c1 < lookback {
        return Err(SoftsError::data(format!(
            "train split ({c1} rows) shorter than the lookback {lookback} the border convention borrows"
        )));
    }
    Ok(SplitRanges {
        train: 0..c1,
        val: c1 - lookback..c1 + c2,
        test: c1 + c2 - lookback..c1 + c2 + c3,
    })
}

/// Per-channel statistics of the train split, used to put the whole dataset
/// in standardized space and to undo it for raw-unit forecasts.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelScaler {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelScaler {
    /// Identity scaler (mean 0, std 1) for `c` channels.
    pub fn identity(c: usize) -> Self {
        ChannelScaler {
            mean: vec![0.0; c],
            std: vec![1.0; c],
        }
    }

    pub fn apply_value(&self, channel: usize, v: f32) -> f32 {
        (v - self.mean[channel]) / self.std[channel]
    }

    pub fn invert_value(&self, channel: usize, v: f32) -> f32 {
        v * self.std[channel] + self.mean[channel]
    }
}

/// Scales every channel by its train-split mean and population standard
/// deviation (floored at 1e-8). Statistics are computed in `f64` and stored
/// as `f32`, and the stored values are what get applied.
pub fn standardize(
    ds: &RawDataset,
    train_range: Range<usize>,
) -> Result<(RawDataset, ChannelScaler)> {
    if train_range.is_empty() || train_range.end > ds.num_rows() {
        return Err(SoftsError::data(format!(
            "train range {train_range:?} invalid for {} rows",
            ds.num_rows()
        )));
    }
    let c = ds.num_channels();
    let n = train_range.len() as f64;
    let mut mean = vec![0.0f32; c];
    let mut std = vec![0.0f32; c];
    for ci in 0..c {
        let mut sum = 0.0f64;
        for t in train_range.clone() {
            sum += ds.row(t)[ci] as f64;
        }
        let m = sum / n;
        let mut var = 0.0f64;
        for t in train_range.clone() {
            let dev = ds.row(t)[ci] as f64 - m;
            var += dev * dev;
        }
        mean[ci] = m as f32;
        std[ci] = ((var / n).sqrt() as f32).max(1e-8);
    }
    let scaler = ChannelScaler { mean, std };
    Ok((apply_scaler(ds, &scaler), scaler))
}

/// Applies stored statistics to a raw dataset.
pub fn apply_scaler(ds: &RawDataset, scaler: &ChannelScaler) -> RawDataset {
    let c = ds.num_channels();
    let values = ds
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| scaler.apply_value(i % c, v))
        .collect();
    RawDataset {
        timestamps: ds.timestamps.clone(),
        channel_names: ds.channel_names.clone(),
        values,
    }
}

/// One batch of lookback windows with their paired targets.
#[derive(Clone, Debug)]
pub struct SeriesBatch {
    /// B×L×C inputs.
    pub x: Tensor<f32>,
    /// B×H×C targets; each target row range starts right after its window.
    pub y: Tensor<f32>,
    /// Window start rows, for traceability.
    pub starts: Vec<usize>,
}

/// Lazily materialized stream of [`SeriesBatch`]es over one split range.
#[derive(Debug)]
pub struct BatchStream<'a> {
    ds: &'a RawDataset,
    starts: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    lookback: usize,
    horizon: usize,
}

impl<'a> BatchStream<'a> {
    pub fn num_windows(&self) -> usize {
        self.starts.len()
    }
}

impl Iterator for BatchStream<'_> {
    type Item = SeriesBatch;

    fn next(&mut self) -> Option<SeriesBatch> {
        if self.cursor >= self.starts.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.starts.len());
        let starts = self.starts[self.cursor..end].to_vec();
        self.cursor = end;

        let (b, l, h, c) = (
            starts.len(),
            self.lookback,
            self.horizon,
            self.ds.num_channels(),
        );
        let mut x = Tensor::zeros(&[b, l, c]);
        let mut y = Tensor::zeros(&[b, h, c]);
        for (bi, &s) in starts.iter().enumerate() {
            for li in 0..l {
                x.data_mut()[(bi * l + li) * c..(bi * l + li + 1) * c]
                    .copy_from_slice(self.ds.row(s + li));
            }
            for hi in 0..h {
                y.data_mut()[(bi * h + hi) * c..(bi * h + hi + 1) * c]
                    .copy_from_slice(self.ds.row(s + l + hi));
            }
        }
        Some(SeriesBatch { x, y, starts })
    }
}

/// Enumerates every valid window start in `range` exactly once, optionally
/// shuffled by `seed`, and yields batches of up to `batch_size` windows (the
/// last may be short).
pub fn make_batches<'a>(
    ds: &'a RawDataset,
    range: Range<usize>,
    lookback: usize,
    horizon: usize,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> Result<BatchStream<'a>> {
    if batch_size == 0 {
        return Err(SoftsError::config("batch size must be ≥ 1".to_string()));
    }
    if range.end > ds.num_rows() {
        return Err(SoftsError::data(format!(
            "window range {range:?} exceeds {} rows",
            ds.num_rows()
        )));
    }
    let needed = lookback + horizon;
    if range.len() < needed {
        return Err(SoftsError::data(format!(
            "range of {} rows cannot fit one {lookback}+{horizon} window",
            range.len()
        )));
    }
    let mut starts: Vec<usize> = (range.start..=range.end - needed).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        starts.shuffle(&mut rng);
    }
    Ok(BatchStream {
        ds,
        starts,
        cursor: 0,
        batch_size,
        lookback,
        horizon,
    })
}

/// A dataset standardized from its own train statistics, with resolved split
/// ranges, ready for training and evaluation.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub ds: RawDataset,
    pub scaler: ChannelScaler,
    pub ranges: SplitRanges,
    pub lookback: usize,
    pub horizon: usize,
}

/// Splits, validates window capacity of every split, and standardizes.
pub fn prepare(
    raw: &RawDataset,
    spec: &SplitSpec,
    lookback: usize,
    horizon: usize,
) -> Result<PreparedData> {
    let ranges = split(raw.num_rows(), spec, lookback)?;
    for (name, range) in [
        ("train", &ranges.train),
        ("val", &ranges.val),
        ("test", &ranges.test),
    ] {
        if range.len() < lookback + horizon {
            return Err(SoftsError::data(format!(
                "{name} split has {} usable rows, needs lookback {lookback} + horizon {horizon}",
                range.len()
            )));
        }
    }
    let (ds, scaler) = standardize(raw, ranges.train.clone())?;
    Ok(PreparedData {
        ds,
        scaler,
        ranges,
        lookback,
        horizon,
    })
}
