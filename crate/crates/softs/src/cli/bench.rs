//! Channel-scaling benchmark.
//!
//! Runs training-shaped passes (forward plus backward) over a sweep of
//! channel counts with every other dimension held fixed, then fits time
//! against channel count. A near-perfect linear fit is the observable
//! signature of the architecture's O(C) cost.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Result, SoftsError};
use crate::model::{ModelConfig, SoftsModel};
use crate::star::PoolingKind;
use crate::tensor::Tensor;
use crate::train::mse_grad;

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub channels: Vec<usize>,
    pub repeats: usize,
    pub batch_size: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub core: usize,
    pub layers: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            channels: vec![64, 128, 256, 512, 1024],
            repeats: 3,
            batch_size: 16,
            lookback: 96,
            horizon: 720,
            hidden: 256,
            core: 128,
            layers: 2,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub channels: usize,
    pub median_ms: f64,
    pub peak_rss_delta_kb: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub slope_ms_per_channel: f64,
    pub intercept_ms: f64,
    pub r_squared: f64,
    /// Time ratios between consecutive channel counts, normalized to what a
    /// perfect doubling would give: ratio = (t_hi / t_lo) / (c_hi / c_lo) * 2.
    pub doubling_ratios: Vec<f64>,
}

/// Times one forward+backward pass per repeat and reports the median.
pub fn run_bench(opts: &BenchOptions) -> Result<BenchReport> {
    if opts.channels.len() < 3 {
        return Err(SoftsError::config(format!(
            "bench needs at least 3 channel counts, got {}",
            opts.channels.len()
        )));
    }
    if !opts.channels.windows(2).all(|w| w[0] < w[1]) {
        return Err(SoftsError::config(
            "bench channel counts must be strictly ascending",
        ));
    }
    if opts.repeats == 0 {
        return Err(SoftsError::config("bench repeats must be at least 1"));
    }

    let mut rows = Vec::with_capacity(opts.channels.len());
    for &c in &opts.channels {
        let hwm_before = read_vm_hwm_kb();
        let config = ModelConfig {
            lookback: opts.lookback,
            horizon: opts.horizon,
            channels: c,
            hidden: opts.hidden,
            core: opts.core,
            layers: opts.layers,
            pooling: PoolingKind::Stochastic,
            use_revin: true,
            baseline: false,
            seed: opts.seed,
        };
        let mut model = SoftsModel::<f32>::init(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ c as u64);
        let x = random_tensor(&[opts.batch_size, opts.lookback, c], &mut rng);
        let y = random_tensor(&[opts.batch_size, opts.horizon, c], &mut rng);

        timed_pass(&mut model, &x, &y, &mut rng)?;
        let mut times = Vec::with_capacity(opts.repeats);
        for _ in 0..opts.repeats {
            times.push(timed_pass(&mut model, &x, &y, &mut rng)?);
        }
        let hwm_after = read_vm_hwm_kb();
        rows.push(BenchRow {
            channels: c,
            median_ms: median(&mut times),
            peak_rss_delta_kb: match (hwm_before, hwm_after) {
                (Some(b), Some(a)) => Some(a.saturating_sub(b)),
                _ => None,
            },
        });
    }

    let xs: Vec<f64> = rows.iter().map(|r| r.channels as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.median_ms).collect();
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
    let doubling_ratios = rows
        .windows(2)
        .map(|w| {
            let channel_ratio = w[1].channels as f64 / w[0].channels as f64;
            (w[1].median_ms / w[0].median_ms) / channel_ratio * 2.0
        })
        .collect();
    Ok(BenchReport {
        rows,
        slope_ms_per_channel: slope,
        intercept_ms: intercept,
        r_squared,
        doubling_ratios,
    })
}

fn timed_pass(
    model: &mut SoftsModel<f32>,
    x: &Tensor<f32>,
    y: &Tensor<f32>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    model.zero_grads();
    let start = Instant::now();
    let (pred, trace) = model.forward(x, true, rng)?;
    let grad = mse_grad(&pred, y)?;
    model.backward(&trace, &grad)?;
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let len: usize = shape.iter().product();
    let data: Vec<f32> = (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Tensor::from_vec(shape, data).expect("shape and length agree")
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Ordinary least squares y = slope*x + intercept, plus R² of the fit.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let fitted = slope * x + intercept;
        ss_res += (y - fitted) * (y - fitted);
        ss_tot += (y - mean_y) * (y - mean_y);
    }
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    (slope, intercept, r_squared)
}

fn read_vm_hwm_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    for line in status.lines() {
        if let Some(rest) = line.strip_prefix("VmHWM:") {
            return rest.trim().trim_end_matches("kB").trim().parse().ok();
        }
    }
    None
}
