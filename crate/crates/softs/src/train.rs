//! Optimization loop: MSE loss, Adam with a per-epoch cosine learning-rate
//! schedule, epoch-level validation, early stopping with best-parameter
//! restoration, and batch-order-invariant evaluation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_batches, PreparedData, Split};
use crate::error::{Result, SoftsError};
use crate::model::SoftsModel;
use crate::tensor::{Scalar, Tensor};

/// Optimizer and loop hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Initial learning rate for the cosine schedule.
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    /// Drives batch shuffling and stochastic pooling.
    #[serde(default)]
    pub seed: u64,
}

fn default_lr0() -> f64 {
    3e-4
}
fn default_epochs() -> usize {
    10
}
fn default_batch_size() -> usize {
    32
}
fn default_patience() -> usize {
    3
}
fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: default_lr0(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            patience: default_patience(),
            betas: default_betas(),
            adam_eps: default_adam_eps(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 < 0.0 || !self.lr0.is_finite() {
            return Err(SoftsError::config(format!(
                "lr0 must be finite and ≥ 0, got {}",
                self.lr0
            )));
        }
        if self.epochs == 0 {
            return Err(SoftsError::config("epochs must be ≥ 1".to_string()));
        }
        if self.batch_size == 0 {
            return Err(SoftsError::config("batch_size must be ≥ 1".to_string()));
        }
        if self.patience == 0 {
            return Err(SoftsError::config("patience must be ≥ 1".to_string()));
        }
        Ok(())
    }
}

/// Adam moment buffers aligned with the model's canonical parameter order,
/// plus the step counter for bias correction.
#[derive(Clone, Debug)]
pub struct TrainState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: u64,
}

impl TrainState {
    pub fn new(model: &SoftsModel<f32>) -> Self {
        let shapes: Vec<usize> = model.named_params().iter().map(|(_, t)| t.len()).collect();
        TrainState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Mean squared error over every element, accumulated in `f64`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check_same_shape("mse_loss", pred, target)?;
    let n = pred.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(&p, &y)| {
            let d = p.to_f64() - y.to_f64();
            d * d
        })
        .sum();
    Ok(sum / n)
}

/// Gradient of [`mse_loss`] with respect to the prediction: 2(Ŷ−Y)/n.
pub fn mse_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("mse_grad", pred, target)?;
    let scale = T::from_f64(2.0 / pred.len() as f64);
    let data = pred
        .iter()
        .zip(target.iter())
        .map(|(&p, &y)| (p - y) * scale)
        .collect();
    Tensor::from_vec(pred.shape(), data)
}

/// Mean absolute error over every element, accumulated in `f64`.
pub fn mae_metric<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check_same_shape("mae_metric", pred, target)?;
    let n = pred.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(&p, &y)| (p.to_f64() - y.to_f64()).abs())
        .sum();
    Ok(sum / n)
}

fn check_same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(SoftsError::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// One Adam update with bias correction over the model's parameters, reading
/// each tensor's accumulated gradient. Parameters with no gradient buffer
/// are skipped (nothing upstream touched them).
pub fn adam_step(
    model: &mut SoftsModel<f32>,
    state: &mut TrainState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let names: Vec<String> = model
        .named_params()
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    let mut params = model.params_mut();
    if params.len() != state.m.len() {
        return Err(SoftsError::config(format!(
            "optimizer state tracks {} tensors, model has {}",
            state.m.len(),
            params.len()
        )));
    }
    state.step += 1;
    let (beta1, beta2) = cfg.betas;
    let bias1 = 1.0 - beta1.powi(state.step as i32);
    let bias2 = 1.0 - beta2.powi(state.step as i32);
    for (idx, param) in params.iter_mut().enumerate() {
        let (data, grad) = param.data_and_grad_mut();
        let Some(grad) = grad else { continue };
        if let Some(pos) = grad.iter().position(|g| !g.is_finite()) {
            return Err(SoftsError::NonFinite {
                context: format!(
                    "gradient of {} at flat index {pos} (step {})",
                    names[idx], state.step
                ),
            });
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for i in 0..data.len() {
            let g = grad[i] as f64;
            m[i] = (beta1 * m[i] as f64 + (1.0 - beta1) * g) as f32;
            v[i] = (beta2 * v[i] as f64 + (1.0 - beta2) * g * g) as f32;
            let m_hat = m[i] as f64 / bias1;
            let v_hat = v[i] as f64 / bias2;
            data[i] = (data[i] as f64 - lr * m_hat / (v_hat.sqrt() + cfg.adam_eps)) as f32;
        }
    }
    Ok(())
}

/// Cosine learning-rate schedule stepped once per epoch:
/// lr0·½·(1 + cos(π·epoch/total)).
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64) -> f64 {
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total_epochs as f64).cos())
}

/// Per-epoch record of the loop's progress.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// What [`fit`] returns besides the trained (best-restored) model.
#[derive(Clone, Debug)]
pub struct FitReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
}

/// Trains the model on the prepared dataset: shuffled train batches, MSE
/// backward, Adam with the cosine schedule, validation each epoch, early
/// stopping, and restoration of the best-validation parameters at exit.
pub fn fit(
    model: &mut SoftsModel<f32>,
    data: &PreparedData,
    cfg: &TrainConfig,
) -> Result<FitReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Parameter init consumes stream 0 of the same seed; training draws stay
    // disjoint on their own stream.
    rng.set_stream(1);
    let mut state = TrainState::new(model);
    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.snapshot();
    let mut stale_epochs = 0usize;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr0);
        let shuffle_seed = rng.random::<u64>();
        let batches = make_batches(
            &data.ds,
            data.ranges.train.clone(),
            data.lookback,
            data.horizon,
            cfg.batch_size,
            true,
            shuffle_seed,
        )?;
        let mut loss_sum = 0.0f64;
        let mut element_count = 0.0f64;
        for batch in batches {
            model.zero_grads();
            let (pred, trace) = model.forward(&batch.x, true, &mut rng)?;
            let loss = mse_loss(&pred, &batch.y)?;
            let grad = mse_grad(&pred, &batch.y)?;
            model.backward(&trace, &grad)?;
            adam_step(model, &mut state, lr, cfg)?;
            let n = pred.len() as f64;
            loss_sum += loss * n;
            element_count += n;
        }
        let train_mse = loss_sum / element_count;
        let val = evaluate(model, data, Split::Val, cfg.batch_size)?;
        if !val.mse.is_finite() {
            return Err(SoftsError::Train {
                detail: format!("validation loss diverged to {} at epoch {epoch}", val.mse),
            });
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_mse,
            val_mse: val.mse,
        });

        if val.mse < best_val {
            best_val = val.mse;
            best_epoch = epoch;
            best_params = model.snapshot();
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    model.restore(&best_params)?;
    Ok(FitReport {
        history,
        best_epoch,
        best_val_mse: best_val,
        stopped_early,
    })
}

/// Evaluation metrics over one split.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub mse: f64,
    pub mae: f64,
    pub windows: usize,
}

/// Test-mode metrics over every window of a split, unshuffled, with exact
/// window-weighted accumulation so batch size cannot change the result.
pub fn evaluate(
    model: &SoftsModel<f32>,
    data: &PreparedData,
    split: Split,
    batch_size: usize,
) -> Result<EvalReport> {
    let batches = make_batches(
        &data.ds,
        data.ranges.get(split),
        data.lookback,
        data.horizon,
        batch_size,
        false,
        0,
    )?;
    let mut sq_sum = 0.0f64;
    let mut abs_sum = 0.0f64;
    let mut count = 0.0f64;
    let mut windows = 0usize;
    for batch in batches {
        let pred = model.predict(&batch.x)?;
        for (&p, &y) in pred.iter().zip(batch.y.iter()) {
            let d = p as f64 - y as f64;
            sq_sum += d * d;
            abs_sum += d.abs();
        }
        count += pred.len() as f64;
        windows += batch.starts.len();
    }
    Ok(EvalReport {
        mse: sq_sum / count,
        mae: abs_sum / count,
        windows,
    })
}
