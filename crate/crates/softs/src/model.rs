//! The end-to-end forecaster: reversible instance normalization, channel-wise
//! series embedding, N aggregate-redistribute blocks, and a linear head.
//!
//! Forward maps a B×L×C window batch to B×H×C predictions. The forward pass
//! returns a trace of intermediate activations; `backward` consumes it to
//! accumulate parameter gradients without a tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SoftsError};
use crate::nn::LinearLayer;
use crate::star::{PoolingKind, StarBlock, StarCache};
use crate::tensor::{debug_check_finite, transpose_12, Scalar, Tensor};

/// Epsilon inside the normalization square root; keeps constant windows
/// well-defined.
const REVIN_EPS: f64 = 1e-5;

/// Every hyperparameter the model needs. Serialized verbatim into
/// checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Lookback window length L.
    pub lookback: usize,
    /// Forecast horizon H.
    pub horizon: usize,
    /// Channel count C.
    pub channels: usize,
    /// Embedding width d.
    pub hidden: usize,
    /// Core width d'.
    pub core: usize,
    /// Number of aggregate-redistribute blocks N.
    pub layers: usize,
    pub pooling: PoolingKind,
    #[serde(default = "default_true")]
    pub use_revin: bool,
    /// Channel-independent baseline: residual MLP blocks with no pooling.
    #[serde(default)]
    pub baseline: bool,
    /// Seed for parameter initialization.
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("channels", self.channels),
            ("hidden", self.hidden),
            ("core", self.core),
        ] {
            if v == 0 {
                return Err(SoftsError::config(format!("{name} must be ≥ 1")));
            }
        }
        if self.core > self.hidden {
            return Err(SoftsError::config(format!(
                "core width {} must not exceed hidden width {}",
                self.core, self.hidden
            )));
        }
        Ok(())
    }
}

/// Per-(batch, channel) window statistics captured by normalization.
#[derive(Clone, Debug)]
pub struct RevinState<T: Scalar> {
    /// B×C window means.
    pub mean: Tensor<T>,
    /// B×C epsilon-floored window standard deviations.
    pub std: Tensor<T>,
}

/// Removes each (batch, channel) lookback window's mean and scales by its
/// population standard deviation (epsilon-floored).
pub fn revin_normalize<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, RevinState<T>)> {
    let (b, l, c) = match x.shape() {
        [b, l, c] => (*b, *l, *c),
        other => {
            return Err(SoftsError::shape(
                "revin_normalize",
                format!("expected B×L×C tensor, got {other:?}"),
            ));
        }
    };
    let src = x.data();
    let mut mean = Tensor::zeros(&[b, c]);
    let mut std = Tensor::zeros(&[b, c]);
    let mut out = Tensor::zeros(&[b, l, c]);
    let inv_l = T::from_f64(1.0 / l as f64);
    let eps = T::from_f64(REVIN_EPS);
    for bi in 0..b {
        for ci in 0..c {
            let mut m = T::zero();
            for li in 0..l {
                m += src[(bi * l + li) * c + ci];
            }
            m = m * inv_l;
            let mut var = T::zero();
            for li in 0..l {
                let dev = src[(bi * l + li) * c + ci] - m;
                var += dev * dev;
            }
            var = var * inv_l;
            let s = (var + eps).sqrt();
            mean.data_mut()[bi * c + ci] = m;
            std.data_mut()[bi * c + ci] = s;
            for li in 0..l {
                out.data_mut()[(bi * l + li) * c + ci] = (src[(bi * l + li) * c + ci] - m) / s;
            }
        }
    }
    debug_check_finite("revin_normalize", &out);
    Ok((out, RevinState { mean, std }))
}

/// Restores the statistics removed by [`revin_normalize`]: ŷ·std + mean per
/// (batch, channel).
pub fn revin_denormalize<T: Scalar>(y: &Tensor<T>, state: &RevinState<T>) -> Result<Tensor<T>> {
    let (b, h, c) = match y.shape() {
        [b, h, c] => (*b, *h, *c),
        other => {
            return Err(SoftsError::shape(
                "revin_denormalize",
                format!("expected B×H×C tensor, got {other:?}"),
            ));
        }
    };
    if state.mean.shape() != [b, c] {
        return Err(SoftsError::shape(
            "revin_denormalize",
            format!(
                "state is for shape {:?}, input batch is {:?}",
                state.mean.shape(),
                y.shape()
            ),
        ));
    }
    let mut out = Tensor::zeros(&[b, h, c]);
    let src = y.data();
    let dst = out.data_mut();
    for bi in 0..b {
        for hi in 0..h {
            for ci in 0..c {
                let idx = (bi * h + hi) * c + ci;
                dst[idx] =
                    src[idx] * state.std.data()[bi * c + ci] + state.mean.data()[bi * c + ci];
            }
        }
    }
    Ok(out)
}

/// Intermediate activations from one forward pass, consumed by `backward`.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T: Scalar> {
    /// Channel-major normalized input B×C×L, the embedding's input.
    embedded_input: Tensor<T>,
    /// Block inputs S₀..S_N (N+1 entries of B×C×d); the last is the head's
    /// input.
    states: Vec<Tensor<T>>,
    block_caches: Vec<StarCache<T>>,
    revin: Option<RevinState<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Sampled channel indices per block when the pass ran stochastic
    /// pooling in training mode.
    pub fn sampled_channels(&self) -> Vec<Option<&[usize]>> {
        self.block_caches
            .iter()
            .map(StarCache::sampled_channels)
            .collect()
    }
}

/// Pooling behavior requested for one forward pass.
enum ForwardMode<'a> {
    Train(&'a mut ChaCha8Rng),
    Infer,
    /// Training-shaped pass with stochastic samples pinned per block.
    Replay(&'a [Vec<usize>]),
}

/// The assembled forecaster.
#[derive(Clone, Debug)]
pub struct SoftsModel<T: Scalar> {
    pub embedding: LinearLayer<T>,
    pub blocks: Vec<StarBlock<T>>,
    pub head: LinearLayer<T>,
    pub config: ModelConfig,
}

impl<T: Scalar> SoftsModel<T> {
    /// Builds a model with parameters drawn deterministically from
    /// `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let embedding = LinearLayer::init(config.lookback, config.hidden, &mut rng);
        let blocks = (0..config.layers)
            .map(|_| {
                StarBlock::init(
                    config.hidden,
                    config.core,
                    config.channels,
                    config.pooling,
                    config.baseline,
                    &mut rng,
                )
            })
            .collect();
        let head = LinearLayer::init(config.hidden, config.horizon, &mut rng);
        Ok(SoftsModel {
            embedding,
            blocks,
            head,
            config: config.clone(),
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        match x.shape() {
            [b, l, c] if *l == self.config.lookback && *c == self.config.channels => Ok(*b),
            other => Err(SoftsError::shape(
                "model_forward",
                format!(
                    "input shape {:?} does not match config L={}, C={}",
                    other, self.config.lookback, self.config.channels
                ),
            )),
        }
    }

    /// Training-mode forward; returns predictions and the trace backward
    /// needs.
    pub fn forward(
        &self,
        x: &Tensor<T>,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor<T>, ForwardTrace<T>)> {
        let mode = if training {
            ForwardMode::Train(rng)
        } else {
            ForwardMode::Infer
        };
        self.forward_inner(x, mode)
    }

    /// Inference forward, discarding the trace.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_inner(x, ForwardMode::Infer)?.0)
    }

    /// Training-shaped forward with stochastic pooling pinned to previously
    /// recorded per-block samples, for conditional gradient checks.
    pub fn forward_replay(
        &self,
        x: &Tensor<T>,
        samples_per_block: &[Vec<usize>],
    ) -> Result<(Tensor<T>, ForwardTrace<T>)> {
        if samples_per_block.len() != self.blocks.len() {
            return Err(SoftsError::config(format!(
                "{} sample lists for {} blocks",
                samples_per_block.len(),
                self.blocks.len()
            )));
        }
        self.forward_inner(x, ForwardMode::Replay(samples_per_block))
    }

    fn forward_inner(
        &self,
        x: &Tensor<T>,
        mode: ForwardMode<'_>,
    ) -> Result<(Tensor<T>, ForwardTrace<T>)> {
        self.check_input(x)?;
        let (normalized, revin) = if self.config.use_revin {
            let (n, state) = revin_normalize(x)?;
            (n, Some(state))
        } else {
            (x.clone(), None)
        };
        let embedded_input = transpose_12(&normalized)?;
        let mut states = vec![self.embedding.forward(&embedded_input)?];
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        let mut mode = mode;
        for (i, block) in self.blocks.iter().enumerate() {
            let s = states.last().expect("states never empty");
            let (next, cache) = match &mut mode {
                ForwardMode::Train(rng) => block.forward(s, true, rng)?,
                ForwardMode::Infer => {
                    let mut unused = ChaCha8Rng::seed_from_u64(0);
                    block.forward(s, false, &mut unused)?
                }
                ForwardMode::Replay(samples) => block.forward_with_samples(s, &samples[i])?,
            };
            states.push(next);
            block_caches.push(cache);
        }
        let headed = self
            .head
            .forward(states.last().expect("states never empty"))?;
        let time_major = transpose_12(&headed)?;
        let output = match &revin {
            Some(state) => revin_denormalize(&time_major, state)?,
            None => time_major,
        };
        debug_check_finite("model_forward", &output);
        Ok((
            output,
            ForwardTrace {
                embedded_input,
                states,
                block_caches,
                revin,
            },
        ))
    }

    /// Accumulates parameter gradients for dL/dŶ through the whole graph.
    pub fn backward(&mut self, trace: &ForwardTrace<T>, grad_output: &Tensor<T>) -> Result<()> {
        // Denormalization is ŷ·std + mean, so its backward is a rescale.
        let grad_time_major = match &trace.revin {
            Some(state) => {
                let (b, h, c) = match grad_output.shape() {
                    [b, h, c] => (*b, *h, *c),
                    other => {
                        return Err(SoftsError::shape(
                            "model_backward",
                            format!("expected B×H×C gradient, got {other:?}"),
                        ));
                    }
                };
                let mut scaled = grad_output.clone();
                let dst = scaled.data_mut();
                for bi in 0..b {
                    for hi in 0..h {
                        for ci in 0..c {
                            dst[(bi * h + hi) * c + ci] *= state.std.data()[bi * c + ci];
                        }
                    }
                }
                scaled
            }
            None => grad_output.clone(),
        };
        let grad_headed = transpose_12(&grad_time_major)?;
        let last_state = trace.states.last().expect("states never empty");
        let mut grad_state = self.head.backward(last_state, &grad_headed)?;
        for (i, block) in self.blocks.iter_mut().enumerate().rev() {
            grad_state = block.backward(&trace.states[i], &trace.block_caches[i], &grad_state)?;
        }
        // The embedding input has no parameters upstream, so its gradient is
        // discarded.
        self.embedding
            .backward(&trace.embedded_input, &grad_state)?;
        Ok(())
    }

    /// Total scalar parameter count.
    pub fn count_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Parameters in their canonical checkpoint order with their canonical
    /// names.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("embedding.weight".to_string(), &self.embedding.weight),
            ("embedding.bias".to_string(), &self.embedding.bias),
        ];
        for (i, block) in self.blocks.iter().enumerate() {
            if let Some(mlp1) = &block.mlp1 {
                out.push((format!("blocks.{i}.mlp1.first.weight"), &mlp1.first.weight));
                out.push((format!("blocks.{i}.mlp1.first.bias"), &mlp1.first.bias));
                out.push((
                    format!("blocks.{i}.mlp1.second.weight"),
                    &mlp1.second.weight,
                ));
                out.push((format!("blocks.{i}.mlp1.second.bias"), &mlp1.second.bias));
            }
            out.push((
                format!("blocks.{i}.mlp2.first.weight"),
                &block.mlp2.first.weight,
            ));
            out.push((
                format!("blocks.{i}.mlp2.first.bias"),
                &block.mlp2.first.bias,
            ));
            out.push((
                format!("blocks.{i}.mlp2.second.weight"),
                &block.mlp2.second.weight,
            ));
            out.push((
                format!("blocks.{i}.mlp2.second.bias"),
                &block.mlp2.second.bias,
            ));
            if let Some(w) = &block.channel_weights {
                out.push((format!("blocks.{i}.lambda"), w));
            }
        }
        out.push(("head.weight".to_string(), &self.head.weight));
        out.push(("head.bias".to_string(), &self.head.bias));
        out
    }

    /// Mutable parameter references in the same order as [`Self::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.embedding.weight, &mut self.embedding.bias];
        for block in &mut self.blocks {
            if let Some(mlp1) = block.mlp1.as_mut() {
                out.push(&mut mlp1.first.weight);
                out.push(&mut mlp1.first.bias);
                out.push(&mut mlp1.second.weight);
                out.push(&mut mlp1.second.bias);
            }
            out.push(&mut block.mlp2.first.weight);
            out.push(&mut block.mlp2.first.bias);
            out.push(&mut block.mlp2.second.weight);
            out.push(&mut block.mlp2.second.bias);
            if let Some(w) = block.channel_weights.as_mut() {
                out.push(w);
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Snapshot of all parameter values in canonical order.
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        self.named_params()
            .iter()
            .map(|(_, t)| t.data().to_vec())
            .collect()
    }

    /// Restores a snapshot taken from an identically configured model.
    pub fn restore(&mut self, snapshot: &[Vec<T>]) -> Result<()> {
        let mut params = self.params_mut();
        if snapshot.len() != params.len() {
            return Err(SoftsError::config(format!(
                "snapshot has {} tensors, model has {}",
                snapshot.len(),
                params.len()
            )));
        }
        for (param, saved) in params.iter_mut().zip(snapshot) {
            if param.len() != saved.len() {
                return Err(SoftsError::config(
                    "snapshot tensor length does not match parameter".to_string(),
                ));
            }
            param.data_mut().copy_from_slice(saved);
        }
        Ok(())
    }
}
