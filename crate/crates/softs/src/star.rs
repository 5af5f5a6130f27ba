//! The aggregate-redistribute block: project each channel's embedding, pool
//! across channels into a shared core vector, concatenate that core back onto
//! every channel, fuse with an MLP, and add a residual.
//!
//! Four pooling strategies are interchangeable. Stochastic pooling samples a
//! channel per (batch, dimension) during training and takes the
//! softmax-weighted average at test time; its training backward routes
//! gradient only through the sampled entries.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SoftsError};
use crate::nn::{init_params, InitScheme, MlpCache, TwoLayerMlp};
use crate::tensor::{debug_check_finite, softmax_backward, softmax_over_axis, Scalar, Tensor};

/// How the per-channel projections are pooled into the core vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingKind {
    Mean,
    Max,
    /// Convex combination with weights softmax(λ) over a learnable
    /// per-channel score vector λ.
    Weighted,
    Stochastic,
}

impl fmt::Display for PoolingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            PoolingKind::Mean => "mean",
            PoolingKind::Max => "max",
            PoolingKind::Weighted => "weighted",
            PoolingKind::Stochastic => "stochastic",
        };
        f.write_str(name)
    }
}

impl FromStr for PoolingKind {
    type Err = SoftsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(PoolingKind::Mean),
            "max" => Ok(PoolingKind::Max),
            "weighted" => Ok(PoolingKind::Weighted),
            "stochastic" => Ok(PoolingKind::Stochastic),
            other => Err(SoftsError::config(format!(
                "unknown pooling kind {other:?}, expected one of mean, max, weighted, stochastic"
            ))),
        }
    }
}

/// What [`pool`] must remember to route gradients exactly.
#[derive(Clone, Debug)]
pub enum PoolContext<T: Scalar> {
    Mean,
    /// Winning channel per (batch, dimension), flat B·d' order.
    Max {
        argmax: Vec<usize>,
    },
    /// softmax(λ), length C.
    Weighted {
        weights: Tensor<T>,
    },
    /// Sampled channel per (batch, dimension), flat B·d' order.
    StochasticTrain {
        samples: Vec<usize>,
    },
    /// Channel probabilities softmax(A) over the channel axis, B×C×d'.
    StochasticTest {
        probs: Tensor<T>,
    },
}

/// The pooled core vector plus the bookkeeping its backward needs.
#[derive(Clone, Debug)]
pub struct CoreRepresentation<T: Scalar> {
    /// B×d' pooled values.
    pub values: Tensor<T>,
    pub context: PoolContext<T>,
}

fn rank3<T: Scalar>(op: &str, t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [b, c, d] => Ok((*b, *c, *d)),
        other => Err(SoftsError::shape(
            op,
            format!("expected rank-3 tensor, got {other:?}"),
        )),
    }
}

/// Pools B×C×d' channel projections into a B×d' core.
///
/// `lambda` is the learnable score vector for [`PoolingKind::Weighted`] and
/// ignored otherwise. `rng` is only consumed by stochastic pooling in
/// training mode.
pub fn pool<T: Scalar>(
    a: &Tensor<T>,
    kind: PoolingKind,
    lambda: Option<&Tensor<T>>,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<CoreRepresentation<T>> {
    let (b, c, d) = rank3("pool", a)?;
    if c == 0 {
        return Err(SoftsError::shape(
            "pool",
            "channel axis is empty".to_string(),
        ));
    }
    let src = a.data();
    let at = |bi: usize, ci: usize, j: usize| src[(bi * c + ci) * d + j];
    let mut values = Tensor::zeros(&[b, d]);

    let context = match kind {
        PoolingKind::Mean => {
            let inv = T::from_f64(1.0 / c as f64);
            let out = values.data_mut();
            for bi in 0..b {
                for ci in 0..c {
                    for j in 0..d {
                        out[bi * d + j] += at(bi, ci, j) * inv;
                    }
                }
            }
            PoolContext::Mean
        }
        PoolingKind::Max => {
            let mut argmax = vec![0usize; b * d];
            let out = values.data_mut();
            for bi in 0..b {
                for j in 0..d {
                    let mut best = at(bi, 0, j);
                    let mut best_c = 0;
                    for ci in 1..c {
                        // Strict comparison keeps ties on the lowest index.
                        if at(bi, ci, j) > best {
                            best = at(bi, ci, j);
                            best_c = ci;
                        }
                    }
                    out[bi * d + j] = best;
                    argmax[bi * d + j] = best_c;
                }
            }
            PoolContext::Max { argmax }
        }
        PoolingKind::Weighted => {
            let lambda = lambda.ok_or_else(|| {
                SoftsError::config("weighted pooling requires a channel score vector".to_string())
            })?;
            if lambda.shape() != [c] {
                return Err(SoftsError::shape(
                    "pool",
                    format!("channel scores shape {:?}, expected [{c}]", lambda.shape()),
                ));
            }
            let weights = softmax_over_axis(lambda, 0)?;
            let w = weights.data().to_vec();
            let out = values.data_mut();
            for bi in 0..b {
                for ci in 0..c {
                    for j in 0..d {
                        out[bi * d + j] += w[ci] * at(bi, ci, j);
                    }
                }
            }
            PoolContext::Weighted { weights }
        }
        PoolingKind::Stochastic => {
            let probs = softmax_over_axis(a, 1)?;
            if training {
                let p = probs.data();
                let mut samples = vec![0usize; b * d];
                let out = values.data_mut();
                for bi in 0..b {
                    for j in 0..d {
                        let u: f64 = rng.random();
                        let mut acc = 0.0f64;
                        let mut chosen = c - 1;
                        for ci in 0..c {
                            acc += p[(bi * c + ci) * d + j].to_f64();
                            if u < acc {
                                chosen = ci;
                                break;
                            }
                        }
                        samples[bi * d + j] = chosen;
                        out[bi * d + j] = at(bi, chosen, j);
                    }
                }
                PoolContext::StochasticTrain { samples }
            } else {
                let p = probs.data();
                let out = values.data_mut();
                for bi in 0..b {
                    for ci in 0..c {
                        for j in 0..d {
                            out[bi * d + j] += p[(bi * c + ci) * d + j] * at(bi, ci, j);
                        }
                    }
                }
                PoolContext::StochasticTest { probs }
            }
        }
    };
    debug_check_finite("pool", &values);
    Ok(CoreRepresentation { values, context })
}

/// Gradient of [`pool`]: given dL/dcore (B×d'), returns dL/dA and, for
/// weighted pooling, dL/dλ.
pub fn pool_backward<T: Scalar>(
    a: &Tensor<T>,
    core: &CoreRepresentation<T>,
    grad_core: &Tensor<T>,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let (b, c, d) = rank3("pool_backward", a)?;
    if grad_core.shape() != [b, d] {
        return Err(SoftsError::shape(
            "pool_backward",
            format!(
                "core grad shape {:?}, expected [{b}, {d}]",
                grad_core.shape()
            ),
        ));
    }
    let g = grad_core.data();
    let src = a.data();
    let mut grad_a = Tensor::zeros(&[b, c, d]);

    let grad_lambda = match &core.context {
        PoolContext::Mean => {
            let inv = T::from_f64(1.0 / c as f64);
            let da = grad_a.data_mut();
            for bi in 0..b {
                for ci in 0..c {
                    for j in 0..d {
                        da[(bi * c + ci) * d + j] = g[bi * d + j] * inv;
                    }
                }
            }
            None
        }
        PoolContext::Max { argmax } => {
            let da = grad_a.data_mut();
            for bi in 0..b {
                for j in 0..d {
                    let ci = argmax[bi * d + j];
                    da[(bi * c + ci) * d + j] = g[bi * d + j];
                }
            }
            None
        }
        PoolContext::Weighted { weights } => {
            let w = weights.data();
            let da = grad_a.data_mut();
            // dL/dw_c is the full contraction of the upstream gradient with
            // channel c's slice; λ then gets the softmax backward of that.
            let mut grad_w = vec![T::zero(); c];
            for bi in 0..b {
                for ci in 0..c {
                    for j in 0..d {
                        let up = g[bi * d + j];
                        da[(bi * c + ci) * d + j] = w[ci] * up;
                        grad_w[ci] += up * src[(bi * c + ci) * d + j];
                    }
                }
            }
            let grad_w = Tensor::from_vec(&[c], grad_w)?;
            Some(softmax_backward(weights, &grad_w, 0)?)
        }
        PoolContext::StochasticTrain { samples } => {
            // Straight-through on the sampled entries: the selection is
            // treated as a constant, so no gradient reaches the
            // probabilities.
            let da = grad_a.data_mut();
            for bi in 0..b {
                for j in 0..d {
                    let ci = samples[bi * d + j];
                    da[(bi * c + ci) * d + j] = g[bi * d + j];
                }
            }
            None
        }
        PoolContext::StochasticTest { probs } => {
            // o_j = Σ_i p_ij·A_ij with p = softmax over channels gives
            // dA_mj = g_j·p_mj·(1 + A_mj − o_j).
            let p = probs.data();
            let o = core.values.data();
            let da = grad_a.data_mut();
            for bi in 0..b {
                for ci in 0..c {
                    for j in 0..d {
                        let idx = (bi * c + ci) * d + j;
                        da[idx] = g[bi * d + j] * p[idx] * (T::one() + src[idx] - o[bi * d + j]);
                    }
                }
            }
            None
        }
    };
    Ok((grad_a, grad_lambda))
}

/// Activations saved by [`StarBlock::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct StarCache<T: Scalar> {
    /// Channel projections B×C×d' (absent in baseline mode).
    projected: Option<Tensor<T>>,
    mlp1_cache: Option<MlpCache<T>>,
    core: Option<CoreRepresentation<T>>,
    /// The fuse MLP's input: concat(S, core) in block mode, S itself in
    /// baseline mode.
    fused_input: Tensor<T>,
    mlp2_cache: MlpCache<T>,
}

impl<T: Scalar> StarCache<T> {
    /// Sampled channel indices when the forward ran stochastic pooling in
    /// training mode.
    pub fn sampled_channels(&self) -> Option<&[usize]> {
        match &self.core {
            Some(CoreRepresentation {
                context: PoolContext::StochasticTrain { samples },
                ..
            }) => Some(samples),
            _ => None,
        }
    }
}

/// One aggregate-redistribute layer, or its channel-independent baseline when
/// `baseline` is set (a plain d→d residual MLP with no pooling).
#[derive(Clone, Debug)]
pub struct StarBlock<T: Scalar> {
    /// Channel projection d→d' (hidden d). `None` in baseline mode.
    pub mlp1: Option<TwoLayerMlp<T>>,
    /// Fuse MLP (d+d')→d (hidden d), or d→d in baseline mode.
    pub mlp2: TwoLayerMlp<T>,
    pub pooling: PoolingKind,
    /// Learnable per-channel scores λ for weighted pooling.
    pub channel_weights: Option<Tensor<T>>,
    pub baseline: bool,
    dim: usize,
    core_dim: usize,
}

impl<T: Scalar> StarBlock<T> {
    /// Builds a block with seeded parameters. `channels` is only consulted
    /// for weighted pooling's score vector.
    pub fn init(
        dim: usize,
        core_dim: usize,
        channels: usize,
        pooling: PoolingKind,
        baseline: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        if baseline {
            StarBlock {
                mlp1: None,
                mlp2: TwoLayerMlp::init(dim, dim, dim, rng),
                pooling,
                channel_weights: None,
                baseline: true,
                dim,
                core_dim,
            }
        } else {
            let mlp1 = TwoLayerMlp::init(dim, dim, core_dim, rng);
            let mlp2 = TwoLayerMlp::init(dim + core_dim, dim, dim, rng);
            let channel_weights = (pooling == PoolingKind::Weighted)
                .then(|| init_params(&[channels], InitScheme::Zeros, 0));
            StarBlock {
                mlp1: Some(mlp1),
                mlp2,
                pooling,
                channel_weights,
                baseline: false,
                dim,
                core_dim,
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn core_dim(&self) -> usize {
        self.core_dim
    }

    pub fn param_count(&self) -> usize {
        self.mlp1.as_ref().map_or(0, TwoLayerMlp::param_count)
            + self.mlp2.param_count()
            + self.channel_weights.as_ref().map_or(0, Tensor::len)
    }

    fn check_input(&self, s: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let (b, c, d) = rank3("star_forward", s)?;
        if d != self.dim {
            return Err(SoftsError::shape(
                "star_forward",
                format!(
                    "trailing extent {} does not match block width {}",
                    d, self.dim
                ),
            ));
        }
        Ok((b, c, d))
    }

    /// Forward pass; `rng` is consumed only by stochastic pooling in
    /// training mode.
    pub fn forward(
        &self,
        s: &Tensor<T>,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor<T>, StarCache<T>)> {
        self.forward_inner(s, training, rng, None)
    }

    /// Forward pass with stochastic pooling forced to the given sampled
    /// channel indices (flat B·d' order). This makes training-mode gradients
    /// checkable conditional on recorded samples.
    pub fn forward_with_samples(
        &self,
        s: &Tensor<T>,
        samples: &[usize],
    ) -> Result<(Tensor<T>, StarCache<T>)> {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        self.forward_inner(s, true, &mut unused, Some(samples))
    }

    fn forward_inner(
        &self,
        s: &Tensor<T>,
        training: bool,
        rng: &mut ChaCha8Rng,
        forced_samples: Option<&[usize]>,
    ) -> Result<(Tensor<T>, StarCache<T>)> {
        let (b, c, d) = self.check_input(s)?;

        if self.baseline {
            let (fused, mlp2_cache) = self.mlp2.forward(s)?;
            let out = residual_add(&fused, s)?;
            debug_check_finite("star_forward", &out);
            return Ok((
                out,
                StarCache {
                    projected: None,
                    mlp1_cache: None,
                    core: None,
                    fused_input: s.clone(),
                    mlp2_cache,
                },
            ));
        }

        let mlp1 = self.mlp1.as_ref().expect("non-baseline block has mlp1");
        let (projected, mlp1_cache) = mlp1.forward(s)?;
        let core = match forced_samples {
            Some(samples) => {
                if self.pooling != PoolingKind::Stochastic {
                    return Err(SoftsError::config(
                        "forced samples only apply to stochastic pooling".to_string(),
                    ));
                }
                forced_sample_core(&projected, samples)?
            }
            None => pool(
                &projected,
                self.pooling,
                self.channel_weights.as_ref(),
                training,
                rng,
            )?,
        };

        // Repeat-concat: every channel gets [its own embedding | the core].
        let dc = self.core_dim;
        let mut fused_input = Tensor::zeros(&[b, c, d + dc]);
        {
            let dst = fused_input.data_mut();
            let sv = s.data();
            let ov = core.values.data();
            for bi in 0..b {
                for ci in 0..c {
                    let row = (bi * c + ci) * (d + dc);
                    dst[row..row + d]
                        .copy_from_slice(&sv[(bi * c + ci) * d..(bi * c + ci + 1) * d]);
                    dst[row + d..row + d + dc].copy_from_slice(&ov[bi * dc..(bi + 1) * dc]);
                }
            }
        }

        let (fused, mlp2_cache) = self.mlp2.forward(&fused_input)?;
        let out = residual_add(&fused, s)?;
        debug_check_finite("star_forward", &out);
        Ok((
            out,
            StarCache {
                projected: Some(projected),
                mlp1_cache: Some(mlp1_cache),
                core: Some(core),
                fused_input,
                mlp2_cache,
            },
        ))
    }

    /// Accumulates parameter gradients and returns dL/dS.
    pub fn backward(
        &mut self,
        s: &Tensor<T>,
        cache: &StarCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let (b, c, d) = self.check_input(s)?;
        if grad_out.shape() != s.shape() {
            return Err(SoftsError::shape(
                "star_backward",
                format!(
                    "grad shape {:?}, expected {:?}",
                    grad_out.shape(),
                    s.shape()
                ),
            ));
        }

        if self.baseline {
            let grad_in = self
                .mlp2
                .backward(&cache.fused_input, &cache.mlp2_cache, grad_out)?;
            return residual_add(&grad_in, grad_out);
        }

        let grad_fused = self
            .mlp2
            .backward(&cache.fused_input, &cache.mlp2_cache, grad_out)?;

        // Split the fused gradient back into the per-channel part and the
        // core part (summed over channels, since the core was repeated).
        let dc = self.core_dim;
        let mut grad_s = grad_out.clone();
        let mut grad_core = Tensor::zeros(&[b, dc]);
        {
            let gf = grad_fused.data();
            let gs = grad_s.data_mut();
            for bi in 0..b {
                for ci in 0..c {
                    let row = (bi * c + ci) * (d + dc);
                    for j in 0..d {
                        gs[(bi * c + ci) * d + j] += gf[row + j];
                    }
                }
            }
            let gc = grad_core.data_mut();
            for bi in 0..b {
                for ci in 0..c {
                    let row = (bi * c + ci) * (d + dc);
                    for j in 0..dc {
                        gc[bi * dc + j] += gf[row + d + j];
                    }
                }
            }
        }

        let projected = cache.projected.as_ref().expect("non-baseline cache");
        let core = cache.core.as_ref().expect("non-baseline cache");
        let (grad_projected, grad_lambda) = pool_backward(projected, core, &grad_core)?;
        if let Some(gl) = grad_lambda {
            self.channel_weights
                .as_mut()
                .expect("weighted pooling keeps channel scores")
                .accumulate_grad(gl.data());
        }

        let mlp1 = self.mlp1.as_mut().expect("non-baseline block has mlp1");
        let mlp1_cache = cache.mlp1_cache.as_ref().expect("non-baseline cache");
        let grad_from_projection = mlp1.backward(s, mlp1_cache, &grad_projected)?;
        grad_s.accumulate_into(&grad_from_projection)?;
        Ok(grad_s)
    }

    pub fn zero_grads(&mut self) {
        if let Some(mlp1) = self.mlp1.as_mut() {
            mlp1.zero_grads();
        }
        self.mlp2.zero_grads();
        if let Some(w) = self.channel_weights.as_mut() {
            w.zero_grad();
        }
    }
}

/// Builds a stochastic-train core from externally supplied sample indices.
fn forced_sample_core<T: Scalar>(
    projected: &Tensor<T>,
    samples: &[usize],
) -> Result<CoreRepresentation<T>> {
    let (b, c, d) = rank3("pool", projected)?;
    if samples.len() != b * d {
        return Err(SoftsError::shape(
            "pool",
            format!("{} forced samples, expected {}", samples.len(), b * d),
        ));
    }
    let src = projected.data();
    let mut values = Tensor::zeros(&[b, d]);
    let out = values.data_mut();
    for bi in 0..b {
        for j in 0..d {
            let ci = samples[bi * d + j];
            if ci >= c {
                return Err(SoftsError::shape(
                    "pool",
                    format!("forced sample index {ci} out of range for {c} channels"),
                ));
            }
            out[bi * d + j] = src[(bi * c + ci) * d + j];
        }
    }
    Ok(CoreRepresentation {
        values,
        context: PoolContext::StochasticTrain {
            samples: samples.to_vec(),
        },
    })
}

fn residual_add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(SoftsError::shape(
            "residual_add",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let data = a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

trait AccumulateInto<T: Scalar> {
    fn accumulate_into(&mut self, other: &Tensor<T>) -> Result<()>;
}

impl<T: Scalar> AccumulateInto<T> for Tensor<T> {
    fn accumulate_into(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(SoftsError::shape(
                "accumulate",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        for (dst, &src) in self.data_mut().iter_mut().zip(other.iter()) {
            *dst += src;
        }
        Ok(())
    }
}
