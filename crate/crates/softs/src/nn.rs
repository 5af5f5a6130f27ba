//! Parameterized layers: linear projection and the two-layer GELU MLP.
//!
//! Layers own their parameters and accumulate gradients into the tensors'
//! grad buffers during backward. Rank-3 inputs (B×C×d) are handled by folding
//! the two leading axes into one row axis before the affine map.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SoftsError};
use crate::tensor::{
    debug_check_finite, gelu, gelu_backward, mm_a_bt_accum, mm_accum, mm_at_b_accum, Scalar, Tensor,
};

/// Initialization scheme for [`init_params`].
#[derive(Clone, Copy, Debug)]
pub enum InitScheme {
    /// Uniform in [−1/√fan_in, +1/√fan_in].
    UniformFanIn {
        fan_in: usize,
    },
    Zeros,
}

/// Seed-deterministic parameter tensor: weights uniform in ±1/√fan_in,
/// biases zero. Values are drawn as `f64` and narrowed, so the draw sequence
/// is identical across element types.
pub fn init_params<T: Scalar>(shape: &[usize], scheme: InitScheme, seed: u64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = match scheme {
        InitScheme::Zeros => vec![T::zero(); n],
        InitScheme::UniformFanIn { fan_in } => {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
                .collect()
        }
    };
    Tensor::from_vec(shape, data).expect("shape product matches generated length")
}

/// Affine map x·W + b with W stored as in×out.
#[derive(Clone, Debug)]
pub struct LinearLayer<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Folds all leading axes of a shape into a row count, keeping the trailing
/// axis as the feature extent.
fn fold_rows(shape: &[usize]) -> (usize, usize) {
    let features = *shape.last().expect("non-empty shape");
    let rows = shape[..shape.len() - 1].iter().product();
    (rows, features)
}

impl<T: Scalar> LinearLayer<T> {
    /// Seeded initialization; draws a sub-seed from `rng` so layers built
    /// from one stream get independent parameters.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let w_seed = rng.random::<u64>();
        LinearLayer {
            weight: init_params(
                &[in_dim, out_dim],
                InitScheme::UniformFanIn { fan_in: in_dim },
                w_seed,
            ),
            bias: init_params(&[out_dim], InitScheme::Zeros, 0),
        }
    }

    /// All-zero layer, used by tests and the residual-identity contract.
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        LinearLayer {
            weight: Tensor::zeros(&[in_dim, out_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check_input(&self, op: &str, x: &Tensor<T>) -> Result<(usize, usize)> {
        if x.rank() < 2 {
            return Err(SoftsError::shape(
                op,
                format!("expected rank ≥ 2, got {:?}", x.shape()),
            ));
        }
        let (rows, features) = fold_rows(x.shape());
        if features != self.in_dim() {
            return Err(SoftsError::shape(
                op,
                format!(
                    "input trailing extent {} does not match layer in_dim {}",
                    features,
                    self.in_dim()
                ),
            ));
        }
        Ok((rows, features))
    }

    /// Affine forward; accepts rank 2 or 3, preserving leading axes.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (rows, in_dim) = self.check_input("linear_forward", x)?;
        let out_dim = self.out_dim();
        let mut out_shape = x.shape().to_vec();
        *out_shape.last_mut().unwrap() = out_dim;
        let mut out = Tensor::zeros(&out_shape);
        {
            let dst = out.data_mut();
            for row in dst.chunks_mut(out_dim) {
                row.copy_from_slice(self.bias.data());
            }
            mm_accum(x.data(), self.weight.data(), rows, in_dim, out_dim, dst);
        }
        debug_check_finite("linear_forward", &out);
        Ok(out)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (rows, in_dim) = self.check_input("linear_backward", x)?;
        let out_dim = self.out_dim();
        let (g_rows, g_features) = fold_rows(grad_out.shape());
        if g_rows != rows || g_features != out_dim {
            return Err(SoftsError::shape(
                "linear_backward",
                format!(
                    "grad shape {:?} does not match output of {:?}",
                    grad_out.shape(),
                    x.shape()
                ),
            ));
        }
        mm_at_b_accum(
            x.data(),
            grad_out.data(),
            rows,
            in_dim,
            out_dim,
            self.weight.grad_mut(),
        );
        {
            let bias_grad = self.bias.grad_mut();
            for row in grad_out.data().chunks(out_dim) {
                for (b, &g) in bias_grad.iter_mut().zip(row) {
                    *b += g;
                }
            }
        }
        let mut grad_in = Tensor::zeros(x.shape());
        mm_a_bt_accum(
            grad_out.data(),
            self.weight.data(),
            rows,
            in_dim,
            out_dim,
            grad_in.data_mut(),
        );
        Ok(grad_in)
    }

    pub fn zero_grads(&mut self) {
        self.weight.zero_grad();
        self.bias.zero_grad();
    }
}

/// Intermediate activations saved by [`TwoLayerMlp::forward`] for backward.
#[derive(Clone, Debug)]
pub struct MlpCache<T: Scalar> {
    /// First-layer output before the activation.
    pre: Tensor<T>,
    /// GELU of `pre`, the second layer's input.
    hidden: Tensor<T>,
}

/// second(gelu(first(x))): the only MLP shape the architecture uses.
#[derive(Clone, Debug)]
pub struct TwoLayerMlp<T: Scalar> {
    pub first: LinearLayer<T>,
    pub second: LinearLayer<T>,
}

impl<T: Scalar> TwoLayerMlp<T> {
    pub fn init(in_dim: usize, hidden_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        TwoLayerMlp {
            first: LinearLayer::init(in_dim, hidden_dim, rng),
            second: LinearLayer::init(hidden_dim, out_dim, rng),
        }
    }

    pub fn zeros(in_dim: usize, hidden_dim: usize, out_dim: usize) -> Self {
        TwoLayerMlp {
            first: LinearLayer::zeros(in_dim, hidden_dim),
            second: LinearLayer::zeros(hidden_dim, out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.first.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.second.out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.first.param_count() + self.second.param_count()
    }

    /// Forward pass returning the output and the cache backward needs.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, MlpCache<T>)> {
        let pre = self.first.forward(x)?;
        let hidden = gelu(&pre);
        let out = self.second.forward(&hidden)?;
        Ok((out, MlpCache { pre, hidden }))
    }

    /// Forward without keeping the cache.
    pub fn forward_only(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x)?.0)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(
        &mut self,
        x: &Tensor<T>,
        cache: &MlpCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let grad_hidden = self.second.backward(&cache.hidden, grad_out)?;
        let grad_pre = gelu_backward(&cache.pre, &grad_hidden)?;
        self.first.backward(x, &grad_pre)
    }

    pub fn zero_grads(&mut self) {
        self.first.zero_grads();
        self.second.zero_grads();
    }
}
