//! Finite-difference verification of the whole model's parameter gradients,
//! in 64-bit, across every pooling kind, with and without normalization, and
//! for the channel-independent baseline. Stochastic pooling in training mode
//! is checked conditionally on its recorded channel samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use softs::model::{ModelConfig, SoftsModel};
use softs::star::PoolingKind;
use softs::tensor::{grad_check, Tensor};

const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

fn small_config(pooling: PoolingKind, use_revin: bool, baseline: bool) -> ModelConfig {
    ModelConfig {
        lookback: 6,
        horizon: 3,
        channels: 4,
        hidden: 8,
        core: 5,
        layers: 2,
        pooling,
        use_revin,
        baseline,
        seed: 11,
    }
}

fn random_input(config: &ModelConfig, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, config.lookback, config.channels];
    let len: usize = shape.iter().product();
    Tensor::from_vec(
        &shape,
        (0..len).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

fn sum_of_squares(t: &Tensor<f64>) -> f64 {
    t.iter().map(|&v| v * v).sum()
}

/// Builds a model, differentiates a sum-of-squares loss through the library
/// backward, then verifies every parameter tensor against central
/// differences of an inference forward.
fn infer_case(pooling: PoolingKind, use_revin: bool, baseline: bool) {
    let config = small_config(pooling, use_revin, baseline);
    let x = random_input(&config, 3);
    let model = SoftsModel::<f64>::init(&config).unwrap();

    let (out, trace) = {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        model.forward(&x, false, &mut rng).unwrap()
    };
    let grad_out = Tensor::from_vec(out.shape(), out.iter().map(|&v| 2.0 * v).collect()).unwrap();
    let mut work = model.clone();
    work.zero_grads();
    work.backward(&trace, &grad_out).unwrap();

    let names: Vec<String> = work.named_params().iter().map(|(n, _)| n.clone()).collect();
    let grads: Vec<Vec<f64>> = work
        .named_params()
        .iter()
        .map(|(_, t)| t.grad().expect("grad present").to_vec())
        .collect();

    let label = format!("{pooling} pooling, revin={use_revin}, baseline={baseline}");
    for (idx, name) in names.iter().enumerate() {
        let base = model.named_params()[idx].1.clone();
        let err = grad_check(
            |probe| {
                let mut perturbed = model.clone();
                perturbed.params_mut()[idx]
                    .data_mut()
                    .copy_from_slice(probe.data());
                sum_of_squares(&perturbed.predict(&x).unwrap())
            },
            &base,
            &grads[idx],
            STEP,
        );
        assert!(
            err < TOLERANCE,
            "{label}: parameter {name} relative error {err}"
        );
    }
}

#[test]
fn mean_pooling_parameter_gradients() {
    infer_case(PoolingKind::Mean, true, false);
}

#[test]
fn max_pooling_parameter_gradients() {
    infer_case(PoolingKind::Max, true, false);
}

#[test]
fn weighted_pooling_parameter_gradients() {
    infer_case(PoolingKind::Weighted, true, false);
}

#[test]
fn stochastic_test_mode_parameter_gradients() {
    infer_case(PoolingKind::Stochastic, true, false);
}

#[test]
fn no_revin_parameter_gradients() {
    infer_case(PoolingKind::Mean, false, false);
}

#[test]
fn baseline_parameter_gradients() {
    infer_case(PoolingKind::Mean, true, true);
}

#[test]
fn stochastic_train_mode_gradients_conditional_on_samples() {
    let config = small_config(PoolingKind::Stochastic, true, false);
    let x = random_input(&config, 17);
    let model = SoftsModel::<f64>::init(&config).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (out, trace) = model.forward(&x, true, &mut rng).unwrap();
    let samples: Vec<Vec<usize>> = trace
        .sampled_channels()
        .into_iter()
        .map(|s| s.expect("stochastic training records samples").to_vec())
        .collect();

    // Replaying the recorded samples must reproduce the stochastic pass.
    let (replayed, _) = model.forward_replay(&x, &samples).unwrap();
    assert_eq!(replayed.data(), out.data());

    let grad_out = Tensor::from_vec(out.shape(), out.iter().map(|&v| 2.0 * v).collect()).unwrap();
    let mut work = model.clone();
    work.zero_grads();
    work.backward(&trace, &grad_out).unwrap();

    let names: Vec<String> = work.named_params().iter().map(|(n, _)| n.clone()).collect();
    let grads: Vec<Vec<f64>> = work
        .named_params()
        .iter()
        .map(|(_, t)| t.grad().expect("grad present").to_vec())
        .collect();

    for (idx, name) in names.iter().enumerate() {
        let base = model.named_params()[idx].1.clone();
        let err = grad_check(
            |probe| {
                let mut perturbed = model.clone();
                perturbed.params_mut()[idx]
                    .data_mut()
                    .copy_from_slice(probe.data());
                sum_of_squares(&perturbed.forward_replay(&x, &samples).unwrap().0)
            },
            &base,
            &grads[idx],
            STEP,
        );
        assert!(
            err < TOLERANCE,
            "stochastic train: parameter {name} relative error {err}"
        );
    }
}
