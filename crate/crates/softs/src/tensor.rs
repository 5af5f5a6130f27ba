//! Minimal dense tensor with the exact operation set the forecaster needs.
//!
//! Every forward operation has a hand-written backward rule; there is no
//! autodiff tape. Storage is row-major and contiguous, rank 1 to 3, and every
//! op materializes its result. Training runs in `f32`; gradient-check tests
//! rerun the same graph in `f64` through the shared [`Scalar`] trait.

use std::fmt;
use std::sync::OnceLock;

use crate::error::{Result, SoftsError};

/// Floating-point element type for tensors: `f32` for training, `f64` for
/// the gradient-check oracle.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    /// The error function, used by the exact GELU.
    fn erf(self) -> Self;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

/// Dense row-major tensor of rank 1 to 3 with a lazily allocated gradient
/// buffer of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
            grad: None,
        }
    }

    /// Builds a tensor from existing data; the element count must match the
    /// shape product.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(SoftsError::shape(
                "from_vec",
                format!(
                    "shape {:?} implies {} elements, got {}",
                    shape,
                    n,
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// The gradient buffer, if one has been allocated.
    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Mutable value view paired with the immutable gradient view, for
    /// in-place optimizer updates.
    pub fn data_and_grad_mut(&mut self) -> (&mut [T], Option<&[T]>) {
        (&mut self.data, self.grad.as_deref())
    }

    /// The gradient buffer, allocated (zeroed) on first access.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    /// Adds `g` into the gradient buffer elementwise.
    pub fn accumulate_grad(&mut self, g: &[T]) {
        debug_assert_eq!(g.len(), self.data.len());
        let grad = self.grad_mut();
        for (dst, &src) in grad.iter_mut().zip(g) {
            *dst += src;
        }
    }

    /// Clears the gradient buffer to zero (keeping it allocated).
    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(T::zero());
        }
    }

    /// Reinterprets the same elements under a new shape with equal product.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor<T>> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }
}

/// Whether the `SOFTS_DEBUG_NANCHECK=1` per-op finiteness assertion is on.
/// Read once per process; only compiled into debug builds.
#[cfg(debug_assertions)]
fn nancheck_enabled() -> bool {
    static ENABLED: OnceLock<bool> = OnceLock::new();
    *ENABLED.get_or_init(|| std::env::var_os("SOFTS_DEBUG_NANCHECK").is_some_and(|v| v == "1"))
}

#[cfg(not(debug_assertions))]
#[allow(dead_code)]
fn nancheck_enabled() -> bool {
    false
}

/// Debug-mode assertion that an op produced only finite values. Compiled out
/// of release builds; in debug builds it is active only when
/// `SOFTS_DEBUG_NANCHECK=1` is set.
pub fn debug_check_finite<T: Scalar>(op: &str, t: &Tensor<T>) {
    #[cfg(debug_assertions)]
    {
        if nancheck_enabled() {
            if let Some(pos) = t.data.iter().position(|v| !v.is_finite()) {
                panic!(
                    "non-finite value {} at flat index {} produced by {}",
                    t.data[pos], pos, op
                );
            }
        }
    }
    #[cfg(not(debug_assertions))]
    {
        let _ = (op, t);
    }
}

/// Raw kernel: out[m×n] += a[m×k] · b[k×n]. `out` must be zeroed by the caller
/// when a plain product is wanted.
pub(crate) fn mm_accum<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
}

/// Raw kernel: out[k×n] += aᵀ[k×m] · g[m×n], with `a` stored as m×k.
pub(crate) fn mm_at_b_accum<T: Scalar>(
    a: &[T],
    g: &[T],
    m: usize,
    k: usize,
    n: usize,
    out: &mut [T],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &g_ij) in out_row.iter_mut().zip(g_row) {
                *o += a_ip * g_ij;
            }
        }
    }
}

/// Raw kernel: out[m×k] += g[m×n] · bᵀ[n×k], with `b` stored as k×n.
pub(crate) fn mm_a_bt_accum<T: Scalar>(
    g: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    out: &mut [T],
) {
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        let out_row = &mut out[i * k..(i + 1) * k];
        for (p, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&g_ij, &b_pj) in g_row.iter().zip(b_row) {
                acc += g_ij * b_pj;
            }
            *o += acc;
        }
    }
}

fn require_rank2<T: Scalar>(op: &str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(SoftsError::shape(
            op,
            format!("expected rank-2 tensor, got shape {other:?}"),
        )),
    }
}

/// Matrix product of two rank-2 tensors.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = require_rank2("matmul", a)?;
    let (k2, n) = require_rank2("matmul", b)?;
    if k != k2 {
        return Err(SoftsError::shape(
            "matmul",
            format!("inner extents disagree: {:?} × {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = Tensor::zeros(&[m, n]);
    mm_accum(a.data(), b.data(), m, k, n, out.data_mut());
    debug_check_finite("matmul", &out);
    Ok(out)
}

/// Gradients of `matmul(a, b)` given the output gradient: returns
/// (g·bᵀ, aᵀ·g). Callers accumulate these into operand grads as needed.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (m, k) = require_rank2("matmul_backward", a)?;
    let (_, n) = require_rank2("matmul_backward", b)?;
    if grad_out.shape() != [m, n] {
        return Err(SoftsError::shape(
            "matmul_backward",
            format!(
                "output grad shape {:?}, expected [{m}, {n}]",
                grad_out.shape()
            ),
        ));
    }
    let mut grad_a = Tensor::zeros(&[m, k]);
    let mut grad_b = Tensor::zeros(&[k, n]);
    mm_a_bt_accum(grad_out.data(), b.data(), m, k, n, grad_a.data_mut());
    mm_at_b_accum(a.data(), grad_out.data(), m, k, n, grad_b.data_mut());
    Ok((grad_a, grad_b))
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.39894228040143267794;

/// Standard-normal CDF via the error function.
fn phi<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::one() + (x * T::from_f64(FRAC_1_SQRT_2)).erf())
}

/// Elementwise exact GELU: x·Φ(x) with Φ the standard-normal CDF.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.iter().map(|&v| v * phi(v)).collect();
    let out = Tensor {
        shape: x.shape.clone(),
        data,
        grad: None,
    };
    debug_check_finite("gelu", &out);
    out
}

/// Gradient of GELU: Φ(x) + x·φ(x), applied to the upstream gradient.
pub fn gelu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(SoftsError::shape(
            "gelu_backward",
            format!(
                "input shape {:?} vs grad shape {:?}",
                x.shape(),
                grad_out.shape()
            ),
        ));
    }
    let half = T::from_f64(0.5);
    let inv_sqrt_2pi = T::from_f64(FRAC_1_SQRT_2PI);
    let data = x
        .iter()
        .zip(grad_out.iter())
        .map(|(&v, &g)| {
            let pdf = inv_sqrt_2pi * (-half * v * v).exp();
            g * (phi(v) + v * pdf)
        })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Decomposes a shape around `axis` into (outer, axis extent, inner) strides.
fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Softmax along one axis with max-subtraction stabilization; every slice
/// along the axis sums to 1.
pub fn softmax_over_axis<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(SoftsError::shape(
            "softmax_over_axis",
            format!("axis {} out of range for rank {}", axis, x.rank()),
        ));
    }
    let (outer, len, inner) = axis_strides(x.shape(), axis);
    let mut out = Tensor::zeros(x.shape());
    let src = x.data();
    let dst = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let mut max = src[at(0)];
            for k in 1..len {
                if src[at(k)] > max {
                    max = src[at(k)];
                }
            }
            let mut sum = T::zero();
            for k in 0..len {
                let e = (src[at(k)] - max).exp();
                dst[at(k)] = e;
                sum += e;
            }
            for k in 0..len {
                dst[at(k)] /= sum;
            }
        }
    }
    debug_check_finite("softmax_over_axis", &out);
    Ok(out)
}

/// Gradient of softmax given its output `y` and the upstream gradient:
/// dx = y ⊙ (g − Σ g·y) per slice along the axis.
pub fn softmax_backward<T: Scalar>(
    y: &Tensor<T>,
    grad_out: &Tensor<T>,
    axis: usize,
) -> Result<Tensor<T>> {
    if y.shape() != grad_out.shape() {
        return Err(SoftsError::shape(
            "softmax_backward",
            format!(
                "softmax shape {:?} vs grad shape {:?}",
                y.shape(),
                grad_out.shape()
            ),
        ));
    }
    if axis >= y.rank() {
        return Err(SoftsError::shape(
            "softmax_backward",
            format!("axis {} out of range for rank {}", axis, y.rank()),
        ));
    }
    let (outer, len, inner) = axis_strides(y.shape(), axis);
    let mut out = Tensor::zeros(y.shape());
    let yv = y.data();
    let gv = grad_out.data();
    let dst = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let mut dot = T::zero();
            for k in 0..len {
                dot += gv[at(k)] * yv[at(k)];
            }
            for k in 0..len {
                dst[at(k)] = yv[at(k)] * (gv[at(k)] - dot);
            }
        }
    }
    Ok(out)
}

/// Swaps the last two axes of a rank-3 tensor (B×a×b → B×b×a).
pub fn transpose_12<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, r, c) = match x.shape() {
        [b, r, c] => (*b, *r, *c),
        other => {
            return Err(SoftsError::shape(
                "transpose_12",
                format!("expected rank-3 tensor, got shape {other:?}"),
            ))
        }
    };
    let mut out = Tensor::zeros(&[b, c, r]);
    let src = x.data();
    let dst = out.data_mut();
    for bi in 0..b {
        let s = &src[bi * r * c..(bi + 1) * r * c];
        let d = &mut dst[bi * r * c..(bi + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                d[j * r + i] = s[i * c + j];
            }
        }
    }
    Ok(out)
}

/// Central-difference gradient check in `f64`: evaluates `f` at x ± h·eᵢ for
/// every component and returns the max over components of
/// |analytic − central| / (|analytic| + |central| + 1e-8).
pub fn grad_check<F>(f: F, x: &Tensor<f64>, analytic_grad: &[f64], h: f64) -> f64
where
    F: Fn(&Tensor<f64>) -> f64,
{
    assert_eq!(
        analytic_grad.len(),
        x.len(),
        "analytic gradient length must match the probed tensor"
    );
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        let central = (up - down) / (2.0 * h);
        let a = analytic_grad[i];
        let rel = (a - central).abs() / (a.abs() + central.abs() + 1e-8);
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        let err = Tensor::<f32>::from_vec(&[2, 3], vec![1.0; 5]).unwrap_err();
        assert_eq!(err.code(), "shape");
    }

    #[test]
    fn matmul_identity_is_bit_exact() {
        let i = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(matmul(&i, &b).unwrap().data(), b.data());
        assert_eq!(matmul(&b, &i).unwrap().data(), b.data());
    }

    #[test]
    fn matmul_row_times_column() {
        let a = Tensor::<f32>::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap();
        let out = matmul(&a, &b).unwrap();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.data()[0], 11.0);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_tensor(&[3, 4], &mut rng);
        let b = random_tensor(&[4, 2], &mut rng);
        let out = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for p in 0..4 {
                    acc += a.data()[i * 4 + p] * b.data()[p * 2 + j];
                }
                assert!((out.data()[i * 2 + j] - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[4, 5]);
        let err = matmul(&a, &b).unwrap_err();
        let text = err.to_string();
        assert!(
            text.contains("[2, 3]") && text.contains("[4, 5]"),
            "got: {text}"
        );
    }

    #[test]
    fn gelu_known_values() {
        let x = Tensor::<f64>::from_vec(&[3], vec![0.0, 1.0, -10.0]).unwrap();
        let y = gelu(&x);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 0.8413447460685429).abs() < 1e-12);
        assert!(y.data()[2].abs() < 1e-6);
    }

    #[test]
    fn gelu_is_monotone_on_the_increasing_region() {
        let mut prev = f64::NEG_INFINITY;
        for step in 0..=3000 {
            let x = -0.7 + step as f64 * 0.01;
            let y = gelu(&Tensor::from_vec(&[1], vec![x]).unwrap()).data()[0];
            assert!(y >= prev - 1e-7, "gelu not monotone at x={x}");
            prev = y;
        }
    }

    #[test]
    fn softmax_symmetric_pair_is_half_half() {
        let x = Tensor::<f64>::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let y = softmax_over_axis(&x, 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_closed_form_pair() {
        let x = Tensor::<f64>::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let y = softmax_over_axis(&x, 0).unwrap();
        assert!((y.data()[0] - 0.7310585786300049).abs() < 1e-12);
        assert!((y.data()[1] - 0.2689414213699951).abs() < 1e-12);
    }

    #[test]
    fn softmax_extreme_magnitudes_stay_finite() {
        let x = Tensor::<f64>::from_vec(&[2], vec![1000.0, 0.0]).unwrap();
        let y = softmax_over_axis(&x, 0).unwrap();
        assert!(y.data().iter().all(|v| v.is_finite()));
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(y.data()[1].abs() < 1e-12);
    }

    #[test]
    fn softmax_axis_out_of_range() {
        let x = Tensor::<f64>::zeros(&[2, 3]);
        assert_eq!(softmax_over_axis(&x, 2).unwrap_err().code(), "shape");
    }

    #[test]
    fn softmax_middle_axis_slices_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_tensor(&[2, 5, 3], &mut rng);
        let y = softmax_over_axis(&x, 1).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                let sum: f64 = (0..5).map(|k| y.data()[(o * 5 + k) * 3 + i]).sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn transpose_12_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&[2, 3, 4], &mut rng);
        let t = transpose_12(&x).unwrap();
        assert_eq!(t.shape(), &[2, 4, 3]);
        assert_eq!(t.data()[0 * 12 + 1 * 3 + 2], x.data()[0 * 12 + 2 * 4 + 1]);
        let back = transpose_12(&t).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn grad_check_sum_of_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&[2, 3], &mut rng);
        let analytic: Vec<f64> = x.iter().map(|&v| 2.0 * v).collect();
        let err = grad_check(|t| t.iter().map(|&v| v * v).sum(), &x, &analytic, 1e-4);
        assert!(err < 1e-7, "sum-of-squares grad error {err}");
    }

    #[test]
    fn grad_check_sum_of_gelu() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor(&[2, 4], &mut rng);
        let ones = Tensor::from_vec(x.shape(), vec![1.0; x.len()]).unwrap();
        let analytic = gelu_backward(&x, &ones).unwrap();
        let err = grad_check(|t| gelu(t).iter().copied().sum(), &x, analytic.data(), 1e-3);
        assert!(err < 1e-5, "gelu grad error {err}");
    }

    #[test]
    fn matmul_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_tensor(&[3, 4], &mut rng);
        let b = random_tensor(&[4, 2], &mut rng);
        // Scalar objective: sum of all product entries, so grad_out is ones.
        let grad_out = Tensor::from_vec(&[3, 2], vec![1.0; 6]).unwrap();
        let (ga, gb) = matmul_backward(&a, &b, &grad_out).unwrap();
        let err_a = grad_check(
            |t| matmul(t, &b).unwrap().iter().copied().sum(),
            &a,
            ga.data(),
            1e-5,
        );
        let err_b = grad_check(
            |t| matmul(&a, t).unwrap().iter().copied().sum(),
            &b,
            gb.data(),
            1e-5,
        );
        assert!(
            err_a < 1e-7 && err_b < 1e-7,
            "matmul grad errors {err_a}, {err_b}"
        );
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_tensor(&[4], &mut rng);
        // Weighted-sum objective with fixed coefficients keeps f scalar.
        let coeffs = [0.3, -1.1, 0.7, 0.4];
        let f = |t: &Tensor<f64>| {
            let y = softmax_over_axis(t, 0).unwrap();
            y.iter().zip(coeffs.iter()).map(|(&v, &c)| v * c).sum()
        };
        let y = softmax_over_axis(&x, 0).unwrap();
        let grad_out = Tensor::from_vec(&[4], coeffs.to_vec()).unwrap();
        let analytic = softmax_backward(&y, &grad_out, 0).unwrap();
        let err = grad_check(f, &x, analytic.data(), 1e-5);
        assert!(err < 1e-7, "softmax grad error {err}");
    }

    #[test]
    fn grad_buffer_is_lazy_and_accumulates() {
        let mut t = Tensor::<f32>::zeros(&[2]);
        assert!(t.grad().is_none());
        t.accumulate_grad(&[1.0, 2.0]);
        t.accumulate_grad(&[0.5, 0.5]);
        assert_eq!(t.grad().unwrap(), &[1.5, 2.5]);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0]);
    }
}
