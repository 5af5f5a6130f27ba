//! A self-contained multivariate time-series forecasting engine.
//!
//! The model embeds each channel's lookback window with a single linear map,
//! exchanges information across channels through stacked
//! aggregate-redistribute blocks (project, pool into a shared core,
//! concatenate the core back onto every channel, fuse, residual), and
//! predicts the whole horizon with a linear head — all wrapped in reversible
//! instance normalization. Training uses Adam with a cosine learning-rate
//! schedule on sliding-window CSV datasets, and a benchmark mode verifies
//! that cost stays linear in the channel count.
//!
//! Crate layout:
//! - [`tensor`]: dense tensors with paired forward/backward ops and a
//!   finite-difference gradient oracle.
//! - [`nn`]: linear layer and two-layer GELU MLP.
//! - [`star`]: the aggregate-redistribute block and its pooling strategies.
//! - [`model`]: the assembled forecaster plus reversible instance
//!   normalization.
//! - [`data`]: CSV loading, standardization, splits, sliding windows.
//! - [`train`]: loss, Adam, cosine schedule, fit/evaluate.
//! - [`cli`]: the `softs` command-line front end, config resolution, the
//!   checkpoint format, and the scaling benchmark.

pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod star;
pub mod tensor;
pub mod train;

pub use error::{Result, SoftsError};
