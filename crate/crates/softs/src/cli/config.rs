//! Run configuration: a JSON document mirroring the model and training
//! hyperparameters plus data paths, with every field overridable by a CLI
//! flag of the same name. Unknown keys are a hard error.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SplitSpec;
use crate::error::{Result, SoftsError};
use crate::model::ModelConfig;
use crate::star::PoolingKind;
use crate::train::TrainConfig;

/// The on-disk config document. Every field is optional; flags and defaults
/// fill the rest.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub split: Option<SplitSpec>,
    pub lookback: Option<usize>,
    pub horizon: Option<usize>,
    /// Channel count; inferred from the dataset when absent.
    pub channels: Option<usize>,
    pub hidden: Option<usize>,
    pub core: Option<usize>,
    pub layers: Option<usize>,
    pub pooling: Option<PoolingKind>,
    pub use_revin: Option<bool>,
    pub baseline: Option<bool>,
    pub seed: Option<u64>,
    pub lr0: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
}

impl RunConfig {
    /// Parses a JSON config file, rejecting unknown keys by name.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| SoftsError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| SoftsError::config(format!("in {}: {e}", path.display())))
    }

    /// Overlays `other` on top of `self`: any field set in `other` wins.
    pub fn overlay(mut self, other: RunConfig) -> RunConfig {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if other.$field.is_some() { self.$field = other.$field; })*
            };
        }
        take!(
            data, out, split, lookback, horizon, channels, hidden, core, layers, pooling,
            use_revin, baseline, seed, lr0, epochs, batch_size, patience
        );
        self
    }

    /// Resolves defaults into concrete model/train configs. `channels` comes
    /// from the config if set, otherwise from the dataset.
    pub fn resolve(&self, channels_from_data: Option<usize>) -> Result<ResolvedConfig> {
        let channels = match (self.channels, channels_from_data) {
            (Some(c), Some(d)) if c != d => {
                return Err(SoftsError::config(format!(
                    "config says {c} channels but the dataset has {d}"
                )));
            }
            (Some(c), _) => c,
            (None, Some(d)) => d,
            (None, None) => {
                return Err(SoftsError::config(
                    "channel count unknown: set channels or provide a dataset".to_string(),
                ));
            }
        };
        let seed = self.seed.unwrap_or(1);
        let model = ModelConfig {
            lookback: self.lookback.unwrap_or(96),
            horizon: self.horizon.unwrap_or(96),
            channels,
            hidden: self.hidden.unwrap_or(128),
            core: self.core.unwrap_or(64),
            layers: self.layers.unwrap_or(1),
            pooling: self.pooling.unwrap_or(PoolingKind::Stochastic),
            use_revin: self.use_revin.unwrap_or(true),
            baseline: self.baseline.unwrap_or(false),
            seed,
        };
        model.validate()?;
        let train = TrainConfig {
            lr0: self.lr0.unwrap_or(3e-4),
            epochs: self.epochs.unwrap_or(10),
            batch_size: self.batch_size.unwrap_or(32),
            patience: self.patience.unwrap_or(3),
            seed,
            ..TrainConfig::default()
        };
        train.validate()?;
        Ok(ResolvedConfig {
            model,
            train,
            split: self.split.clone().unwrap_or_default(),
            data: self.data.clone(),
            out: self.out.clone(),
        })
    }
}

/// Fully resolved configuration ready to drive a command.
#[derive(Clone, Debug)]
pub struct ResolvedConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn unknown_keys_are_named_in_the_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(br#"{"leraning_rate": 0.1}"#).unwrap();
        let err = RunConfig::from_file(&path).unwrap_err();
        assert_eq!(err.code(), "config");
        assert!(err.to_string().contains("leraning_rate"), "got: {err}");
    }

    #[test]
    fn overlay_prefers_the_override() {
        let base = RunConfig {
            lookback: Some(96),
            horizon: Some(96),
            ..RunConfig::default()
        };
        let flags = RunConfig {
            horizon: Some(192),
            ..RunConfig::default()
        };
        let merged = base.overlay(flags);
        assert_eq!(merged.lookback, Some(96));
        assert_eq!(merged.horizon, Some(192));
    }

    #[test]
    fn resolve_fills_defaults_and_infers_channels() {
        let cfg = RunConfig::default();
        let resolved = cfg.resolve(Some(7)).unwrap();
        assert_eq!(resolved.model.channels, 7);
        assert_eq!(resolved.model.lookback, 96);
        assert_eq!(resolved.train.lr0, 3e-4);
        assert_eq!(resolved.split, SplitSpec::default());
    }

    #[test]
    fn resolve_rejects_channel_disagreement() {
        let cfg = RunConfig {
            channels: Some(5),
            ..RunConfig::default()
        };
        assert_eq!(cfg.resolve(Some(7)).unwrap_err().code(), "config");
    }

    #[test]
    fn split_spec_round_trips_through_json() {
        let text = r#"{"split": {"counts": {"train": 8545, "val": 2881, "test": 2881}}}"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        assert_eq!(
            cfg.split,
            Some(SplitSpec::Counts {
                train: 8545,
                val: 2881,
                test: 2881
            })
        );
    }
}
