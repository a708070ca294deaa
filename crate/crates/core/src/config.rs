//! Run configuration for the `train` command, stored as TOML. Relative paths
//! resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoder::DecoderConfig;
use crate::error::{invalid, Error, Result};
use crate::training::{LossWeights, OptimizerConfig, StageConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[serde(default = "one")]
    pub workers: usize,
    /// Directory of `scene_<seed>` folders.
    pub corpus: PathBuf,
    /// Stage table with one `[[stage]]` per row.
    pub schedule: PathBuf,
    /// Scenes with the highest seeds kept out of training.
    #[serde(default)]
    pub holdout: usize,
    /// Add the motion-reversed supervision tracks to dynamic scenes.
    #[serde(default = "yes")]
    pub augment: bool,
    #[serde(default = "keep")]
    pub keep_fraction: f64,
    /// Checkpoint to start from instead of a fresh decoder.
    #[serde(default)]
    pub init: Option<PathBuf>,
    pub decoder: DecoderConfig,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn keep() -> f64 {
    0.2
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return invalid("workers must be at least 1");
        }
        self.train_config().validate()
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        for p in [&mut cfg.corpus, &mut cfg.schedule] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = cfg.init.as_mut().filter(|p| p.is_relative()) {
            *p = base.join(&*p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn stages(&self) -> Result<StageConfig> {
        StageConfig::load(&self.schedule)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            weights: self.weights,
            optimizer: self.optimizer,
            keep_fraction: self.keep_fraction,
            seed: self.seed,
            ..TrainConfig::new(self.decoder.clone())
        }
    }

    /// The configuration used for the desk-scale reproduction.
    pub fn desk(corpus: PathBuf, schedule: PathBuf) -> Self {
        Self {
            seed: 0,
            workers: 1,
            corpus,
            schedule,
            holdout: 20,
            augment: true,
            keep_fraction: 0.2,
            init: None,
            decoder: DecoderConfig::desk(),
            weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_resolves_paths() {
        let cfg = RunConfig::desk("corpus".into(), "stages.toml".into());
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text, Path::new("/runs/a")).unwrap();
        assert_eq!(back.corpus, Path::new("/runs/a/corpus"));
        assert_eq!(back.schedule, Path::new("/runs/a/stages.toml"));
        assert_eq!(back.decoder, cfg.decoder);
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = RunConfig::desk("c".into(), "s".into());
        cfg.keep_fraction = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::desk("c".into(), "s".into());
        cfg.workers = 0;
        assert!(cfg.validate().is_err());
        let text = "bogus = 1\n".to_string() + &RunConfig::desk("c".into(), "s".into()).to_toml().unwrap();
        assert!(RunConfig::from_toml(&text, Path::new(".")).is_err());
    }
}
