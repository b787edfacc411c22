use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::ClassifierConfig;
use crate::error::{Error, Result};
use crate::stylegen::GanTrainConfig;
use crate::synthgen::{default_experiment_cells, CellCounts, CellTable, FactorConfig, MixingConfig};
use crate::traverse::{StarterCriteria, TraversalConfig};

/// How augmentation targets are chosen for each (subgroup, label) cell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy", deny_unknown_fields)]
pub enum AugmentationPolicy {
    /// Fill each subgroup's AMD cell up to that subgroup's healthy count.
    #[default]
    MatchSubgroupHealthy,
    /// Fill every cell up to the largest cell.
    MatchMaxCell,
    /// Explicit per-cell targets.
    Explicit { targets: CellTable },
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub policy: AugmentationPolicy,
    /// Total starters that may be traversed across all cells.
    pub max_starters: usize,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            policy: AugmentationPolicy::default(),
            max_starters: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub cells: CellCounts,
    pub factors: FactorConfig,
    pub mixing: MixingConfig,
    pub gan: GanTrainConfig,
    pub image_classifier: ClassifierConfig,
    pub latent_classifier: ClassifierConfig,
    /// Generator samples labeled to train the style-space classifiers.
    pub latent_samples: usize,
    pub diagnostic: ClassifierConfig,
    pub starters: StarterCriteria,
    pub traversal: TraversalConfig,
    pub augmentation: AugmentationConfig,
    pub bootstrap_replicates: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            cells: default_experiment_cells(),
            factors: FactorConfig::default(),
            mixing: MixingConfig::default(),
            gan: GanTrainConfig::default(),
            image_classifier: ClassifierConfig::default(),
            latent_classifier: ClassifierConfig::default(),
            latent_samples: 4096,
            diagnostic: ClassifierConfig::default(),
            starters: StarterCriteria::default(),
            traversal: TraversalConfig::default(),
            augmentation: AugmentationConfig::default(),
            bootstrap_replicates: 1000,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.factors.validate()?;
        self.gan.validate()?;
        self.image_classifier.validate()?;
        self.latent_classifier.validate()?;
        self.diagnostic.validate()?;
        self.starters.validate()?;
        self.traversal.validate()?;
        if self.gan.shape.x_dim != crate::synthgen::FEATURE_DIM {
            return Err(Error::Config(format!(
                "generator output width {} must equal the feature width {}",
                self.gan.shape.x_dim,
                crate::synthgen::FEATURE_DIM
            )));
        }
        if self.mixing.noise < 0.0 {
            return Err(Error::Config("mixing noise must be >= 0".into()));
        }
        if self.latent_samples == 0 {
            return Err(Error::Config("latent_samples must be positive".into()));
        }
        if self.cells.test.total() == 0 {
            return Err(Error::Config("the test partition must not be empty".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_losslessly() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(ExperimentConfig::from_json(r#"{"seed": 1, "sede": 2}"#), Err(Error::Config(_))));
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"traversal": {"step": 0.1}}"#),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"seed": 7, "augmentation": {"policy": {"policy": "match-max-cell"}}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.augmentation.policy, AugmentationPolicy::MatchMaxCell);
        assert_eq!(cfg.traversal, TraversalConfig::default());
    }

    #[test]
    fn invalid_subconfig_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"traversal": {"threshold": 0.4}}"#).is_err());
    }
}
