//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::backbone::{BackboneKind, BackboneSpec};
use crate::classifiers::ClassifierTrainConfig;
use crate::data::SyntheticSpec;
use crate::peft::PeftTrainConfig;

/// How test predictions are produced from the trained state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// Expertise-weighted average: task block `t` averages subspaces `0..=t`.
    Aee,
    /// Plain average over every subspace.
    Se,
    /// First subspace only.
    Noe,
    /// Frozen per-task heads in their own subspaces, logits concatenated.
    Misaligned,
    /// Only the first module is ever trained; one aligned classifier.
    NaiveBase,
}

impl EnsembleMode {
    pub const ALL: [EnsembleMode; 5] = [Self::Aee, Self::Se, Self::Noe, Self::Misaligned, Self::NaiveBase];

    pub fn name(self) -> &'static str {
        match self {
            Self::Aee => "aee",
            Self::Se => "se",
            Self::Noe => "noe",
            Self::Misaligned => "misaligned",
            Self::NaiveBase => "naive_base",
        }
    }
}

impl std::fmt::Display for EnsembleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// What the aligned classifiers contribute to the ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    #[default]
    Probabilities,
    Logits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StreamConfig {
    /// Seeded by the run seed.
    Synthetic(SyntheticSpec),
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        tasks: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        first_task: Option<usize>,
        #[serde(default)]
        pretrain_classes: usize,
        /// Seed for the class order; the run seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shuffle_seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default)]
    pub scores: ScoreKind,
    /// Also evaluate the expertise ensemble with 1..=T subspaces after the
    /// last task.
    #[serde(default = "yes")]
    pub expertise: bool,
}

fn yes() -> bool {
    true
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            scores: ScoreKind::default(),
            expertise: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub modes: Vec<EnsembleMode>,
    /// Rotation-loss weights; empty means the `[peft]` value only.
    #[serde(default)]
    pub alphas: Vec<f64>,
}

fn default_seeds() -> Vec<u64> {
    vec![1993, 1994, 1995]
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            modes: Vec::new(),
            alphas: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: EnsembleMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub stream: StreamConfig,
    pub backbone: BackboneSpec,
    #[serde(default)]
    pub peft: PeftTrainConfig,
    #[serde(default)]
    pub classifier: ClassifierTrainConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: Self = toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let config = config.resolve_paths(path.parent().unwrap_or(Path::new("")));
        config.validate()?;
        Ok(config)
    }

    /// Makes relative IDX paths relative to `base`.
    fn resolve_paths(mut self, base: &Path) -> Self {
        if let StreamConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } = &mut self.stream
        {
            for p in [train_images, train_labels, test_images, test_labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        self
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config values are always representable in TOML")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        match &self.stream {
            StreamConfig::Synthetic(spec) => {
                spec.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
                if self.peft.alpha > 0.0 {
                    return bad("the rotation loss needs image inputs; synthetic streams are vectors".into());
                }
            }
            StreamConfig::Idx { tasks, .. } => {
                if *tasks == 0 {
                    return bad("an IDX stream needs at least one task".into());
                }
            }
        }
        if self.backbone.dim == 0 {
            return bad("backbone dim must be positive".into());
        }
        if self.backbone.kind == BackboneKind::PretrainedMlp && self.pretrain_classes() == 0 {
            return bad("a pretrained backbone needs pretrain_classes > 0 in [stream]".into());
        }
        if self.peft.rank == 0 || self.peft.rank > self.backbone.dim {
            return bad(format!(
                "peft rank {} must lie in 1..={}",
                self.peft.rank, self.backbone.dim
            ));
        }
        self.peft.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.classifier.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.sweep.seeds.is_empty() {
            return bad("sweep needs at least one seed".into());
        }
        if self.sweep.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("sweep alphas must be finite and non-negative".into());
        }
        Ok(())
    }

    fn pretrain_classes(&self) -> usize {
        match &self.stream {
            StreamConfig::Synthetic(spec) => spec.pretrain_classes,
            StreamConfig::Idx { pretrain_classes, .. } => *pretrain_classes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
mode = "aee"

[stream]
kind = "synthetic"
tasks = 3
classes_per_task = 4
input_dim = 12
block_dims = 4
noise = 0.3
per_class = 10

[backbone]
kind = "random_projection"
dim = 16

[peft]
rank = 4
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.classifier, ClassifierTrainConfig::default());
        assert_eq!(c.peft.epochs, PeftTrainConfig::default().epochs);
        assert_eq!(c.ensemble.scores, ScoreKind::Probabilities);
        assert_eq!(c.sweep.seeds, vec![1993, 1994, 1995]);
    }

    #[test]
    fn echo_round_trips() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml_str(&format!("{MINIMAL}\n[classifier]\nlearning_rate = 1.0\n")).is_err());
        assert!(ExperimentConfig::from_toml_str(&MINIMAL.replace("rank = 4", "rank = 40")).is_err());
        assert!(ExperimentConfig::from_toml_str(&MINIMAL.replace("rank = 4", "rank = 4\nalpha = 0.1")).is_err());
        assert!(ExperimentConfig::from_toml_str(&MINIMAL.replace("\"aee\"", "\"best\"")).is_err());
    }

    #[test]
    fn idx_paths_resolve_against_config_dir() {
        let text = r#"
seed = 1
mode = "noe"
[stream]
kind = "idx"
train_images = "data/train-images"
train_labels = "data/train-labels"
test_images = "/abs/test-images"
test_labels = "data/test-labels"
tasks = 5
[backbone]
kind = "random_projection"
dim = 8
[peft]
rank = 2
"#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, text).unwrap();
        let c = ExperimentConfig::load(&path).unwrap();
        match c.stream {
            StreamConfig::Idx {
                train_images,
                test_images,
                ..
            } => {
                assert_eq!(train_images, dir.path().join("data/train-images"));
                assert_eq!(test_images, PathBuf::from("/abs/test-images"));
            }
            _ => panic!("expected idx stream"),
        }
    }
}
