//! TOML pipeline configuration shared by every subcommand.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{default_thresholds, BenchmarkSpec, DecodeConfig, ExperimentSetup, InferConfig, NmsConfig};
use crate::losses::LossConfig;
use crate::model::{ModelConfig, TcmVariant};
use crate::targets::AssignConfig;
use crate::trainer::{SyntheticSpec, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub thresholds: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            thresholds: default_thresholds(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSection {
    pub train_videos: usize,
    pub val_videos: usize,
    pub seeds: Vec<u64>,
    pub variants: Vec<TcmVariant>,
    pub kernels: Vec<usize>,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection {
            train_videos: 12,
            val_videos: 6,
            seeds: (0..5).collect(),
            variants: TcmVariant::ALL.to_vec(),
            kernels: vec![3, 4, 5, 6],
        }
    }
}

/// Every knob of the pipeline. Missing keys take their defaults; unknown
/// keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// When set, overrides `data.seed` and `train.seed`.
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub assign: AssignConfig,
    pub loss: LossConfig,
    pub data: SyntheticSpec,
    pub decode: DecodeConfig,
    pub nms: NmsConfig,
    pub eval: EvalSection,
    pub benchmark: BenchmarkSection,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(format!("{origin}: {}", e.message())))?;
        let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            file: origin.to_owned(),
            path: e.path().to_string(),
            reason: e.inner().message().to_owned(),
        })?;
        Ok(cfg.resolved())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("serializable config")
    }

    /// Applies the top-level seed.
    pub fn resolved(mut self) -> Self {
        if let Some(seed) = self.seed {
            self.data.seed = seed;
            self.train.seed = seed;
        }
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if seed.is_some() {
            self.seed = seed;
        }
        self.resolved()
    }

    pub fn infer(&self) -> InferConfig {
        InferConfig {
            decode: self.decode.clone(),
            nms: self.nms.clone(),
        }
    }

    /// Model config with input and class dimensions taken from the data spec.
    pub fn model_for_data(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.data.input_dim,
            num_classes: self.data.num_classes,
            ..self.model.clone()
        }
    }

    pub fn experiment_setup(&self) -> ExperimentSetup {
        ExperimentSetup {
            benchmark: BenchmarkSpec {
                data: self.data.clone(),
                train_videos: self.benchmark.train_videos,
                val_videos: self.benchmark.val_videos,
                thresholds: self.eval.thresholds.clone(),
            },
            train: self.train.clone(),
            assign: self.assign.clone(),
            loss: self.loss.clone(),
            infer: self.infer(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        self.data.validate()?;
        self.assign.ranges(self.model.num_levels)?;
        if self.eval.thresholds.is_empty() || self.eval.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config(
                "eval.thresholds must be a non-empty list in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}
