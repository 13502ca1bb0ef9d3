use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use cryostack::nn::ModelConfig;
use cryostack::pipeline::{FeatureConfig, PatchConfig};
use cryostack::synth::SynthConfig;
use cryostack::train::TrainConfig;
use cryostack::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Full,
    Tiny,
}

impl Preset {
    pub fn config(self) -> ModelConfig {
        match self {
            Preset::Desk => ModelConfig::desk(),
            Preset::Full => ModelConfig::full(),
            Preset::Tiny => ModelConfig::tiny(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FineTuneSettings {
    pub iterations: usize,
    /// Learning rate for fine-tuning; the training rate otherwise.
    pub learning_rate: Option<f64>,
}

impl Default for FineTuneSettings {
    fn default() -> Self {
        Self {
            iterations: 50,
            learning_rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImportanceSettings {
    pub seed: u64,
    pub repeats: usize,
}

impl Default for ImportanceSettings {
    fn default() -> Self {
        Self { seed: 0, repeats: 3 }
    }
}

/// Everything a run needs besides input paths. Read from a JSON file; every
/// key is optional and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Replaces every module seed when set.
    pub seed: Option<u64>,
    pub features: FeatureConfig,
    pub synth: SynthConfig,
    pub patch: PatchConfig,
    pub preset: Preset,
    /// Keys overriding the preset's model configuration.
    pub model: Map<String, Value>,
    pub train: TrainConfig,
    pub fine_tune: FineTuneSettings,
    pub importance: ImportanceSettings,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Preset with the `model` overrides applied.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let Value::Object(mut base) = serde_json::to_value(self.preset.config())? else {
            unreachable!("model configs serialize to objects")
        };
        for (k, v) in &self.model {
            if !base.contains_key(k) {
                return Err(Error::Config(format!("unknown model key `{k}`")));
            }
            base.insert(k.clone(), v.clone());
        }
        let cfg: ModelConfig = serde_json::from_value(Value::Object(base))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Pushes the global seed into every module.
    pub fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.synth.seed = s;
            self.patch.seed = s;
            self.train.seed = s;
            self.importance.seed = s;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        self.features.glcm.validate()?;
        let p = &self.patch;
        if p.patch_size == 0 || p.stride() == 0 || p.stride() > p.patch_size {
            return Err(Error::Config(format!(
                "patch_size {} and stride {} must satisfy 0 < stride <= patch_size",
                p.patch_size,
                p.stride()
            )));
        }
        if !(p.train_fraction > 0.0 && p.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must be in (0, 1)".into()));
        }
        if self.importance.repeats == 0 {
            return Err(Error::Config("importance.repeats must be >= 1".into()));
        }
        self.model_config().map(drop)
    }
}

/// The configuration a command actually ran with.
#[derive(Debug, Serialize)]
pub struct ResolvedRun<'a> {
    pub command: &'a str,
    pub inputs: Vec<(&'a str, String)>,
    pub config: &'a RunConfig,
    pub model: Option<ModelConfig>,
}
