use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fusion::ModelConfig;
use crate::numerics::OptimConfig;
use crate::preprocess::PreprocessConfig;
use crate::synth::CohortConfig;
use crate::training::{LossConfig, TrainConfig};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "TPRS_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Full-size backbones; for shape checks, too slow to train here.
    PaperScale,
    /// Small backbones that train in minutes on a CPU.
    DeskScale,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Everything a run needs. Files name a `preset` and override any subset of
/// its fields; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Master seed; copied into `train.seed` on load.
    pub seed: u64,
    /// Monte-Carlo dropout at prediction time.
    pub bayesian: bool,
    pub model: ModelConfig,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub cohort: CohortConfig,
    #[serde(default)]
    pub paths: Paths,
}

impl RunConfig {
    pub fn desk() -> Self {
        let model = ModelConfig::desk();
        Self {
            preset: Preset::DeskScale,
            seed: 42,
            bayesian: true,
            preprocess: PreprocessConfig {
                target_size: model.cnn.input_size,
                denoise_sigma: 1.0,
                ..Default::default()
            },
            model,
            train: TrainConfig {
                batch_size: 8,
                ..Default::default()
            },
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            cohort: CohortConfig::default(),
            paths: Paths::default(),
        }
    }

    pub fn paper() -> Self {
        let model = ModelConfig::paper();
        Self {
            preset: Preset::PaperScale,
            seed: 42,
            bayesian: true,
            preprocess: PreprocessConfig {
                target_size: model.cnn.input_size,
                ..Default::default()
            },
            cohort: CohortConfig {
                image_size: model.cnn.input_size,
                ..Default::default()
            },
            model,
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            paths: Paths::default(),
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::PaperScale => Self::paper(),
            Preset::DeskScale => Self::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.preprocess.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        self.cohort.validate()?;
        if self.preprocess.target_size != self.model.cnn.input_size {
            return Err(Error::config(format!(
                "preprocess.target_size {} differs from the model input size {}",
                self.preprocess.target_size, self.model.cnn.input_size
            )));
        }
        if self.train.seed != self.seed {
            return Err(Error::config("train.seed must equal seed"));
        }
        Ok(())
    }

    /// Parses overrides on top of the preset they name (desk-scale by default).
    pub fn from_value(overrides: Value) -> Result<Self> {
        let Value::Object(map) = &overrides else {
            return Err(Error::config("configuration must be a table of sections"));
        };
        let preset = match map.get("preset") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::config(format!("preset: {e}")))?,
            None => Preset::DeskScale,
        };
        let mut base = serde_json::to_value(Self::preset(preset)).map_err(|e| Error::config(e.to_string()))?;
        merge(&mut base, overrides);
        let mut cfg: Self = serde_json::from_value(base).map_err(|e| Error::config(e.to_string()))?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(s).map_err(|e| Error::config(format!("TOML: {e}")))?;
        Self::from_value(serde_json::to_value(table).map_err(|e| Error::config(e.to_string()))?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(s).map_err(|e| Error::config(format!("JSON: {e}")))?)
    }

    /// Reads JSON when the extension is `.json`, TOML otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        };
        parsed.map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Applies a `TPRS_SEED` value if one is given.
    pub fn with_seed_override(mut self, value: Option<&str>) -> Result<Self> {
        if let Some(v) = value {
            let seed: u64 = v
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("{SEED_ENV}='{v}' is not an unsigned integer")))?;
            self.seed = seed;
            self.train.seed = seed;
        }
        Ok(self)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}
