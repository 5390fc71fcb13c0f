use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tinyhr::bench::{PowerModel, DEFAULT_POWER_MW, MIN_REPEATS};
use tinyhr::data::{DEFAULT_ABNORMAL_FRACTION, DEFAULT_FRAME_COUNT, MIN_FRAME_COUNT};
use tinyhr::models::{BundleConfig, RegressorVariant, DEFAULT_GATE_THRESHOLD};
use tinyhr::{FilterSpec, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n: usize,
    pub abnormal_fraction: f64,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n: DEFAULT_FRAME_COUNT,
            abnormal_fraction: DEFAULT_ABNORMAL_FRACTION,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSection {
    pub upsampler: TrainConfig,
    pub classifier: TrainConfig,
    pub regressor: TrainConfig,
    pub regressor_variant: RegressorVariant,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            upsampler: TrainConfig::upsampler(),
            classifier: TrainConfig::classifier(),
            regressor: TrainConfig::regressor(),
            regressor_variant: RegressorVariant::Cnn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub gate_threshold: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            gate_threshold: DEFAULT_GATE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub repeats: usize,
    pub power_mw: f64,
    /// Test frames used for latency measurement.
    pub latency_frames: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            repeats: MIN_REPEATS,
            power_mw: DEFAULT_POWER_MW,
            latency_frames: 200,
        }
    }
}

/// The experiment configuration. Every section and key is optional and
/// falls back to the defaults; unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Config {
    pub data: DataSection,
    pub filters: FilterSpec,
    pub train: TrainSection,
    pub pipeline: PipelineSection,
    pub bench: BenchSection,
}

const SECTIONS: [&str; 5] = ["data", "filters", "train", "pipeline", "bench"];
const TRAIN_KEYS: [&str; 4] = ["upsampler", "classifier", "regressor", "regressor_variant"];

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn section<T: serde::de::DeserializeOwned + Default>(
    name: &str,
    v: Option<&Value>,
) -> Result<T, CliError> {
    match v {
        None => Ok(T::default()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| invalid(format!("{name}: {e}"))),
    }
}

/// Overlays the keys of `patch` on the serialized `base`, then re-parses,
/// so a partial section keeps the defaults for the keys it omits.
fn patched(name: &str, base: &TrainConfig, patch: Option<&Value>) -> Result<TrainConfig, CliError> {
    let Some(patch) = patch else {
        return Ok(base.clone());
    };
    let Value::Object(over) = patch else {
        return Err(invalid(format!("train.{name} must be an object")));
    };
    let mut merged = serde_json::to_value(base).expect("TrainConfig serializes");
    let obj = merged
        .as_object_mut()
        .expect("struct serializes to an object");
    for (k, v) in over {
        obj.insert(k.clone(), v.clone());
    }
    serde_json::from_value(merged).map_err(|e| invalid(format!("train.{name}: {e}")))
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let root: Value =
            serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        let Value::Object(root) = root else {
            return Err(invalid("config must be a JSON object"));
        };
        if let Some(k) = root.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(invalid(format!("unknown config section `{k}`")));
        }
        let train = match root.get("train") {
            None => TrainSection::default(),
            Some(Value::Object(t)) => {
                if let Some(k) = t.keys().find(|k| !TRAIN_KEYS.contains(&k.as_str())) {
                    return Err(invalid(format!("unknown key `train.{k}`")));
                }
                let d = TrainSection::default();
                TrainSection {
                    upsampler: patched("upsampler", &d.upsampler, t.get("upsampler"))?,
                    classifier: patched("classifier", &d.classifier, t.get("classifier"))?,
                    regressor: patched("regressor", &d.regressor, t.get("regressor"))?,
                    regressor_variant: match t.get("regressor_variant") {
                        None => d.regressor_variant,
                        Some(v) => serde_json::from_value(v.clone())
                            .map_err(|e| invalid(format!("train.regressor_variant: {e}")))?,
                    },
                }
            }
            Some(_) => return Err(invalid("train must be an object")),
        };
        let config = Config {
            data: section("data", root.get("data"))?,
            filters: section("filters", root.get("filters"))?,
            train,
            pipeline: section("pipeline", root.get("pipeline"))?,
            bench: section("bench", root.get("bench"))?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| invalid(format!("{}: {e}", p.display())))?;
                Self::from_json(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        if d.n < MIN_FRAME_COUNT {
            return Err(invalid(format!(
                "data.n must be at least {MIN_FRAME_COUNT}, got {}",
                d.n
            )));
        }
        if !(0.0..=1.0).contains(&d.abnormal_fraction) {
            return Err(invalid(format!(
                "data.abnormal_fraction must lie in [0, 1], got {}",
                d.abnormal_fraction
            )));
        }
        self.filters
            .validate()
            .map_err(|e| invalid(format!("filters: {e}")))?;
        for (name, t) in [
            ("upsampler", &self.train.upsampler),
            ("classifier", &self.train.classifier),
            ("regressor", &self.train.regressor),
        ] {
            t.validate()
                .map_err(|e| invalid(format!("train.{name}: {e}")))?;
        }
        if !self.pipeline.gate_threshold.is_finite() {
            return Err(invalid("pipeline.gate_threshold must be finite"));
        }
        if self.bench.repeats < MIN_REPEATS {
            return Err(invalid(format!(
                "bench.repeats must be at least {MIN_REPEATS}"
            )));
        }
        if self.bench.latency_frames == 0 {
            return Err(invalid("bench.latency_frames must be positive"));
        }
        PowerModel::new(self.bench.power_mw)
            .map_err(|e| invalid(format!("bench.power_mw: {e}")))?;
        Ok(())
    }

    /// Replaces the data seed, which also seeds the networks.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.data.seed = s;
        }
        self
    }

    pub fn bundle_config(&self, seed: u64) -> BundleConfig {
        BundleConfig {
            filters: self.filters.clone(),
            upsampler: self.train.upsampler.clone(),
            classifier: self.train.classifier.clone(),
            regressor: self.train.regressor.clone(),
            regressor_variant: self.train.regressor_variant,
        }
        .with_seed(seed)
    }
}
