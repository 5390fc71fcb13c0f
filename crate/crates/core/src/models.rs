//! The three networks of the learned pipeline, their training procedures,
//! and bundle persistence.
//!
//! * upsampler: dense 35 → 55 (ReLU) → 69, reconstructs the conditioned
//!   12 Hz frame from the 6 Hz frame;
//! * classifier: two 5-channel, kernel-5 convolutions (ReLU) and a sigmoid
//!   read-out giving P(abnormal);
//! * regressor: the same convolutional body with sine activations and a
//!   linear read-out in BPM.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::metrics::{f1_accuracy, mae, rmse};
use crate::data::{DataError, Dataset, Splits};
use crate::dsp::{condition, DspError, FilterSpec};
use crate::nn::{
    fit, load_model, save_model, Activation, CheckpointMetric, Example, LayerSpec, LoadError, Loss,
    Model, NnError, TrainConfig, TrainReport,
};
use crate::signal::{Frame, Label, SignalError, HIGH_RATE_LEN, LOW_RATE_LEN};

pub const UPSAMPLER_HIDDEN: usize = 55;
pub const CONV_CHANNELS: usize = 5;
pub const CONV_KERNEL: usize = 5;
pub const FCN_REGRESSOR_HIDDEN: usize = 8;
/// Classifier outputs above this are treated as abnormal.
pub const DEFAULT_GATE_THRESHOLD: f64 = 0.5;

pub const UPSAMPLER_FILE: &str = "upsampler.thr";
pub const CLASSIFIER_FILE: &str = "classifier.thr";
pub const REGRESSOR_FILE: &str = "regressor.thr";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{stage}: {source}")]
    Network {
        stage: &'static str,
        #[source]
        source: NnError,
    },
    #[error("{0}: no training examples")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl TrainError {
    /// Name of the training stage that failed, when known.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            TrainError::Network { stage, .. } | TrainError::EmptySplit(stage) => Some(stage),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{file}: {source}")]
    Model {
        file: String,
        #[source]
        source: LoadError,
    },
    #[error("{file}: checksum {actual:#010x} does not match manifest {expected:#010x}")]
    ManifestChecksum {
        file: String,
        expected: u32,
        actual: u32,
    },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("bundle shape invariant violated: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegressorVariant {
    #[serde(rename = "CNN")]
    Cnn,
    #[serde(rename = "FCN")]
    Fcn,
}

pub fn upsampler_specs(input_len: usize, hidden: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::dense(input_len, hidden, Activation::ReLU),
        LayerSpec::dense(hidden, HIGH_RATE_LEN, Activation::None),
    ]
}

fn conv_body(activation: Activation) -> Vec<LayerSpec> {
    let mid = HIGH_RATE_LEN - CONV_KERNEL + 1;
    vec![
        LayerSpec::conv1d(1, CONV_CHANNELS, CONV_KERNEL, HIGH_RATE_LEN, activation),
        LayerSpec::conv1d(CONV_CHANNELS, CONV_CHANNELS, CONV_KERNEL, mid, activation),
    ]
}

pub fn classifier_specs() -> Vec<LayerSpec> {
    let mut specs = conv_body(Activation::ReLU);
    let flat = specs[1].output_len();
    specs.push(LayerSpec::dense(flat, 1, Activation::Sigmoid));
    specs
}

pub fn regressor_specs(variant: RegressorVariant) -> Vec<LayerSpec> {
    match variant {
        RegressorVariant::Cnn => {
            let mut specs = conv_body(Activation::Sine);
            let flat = specs[1].output_len();
            specs.push(LayerSpec::dense(flat, 1, Activation::None));
            specs
        }
        RegressorVariant::Fcn => vec![
            LayerSpec::dense(HIGH_RATE_LEN, FCN_REGRESSOR_HIDDEN, Activation::Sine),
            LayerSpec::dense(FCN_REGRESSOR_HIDDEN, FCN_REGRESSOR_HIDDEN, Activation::Sine),
            LayerSpec::dense(FCN_REGRESSOR_HIDDEN, 1, Activation::None),
        ],
    }
}

fn build(specs: &[LayerSpec], seed: u64) -> Model {
    Model::init(specs, seed).expect("built-in architectures compose")
}

/// Dense 35 → 55 (ReLU) → 69.
pub fn build_upsampler(seed: u64) -> Model {
    build(&upsampler_specs(LOW_RATE_LEN, UPSAMPLER_HIDDEN), seed)
}

/// Upsampler with a custom input length (e.g. 23 for a 4 Hz input) or hidden width.
pub fn build_upsampler_with(input_len: usize, hidden: usize, seed: u64) -> Result<Model, NnError> {
    Model::init(&upsampler_specs(input_len, hidden), seed)
}

pub fn build_classifier(seed: u64) -> Model {
    build(&classifier_specs(), seed)
}

pub fn build_regressor(variant: RegressorVariant, seed: u64) -> Model {
    build(&regressor_specs(variant), seed)
}

/// Training configurations of the three networks plus the conditioning chain
/// that defines the upsampler's reconstruction target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleConfig {
    pub filters: FilterSpec,
    pub upsampler: TrainConfig,
    pub classifier: TrainConfig,
    pub regressor: TrainConfig,
    pub regressor_variant: RegressorVariant,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self {
            filters: FilterSpec::default(),
            upsampler: TrainConfig::upsampler(),
            classifier: TrainConfig::classifier(),
            regressor: TrainConfig::regressor(),
            regressor_variant: RegressorVariant::Cnn,
        }
    }
}

impl BundleConfig {
    /// Same hyperparameters with every network seeded from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.upsampler.seed = seed;
        self.classifier.seed = seed.wrapping_add(1);
        self.regressor.seed = seed.wrapping_add(2);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpsamplerMetrics {
    pub val_rmse: f64,
    pub test_rmse: f64,
    /// RMSE restricted to the output positions that coincide with input samples.
    pub test_rmse_observed: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub val_f1: f64,
    pub test_accuracy: f64,
    pub test_f1: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorMetrics {
    pub val_rmse: f64,
    pub test_rmse: f64,
    pub test_mae: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMetrics {
    pub upsampler: UpsamplerMetrics,
    pub classifier: ClassifierMetrics,
    pub regressor: RegressorMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedBundle {
    pub upsampler: Model,
    pub classifier: Model,
    pub regressor: Model,
    pub config: BundleConfig,
    pub metrics: Option<BundleMetrics>,
    /// Seed of the dataset split the networks were trained on.
    pub split_seed: u64,
}

/// The upsampler's reconstruction target for a raw 12 Hz frame.
pub fn upsampler_target(frame12: &Frame, filters: &FilterSpec) -> Result<Vec<f64>, DspError> {
    condition(&frame12.samples, filters)
}

fn upsampler_examples(frames: &[&Frame], filters: &FilterSpec) -> Result<Vec<Example>, TrainError> {
    frames
        .iter()
        .map(|f| {
            Ok(Example::new(
                f.low_rate_input()?.samples,
                upsampler_target(f, filters)?,
            ))
        })
        .collect()
}

fn net_err(stage: &'static str) -> impl Fn(NnError) -> TrainError {
    move |source| TrainError::Network { stage, source }
}

fn reconstruction_rmse(model: &Model, examples: &[Example]) -> f64 {
    let (mut se, mut n) = (0.0, 0usize);
    for ex in examples {
        let out = model.forward(&ex.input).expect("shape checked at build");
        se += out
            .iter()
            .zip(&ex.target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>();
        n += out.len();
    }
    (se / n.max(1) as f64).sqrt()
}

fn mean_loss(model: &Model, examples: &[Example], loss: Loss) -> f64 {
    let total: f64 = examples
        .iter()
        .map(|ex| {
            let out = model.forward(&ex.input).expect("shape checked at build");
            crate::nn::loss_eval(loss, &out, &ex.target).expect("shape checked at build")
        })
        .sum();
    total / examples.len().max(1) as f64
}

fn prob_abnormal(model: &Model, input: &[f64]) -> f64 {
    model.forward(input).expect("shape checked at build")[0]
}

fn classifier_f1(model: &Model, examples: &[Example], threshold: f64) -> (f64, f64) {
    if examples.is_empty() {
        return (0.0, 0.0);
    }
    let pred: Vec<bool> = examples
        .iter()
        .map(|ex| prob_abnormal(model, &ex.input) > threshold)
        .collect();
    let truth: Vec<bool> = examples.iter().map(|ex| ex.target[0] > 0.5).collect();
    f1_accuracy(&pred, &truth).expect("equal non-empty lengths")
}

fn regression_errors(model: &Model, examples: &[Example]) -> (f64, f64) {
    if examples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let pred: Vec<f64> = examples
        .iter()
        .map(|ex| model.forward(&ex.input).expect("shape checked at build")[0])
        .collect();
    let truth: Vec<f64> = examples.iter().map(|ex| ex.target[0]).collect();
    (
        rmse(&pred, &truth).expect("equal non-empty lengths"),
        mae(&pred, &truth).expect("equal non-empty lengths"),
    )
}

/// Checkpoint score (lower is better) for `metric`.
fn checkpoint_score(metric: CheckpointMetric, model: &Model, val: &[Example], loss: Loss) -> f64 {
    match metric {
        CheckpointMetric::ValRMSE => {
            if model.output_len() == 1 {
                regression_errors(model, val).0
            } else {
                reconstruction_rmse(model, val)
            }
        }
        CheckpointMetric::ValF1 => -classifier_f1(model, val, DEFAULT_GATE_THRESHOLD).0,
        CheckpointMetric::ValLoss => mean_loss(model, val, loss),
    }
}

fn train_stage(
    stage: &'static str,
    mut model: Model,
    train: &[Example],
    val: &[Example],
    config: &TrainConfig,
) -> Result<(Model, TrainReport), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptySplit(stage));
    }
    let report = if val.is_empty() {
        fit(&mut model, train, config, |_| 0.0)
    } else {
        fit(&mut model, train, config, |m| {
            checkpoint_score(config.checkpoint_metric, m, val, config.loss)
        })
    }
    .map_err(net_err(stage))?;
    model.round_to_f32();
    Ok((model, report))
}

/// Trains the upsampler on (6 Hz input, conditioned 12 Hz target) pairs.
pub fn train_upsampler(
    splits: &Splits<'_>,
    filters: &FilterSpec,
    config: &TrainConfig,
) -> Result<(Model, UpsamplerMetrics), TrainError> {
    let train = upsampler_examples(&splits.train, filters)?;
    let val = upsampler_examples(&splits.val, filters)?;
    let test = upsampler_examples(&splits.test, filters)?;
    let (model, report) = train_stage(
        "upsampler",
        build_upsampler(config.seed),
        &train,
        &val,
        config,
    )?;
    let observed: Vec<Example> = test
        .iter()
        .map(|ex| {
            Example::new(
                ex.input.clone(),
                ex.target.iter().step_by(2).copied().collect(),
            )
        })
        .collect();
    let test_rmse_observed = {
        let (mut se, mut n) = (0.0, 0usize);
        for (ex, obs) in test.iter().zip(&observed) {
            let out = model.forward(&ex.input).expect("shape checked at build");
            for (p, t) in out.iter().step_by(2).zip(&obs.target) {
                se += (p - t) * (p - t);
                n += 1;
            }
        }
        (se / n.max(1) as f64).sqrt()
    };
    let metrics = UpsamplerMetrics {
        val_rmse: reconstruction_rmse(&model, &val),
        test_rmse: reconstruction_rmse(&model, &test),
        test_rmse_observed,
        best_epoch: report.best_epoch,
    };
    Ok((model, metrics))
}

/// Upsampler reconstruction of a raw 12 Hz frame, as the pipeline sees it.
pub fn reconstruct(upsampler: &Model, frame12: &Frame) -> Result<Vec<f64>, TrainError> {
    let input = frame12.low_rate_input()?;
    upsampler
        .forward(&input.samples)
        .map_err(net_err("upsampler"))
}

fn label_target(frame: &Frame) -> Vec<f64> {
    vec![if frame.label == Label::Abnormal {
        1.0
    } else {
        0.0
    }]
}

fn classifier_examples(upsampler: &Model, frames: &[&Frame]) -> Result<Vec<Example>, TrainError> {
    frames
        .iter()
        .filter(|f| f.label != Label::Unlabeled)
        .map(|f| Ok(Example::new(reconstruct(upsampler, f)?, label_target(f))))
        .collect()
}

/// Trains the quality gate on upsampler reconstructions, augmented with the
/// directly preprocessed 12 Hz version of every abnormal training frame.
pub fn train_classifier(
    splits: &Splits<'_>,
    upsampler: &Model,
    config: &TrainConfig,
) -> Result<(Model, ClassifierMetrics), TrainError> {
    let mut train = classifier_examples(upsampler, &splits.train)?;
    for f in splits.train.iter().filter(|f| f.label == Label::Abnormal) {
        train.push(Example::new(f.preprocess()?.samples, label_target(f)));
    }
    let val = classifier_examples(upsampler, &splits.val)?;
    let test = classifier_examples(upsampler, &splits.test)?;
    let (model, report) = train_stage(
        "classifier",
        build_classifier(config.seed),
        &train,
        &val,
        config,
    )?;
    let (val_f1, _) = classifier_f1(&model, &val, DEFAULT_GATE_THRESHOLD);
    let (test_f1, test_accuracy) = classifier_f1(&model, &test, DEFAULT_GATE_THRESHOLD);
    Ok((
        model,
        ClassifierMetrics {
            val_f1,
            test_accuracy,
            test_f1,
            best_epoch: report.best_epoch,
        },
    ))
}

fn regressor_examples(upsampler: &Model, frames: &[&Frame]) -> Result<Vec<Example>, TrainError> {
    Splits::normal_only(frames)
        .into_iter()
        .filter_map(|f| f.hr_truth.map(|hr| (f, hr)))
        .map(|(f, hr)| Ok(Example::new(reconstruct(upsampler, f)?, vec![hr])))
        .collect()
}

/// Trains the HR regressor on reconstructions of Normal frames only.
pub fn train_regressor(
    splits: &Splits<'_>,
    upsampler: &Model,
    variant: RegressorVariant,
    config: &TrainConfig,
) -> Result<(Model, RegressorMetrics), TrainError> {
    let train = regressor_examples(upsampler, &splits.train)?;
    let val = regressor_examples(upsampler, &splits.val)?;
    let test = regressor_examples(upsampler, &splits.test)?;
    let (model, report) = train_stage(
        "regressor",
        build_regressor(variant, config.seed),
        &train,
        &val,
        config,
    )?;
    let (val_rmse, _) = regression_errors(&model, &val);
    let (test_rmse, test_mae) = regression_errors(&model, &test);
    Ok((
        model,
        RegressorMetrics {
            val_rmse,
            test_rmse,
            test_mae,
            best_epoch: report.best_epoch,
        },
    ))
}

/// Trains all three networks on the dataset's shared split.
pub fn train_bundle(dataset: &Dataset, config: &BundleConfig) -> Result<TrainedBundle, TrainError> {
    let splits = dataset.split();
    let (upsampler, up) = train_upsampler(&splits, &config.filters, &config.upsampler)?;
    let (classifier, cls) = train_classifier(&splits, &upsampler, &config.classifier)?;
    let (regressor, reg) = train_regressor(
        &splits,
        &upsampler,
        config.regressor_variant,
        &config.regressor,
    )?;
    Ok(TrainedBundle {
        upsampler,
        classifier,
        regressor,
        config: config.clone(),
        split_seed: dataset.seed,
        metrics: Some(BundleMetrics {
            upsampler: up,
            classifier: cls,
            regressor: reg,
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub role: String,
    pub file: String,
    pub crc32: u32,
    pub bytes: usize,
    pub params: usize,
}

/// JSON manifest stored beside the three model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub models: Vec<ManifestEntry>,
    #[serde(default)]
    pub split_seed: u64,
    pub config: BundleConfig,
    pub metrics: Option<BundleMetrics>,
    /// Per-metric standard deviation over repeated seeds, when trained that way.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_std: Option<serde_json::Value>,
}

impl TrainedBundle {
    /// Freshly initialized networks, as `train_bundle` would start from.
    pub fn untrained(config: BundleConfig) -> Self {
        Self {
            upsampler: build_upsampler(config.upsampler.seed),
            classifier: build_classifier(config.classifier.seed),
            regressor: build_regressor(config.regressor_variant, config.regressor.seed),
            config,
            metrics: None,
            split_seed: 0,
        }
    }

    /// Checks the architecture invariants of a bundle.
    pub fn check_shapes(&self) -> Result<(), BundleError> {
        let check = |name: &str, m: &Model, input: usize, output: usize| {
            if m.input_len() != input || m.output_len() != output {
                return Err(BundleError::Shape(format!(
                    "{name} maps {} -> {}, expected {input} -> {output}",
                    m.input_len(),
                    m.output_len()
                )));
            }
            Ok(())
        };
        check("upsampler", &self.upsampler, LOW_RATE_LEN, HIGH_RATE_LEN)?;
        check("classifier", &self.classifier, HIGH_RATE_LEN, 1)?;
        check("regressor", &self.regressor, HIGH_RATE_LEN, 1)?;
        if self.classifier.layers().last().map(|l| l.spec.activation()) != Some(Activation::Sigmoid)
        {
            return Err(BundleError::Shape(
                "classifier must end in a sigmoid".into(),
            ));
        }
        Ok(())
    }

    /// Total serialized size of the three models in bytes.
    pub fn model_bytes(&self) -> usize {
        [&self.upsampler, &self.classifier, &self.regressor]
            .iter()
            .map(|m| m.to_bytes().map_or(0, |b| b.len()))
            .sum()
    }

    pub fn manifest(&self) -> Result<BundleManifest, BundleError> {
        let mut models = Vec::new();
        for (role, file, model) in [
            ("upsampler", UPSAMPLER_FILE, &self.upsampler),
            ("classifier", CLASSIFIER_FILE, &self.classifier),
            ("regressor", REGRESSOR_FILE, &self.regressor),
        ] {
            let bytes = model.to_bytes().map_err(|source| BundleError::Model {
                file: file.to_string(),
                source,
            })?;
            models.push(ManifestEntry {
                role: role.to_string(),
                file: file.to_string(),
                crc32: crc32fast::hash(&bytes),
                bytes: bytes.len(),
                params: model.param_count(),
            });
        }
        Ok(BundleManifest {
            models,
            split_seed: self.split_seed,
            config: self.config.clone(),
            metrics: self.metrics.clone(),
            seed_std: None,
        })
    }

    /// Writes the three model files and `manifest.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<BundleManifest, BundleError> {
        self.save_with(dir, None)
    }

    pub fn save_with(
        &self,
        dir: impl AsRef<Path>,
        seed_std: Option<serde_json::Value>,
    ) -> Result<BundleManifest, BundleError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut manifest = self.manifest()?;
        manifest.seed_std = seed_std;
        for (file, model) in [
            (UPSAMPLER_FILE, &self.upsampler),
            (CLASSIFIER_FILE, &self.classifier),
            (REGRESSOR_FILE, &self.regressor),
        ] {
            save_model(model, dir.join(file)).map_err(|source| BundleError::Model {
                file: file.to_string(),
                source,
            })?;
        }
        let json = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
        Ok(manifest)
    }

    /// Loads a bundle, verifying each model's own checksum and the manifest's record of it.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, BundleError> {
        let dir = dir.as_ref();
        let manifest: BundleManifest =
            serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_FILE))?)?;
        let load = |file: &str| -> Result<Model, BundleError> {
            let path = dir.join(file);
            let model = load_model(&path).map_err(|source| BundleError::Model {
                file: file.to_string(),
                source,
            })?;
            if let Some(entry) = manifest.models.iter().find(|e| e.file == file) {
                let actual = crc32fast::hash(&std::fs::read(&path)?);
                if actual != entry.crc32 {
                    return Err(BundleError::ManifestChecksum {
                        file: file.to_string(),
                        expected: entry.crc32,
                        actual,
                    });
                }
            }
            Ok(model)
        };
        let bundle = TrainedBundle {
            upsampler: load(UPSAMPLER_FILE)?,
            classifier: load(CLASSIFIER_FILE)?,
            regressor: load(REGRESSOR_FILE)?,
            config: manifest.config,
            metrics: manifest.metrics,
            split_seed: manifest.split_seed,
        };
        bundle.check_shapes()?;
        Ok(bundle)
    }
}
