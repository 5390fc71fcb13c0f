//! Heart-rate estimation from short photoplethysmography frames with three
//! pipelines: classical signal processing, a three-network learned pipeline
//! (upsampler, quality gate, regressor), and a hybrid of the two.

pub mod bench;
pub mod data;
pub mod dsp;
pub mod models;
pub mod nn;
pub mod pipelines;
pub mod signal;

pub use bench::{bench_pipeline, energy_estimate, BenchError, EvalReport, PowerModel};
pub use data::{make_dataset, DataError, Dataset, Split};
pub use dsp::{DspError, FilterSpec};
pub use models::{
    train_bundle, BundleConfig, BundleError, RegressorVariant, TrainError, TrainedBundle,
};
pub use nn::{LoadError, Model, NnError, TrainConfig};
pub use pipelines::{run_hybrid, run_ml, run_sp, PipelineError, PipelineKind, PipelineResult};
pub use signal::{Frame, Label, SignalError};
