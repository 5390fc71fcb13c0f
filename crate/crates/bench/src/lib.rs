//! Shared fixtures for the pipeline benchmarks.

use tinyhr::data::make_dataset;
use tinyhr::models::{BundleConfig, TrainedBundle};
use tinyhr::pipelines::{pipeline_input, PipelineKind};
use tinyhr::Frame;

/// Frames per benchmark input set.
pub const FRAMES: usize = 64;

/// Untrained networks are as fast as trained ones; a gate threshold of 1.0
/// never rejects, so every ML frame reaches the regressor.
pub const OPEN_GATE: f64 = 1.0;

pub fn bundle() -> TrainedBundle {
    TrainedBundle::untrained(BundleConfig::default().with_seed(7))
}

/// Pipeline-ready inputs drawn from a seeded synthetic dataset.
pub fn inputs(kind: PipelineKind) -> Vec<Frame> {
    let ds = make_dataset(FRAMES, 0.0, 7).expect("valid dataset parameters");
    ds.frames
        .iter()
        .map(|f| pipeline_input(kind, f).expect("canonical frame"))
        .collect()
}
