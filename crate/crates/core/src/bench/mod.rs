//! Evaluation reports, latency measurement and the pipeline comparison table.

pub mod metrics;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::models::TrainedBundle;
use crate::pipelines::{
    pipeline_input, run, BatchRow, PipelineContext, PipelineError, PipelineKind, RejectReason,
};
use crate::signal::{Frame, Label};

pub use metrics::{f1_accuracy, mae, mean_std, rmse, Confusion, MetricError};

pub const WARMUP_RUNS: usize = 5;
pub const MIN_REPEATS: usize = 10;
/// Placeholder active power, not a measured figure.
pub const DEFAULT_POWER_MW: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("repeats must be at least {MIN_REPEATS}, got {0}")]
    TooFewRepeats(usize),
    #[error("no frames to evaluate")]
    NoFrames,
    #[error("active power must be positive, got {0}")]
    InvalidPower(f64),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub active_power_mw: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            active_power_mw: DEFAULT_POWER_MW,
        }
    }
}

impl PowerModel {
    pub fn new(active_power_mw: f64) -> Result<Self, BenchError> {
        if !(active_power_mw > 0.0 && active_power_mw.is_finite()) {
            return Err(BenchError::InvalidPower(active_power_mw));
        }
        Ok(Self { active_power_mw })
    }
}

/// Per-frame wall-clock latency statistics in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ns: u64,
    pub p50_ns: u64,
    pub p95_ns: u64,
    pub max_ns: u64,
    pub samples: usize,
}

impl LatencyStats {
    /// Nearest-rank percentiles of `samples`.
    pub fn from_samples(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let rank =
            |q: f64| sorted[((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
        let sum: u128 = sorted.iter().map(|&s| s as u128).sum();
        Self {
            mean_ns: (sum / sorted.len() as u128) as u64,
            p50_ns: rank(0.5),
            p95_ns: rank(0.95),
            max_ns: *sorted.last().expect("non-empty"),
            samples: sorted.len(),
        }
    }
}

/// Error metrics of one pipeline over one population of frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub frames: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    /// Over accepted frames with a known truth; `None` when there are none.
    pub mae_bpm: Option<f64>,
    pub rmse_bpm: Option<f64>,
}

impl ErrorStats {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a BatchRow>) -> Self {
        let (mut frames, mut accepted) = (0, 0);
        let (mut pred, mut truth) = (Vec::new(), Vec::new());
        for row in rows {
            frames += 1;
            if !row.result.rejected {
                accepted += 1;
            }
            if let (Some(p), Some(t)) = (row.result.estimate, row.truth) {
                pred.push(p);
                truth.push(t);
            }
        }
        Self {
            frames,
            accepted,
            acceptance_rate: if frames == 0 {
                0.0
            } else {
                accepted as f64 / frames as f64
            },
            mae_bpm: mae(&pred, &truth).ok(),
            rmse_bpm: rmse(&pred, &truth).ok(),
        }
    }
}

/// Gate quality on labeled frames, for the gated pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateStats {
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pipeline: PipelineKind,
    /// Accepted Normal frames of the evaluated split.
    pub clean: ErrorStats,
    /// Every frame of the evaluated split that has a ground truth.
    pub all: ErrorStats,
    /// The whole dataset, when evaluated.
    pub entire: Option<ErrorStats>,
    pub gate: Option<GateStats>,
    pub model_bytes: usize,
    pub model_bytes_note: Option<String>,
    /// Per-metric standard deviation over repeated seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_std: Option<serde_json::Value>,
    pub timing: TimingReport,
}

/// Everything nondeterministic about a report lives here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub latency: LatencyStats,
    pub warmup_runs: usize,
    pub repeats: usize,
    pub energy_estimate_mj: f64,
    pub active_power_mw: f64,
}

impl EvalReport {
    pub fn mae_bpm(&self) -> Option<f64> {
        self.clean.mae_bpm
    }

    pub fn mean_latency_ns(&self) -> u64 {
        self.timing.latency.mean_ns
    }
}

/// Energy estimate in mJ: mean latency in seconds times active power in mW.
pub fn energy_estimate(mean_latency_ns: u64, power: PowerModel) -> f64 {
    mean_latency_ns as f64 * 1e-9 * power.active_power_mw
}

/// Mean per-frame latency of `kind` over `inputs`, single-threaded.
///
/// Every input runs `WARMUP_RUNS` times unrecorded, then `repeats` timed
/// passes over the whole set are made. Only the pipeline call is timed.
pub fn measure_latency(
    kind: PipelineKind,
    inputs: &[Frame],
    ctx: &PipelineContext<'_>,
    repeats: usize,
) -> Result<LatencyStats, BenchError> {
    if repeats < MIN_REPEATS {
        return Err(BenchError::TooFewRepeats(repeats));
    }
    if inputs.is_empty() {
        return Err(BenchError::NoFrames);
    }
    for _ in 0..WARMUP_RUNS {
        for f in inputs {
            std::hint::black_box(run(kind, f, ctx)?);
        }
    }
    let mut samples = Vec::with_capacity(inputs.len() * repeats);
    for _ in 0..repeats {
        for f in inputs {
            let start = Instant::now();
            let r = run(kind, std::hint::black_box(f), ctx);
            samples.push(start.elapsed().as_nanos() as u64);
            std::hint::black_box(r?);
        }
    }
    Ok(LatencyStats::from_samples(&samples))
}

fn gate_stats(rows: &[BatchRow], frames: &[&Frame]) -> Option<GateStats> {
    let (pred, truth): (Vec<bool>, Vec<bool>) = rows
        .iter()
        .zip(frames)
        .filter(|(r, f)| r.result.p_abnormal.is_some() && f.label != Label::Unlabeled)
        .map(|(r, f)| {
            let gated = matches!(r.result.reason, Some(RejectReason::Gate { .. }));
            (gated, f.label.is_abnormal())
        })
        .unzip();
    let (f1, accuracy) = f1_accuracy(&pred, &truth).ok()?;
    Some(GateStats { accuracy, f1 })
}

/// Options of a pipeline evaluation.
#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub repeats: usize,
    pub power: PowerModel,
    /// Frames used for latency measurement (a prefix of the split).
    pub latency_frames: usize,
    /// Also score every frame of the dataset.
    pub include_entire: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repeats: MIN_REPEATS,
            power: PowerModel::default(),
            latency_frames: 200,
            include_entire: true,
        }
    }
}

/// Accuracy and latency of `kind` on the test split of `dataset`.
pub fn bench_pipeline(
    kind: PipelineKind,
    dataset: &Dataset,
    bundle: Option<&TrainedBundle>,
    ctx: &PipelineContext<'_>,
    options: &BenchOptions,
) -> Result<EvalReport, BenchError> {
    let test: Vec<(usize, &Frame)> = dataset
        .indices(crate::data::Split::Test)
        .into_iter()
        .map(|i| (i, &dataset.frames[i]))
        .collect();
    if test.is_empty() {
        return Err(BenchError::NoFrames);
    }
    let rows = crate::pipelines::run_batch(kind, test.iter().copied(), ctx)?;
    let frames: Vec<&Frame> = test.iter().map(|(_, f)| *f).collect();
    let clean = ErrorStats::from_rows(
        rows.iter()
            .zip(&frames)
            .filter(|(_, f)| f.label == Label::Normal)
            .map(|(r, _)| r),
    );
    let all = ErrorStats::from_rows(rows.iter().filter(|r| r.truth.is_some()));
    let entire = if options.include_entire {
        let rows = crate::pipelines::run_batch(kind, dataset.frames.iter().enumerate(), ctx)?;
        Some(ErrorStats::from_rows(
            rows.iter().filter(|r| r.truth.is_some()),
        ))
    } else {
        None
    };
    let inputs = frames
        .iter()
        .take(options.latency_frames.max(1))
        .map(|f| pipeline_input(kind, f))
        .collect::<Result<Vec<_>, _>>()?;
    let latency = measure_latency(kind, &inputs, ctx, options.repeats)?;
    let (model_bytes, note) = match (kind, bundle) {
        (PipelineKind::SP, _) => (
            0,
            Some("configuration only; no serialized model".to_string()),
        ),
        (_, Some(b)) => (b.model_bytes(), None),
        (_, None) => (0, None),
    };
    Ok(EvalReport {
        pipeline: kind,
        clean,
        all,
        entire,
        gate: gate_stats(&rows, &frames),
        model_bytes,
        model_bytes_note: note,
        seed_std: None,
        timing: TimingReport {
            latency,
            warmup_runs: WARMUP_RUNS,
            repeats: options.repeats,
            energy_estimate_mj: energy_estimate(latency.mean_ns, options.power),
            active_power_mw: options.power.active_power_mw,
        },
    })
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

/// Markdown comparison table with one column per pipeline.
pub fn markdown_table(reports: &[EvalReport]) -> String {
    let mut out = String::from("| Metric |");
    for r in reports {
        out.push_str(&format!(" {} |", r.pipeline));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(reports.len()));
    out.push('\n');
    let mut row = |name: &str, cell: &dyn Fn(&EvalReport) -> String| {
        out.push_str(&format!("| {name} |"));
        for r in reports {
            out.push_str(&format!(" {} |", cell(r)));
        }
        out.push('\n');
    };
    row("Model size (bytes)", &|r| r.model_bytes.to_string());
    row("Inference time (ms)", &|r| {
        format!("{:.4}", r.timing.latency.mean_ns as f64 * 1e-6)
    });
    row("Inference time p95 (ms)", &|r| {
        format!("{:.4}", r.timing.latency.p95_ns as f64 * 1e-6)
    });
    row("Estimated inference energy (mJ, estimate)", &|r| {
        format!("{:.6}", r.timing.energy_estimate_mj)
    });
    row("MAE entire (BPM)", &|r| {
        fmt_opt(r.entire.and_then(|e| e.mae_bpm), 2)
    });
    row("MAE test, all (BPM)", &|r| fmt_opt(r.all.mae_bpm, 2));
    row("MAE test, clean (BPM)", &|r| fmt_opt(r.clean.mae_bpm, 2));
    row("Acceptance rate (test)", &|r| {
        format!("{:.3}", r.all.acceptance_rate)
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_examples() {
        let p = PowerModel::new(1000.0).unwrap();
        assert!((energy_estimate(1_000_000, p) - 1.0).abs() < 1e-12);
        assert_eq!(energy_estimate(0, p), 0.0);
        assert!(PowerModel::new(0.0).is_err());
    }

    #[test]
    fn latency_percentiles_are_monotone() {
        let s = LatencyStats::from_samples(&[5, 1, 9, 3, 7, 2, 8, 4, 6, 10]);
        assert_eq!((s.p50_ns, s.p95_ns, s.max_ns, s.mean_ns), (5, 10, 10, 5));
        assert!(s.p50_ns <= s.p95_ns && s.p95_ns <= s.max_ns);
    }

    #[test]
    fn too_few_repeats_rejected() {
        let spec = crate::dsp::FilterSpec::default();
        let ctx = PipelineContext::new(None, &spec);
        let f = Frame::new(vec![0.0; 69], 12.0);
        assert!(matches!(
            measure_latency(PipelineKind::SP, &[f], &ctx, 9),
            Err(BenchError::TooFewRepeats(9))
        ));
    }
}
