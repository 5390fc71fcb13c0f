//! The three end-to-end heart-rate pipelines and their shared gate.
//!
//! * SP: classical conditioning and peak counting on the 12 Hz frame.
//! * ML: upsampler, quality gate, regressor on the 6 Hz frame.
//! * Hybrid: upsampler and gate, then peak counting on the reconstruction.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{
    detect_peaks, fir_filter, hr_from_peaks, linear_interp, median_filter, moving_average,
    DspError, FilterSpec,
};
use crate::models::{TrainedBundle, DEFAULT_GATE_THRESHOLD};
use crate::nn::NnError;
use crate::signal::{
    detrend, normalize_slice, Frame, SignalError, HIGH_RATE_HZ, HIGH_RATE_LEN, LOW_RATE_LEN,
};

/// Estimates outside this range are rejected.
pub const PHYSIOLOGICAL_BPM: (f64, f64) = (30.0, 220.0);

pub const SP_STAGES: [Stage; 8] = [
    Stage::Median,
    Stage::Fir,
    Stage::Baseline,
    Stage::Normalize,
    Stage::Interpolate,
    Stage::MovingAverage,
    Stage::Peaks,
    Stage::Rate,
];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("expected a {expected}-sample frame, got {got}")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("{0} pipeline needs a trained bundle")]
    MissingBundle(PipelineKind),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PipelineKind {
    SP,
    ML,
    Hybrid,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 3] = [PipelineKind::SP, PipelineKind::ML, PipelineKind::Hybrid];

    /// Samples expected by the pipeline's entry point.
    pub fn input_len(self) -> usize {
        match self {
            PipelineKind::SP => HIGH_RATE_LEN,
            PipelineKind::ML | PipelineKind::Hybrid => LOW_RATE_LEN,
        }
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineKind::SP => "SP",
            PipelineKind::ML => "ML",
            PipelineKind::Hybrid => "Hybrid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Median,
    Fir,
    Baseline,
    Normalize,
    Interpolate,
    MovingAverage,
    Peaks,
    Rate,
    Upsampler,
    Classifier,
    Regressor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectReason {
    /// The quality gate judged the frame abnormal.
    Gate {
        p_abnormal: f64,
    },
    InsufficientPeaks {
        found: usize,
    },
    OutOfRange {
        bpm: f64,
    },
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Gate { p_abnormal } => write!(f, "gate (p_abnormal {p_abnormal:.3})"),
            RejectReason::InsufficientPeaks { found } => write!(f, "insufficient peaks ({found})"),
            RejectReason::OutOfRange { bpm } => write!(f, "out of range ({bpm:.1} BPM)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: Stage,
    pub nanos: u64,
}

/// Outcome of one pipeline run: an estimate or a rejection, never both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub pipeline: PipelineKind,
    pub estimate: Option<f64>,
    pub rejected: bool,
    pub reason: Option<RejectReason>,
    /// Classifier output, for the gated pipelines.
    pub p_abnormal: Option<f64>,
    pub stage_times: Vec<StageTime>,
}

impl PipelineResult {
    pub fn total_ns(&self) -> u64 {
        self.stage_times.iter().map(|s| s.nanos).sum()
    }

    pub fn ran(&self, stage: Stage) -> bool {
        self.stage_times.iter().any(|s| s.stage == stage)
    }

    /// The result without timings, for determinism comparisons.
    pub fn untimed(&self) -> PipelineResult {
        let mut out = self.clone();
        out.stage_times.iter_mut().for_each(|s| s.nanos = 0);
        out
    }
}

struct Timer {
    times: Vec<StageTime>,
}

impl Timer {
    fn new() -> Self {
        Self {
            times: Vec::with_capacity(8),
        }
    }

    fn run<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.times.push(StageTime {
            stage,
            nanos: start.elapsed().as_nanos() as u64,
        });
        out
    }

    fn finish(
        self,
        pipeline: PipelineKind,
        outcome: Result<f64, RejectReason>,
        p_abnormal: Option<f64>,
    ) -> PipelineResult {
        let outcome = outcome.and_then(|bpm| {
            if (PHYSIOLOGICAL_BPM.0..=PHYSIOLOGICAL_BPM.1).contains(&bpm) {
                Ok(bpm)
            } else {
                Err(RejectReason::OutOfRange { bpm })
            }
        });
        PipelineResult {
            pipeline,
            estimate: outcome.ok(),
            rejected: outcome.is_err(),
            reason: outcome.err(),
            p_abnormal,
            stage_times: self.times,
        }
    }
}

fn check_len(frame: &Frame, expected: usize) -> Result<(), PipelineError> {
    if frame.len() != expected {
        return Err(PipelineError::Shape {
            expected,
            got: frame.len(),
        });
    }
    Ok(())
}

/// Interpolation, smoothing, peak picking and rate, each timed.
fn peak_tail(
    timer: &mut Timer,
    x: &[f64],
    rate_hz: f64,
    spec: &FilterSpec,
) -> Result<Result<f64, RejectReason>, PipelineError> {
    let fine = timer.run(Stage::Interpolate, || linear_interp(x, spec.interp_factor))?;
    let smooth = timer.run(Stage::MovingAverage, || {
        moving_average(&fine, spec.ma_window)
    })?;
    let fine_rate = rate_hz * spec.interp_factor as f64;
    let peaks = timer.run(Stage::Peaks, || {
        detect_peaks(&smooth, fine_rate, spec.min_prominence, spec.min_distance_s)
    });
    Ok(match timer.run(Stage::Rate, || hr_from_peaks(&peaks)) {
        Ok(bpm) => Ok(bpm),
        Err(DspError::InsufficientPeaks(found)) => Err(RejectReason::InsufficientPeaks { found }),
        Err(e) => return Err(e.into()),
    })
}

/// Classical pipeline on a raw 69-sample 12 Hz frame.
pub fn run_sp(frame12: &Frame, spec: &FilterSpec) -> Result<PipelineResult, PipelineError> {
    check_len(frame12, HIGH_RATE_LEN)?;
    let mut t = Timer::new();
    let x = &frame12.samples;
    let med = t.run(Stage::Median, || median_filter(x, spec.median_window))?;
    let fir = t.run(Stage::Fir, || fir_filter(&med, &spec.fir_taps))?;
    let flat = t.run(Stage::Baseline, || detrend(&fir))?;
    let norm = t.run(Stage::Normalize, || normalize_slice(&flat));
    let outcome = peak_tail(&mut t, &norm, HIGH_RATE_HZ, spec)?;
    Ok(t.finish(PipelineKind::SP, outcome, None))
}

/// Upsampler and classifier; returns the reconstruction and P(abnormal).
fn gate_prefix(
    t: &mut Timer,
    frame6: &Frame,
    bundle: &TrainedBundle,
) -> Result<(Vec<f64>, f64), PipelineError> {
    check_len(frame6, LOW_RATE_LEN)?;
    let recon = t.run(Stage::Upsampler, || bundle.upsampler.infer(&frame6.samples))?;
    let p = t.run(Stage::Classifier, || bundle.classifier.infer(&recon))?[0];
    Ok((recon, p))
}

/// Learned pipeline on a normalized 35-sample 6 Hz frame.
///
/// A frame with P(abnormal) above `gate_threshold` is rejected and the
/// regressor is never invoked.
pub fn run_ml(
    frame6: &Frame,
    bundle: &TrainedBundle,
    gate_threshold: f64,
) -> Result<PipelineResult, PipelineError> {
    let mut t = Timer::new();
    let (recon, p) = gate_prefix(&mut t, frame6, bundle)?;
    if p > gate_threshold {
        return Ok(t.finish(
            PipelineKind::ML,
            Err(RejectReason::Gate { p_abnormal: p }),
            Some(p),
        ));
    }
    let bpm = t.run(Stage::Regressor, || bundle.regressor.infer(&recon))?[0];
    Ok(t.finish(PipelineKind::ML, Ok(bpm), Some(p)))
}

/// Upsampler and gate followed by classical peak counting on the reconstruction.
pub fn run_hybrid(
    frame6: &Frame,
    bundle: &TrainedBundle,
    spec: &FilterSpec,
    gate_threshold: f64,
) -> Result<PipelineResult, PipelineError> {
    let mut t = Timer::new();
    let (recon, p) = gate_prefix(&mut t, frame6, bundle)?;
    if p > gate_threshold {
        return Ok(t.finish(
            PipelineKind::Hybrid,
            Err(RejectReason::Gate { p_abnormal: p }),
            Some(p),
        ));
    }
    let outcome = peak_tail(&mut t, &recon, HIGH_RATE_HZ, spec)?;
    Ok(t.finish(PipelineKind::Hybrid, outcome, Some(p)))
}

/// Everything a pipeline run needs besides the frame.
#[derive(Debug, Clone, Copy)]
pub struct PipelineContext<'a> {
    pub bundle: Option<&'a TrainedBundle>,
    pub filters: &'a FilterSpec,
    pub gate_threshold: f64,
}

impl<'a> PipelineContext<'a> {
    pub fn new(bundle: Option<&'a TrainedBundle>, filters: &'a FilterSpec) -> Self {
        Self {
            bundle,
            filters,
            gate_threshold: DEFAULT_GATE_THRESHOLD,
        }
    }
}

/// The input a pipeline consumes for a raw 12 Hz dataset frame.
pub fn pipeline_input(kind: PipelineKind, frame12: &Frame) -> Result<Frame, PipelineError> {
    match kind {
        PipelineKind::SP => Ok(frame12.clone()),
        PipelineKind::ML | PipelineKind::Hybrid => Ok(frame12.low_rate_input()?),
    }
}

/// Runs `kind` on an input already in that pipeline's format.
pub fn run(
    kind: PipelineKind,
    input: &Frame,
    ctx: &PipelineContext<'_>,
) -> Result<PipelineResult, PipelineError> {
    let bundle = || ctx.bundle.ok_or(PipelineError::MissingBundle(kind));
    match kind {
        PipelineKind::SP => run_sp(input, ctx.filters),
        PipelineKind::ML => run_ml(input, bundle()?, ctx.gate_threshold),
        PipelineKind::Hybrid => run_hybrid(input, bundle()?, ctx.filters, ctx.gate_threshold),
    }
}

/// One row of a batch evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub frame_id: usize,
    pub result: PipelineResult,
    pub truth: Option<f64>,
}

impl BatchRow {
    pub fn abs_error(&self) -> Option<f64> {
        Some((self.result.estimate? - self.truth?).abs())
    }
}

/// Runs `kind` over raw 12 Hz frames, keeping input order.
pub fn run_batch<'f>(
    kind: PipelineKind,
    frames: impl IntoIterator<Item = (usize, &'f Frame)>,
    ctx: &PipelineContext<'_>,
) -> Result<Vec<BatchRow>, PipelineError> {
    frames
        .into_iter()
        .map(|(frame_id, f)| {
            let result = run(kind, &pipeline_input(kind, f)?, ctx)?;
            Ok(BatchRow {
                frame_id,
                result,
                truth: f.hr_truth,
            })
        })
        .collect()
}

/// Writes batch rows as `frame_id,pipeline,estimate,rejected,truth,abs_error,total_ns`.
pub fn write_batch_csv<W: Write>(rows: &[BatchRow], out: W) -> Result<(), PipelineError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    w.write_record([
        "frame_id",
        "pipeline",
        "estimate",
        "rejected",
        "truth",
        "abs_error",
        "total_ns",
    ])
    .map_err(csv_io)?;
    for row in rows {
        w.write_record([
            row.frame_id.to_string(),
            row.result.pipeline.to_string(),
            opt(row.result.estimate),
            row.result.rejected.to_string(),
            opt(row.truth),
            opt(row.abs_error()),
            row.result.total_ns().to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> PipelineError {
    PipelineError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{
        build_classifier, build_regressor, build_upsampler, BundleConfig, RegressorVariant,
    };
    use crate::signal::{synth_frame, SynthParams};

    fn untrained() -> TrainedBundle {
        TrainedBundle {
            upsampler: build_upsampler(1),
            classifier: build_classifier(2),
            regressor: build_regressor(RegressorVariant::Cnn, 3),
            config: BundleConfig::default(),
            metrics: None,
            split_seed: 0,
        }
    }

    #[test]
    fn sp_clean_72_bpm() {
        let f = synth_frame(&SynthParams::clean(72.0, 5)).unwrap();
        let r = run_sp(&f, &FilterSpec::default()).unwrap();
        let est = r.estimate.expect("clean frame accepted");
        assert!(
            (est - f.hr_truth.unwrap()).abs() <= 2.0,
            "{est} vs {:?}",
            f.hr_truth
        );
        assert_eq!(r.stage_times.len(), 8);
        assert_eq!(
            r.stage_times.iter().map(|s| s.stage).collect::<Vec<_>>(),
            SP_STAGES
        );
    }

    #[test]
    fn sp_rejects_all_zero_frame() {
        let r = run_sp(&Frame::new(vec![0.0; 69], 12.0), &FilterSpec::default()).unwrap();
        assert!(r.rejected && r.estimate.is_none());
        assert!(matches!(
            r.reason,
            Some(RejectReason::InsufficientPeaks { .. })
        ));
        assert_eq!(r.stage_times.len(), 8);
    }

    #[test]
    fn wrong_length_is_an_error_not_a_rejection() {
        let b = untrained();
        let f = Frame::new(vec![0.0; 69], 6.0);
        assert!(matches!(
            run_ml(&f, &b, 0.5),
            Err(PipelineError::Shape {
                expected: 35,
                got: 69
            })
        ));
        assert!(run_sp(&Frame::new(vec![0.0; 35], 12.0), &FilterSpec::default()).is_err());
    }

    #[test]
    fn gate_threshold_semantics() {
        let b = untrained();
        let f = synth_frame(&SynthParams::clean(90.0, 1))
            .unwrap()
            .low_rate_input()
            .unwrap();
        let open = run_ml(&f, &b, 1.0).unwrap();
        assert!(open.ran(Stage::Regressor));
        assert!(!matches!(open.reason, Some(RejectReason::Gate { .. })));
        let shut = run_ml(&f, &b, -1.0).unwrap();
        assert!(shut.rejected && !shut.ran(Stage::Regressor));
        let hybrid = run_hybrid(&f, &b, &FilterSpec::default(), -1.0).unwrap();
        assert!(hybrid.rejected && !hybrid.ran(Stage::Peaks));
    }

    #[test]
    fn estimates_stay_in_physiological_range() {
        let b = untrained();
        let spec = FilterSpec::default();
        for seed in 0..20 {
            let f = synth_frame(&SynthParams::clean(40.0 + 7.0 * seed as f64, seed)).unwrap();
            let ctx = PipelineContext {
                gate_threshold: 1.0,
                ..PipelineContext::new(Some(&b), &spec)
            };
            for kind in PipelineKind::ALL {
                let r = run(kind, &pipeline_input(kind, &f).unwrap(), &ctx).unwrap();
                assert_eq!(r.estimate.is_some(), !r.rejected);
                if let Some(e) = r.estimate {
                    assert!((30.0..=220.0).contains(&e));
                }
            }
        }
    }

    #[test]
    fn batch_csv_header_and_rows() {
        let frames: Vec<Frame> = (0..3)
            .map(|i| synth_frame(&SynthParams::clean(60.0 + 20.0 * i as f64, i)).unwrap())
            .collect();
        let spec = FilterSpec::default();
        let ctx = PipelineContext::new(None, &spec);
        let rows = run_batch(PipelineKind::SP, frames.iter().enumerate(), &ctx).unwrap();
        let mut buf = Vec::new();
        write_batch_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("frame_id,pipeline,estimate,rejected,truth,abs_error,total_ns")
        );
        assert_eq!(lines.count(), 3);
        assert!(run_batch(PipelineKind::ML, frames.iter().enumerate(), &ctx).is_err());
    }
}
