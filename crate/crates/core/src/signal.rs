//! Frame model, canonical preprocessing and the seeded synthetic pulse generator.
//!
//! A frame is a short window of a pressure-pulse recording. Two canonical
//! shapes flow through the pipelines: the 69-sample 12 Hz frame and its
//! even-index subsampling, the 35-sample 6 Hz frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rate of the high-rate canonical frame (reference for the upsampler and SP input).
pub const HIGH_RATE_HZ: f64 = 12.0;
/// Rate of the low-rate canonical frame (ML and hybrid input).
pub const LOW_RATE_HZ: f64 = 6.0;
/// Rate of the continuous render the generator exposes for oracles.
pub const SOURCE_RATE_HZ: f64 = 126.0;
pub const HIGH_RATE_LEN: usize = 69;
pub const LOW_RATE_LEN: usize = 35;

/// Physiological band accepted by the generator.
pub const SYNTH_MIN_BPM: f64 = 40.0;
pub const SYNTH_MAX_BPM: f64 = 180.0;

/// Noise level above which a synthetic frame is labeled abnormal.
pub const ABNORMAL_NOISE_SIGMA: f64 = 0.15;

/// Width of a single Gaussian beat.
pub const GAUSSIAN_BEAT_SIGMA_S: f64 = 0.08;

/// Relative amplitudes of the fundamental and two harmonics in a
/// [`BeatShape::HarmonicSum`] beat. Chosen so each cycle has exactly one
/// local maximum, located at the beat instant.
pub const HARMONIC_AMPLITUDES: [f64; 3] = [1.0, 0.25, 0.1];

/// Beat-to-beat interval jitter (fraction of the nominal period).
const INTERVAL_JITTER: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("degenerate frame: need at least {needed} samples, got {len}")]
    DegenerateFrame { len: usize, needed: usize },
    #[error("invalid downsampling factor {0}")]
    InvalidFactor(usize),
    #[error("heart rate {0} BPM outside the generator band [40, 180]")]
    OutOfBand(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Abnormal,
    Unlabeled,
}

impl Label {
    pub fn is_abnormal(self) -> bool {
        self == Label::Abnormal
    }
}

/// A fixed-length window of normalized pressure samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub samples: Vec<f64>,
    pub rate_hz: f64,
    pub label: Label,
    /// Ground-truth heart rate in BPM, when known.
    pub hr_truth: Option<f64>,
}

impl Frame {
    pub fn new(samples: Vec<f64>, rate_hz: f64) -> Self {
        Self {
            samples,
            rate_hz,
            label: Label::Unlabeled,
            hr_truth: None,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = label;
        self
    }

    pub fn with_truth(mut self, hr_bpm: Option<f64>) -> Self {
        self.hr_truth = hr_bpm;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }

    fn map_samples(&self, samples: Vec<f64>) -> Frame {
        Frame {
            samples,
            rate_hz: self.rate_hz,
            label: self.label,
            hr_truth: self.hr_truth,
        }
    }

    /// Baseline correction followed by min-max normalization.
    pub fn preprocess(&self) -> Result<Frame, SignalError> {
        Ok(normalize(&baseline_correct(self)?))
    }

    /// The 35-sample 6 Hz network input derived from a raw 69-sample 12 Hz frame.
    pub fn low_rate_input(&self) -> Result<Frame, SignalError> {
        downsample(self, 2)?.preprocess()
    }
}

/// Subtracts the least-squares line through the samples.
pub fn baseline_correct(frame: &Frame) -> Result<Frame, SignalError> {
    Ok(frame.map_samples(detrend(&frame.samples)?))
}

pub(crate) fn detrend(x: &[f64]) -> Result<Vec<f64>, SignalError> {
    let n = x.len();
    if n < 2 {
        return Err(SignalError::DegenerateFrame { len: n, needed: 2 });
    }
    let t_mean = (n - 1) as f64 / 2.0;
    let x_mean = x.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let dt = i as f64 - t_mean;
        sxy += dt * (v - x_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    Ok(x.iter()
        .enumerate()
        .map(|(i, &v)| v - x_mean - slope * (i as f64 - t_mean))
        .collect())
}

/// Min-max maps the samples onto `[0, 1]`. Constant frames become all zeros.
pub fn normalize(frame: &Frame) -> Frame {
    frame.map_samples(normalize_slice(&frame.samples))
}

pub(crate) fn normalize_slice(x: &[f64]) -> Vec<f64> {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) || !range.is_finite() {
        return vec![0.0; x.len()];
    }
    x.iter().map(|&v| (v - lo) / range).collect()
}

/// Keeps every `factor`-th sample starting at index 0.
pub fn downsample(frame: &Frame, factor: usize) -> Result<Frame, SignalError> {
    if factor == 0 {
        return Err(SignalError::InvalidFactor(factor));
    }
    let mut out = frame.map_samples(frame.samples.iter().step_by(factor).copied().collect());
    out.rate_hz = frame.rate_hz / factor as f64;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BeatShape {
    /// Gaussian bump of width [`GAUSSIAN_BEAT_SIGMA_S`] on a zero baseline.
    GaussianPulse,
    /// Fundamental plus two harmonics, see [`HARMONIC_AMPLITUDES`].
    HarmonicSum,
}

/// Injected corruption; anything other than `None` labels the frame abnormal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Artifact {
    None,
    /// Loss of sensor contact: a 1.5 to 3 s stretch collapses to a flat level.
    Dropout,
    /// Motion jolts: one to three large single-sample excursions.
    Spike,
    /// Front-end clipping: the pulse tops are cut flat.
    Saturation,
    /// A strong nonlinear baseline excursion the linear detrend cannot remove.
    Drift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub hr_bpm: f64,
    pub beat_shape: BeatShape,
    pub baseline_wander_hz: f64,
    pub baseline_wander_amp: f64,
    pub noise_sigma: f64,
    pub artifact: Artifact,
    pub seed: u64,
}

impl SynthParams {
    pub fn clean(hr_bpm: f64, seed: u64) -> Self {
        Self {
            hr_bpm,
            beat_shape: BeatShape::GaussianPulse,
            baseline_wander_hz: 0.25,
            baseline_wander_amp: 0.0,
            noise_sigma: 0.0,
            artifact: Artifact::None,
            seed,
        }
    }

    pub fn label(&self) -> Label {
        if self.artifact != Artifact::None || self.noise_sigma > ABNORMAL_NOISE_SIGMA {
            Label::Abnormal
        } else {
            Label::Normal
        }
    }
}

/// Everything the generator produced for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrace {
    /// The 69-sample 12 Hz frame, with noise and artifacts.
    pub frame: Frame,
    /// Noise- and artifact-free render of the same window at [`SOURCE_RATE_HZ`].
    pub source: Vec<f64>,
    /// Beat instants (seconds) that fall inside the window.
    pub beat_times_s: Vec<f64>,
}

struct Waveform {
    shape: BeatShape,
    /// Beat instants covering the window plus one beat of margin each side.
    beats: Vec<f64>,
    wander_hz: f64,
    wander_amp: f64,
    wander_phase: f64,
}

impl Waveform {
    fn pulse(&self, t: f64) -> f64 {
        match self.shape {
            BeatShape::GaussianPulse => {
                let s2 = 2.0 * GAUSSIAN_BEAT_SIGMA_S * GAUSSIAN_BEAT_SIGMA_S;
                self.beats
                    .iter()
                    .filter(|&&b| (t - b).abs() < 8.0 * GAUSSIAN_BEAT_SIGMA_S)
                    .map(|&b| (-(t - b) * (t - b) / s2).exp())
                    .sum()
            }
            BeatShape::HarmonicSum => {
                // Cycle phase is piecewise linear between beat instants.
                let k = self.beats.partition_point(|&b| b <= t);
                let (start, end) = match k {
                    0 => (
                        self.beats[0] - (self.beats[1] - self.beats[0]),
                        self.beats[0],
                    ),
                    k if k >= self.beats.len() => {
                        let n = self.beats.len();
                        (
                            self.beats[n - 1],
                            2.0 * self.beats[n - 1] - self.beats[n - 2],
                        )
                    }
                    k => (self.beats[k - 1], self.beats[k]),
                };
                let theta = std::f64::consts::TAU * (t - start) / (end - start);
                let [a1, a2, a3] = HARMONIC_AMPLITUDES;
                let trough = -a1 + a2 - a3;
                let peak = a1 + a2 + a3;
                let v = a1 * theta.cos() + a2 * (2.0 * theta).cos() + a3 * (3.0 * theta).cos();
                (v - trough) / (peak - trough)
            }
        }
    }

    fn at(&self, t: f64) -> f64 {
        let wander = self.wander_amp
            * (std::f64::consts::TAU * self.wander_hz * t + self.wander_phase).sin();
        self.pulse(t) + wander
    }
}

/// Generates one labeled 69-sample 12 Hz frame.
pub fn synth_frame(params: &SynthParams) -> Result<Frame, SignalError> {
    synth_trace(params).map(|t| t.frame)
}

/// Like [`synth_frame`], also returning the clean high-rate render and beat instants.
pub fn synth_trace(params: &SynthParams) -> Result<SynthTrace, SignalError> {
    if !(SYNTH_MIN_BPM..=SYNTH_MAX_BPM).contains(&params.hr_bpm) {
        return Err(SignalError::OutOfBand(params.hr_bpm));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let span = (HIGH_RATE_LEN - 1) as f64 / HIGH_RATE_HZ;
    let period = 60.0 / params.hr_bpm;

    let mut beats = Vec::new();
    let mut t = -period * (1.0 + rng.random::<f64>());
    while t <= span + period {
        beats.push(t);
        t += period * (1.0 + INTERVAL_JITTER * rng.random_range(-1.0..=1.0));
    }
    beats.push(t);

    let wave = Waveform {
        shape: params.beat_shape,
        beats,
        wander_hz: params.baseline_wander_hz,
        wander_amp: params.baseline_wander_amp,
        wander_phase: rng.random_range(0.0..std::f64::consts::TAU),
    };

    let mut samples: Vec<f64> = (0..HIGH_RATE_LEN)
        .map(|i| wave.at(i as f64 / HIGH_RATE_HZ))
        .collect();
    if params.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, params.noise_sigma).expect("finite sigma");
        for s in &mut samples {
            *s += noise.sample(&mut rng);
        }
    }
    apply_artifact(&mut samples, params.artifact, &mut rng);

    let source_len = (span * SOURCE_RATE_HZ).round() as usize + 1;
    let source = (0..source_len)
        .map(|i| wave.at(i as f64 / SOURCE_RATE_HZ))
        .collect();

    let beat_times_s: Vec<f64> = wave
        .beats
        .iter()
        .copied()
        .filter(|&b| (0.0..=span).contains(&b))
        .collect();
    let hr_truth = if beat_times_s.len() >= 2 {
        let mean_ibi = (beat_times_s[beat_times_s.len() - 1] - beat_times_s[0])
            / (beat_times_s.len() - 1) as f64;
        60.0 / mean_ibi
    } else {
        params.hr_bpm
    };

    let frame = Frame {
        samples,
        rate_hz: HIGH_RATE_HZ,
        label: params.label(),
        hr_truth: Some(hr_truth),
    };
    Ok(SynthTrace {
        frame,
        source,
        beat_times_s,
    })
}

fn apply_artifact(x: &mut [f64], artifact: Artifact, rng: &mut ChaCha8Rng) {
    let n = x.len();
    match artifact {
        Artifact::None => {}
        Artifact::Dropout => {
            let len =
                rng.random_range((1.5 * HIGH_RATE_HZ) as usize..=(3.0 * HIGH_RATE_HZ) as usize);
            let start = rng.random_range(0..=n - len);
            let level = rng.random_range(-0.2..0.2);
            for v in &mut x[start..start + len] {
                *v = level + 0.01 * rng.random_range(-1.0..1.0);
            }
        }
        Artifact::Spike => {
            let count = rng.random_range(1..=3);
            for _ in 0..count {
                let at = rng.random_range(0..n);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                x[at] += sign * rng.random_range(3.0..6.0);
            }
        }
        Artifact::Saturation => {
            let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ceiling = lo + rng.random_range(0.25..0.45) * (hi - lo);
            for v in x.iter_mut() {
                *v = v.min(ceiling);
            }
        }
        Artifact::Drift => {
            let amp = rng.random_range(2.0..4.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let centre = rng.random_range(0.3..0.7) * n as f64;
            let width = rng.random_range(0.5..1.5) * HIGH_RATE_HZ / 4.0;
            for (i, v) in x.iter_mut().enumerate() {
                *v += amp / (1.0 + (-(i as f64 - centre) / width).exp());
            }
        }
    }
}
