//! Classical filtering kernels and peak-based heart-rate estimation.
//!
//! Every filter is length-preserving and pads by replicating the edge
//! samples, so no amplitude droop appears at the frame boundaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::HIGH_RATE_HZ;

/// Fastest heart rate the peak detector will resolve.
pub const MAX_PHYSIOLOGICAL_BPM: f64 = 220.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("window must be odd and at least 3, got {0}")]
    InvalidWindow(usize),
    #[error("filter taps must be non-empty")]
    InvalidTaps,
    #[error("invalid interpolation factor {0}")]
    InvalidFactor(usize),
    #[error("degenerate signal: need at least {needed} samples, got {len}")]
    DegenerateFrame { len: usize, needed: usize },
    #[error("centre sample is not a local maximum")]
    NotAPeak,
    #[error("need at least 3 peaks for a rate estimate, found {0}")]
    InsufficientPeaks(usize),
    #[error("peak positions must be strictly increasing")]
    UnorderedPeaks,
}

/// Parameters of the classical conditioning and peak-detection chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSpec {
    pub median_window: usize,
    pub fir_taps: Vec<f64>,
    pub ma_window: usize,
    pub interp_factor: usize,
    pub min_prominence: f64,
    pub min_distance_s: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            median_window: 3,
            fir_taps: lowpass_taps(7, 3.0, HIGH_RATE_HZ),
            ma_window: 11,
            interp_factor: 10,
            min_prominence: 0.05,
            min_distance_s: 60.0 / MAX_PHYSIOLOGICAL_BPM,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<(), DspError> {
        check_window(self.median_window)?;
        check_window(self.ma_window)?;
        if self.fir_taps.is_empty() {
            return Err(DspError::InvalidTaps);
        }
        let dc: f64 = self.fir_taps.iter().sum();
        if (dc - 1.0).abs() > 1e-9 {
            return Err(DspError::InvalidTaps);
        }
        if self.interp_factor == 0 {
            return Err(DspError::InvalidFactor(0));
        }
        Ok(())
    }
}

/// Hamming-windowed sinc low-pass, normalized to unity DC gain.
pub fn lowpass_taps(num_taps: usize, cutoff_hz: f64, rate_hz: f64) -> Vec<f64> {
    assert!(num_taps > 0);
    let fc = cutoff_hz / rate_hz;
    let m = (num_taps - 1) as f64;
    let raw: Vec<f64> = (0..num_taps)
        .map(|n| {
            let k = n as f64 - m / 2.0;
            let sinc = if k == 0.0 {
                2.0 * fc
            } else {
                (std::f64::consts::TAU * fc * k).sin() / (std::f64::consts::PI * k)
            };
            let window = if num_taps == 1 {
                1.0
            } else {
                0.54 - 0.46 * (std::f64::consts::TAU * n as f64 / m).cos()
            };
            sinc * window
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

fn check_window(window: usize) -> Result<(), DspError> {
    if window < 3 || window % 2 == 0 {
        return Err(DspError::InvalidWindow(window));
    }
    Ok(())
}

/// `x` with `before` copies of its first sample prepended and `after` copies of its last appended.
fn replicate_pad(x: &[f64], before: usize, after: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() + before + after);
    out.extend(std::iter::repeat(x[0]).take(before));
    out.extend_from_slice(x);
    out.extend(std::iter::repeat(x[x.len() - 1]).take(after));
    out
}

pub fn median_filter(x: &[f64], window: usize) -> Result<Vec<f64>, DspError> {
    check_window(window)?;
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let half = window / 2;
    let padded = replicate_pad(x, half, half);
    let mut buf = vec![0.0; window];
    Ok(padded
        .windows(window)
        .map(|w| {
            buf.copy_from_slice(w);
            // Insertion sort: windows are tiny.
            for i in 1..buf.len() {
                let mut j = i;
                while j > 0 && buf[j - 1] > buf[j] {
                    buf.swap(j - 1, j);
                    j -= 1;
                }
            }
            buf[half]
        })
        .collect())
}

/// Centered FIR convolution, `y[i] = Σ_k taps[k] · x[i + c − k]` with `c = (len − 1) / 2`.
pub fn fir_filter(x: &[f64], taps: &[f64]) -> Result<Vec<f64>, DspError> {
    if taps.is_empty() {
        return Err(DspError::InvalidTaps);
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let centre = (taps.len() - 1) / 2;
    let padded = replicate_pad(x, taps.len() - 1 - centre, centre);
    let n = x.len();
    let last = taps.len() - 1;
    let mut y = vec![0.0; n];
    // Tap-major loop: each output still accumulates taps in ascending order.
    for (k, &h) in taps.iter().enumerate() {
        let src = &padded[last - k..last - k + n];
        for (acc, &v) in y.iter_mut().zip(src) {
            *acc += h * v;
        }
    }
    Ok(y)
}

/// Centered moving average; identical to [`fir_filter`] with uniform taps.
pub fn moving_average(x: &[f64], window: usize) -> Result<Vec<f64>, DspError> {
    check_window(window)?;
    fir_filter(x, &vec![1.0 / window as f64; window])
}

/// Inserts `factor − 1` linearly spaced samples between each neighbouring pair.
pub fn linear_interp(x: &[f64], factor: usize) -> Result<Vec<f64>, DspError> {
    if factor == 0 {
        return Err(DspError::InvalidFactor(0));
    }
    if x.len() < 2 {
        return Err(DspError::DegenerateFrame {
            len: x.len(),
            needed: 2,
        });
    }
    let mut out = Vec::with_capacity(factor * (x.len() - 1) + 1);
    for pair in x.windows(2) {
        let step = (pair[1] - pair[0]) / factor as f64;
        out.extend((0..factor).map(|r| pair[0] + step * r as f64));
    }
    out.push(x[x.len() - 1]);
    Ok(out)
}

/// Vertex offset of the parabola through `(−1, y_prev)`, `(0, y_peak)`, `(1, y_next)`.
///
/// Returns 0 for a (numerically) flat triple.
pub fn parabolic_vertex(y_prev: f64, y_peak: f64, y_next: f64) -> f64 {
    let denom = y_prev - 2.0 * y_peak + y_next;
    if denom.abs() < 1e-12 {
        return 0.0;
    }
    0.5 * (y_prev - y_next) / denom
}

/// Sub-sample offset of a local maximum from three samples around it.
pub fn parabolic_refine(y_prev: f64, y_peak: f64, y_next: f64) -> Result<f64, DspError> {
    if y_peak < y_prev || y_peak < y_next {
        return Err(DspError::NotAPeak);
    }
    Ok(parabolic_vertex(y_prev, y_peak, y_next))
}

/// Sub-sample peak positions, in units of samples at `rate_hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSet {
    positions: Vec<f64>,
    rate_hz: f64,
}

impl PeakSet {
    pub fn new(positions: Vec<f64>, rate_hz: f64) -> Result<Self, DspError> {
        if positions.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DspError::UnorderedPeaks);
        }
        Ok(Self { positions, rate_hz })
    }

    pub fn empty(rate_hz: f64) -> Self {
        Self {
            positions: Vec::new(),
            rate_hz,
        }
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Whether `x[i]` stands at least `min` above the lowest point reachable on
/// each side before meeting a strictly higher sample (or the border).
fn is_prominent(x: &[f64], i: usize, min: f64) -> bool {
    let peak = x[i];
    if min <= 0.0 {
        return true;
    }
    fn side<'a>(mut it: impl Iterator<Item = &'a f64>, peak: f64, min: f64) -> bool {
        it.find(|&&v| v > peak || peak - v >= min)
            .is_some_and(|&v| v <= peak)
    }
    side(x[..i].iter().rev(), peak, min) && side(x[i + 1..].iter(), peak, min)
}

/// Finds prominent, well-separated local maxima with sub-sample refinement.
///
/// Candidates are interior samples strictly above their left neighbour and
/// not below their right one. Those reaching `min_prominence` are accepted
/// greedily from the tallest down (lower index first among equals), dropping
/// any whose refined position lies closer than `min_distance_s` to one
/// already accepted.
pub fn detect_peaks(x: &[f64], rate_hz: f64, min_prominence: f64, min_distance_s: f64) -> PeakSet {
    if x.len() < 3 {
        return PeakSet::empty(rate_hz);
    }
    let mut candidates: Vec<(usize, f64)> = (1..x.len() - 1)
        .filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1])
        .filter(|&i| is_prominent(x, i, min_prominence))
        .map(|i| (i, i as f64 + parabolic_vertex(x[i - 1], x[i], x[i + 1])))
        .collect();
    candidates.sort_by(|a, b| x[b.0].total_cmp(&x[a.0]).then(a.0.cmp(&b.0)));

    let min_gap = min_distance_s * rate_hz;
    let mut kept: Vec<f64> = Vec::with_capacity(candidates.len());
    for (_, pos) in candidates {
        if kept.iter().all(|&k| (k - pos).abs() >= min_gap) {
            kept.push(pos);
        }
    }
    kept.sort_by(f64::total_cmp);
    kept.dedup();
    PeakSet {
        positions: kept,
        rate_hz,
    }
}

/// The 12 Hz conditioning chain: median, FIR, linear detrend, min-max normalization.
pub fn condition(x: &[f64], spec: &FilterSpec) -> Result<Vec<f64>, DspError> {
    let filtered = fir_filter(&median_filter(x, spec.median_window)?, &spec.fir_taps)?;
    let detrended = crate::signal::detrend(&filtered).map_err(|_| DspError::DegenerateFrame {
        len: x.len(),
        needed: 2,
    })?;
    Ok(crate::signal::normalize_slice(&detrended))
}

/// Interpolation, smoothing, peak picking and rate estimation on a
/// conditioned signal sampled at `rate_hz`.
pub fn estimate_hr(x: &[f64], rate_hz: f64, spec: &FilterSpec) -> Result<f64, DspError> {
    let fine = linear_interp(x, spec.interp_factor)?;
    let smooth = moving_average(&fine, spec.ma_window)?;
    let peaks = detect_peaks(
        &smooth,
        rate_hz * spec.interp_factor as f64,
        spec.min_prominence,
        spec.min_distance_s,
    );
    hr_from_peaks(&peaks)
}

/// Mean heart rate in BPM from the mean peak-to-peak interval.
pub fn hr_from_peaks(peaks: &PeakSet) -> Result<f64, DspError> {
    let n = peaks.len();
    if n < 3 {
        return Err(DspError::InsufficientPeaks(n));
    }
    let span_s = (peaks.positions[n - 1] - peaks.positions[0]) / peaks.rate_hz;
    Ok(60.0 * (n - 1) as f64 / span_s)
}
