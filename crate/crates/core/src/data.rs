//! Synthetic dataset assembly, the shared 70/15/15 split, and CSV I/O.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{
    synth_frame, Artifact, BeatShape, Frame, Label, SignalError, SynthParams, SYNTH_MAX_BPM,
    SYNTH_MIN_BPM,
};

/// Frame count of the reference recording campaign.
pub const DEFAULT_FRAME_COUNT: usize = 5687;
pub const DEFAULT_ABNORMAL_FRACTION: f64 = 0.2;
pub const MIN_FRAME_COUNT: usize = 10;

const VAL_FRACTION: f64 = 0.15;
const TEST_FRACTION: f64 = 0.15;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset needs at least {MIN_FRAME_COUNT} frames, got {0}")]
    TooFew(usize),
    #[error("abnormal_fraction must lie in [0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{0}")]
    Empty(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    pub split_assignment: Vec<Split>,
    pub seed: u64,
}

/// Borrowed view of the three partitions, each in dataset order.
#[derive(Debug, Clone)]
pub struct Splits<'a> {
    pub train: Vec<&'a Frame>,
    pub val: Vec<&'a Frame>,
    pub test: Vec<&'a Frame>,
}

/// Reproducibility record written next to a generated CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n: usize,
    pub abnormal_fraction: f64,
    pub abnormal_count: usize,
    pub csv_file: String,
}

/// Partition sizes `(train, val, test)`; validation and test are the
/// rounded 15 % shares and the remainder trains.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = (n as f64 * VAL_FRACTION).round() as usize;
    let test = (n as f64 * TEST_FRACTION).round() as usize;
    (n - val - test, val, test)
}

/// Assignment for `n` frames as a pure function of `seed`.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let (train, val, _) = split_sizes(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    order.shuffle(&mut rng);
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

/// Draws the generator parameters of frame `index`.
///
/// Each frame has its own ChaCha stream, so any frame can be regenerated in
/// isolation.
pub fn frame_params(index: usize, abnormal_fraction: f64, seed: u64) -> SynthParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let hr_bpm = rng.random_range(SYNTH_MIN_BPM..=SYNTH_MAX_BPM);
    let beat_shape = if rng.random::<bool>() {
        BeatShape::GaussianPulse
    } else {
        BeatShape::HarmonicSum
    };
    let baseline_wander_hz = rng.random_range(0.15..0.35);
    let baseline_wander_amp = rng.random_range(0.0..0.3);
    let mut noise_sigma = rng.random_range(0.0..0.05);
    let abnormal = rng.random::<f64>() < abnormal_fraction;
    let artifact = if abnormal {
        match rng.random_range(0..5) {
            0 => Artifact::Dropout,
            1 => Artifact::Spike,
            2 => Artifact::Saturation,
            3 => Artifact::Drift,
            _ => {
                noise_sigma = rng.random_range(0.3..0.6);
                Artifact::None
            }
        }
    } else {
        Artifact::None
    };
    SynthParams {
        hr_bpm,
        beat_shape,
        baseline_wander_hz,
        baseline_wander_amp,
        noise_sigma,
        artifact,
        seed: rng.random(),
    }
}

pub fn make_dataset(n: usize, abnormal_fraction: f64, seed: u64) -> Result<Dataset, DataError> {
    if n < MIN_FRAME_COUNT {
        return Err(DataError::TooFew(n));
    }
    if !(0.0..=1.0).contains(&abnormal_fraction) {
        return Err(DataError::InvalidFraction(abnormal_fraction));
    }
    let frames = (0..n)
        .map(|i| synth_frame(&frame_params(i, abnormal_fraction, seed)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::from_frames(frames, seed))
}

impl Dataset {
    pub fn from_frames(frames: Vec<Frame>, seed: u64) -> Self {
        let split_assignment = assign_splits(frames.len(), seed);
        Self {
            frames,
            split_assignment,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn abnormal_count(&self) -> usize {
        self.frames.iter().filter(|f| f.label.is_abnormal()).count()
    }

    /// Dataset indices in `which`, ascending.
    pub fn indices(&self, which: Split) -> Vec<usize> {
        self.split_assignment
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == which)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn split(&self) -> Splits<'_> {
        let pick = |which| {
            self.indices(which)
                .into_iter()
                .map(|i| &self.frames[i])
                .collect()
        };
        Splits {
            train: pick(Split::Train),
            val: pick(Split::Val),
            test: pick(Split::Test),
        }
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let file = std::fs::File::create(path)?;
        write_csv(&self.frames, std::io::BufWriter::new(file))
    }

    pub fn load_csv(path: impl AsRef<Path>, seed: u64) -> Result<Self, DataError> {
        let frames = read_csv(std::fs::File::open(path)?)?;
        Ok(Self::from_frames(frames, seed))
    }
}

impl<'a> Splits<'a> {
    /// Normal-labeled frames of a partition; the regressor's view.
    pub fn normal_only(frames: &[&'a Frame]) -> Vec<&'a Frame> {
        frames
            .iter()
            .copied()
            .filter(|f| f.label == Label::Normal)
            .collect()
    }
}

fn label_field(label: Label) -> &'static str {
    match label {
        Label::Normal => "0",
        Label::Abnormal => "1",
        Label::Unlabeled => "",
    }
}

/// Writes frames in the dataset CSV schema. All frames must share a length.
pub fn write_csv<W: Write>(frames: &[Frame], out: W) -> Result<(), DataError> {
    let width = frames.first().map_or(0, Frame::len);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = vec![
        "label".to_string(),
        "hr_truth".to_string(),
        "rate_hz".to_string(),
    ];
    header.extend((0..width).map(|i| format!("s{i}")));
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(width + 3);
    for (i, f) in frames.iter().enumerate() {
        if f.len() != width {
            return Err(DataError::Parse {
                line: i as u64 + 2,
                message: format!("frame has {} samples, expected {width}", f.len()),
            });
        }
        row.clear();
        row.push(label_field(f.label).to_string());
        row.push(f.hr_truth.map_or_else(String::new, |v| v.to_string()));
        row.push(f.rate_hz.to_string());
        row.extend(f.samples.iter().map(|&s| (s as f32).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses frames from the dataset CSV schema.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<Frame>, DataError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header = r.headers()?.clone();
    let width = check_header(&header)?;
    let mut frames = Vec::new();
    for record in r.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        frames.push(parse_row(&record, width, line)?);
    }
    Ok(frames)
}

fn check_header(header: &csv::StringRecord) -> Result<usize, DataError> {
    let bad = |message: String| DataError::Parse { line: 1, message };
    let fields: Vec<&str> = header.iter().collect();
    if fields.len() < 3 || fields[..3] != ["label", "hr_truth", "rate_hz"] {
        return Err(bad("header must start with label,hr_truth,rate_hz".into()));
    }
    for (i, name) in fields[3..].iter().enumerate() {
        if *name != format!("s{i}") {
            return Err(bad(format!("expected column s{i}, found {name:?}")));
        }
    }
    Ok(fields.len() - 3)
}

fn parse_row(record: &csv::StringRecord, width: usize, line: u64) -> Result<Frame, DataError> {
    let bad = |message: String| DataError::Parse { line, message };
    if record.len() != width + 3 {
        return Err(bad(format!(
            "expected {width} samples, found {}",
            record.len().saturating_sub(3)
        )));
    }
    let num = |field: &str, what: &str| -> Result<f64, DataError> {
        field
            .trim()
            .parse::<f64>()
            .map_err(|_| bad(format!("invalid {what} {field:?}")))
    };
    let label = match record[0].trim() {
        "0" => Label::Normal,
        "1" => Label::Abnormal,
        "" => Label::Unlabeled,
        other => return Err(bad(format!("invalid label {other:?}"))),
    };
    let hr_truth = match record[1].trim() {
        "" => None,
        v => Some(num(v, "hr_truth")?),
    };
    let rate_hz = num(&record[2], "rate_hz")?;
    if !(rate_hz > 0.0) {
        return Err(bad(format!("rate_hz must be positive, got {rate_hz}")));
    }
    let samples = record
        .iter()
        .skip(3)
        .map(|s| num(s, "sample"))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Frame {
        samples,
        rate_hz,
        label,
        hr_truth,
    })
}
